/** Class-id map <-> grayscale PNG bytes.
 *
 * The browser build encodes through a canvas; tests plug in a pngjs codec.
 * Both must agree with the service's single-channel 8-bit convention.
 */

export interface SegmapCodec {
  encode(seg: Int32Array, width: number, height: number): Promise<Uint8Array>;
  decode(png: Uint8Array): Promise<{ seg: Int32Array; width: number; height: number }>;
}

/** Canvas-backed codec for browsers. */
export class CanvasSegmapCodec implements SegmapCodec {
  async encode(seg: Int32Array, width: number, height: number): Promise<Uint8Array> {
    const canvas = new OffscreenCanvas(width, height);
    const ctx = canvas.getContext("2d")!;
    const image = ctx.createImageData(width, height);
    for (let i = 0; i < seg.length; i++) {
      const v = seg[i] & 0xff;
      image.data[4 * i] = v;
      image.data[4 * i + 1] = v;
      image.data[4 * i + 2] = v;
      image.data[4 * i + 3] = 255;
    }
    ctx.putImageData(image, 0, 0);
    const blob = await canvas.convertToBlob({ type: "image/png" });
    return new Uint8Array(await blob.arrayBuffer());
  }

  async decode(png: Uint8Array): Promise<{ seg: Int32Array; width: number; height: number }> {
    const bitmap = await createImageBitmap(new Blob([png.slice().buffer], { type: "image/png" }));
    const canvas = new OffscreenCanvas(bitmap.width, bitmap.height);
    const ctx = canvas.getContext("2d")!;
    ctx.drawImage(bitmap, 0, 0);
    const image = ctx.getImageData(0, 0, bitmap.width, bitmap.height);
    const seg = new Int32Array(bitmap.width * bitmap.height);
    for (let i = 0; i < seg.length; i++) {
      seg[i] = image.data[4 * i]; // grayscale: R carries the class id
    }
    return { seg, width: bitmap.width, height: bitmap.height };
  }
}
