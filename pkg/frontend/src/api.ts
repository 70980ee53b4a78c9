/** Thin session-service client. `fetch` is injectable so tests can mock the
 * wire and assert call order without a server. */

import type { SessionView } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(
    message: string,
    readonly status: number,
    readonly stage: string | null = null,
  ) {
    super(message);
  }
}

async function raiseForStatus(response: Response): Promise<void> {
  if (response.ok) return;
  let detail = `${response.status}`;
  let stage: string | null = null;
  try {
    const body = (await response.json()) as { detail?: string; stage?: string | null };
    detail = body.detail ?? detail;
    stage = body.stage ?? null;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ServiceError(detail, response.status, stage);
}

export class SessionClient {
  constructor(
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
    private readonly base: string = "",
  ) {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async createSession(imageB64: string, instruction: string): Promise<{
    id: string;
    seg: string;
    palette: Record<string, string>;
    target: string | null;
    state: string;
  }> {
    const response = await this.fetchImpl(this.url("/sessions"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ image: imageB64, instruction }),
    });
    await raiseForStatus(response);
    return response.json();
  }

  async getSession(id: string): Promise<SessionView> {
    const response = await this.fetchImpl(this.url(`/sessions/${id}`));
    await raiseForStatus(response);
    return response.json();
  }

  async getSegmapPng(id: string): Promise<Uint8Array> {
    const response = await this.fetchImpl(this.url(`/sessions/${id}/segmap`));
    await raiseForStatus(response);
    return new Uint8Array(await response.arrayBuffer());
  }

  async putSegmapPng(id: string, png: Uint8Array): Promise<void> {
    const body = png.buffer.slice(png.byteOffset, png.byteOffset + png.byteLength) as ArrayBuffer;
    const response = await this.fetchImpl(this.url(`/sessions/${id}/segmap`), {
      method: "PUT",
      headers: { "content-type": "image/png" },
      body,
    });
    await raiseForStatus(response);
  }

  async apply(
    id: string,
    instruction: string,
    backgroundB64?: string,
  ): Promise<{ step_index: number; output_url: string; seg_out_url: string }> {
    const body: Record<string, string> = { instruction };
    if (backgroundB64) body.background = backgroundB64;
    const response = await this.fetchImpl(this.url(`/sessions/${id}/apply`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    await raiseForStatus(response);
    return response.json();
  }

  async undo(id: string): Promise<SessionView> {
    const response = await this.fetchImpl(this.url(`/sessions/${id}/undo`), { method: "POST" });
    await raiseForStatus(response);
    return response.json();
  }

  async redo(id: string): Promise<SessionView> {
    const response = await this.fetchImpl(this.url(`/sessions/${id}/redo`), { method: "POST" });
    await raiseForStatus(response);
    return response.json();
  }
}
