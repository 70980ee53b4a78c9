"""Batch entry points: one-shot edits, training, evaluation, synthesis, serve.

Exit codes: 0 success, 2 usage or config error, 3 numeric failure,
4 backend failure, 1 other pipeline errors (stage named on stderr).
All randomness is seeded through flags; nothing prompts.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .dataset import make_synthetic_dataset
from .editnet import DiscriminatorWeights, EditNetConfig, GeneratorWeights
from .engine import Engine, EngineConfig, load_engine_config
from .errors import BackendError, NumericError, SegEditError
from .imagecore import load_image, load_segmap, save_image, save_segmap
from .training import TrainConfig, load_train_config, train, write_history_csv

EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_BACKEND = 4


def _fail(err: SegEditError) -> None:
    click.echo(f"error: {err}", err=True)
    if isinstance(err, NumericError):
        sys.exit(EXIT_NUMERIC)
    if isinstance(err, BackendError):
        sys.exit(EXIT_BACKEND)
    sys.exit(1)


@click.group()
def main():
    """Segmentation-guided text-driven image editing."""


@main.command()
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--text", required=True, help="the edit instruction")
@click.option("--background", "background_path", type=click.Path(exists=True))
@click.option("--seg", "seg_path", type=click.Path(exists=True),
              help="bypass the segmentation backend with this class-id PNG")
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--working-size", default=None, type=int,
              help="canvas size; defaults to the weights' trained size")
@click.option("--seed", default=0, show_default=True)
def run(image_path, text, background_path, seg_path, weights_path, out_dir, working_size, seed):
    """Run one edit headlessly; writes result, both seg maps and a report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        weights = GeneratorWeights.load(weights_path)
        engine = Engine(EngineConfig(working_size=working_size), weights=weights)
        image = load_image(image_path)
        background = load_image(background_path) if background_path else None
        seg_override = load_segmap(seg_path) if seg_path else None
        outcome = engine.run_edit(
            image, text, background=background, seg_override=seg_override, seed=seed
        )
    except SegEditError as err:
        _fail(err)
        return
    save_image(outcome.output, out / "result.png")
    save_segmap(outcome.seg_in, out / "seg_in.png")
    save_segmap(outcome.seg_out, out / "seg_out.png")
    (out / "report.json").write_text(json.dumps(outcome.report, indent=1))
    click.echo(f"wrote {out / 'result.png'}")


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--samples", default=500, show_default=True, help="synthetic dataset size")
@click.option("--data-seed", default=100, show_default=True)
def train_cmd(config_path, out_dir, samples, data_seed):
    """Train on the synthetic dataset; writes checkpoints, CSV log, curves."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        config = load_train_config(config_path)
    except (SegEditError, ValueError) as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_USAGE)
    try:
        dataset = make_synthetic_dataset(samples, seed=data_seed, size=config.working_size)
        gen = GeneratorWeights(EditNetConfig(), seed=config.seed)
        disc = DiscriminatorWeights(EditNetConfig(), seed=config.seed)
        gen, disc, history = train(config, dataset, gen, disc, out_dir=out)
    except SegEditError as err:
        _fail(err)
        return
    gen.save(out / "generator.ckpt")
    disc.save(out / "discriminator.ckpt")
    write_history_csv(history, out / "history.csv")
    if history:
        from .report import render_training_curves

        render_training_curves(history, out / "training_curves.png")
    click.echo(f"trained {len(history)} epochs; log at {out / 'history.csv'}")


@main.command("eval")
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True))
@click.option("--n", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--working-size", default=64, show_default=True)
def eval_cmd(weights_path, n, seed, out_path, working_size):
    """Generate edits over the test split and score IS / FID."""
    from .evaluate import run_eval
    from .report import render_eval_figure

    try:
        weights = GeneratorWeights.load(weights_path)
        report = run_eval(weights, n=n, seed=seed, working_size=working_size)
    except SegEditError as err:
        _fail(err)
        return
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=1))
    render_eval_figure(report, out.with_suffix(".png"))
    click.echo(json.dumps(report))


@main.command()
@click.option("--n", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--size", default=64, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def synth(n, seed, size, out_dir):
    """Render the synthetic dataset to disk with captions and exact maps."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "segmaps").mkdir(parents=True, exist_ok=True)
    samples = make_synthetic_dataset(n, seed=seed, size=size)
    rows = ["index,caption,target,color"]
    for i, sample in enumerate(samples):
        save_image(sample.image, out / "images" / f"{i:05d}.png")
        save_segmap(sample.seg, out / "segmaps" / f"{i:05d}.png")
        rows.append(f"{i},{sample.caption},{sample.target_label},{sample.target_color}")
    (out / "captions.csv").write_text("\n".join(rows) + "\n")
    from .report import render_dataset_sheet

    render_dataset_sheet(samples, out / "contact_sheet.png")
    click.echo(f"wrote {n} samples under {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--host", default=None, help="overrides the config listen host")
@click.option("--port", default=None, type=int, help="overrides the config listen port")
def serve(config_path, host, port):
    """Start the interactive session service."""
    import uvicorn

    from .service import create_app

    try:
        config = load_engine_config(config_path)
    except (SegEditError, ValueError, OSError) as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_USAGE)
    listen_host, _, listen_port = config.listen.partition(":")
    app = create_app(config=config)
    uvicorn.run(
        app,
        host=host or listen_host or "127.0.0.1",
        port=port or int(listen_port or 8008),
    )


if __name__ == "__main__":
    main()
