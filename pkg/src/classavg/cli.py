"""Command-line surface: gen / cluster / eval / scatter / oracle.

Every subcommand writes the exact resolved configuration that produced its
output directory to config.json there, and accepts --config to replay such
a file (unknown keys are rejected).  Exit codes: 0 success, 2 usage error,
1 runtime failure.

Heavy imports happen inside the commands, after the thread budget is fixed
in the environment, so --threads can exceed the numba default pool.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

_CONFIG_NAME = "config.json"


def _resolve_config(ctx, subcommand: str, params: dict) -> dict:
    """Merge a replayed config file (if any) under explicit CLI flags."""
    config_path = params.pop("config", None)
    if not config_path:
        return params
    loaded = json.loads(Path(config_path).read_text())
    if loaded.pop("subcommand", subcommand) != subcommand:
        raise click.UsageError(f"{config_path} was written by a different subcommand")
    unknown = set(loaded) - set(params)
    if unknown:
        raise click.UsageError(f"{config_path} has unknown keys: {sorted(unknown)}")
    source = ctx.get_parameter_source
    for key, value in loaded.items():
        if source(key) is None or source(key).name in ("DEFAULT", "DEFAULT_MAP"):
            params[key] = value
    return params


def _write_config(out_dir, subcommand: str, params: dict):
    payload = {"subcommand": subcommand}
    payload.update({k: v for k, v in sorted(params.items())})
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / _CONFIG_NAME).write_text(json.dumps(payload, indent=1, sort_keys=True))


def _apply_threads(threads: int | None):
    if threads is not None and "NUMBA_NUM_THREADS" not in os.environ:
        os.environ["NUMBA_NUM_THREADS"] = str(max(1, threads))


def _require(params: dict, *keys):
    for key in keys:
        if params.get(key) is None:
            raise click.UsageError(f"missing required option --{key.replace('_', '-')}")


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


@click.group()
def main():
    """Rotationally-invariant k-means for tomographic projections."""


@main.command()
@click.option("--phantom", "phantom_path", type=click.Path(exists=True), help="Gaussian blob spec (JSON).")
@click.option("--mrc", "mrc_path", type=click.Path(exists=True), help="Cubic mode-2 MRC volume.")
@click.option("--volume-side", default=64, show_default=True, help="Phantom evaluation grid.")
@click.option("--n", "count", type=int, help="Number of projections.")
@click.option("--size", default=64, show_default=True, help="Image side in pixels.")
@click.option("--snr", default=0.0, show_default=True, type=float, help="Target SNR (0 = noiseless).")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--no-clean", is_flag=True, help="Do not retain the clean stack.")
@click.option("--out", required=True, type=click.Path())
@click.option("--config", type=click.Path(exists=True), help="Replay a persisted config.")
@click.pass_context
def gen(ctx, **params):
    """Generate a synthetic projection dataset."""
    params = _resolve_config(ctx, "gen", params)
    _require(params, "count", "out")
    if bool(params["phantom_path"]) == bool(params["mrc_path"]):
        raise click.UsageError("provide exactly one of --phantom or --mrc")
    from .phantom import generate_dataset, load_mrc, load_phantom

    try:
        if params["phantom_path"]:
            volume = load_phantom(params["phantom_path"], side=params["volume_side"])
            volume.provenance = f"phantom:{Path(params['phantom_path']).name}"
        else:
            volume = load_mrc(params["mrc_path"])
        dataset = generate_dataset(
            volume, n=params["count"], size=params["size"], snr=params["snr"],
            seed=params["seed"], out_dir=params["out"], keep_clean=not params["no_clean"],
        )
    except (ValueError, OSError) as err:
        _fail(str(err))
    _write_config(params["out"], "gen", params)
    click.echo(f"wrote {dataset.n} images of {dataset.size}x{dataset.size} "
               f"(snr={dataset.snr}, sigma={dataset.sigma:.6g}) to {params['out']}")


@main.command()
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True))
@click.option("--metric", type=click.Choice(["l2", "wemd"]))
@click.option("--k", type=int)
@click.option("--rotations", default=200, show_default=True, help="In-plane rotation count m.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--threads", default=None, type=int, help="Worker threads (default: all cores).")
@click.option("--max-iters", default=100, show_default=True, type=int)
@click.option("--rel-tol", default=1e-4, show_default=True, type=float)
@click.option("--levels", default=6, show_default=True, help="Wavelet decomposition depth.")
@click.option("--out", required=True, type=click.Path())
@click.option("--config", type=click.Path(exists=True), help="Replay a persisted config.")
@click.pass_context
def cluster(ctx, **params):
    """Cluster a dataset with rotationally-invariant k-means++."""
    params = _resolve_config(ctx, "cluster", params)
    _require(params, "dataset_dir", "metric", "k", "out")
    _apply_threads(params["threads"])
    import numpy as np

    from .cluster import InvalidKError, fit, save_run
    from .phantom import load_dataset

    try:
        dataset = load_dataset(params["dataset_dir"])
        model = fit(
            dataset, k=params["k"], metric=params["metric"], m=params["rotations"],
            seed=params["seed"], max_iters=params["max_iters"], rel_tol=params["rel_tol"],
            levels=params["levels"], threads=params["threads"],
        )
        save_run(model, params["out"])
    except (InvalidKError, ValueError, OSError) as err:
        _fail(str(err))
    _write_config(params["out"], "cluster", params)
    trace = ", ".join(f"{v:.5g}" for v in model.loss_trace[:8])
    if len(model.loss_trace) > 8:
        trace += ", ..."
    click.echo(f"{model.metric} k={model.k} m={model.m}: {model.iterations} iterations, "
               f"loss [{trace}]")
    if model.assign_seconds:
        parts = [f"assign {np.mean(model.assign_seconds):.3f}"]
        if model.update_seconds:
            parts.append(f"update {np.mean(model.update_seconds):.3f}")
        click.echo("per-iteration seconds: " + ", ".join(parts))
    if model.stopped_on_regression:
        click.echo("note: stopped at best-seen model after a loss regression")


@main.command("eval")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True))
@click.option("--run", "run_dir", type=click.Path(exists=True))
@click.option("--top", default=8, show_default=True, help="Centroid panels to emit.")
@click.option("--no-figures", is_flag=True, help="Skip matplotlib rendering.")
@click.option("--out", required=True, type=click.Path())
@click.option("--config", type=click.Path(exists=True), help="Replay a persisted config.")
@click.pass_context
def eval_cmd(ctx, **params):
    """Evaluate a run: angular coherence, occupancy, centroid panels."""
    params = _resolve_config(ctx, "eval", params)
    _require(params, "dataset_dir", "run_dir", "out")
    from .cluster import load_run
    from .evalrep import DataError, evaluate
    from .phantom import load_dataset

    try:
        dataset = load_dataset(params["dataset_dir"])
        model = load_run(params["run_dir"])
        if dataset.n != model.n:
            raise DataError(
                f"dataset {params['dataset_dir']} has n={dataset.n} but run "
                f"{params['run_dir']} assigned n={model.n}")
        report = evaluate(model, dataset, params["out"], top=params["top"],
                          render=not params["no_figures"])
    except (ValueError, OSError) as err:
        _fail(str(err))
    _write_config(params["out"], "eval", params)
    med = "n/a" if report.median_angle_deg is None else f"{report.median_angle_deg:.2f} deg"
    click.echo(f"median within-cluster angle: {med}; occupancy CV {report.occupancy_cv:.3f}; "
               f"artifacts in {params['out']}")


@main.command()
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True))
@click.option("--ref-index", default=0, show_default=True, type=int)
@click.option("--rotations", default=100, show_default=True)
@click.option("--levels", default=6, show_default=True)
@click.option("--threads", default=None, type=int)
@click.option("--no-figures", is_flag=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--config", type=click.Path(exists=True), help="Replay a persisted config.")
@click.pass_context
def scatter(ctx, **params):
    """Distances to one clean reference vs viewing-angle difference."""
    params = _resolve_config(ctx, "scatter", params)
    _require(params, "dataset_dir", "out")
    _apply_threads(params["threads"])
    from .evalrep import DataError, noise_scatter, write_scatter
    from .phantom import load_dataset

    try:
        dataset = load_dataset(params["dataset_dir"])
    except (ValueError, OSError) as err:
        _fail(str(err))
    if not 0 <= params["ref_index"] < dataset.n:
        raise click.UsageError(f"--ref-index {params['ref_index']} outside 0..{dataset.n - 1}")
    try:
        table = noise_scatter(dataset, params["ref_index"], m=params["rotations"],
                              levels=params["levels"], threads=params["threads"])
    except DataError as err:
        _fail(str(err))
    out = Path(params["out"])
    write_scatter(table, out / "scatter.csv", render=not params["no_figures"])
    _write_config(out, "scatter", params)
    click.echo(f"wrote scatter of {dataset.n} images vs reference {params['ref_index']} to {out}")


@main.command()
@click.option("--size", default=16, show_default=True, type=int)
@click.option("--pairs", default=100, show_default=True, type=int)
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--config", type=click.Path(exists=True), help="Replay a persisted config.")
@click.pass_context
def oracle(ctx, **params):
    """Exact-vs-approximate W1 equivalence envelope on random pairs."""
    params = _resolve_config(ctx, "oracle", params)
    _require(params, "out")
    from .oracle import run_equivalence, save_report
    from .transport import SizeCapError

    if params["size"] > 32:
        raise click.UsageError(f"--size {params['size']} exceeds the 32-pixel oracle cap")
    try:
        report = run_equivalence(params["size"], params["pairs"], params["seed"])
        save_report(report, params["out"])
    except (SizeCapError, ValueError) as err:
        _fail(str(err))
    _write_config(params["out"], "oracle", params)
    c, big_c = report.envelope
    click.echo(f"envelope [c, C] = [{c:.6f}, {big_c:.6f}], spread C/c = {report.spread:.3f} "
               f"over {len(report.ratios)} pairs"
               + (f" ({report.skipped_identical} identical pairs skipped)"
                  if report.skipped_identical else ""))


if __name__ == "__main__":
    main()
