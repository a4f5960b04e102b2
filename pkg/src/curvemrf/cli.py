"""Command-line entry point.

Subcommands: train a pattern bank, evaluate its cost approximation on
random shapes, inpaint a partially constrained shape, segment a color
image from strokes, analyze the quantized-direction baseline, and serve
the HTTP API.  Every run writes a manifest of its fully resolved
parameters; ``rerun`` replays a manifest.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import socket
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import PatternBank, total_energy
from .learning import (
    ErrorTrace,
    TrainingConfig,
    sample_training_set,
    signed_relative_errors,
    train_alg1,
    train_alg2,
)
from .pipeline import (
    InferenceSettings,
    build_inpainting_model,
    build_segmentation_model,
    check_grid_size,
    fit_stroke_models,
    labeling_to_bytes_image,
    likelihood_argmax,
    min_marginal_map,
    run_pipeline,
)
from .pnm import read_pnm, write_pnm
from .shapes import boundary_count, sample_shape
from .tasks import (
    DirectedEdgeGraph,
    SeedMask,
    TaskError,
    baseline_optimal_path,
    polyline_cost,
)

TEST_SEED_OFFSET = 1_000_000
REFIT_SEED_OFFSET = 777


def _fail(message: str, code: int = 1) -> "SystemExit":
    print(f"error: {message}", file=sys.stderr)
    return SystemExit(code)


def _require_outdir(params: dict) -> str:
    outdir = params["outdir"]
    if not os.path.isdir(outdir):
        raise _fail(f"output directory {outdir!r} does not exist", code=2)
    return outdir


def _out(outdir: str, name: str) -> str:
    return os.path.join(outdir, name)


def _dump_json(path: str, payload) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(outdir: str, command: str, params: dict) -> None:
    _dump_json(_out(outdir, "manifest.json"),
               {"command": command, "params": params})


def _write_lb_trace(path: str, trace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pass", "lower_bound"])
        for i, value in enumerate(trace, start=1):
            writer.writerow([i, repr(float(value))])


def _parse_passes(text: str):
    if text == "auto":
        return "auto"
    try:
        return int(text)
    except ValueError:
        raise _fail(f"--passes must be an integer or 'auto', got {text!r}")


def _settings(params: dict) -> InferenceSettings:
    return InferenceSettings(
        passes=_parse_passes(str(params["passes"])),
        ordering=params["ordering"],
        block_size=int(params["block_size"]),
        restricted_lp=bool(params["restricted_lp"]),
    )


def _load_bank(path: str) -> PatternBank:
    if not os.path.isfile(path):
        raise _fail(f"bank file {path!r} does not exist")
    return PatternBank.load(path)


def _thread_count() -> int | None:
    raw = os.environ.get("CURVEMRF_THREADS", "")
    if not raw:
        return None
    count = int(raw)
    return count if count > 0 else None


# --- train -----------------------------------------------------------------

def _run_train(params: dict) -> None:
    outdir = _require_outdir(params)
    cfg = TrainingConfig(
        n_samples=params["samples"],
        n_orientations=params["orientations"],
        n_curvature_bins=params["curvature_bins"],
        side=params["K"],
        f_max=params["f_max"],
        max_iterations=params["iterations"],
        seed=params["seed"],
    )
    train_set = sample_training_set(cfg)
    test_set = sample_training_set(cfg, seed_offset=TEST_SEED_OFFSET)
    bank, trace = train_alg1(train_set, test_set, cfg)
    if params["refit_images"] > 0:
        rng = np.random.default_rng(params["seed"] + REFIT_SEED_OFFSET)
        shapes = [
            sample_shape("fourier", rng, (100, 100), cfg.f_max)
            for _ in range(params["refit_images"])
        ]
        bank, refit_trace = train_alg2(
            [s.labeling for s in shapes],
            [s.true_cost for s in shapes],
            bank,
            refit_weights=params["refit_weights"],
        )
        with open(_out(outdir, "refit_trace.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "total_absolute_error"])
            for i, value in enumerate(refit_trace):
                writer.writerow([i, repr(float(value))])
    bank.save(_out(outdir, "bank.json"))
    trace.write_csv(_out(outdir, "trace.csv"))
    _write_manifest(outdir, "train", params)


def cmd_train(args) -> None:
    curvature_bins = args.curvature_bins
    orientations = args.orientations
    patterns = args.patterns
    if patterns is None:
        if orientations is None:
            patterns = 24
            orientations = patterns // curvature_bins
        else:
            patterns = orientations * curvature_bins
    elif orientations is None:
        if patterns % curvature_bins != 0:
            raise _fail(
                f"--patterns {patterns} is not divisible by "
                f"--curvature-bins {curvature_bins}"
            )
        orientations = patterns // curvature_bins
    if orientations * curvature_bins != patterns:
        raise _fail(
            f"--orientations {orientations} x --curvature-bins "
            f"{curvature_bins} != --patterns {patterns}"
        )
    _run_train({
        "outdir": args.outdir,
        "K": args.K,
        "patterns": patterns,
        "orientations": orientations,
        "curvature_bins": curvature_bins,
        "samples": args.samples,
        "iterations": args.iterations,
        "f_max": args.f_max,
        "seed": args.seed,
        "refit_images": args.refit_images,
        "refit_weights": args.refit_weights,
    })


# --- eval-approx -----------------------------------------------------------

def _run_eval_approx(params: dict) -> None:
    outdir = _require_outdir(params)
    bank = _load_bank(params["bank"])
    kind = {"circles": "circle", "fourier": "fourier"}[params["shapes"]]
    dims = (params["dims"], params["dims"])
    rng = np.random.default_rng(params["seed"])
    shapes = [
        sample_shape(kind, rng, dims, bank.f_max)
        for _ in range(params["n"])
    ]
    with ThreadPoolExecutor(max_workers=_thread_count()) as pool:
        signed = np.concatenate(
            list(pool.map(lambda s: signed_relative_errors(bank, [s]),
                          shapes))
        )
    true_per_length = np.array([s.true_cost / s.true_length for s in shapes])
    model_per_length = true_per_length + signed
    with open(_out(outdir, "pairs.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true_per_length", "model_per_length"])
        for t, m in zip(true_per_length, model_per_length):
            writer.writerow([repr(float(t)), repr(float(m))])
    corr = float(np.corrcoef(true_per_length, model_per_length)[0, 1])
    _dump_json(_out(outdir, "stats.json"), {
        "n": params["n"],
        "pearson": corr,
        "mean_signed_relative_error": float(signed.mean()),
        "mean_absolute_relative_error": float(np.abs(signed).mean()),
    })
    _write_manifest(outdir, "eval-approx", params)


def cmd_eval_approx(args) -> None:
    _run_eval_approx({
        "outdir": args.outdir,
        "bank": args.bank,
        "shapes": args.shapes,
        "n": args.n,
        "dims": args.dims,
        "seed": args.seed,
    })


# --- inpaint ---------------------------------------------------------------

def _inference_report(result) -> dict:
    return {
        "energy": result.energy,
        "lower_bound": result.lower_bound,
        "rounded_energy": result.rounded_energy,
        "polished_energy": result.polished_energy,
        "lp_energy": result.lp_energy,
        "passes": len(result.lower_bound_trace),
    }


def _write_inference_outputs(outdir: str, result) -> None:
    write_pnm(_out(outdir, "labeling.pgm"),
              labeling_to_bytes_image(result.labeling))
    write_pnm(_out(outdir, "min_marginals.pgm"),
              min_marginal_map(result.min_marginals))
    _write_lb_trace(_out(outdir, "lb_trace.csv"), result.lower_bound_trace)


def _run_inpaint(params: dict) -> None:
    outdir = _require_outdir(params)
    bank = _load_bank(params["bank"])
    mask = SeedMask(read_pnm(params["mask"]))
    check_grid_size(mask.dims, force=params["force"])
    model = build_inpainting_model(bank, mask)
    result = run_pipeline(model, _settings(params))
    _write_inference_outputs(outdir, result)
    _dump_json(_out(outdir, "report.json"), _inference_report(result))
    _write_manifest(outdir, "inpaint", params)


def cmd_inpaint(args) -> None:
    _run_inpaint({
        "outdir": args.outdir,
        "bank": args.bank,
        "mask": args.mask,
        "passes": args.passes,
        "ordering": args.ordering,
        "block_size": args.block_size,
        "restricted_lp": args.restricted_lp,
        "force": args.force,
    })


# --- segment ---------------------------------------------------------------

def _load_color_image(path: str) -> np.ndarray:
    raw = read_pnm(path)
    if raw.ndim != 3:
        raise _fail(f"{path!r} is not a color (P6) image")
    return raw.astype(np.float64) / 255.0


def _run_segment(params: dict) -> None:
    outdir = _require_outdir(params)
    bank = _load_bank(params["bank"])
    image = _load_color_image(params["image"])
    mask = SeedMask(read_pnm(params["strokes"]))
    h, w = image.shape[:2]
    if mask.dims != (w, h):
        raise TaskError(
            f"stroke mask dims {mask.dims} do not match image {(w, h)}"
        )
    check_grid_size((w, h), force=params["force"])
    prior_weight = params["prior_weight"]
    if prior_weight < 0:
        raise TaskError("lambda must be >= 0")
    report: dict = {"prior_weight": prior_weight}
    if prior_weight == 0.0:
        fg_model, bg_model = fit_stroke_models(
            image, mask, params["components"], params["seed"]
        )
        labeling = likelihood_argmax(image, fg_model, bg_model, mask)
        write_pnm(_out(outdir, "labeling.pgm"),
                  labeling_to_bytes_image(labeling))
        write_pnm(_out(outdir, "min_marginals.pgm"),
                  np.full((h, w), 128, dtype=np.uint8))
        _write_lb_trace(_out(outdir, "lb_trace.csv"), ())
        report["boundary_count"] = boundary_count(labeling)
    else:
        model, fg_model, bg_model = build_segmentation_model(
            bank, image, mask, prior_weight,
            components=params["components"], seed=params["seed"],
        )
        result = run_pipeline(model, _settings(params))
        _write_inference_outputs(outdir, result)
        report.update(_inference_report(result))
        report["boundary_count"] = boundary_count(result.labeling)
    if params["sweep"]:
        counts = []
        for lam in params["sweep"]:
            model, _, _ = build_segmentation_model(
                bank, image, mask, lam,
                components=params["components"], seed=params["seed"],
            )
            counts.append(boundary_count(
                run_pipeline(model, _settings(params)).labeling
            ))
        monotone = all(b <= a for a, b in zip(counts, counts[1:]))
        _dump_json(_out(outdir, "sweep.json"), {
            "lambdas": list(params["sweep"]),
            "boundary_counts": counts,
            "monotone_nonincreasing": monotone,
        })
    _dump_json(_out(outdir, "report.json"), report)
    _write_manifest(outdir, "segment", params)


def cmd_segment(args) -> None:
    sweep = []
    if args.sweep:
        sweep = [float(v) for v in args.sweep.split(",") if v]
        if any(v <= 0 for v in sweep):
            raise _fail("--sweep values must be positive")
    _run_segment({
        "outdir": args.outdir,
        "bank": args.bank,
        "image": args.image,
        "strokes": args.strokes,
        "prior_weight": args.prior_weight,
        "components": args.components,
        "passes": args.passes,
        "ordering": args.ordering,
        "block_size": args.block_size,
        "restricted_lp": args.restricted_lp,
        "force": args.force,
        "seed": args.seed,
        "sweep": sweep,
    })


# --- baseline --------------------------------------------------------------

def _staircase_points(length: int, rise: int):
    """Axis-step competitor for the straight line (0,0) -> (length, rise)."""
    if rise == 0:
        return [(0, 0), (length, 0)]
    run = length // rise
    points = [(0, 0)]
    for _ in range(rise):
        x, y = points[-1]
        points.extend((x + i, y) for i in range(1, run))
        points.append((x + run, y + 1))
    return points


def _run_baseline(params: dict) -> None:
    outdir = _require_outdir(params)
    scenario = params["scenario"]
    report: dict = {"scenario": scenario}
    if scenario in ("line", "line-quarter-slope"):
        length = params["length"]
        if scenario == "line":
            rise = 0
        else:
            if length % 4 != 0:
                raise TaskError("line-quarter-slope needs --length "
                                "divisible by 4")
            rise = length // 4
        graph = DirectedEdgeGraph(dims=(length + 1, rise + 3))
        path, cost = baseline_optimal_path(graph, (0, 1), (length, rise + 1))
        stairs = [(x, y + 1) for x, y in _staircase_points(length, rise)]
        report["cost"] = cost
        report["staircase_cost"] = polyline_cost(stairs)
        report["length"] = length
    elif scenario == "quarter-circle":
        radius = params["radius"]
        graph = DirectedEdgeGraph(dims=(radius + 2, radius + 2))
        path, cost = baseline_optimal_path(
            graph, ((radius, 0), (0, 1)), ((0, radius), (-1, 0))
        )
        corner = [(radius, 0), (radius, radius), (0, radius)]
        report["cost"] = cost
        report["square_corner_cost"] = polyline_cost(corner)
        report["radius"] = radius
    else:
        raise TaskError(f"unknown scenario {scenario!r}")
    with open(_out(outdir, "path.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y"])
        for x, y in path:
            writer.writerow([x, y])
    _dump_json(_out(outdir, "report.json"), report)
    _write_manifest(outdir, "baseline", params)


def cmd_baseline(args) -> None:
    _run_baseline({
        "outdir": args.outdir,
        "scenario": args.scenario,
        "length": args.length,
        "radius": args.radius,
    })


# --- serve -----------------------------------------------------------------

def cmd_serve(args) -> None:
    from .server import create_app

    bank = _load_bank(args.bank)
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((args.host, args.port))
    except OSError:
        raise _fail(f"port {args.port} on {args.host} is busy", code=3)
    finally:
        probe.close()
    import uvicorn

    app = create_app(bank, ui_dir=args.ui_dir, queue_depth=args.queue_depth)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


# --- rerun -----------------------------------------------------------------

_RUNNERS = {
    "train": _run_train,
    "eval-approx": _run_eval_approx,
    "inpaint": _run_inpaint,
    "segment": _run_segment,
    "baseline": _run_baseline,
}


def cmd_rerun(args) -> None:
    with open(args.manifest, encoding="ascii") as fh:
        doc = json.load(fh)
    command = doc.get("command")
    if command not in _RUNNERS:
        raise _fail(f"manifest command {command!r} cannot be replayed")
    params = dict(doc["params"])
    if args.outdir is not None:
        params["outdir"] = args.outdir
    _RUNNERS[command](params)


# --- parser ----------------------------------------------------------------

def _add_inference_flags(parser) -> None:
    parser.add_argument("--passes", default="300",
                        help="message-passing passes, or 'auto'")
    parser.add_argument("--ordering", default="pixels-first",
                        choices=["pixels-first", "interleaved"])
    parser.add_argument("--block-size", type=int, default=6)
    parser.add_argument("--restricted-lp", action="store_true",
                        help="refine through the pruned linear relaxation")
    parser.add_argument("--force", action="store_true",
                        help="allow grids larger than 160 pixels per side")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curvemrf",
        description="Learned curvature energies on pixel grids",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a pattern bank")
    p.add_argument("--outdir", required=True)
    p.add_argument("--K", type=int, default=6, help="window side")
    p.add_argument("--patterns", type=int, default=None,
                   help="number of fitted (non-special) patterns "
                        "(default 24)")
    p.add_argument("--orientations", type=int, default=None)
    p.add_argument("--curvature-bins", type=int, default=3)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--f-max", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--refit-images", type=int, default=0,
                   help="whole-shape recalibration images (0 = off)")
    p.add_argument("--refit-weights", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-approx",
                       help="cost approximation quality on random shapes")
    p.add_argument("--outdir", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--shapes", choices=["circles", "fourier"],
                   default="circles")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--dims", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_approx)

    p = sub.add_parser("inpaint", help="complete a partially known shape")
    p.add_argument("--outdir", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--mask", required=True,
                   help="PGM seed mask (0 bg, 255 fg, 128 free)")
    _add_inference_flags(p)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("segment", help="seeded color segmentation")
    p.add_argument("--outdir", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--image", required=True, help="PPM color image")
    p.add_argument("--strokes", required=True, help="PGM seed mask")
    p.add_argument("--lambda", dest="prior_weight", type=float, default=1.0,
                   help="curvature prior strength (0 = likelihood only)")
    p.add_argument("--components", type=int, default=10,
                   help="mixture components per color model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sweep", default="",
                   help="comma-separated extra lambda values to compare")
    _add_inference_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("baseline",
                       help="quantized-direction shortest-path scenarios")
    p.add_argument("--outdir", required=True)
    p.add_argument("--scenario", required=True,
                   choices=["line", "line-quarter-slope", "quarter-circle"])
    p.add_argument("--length", type=int, default=40)
    p.add_argument("--radius", type=int, default=10)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--bank", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--queue-depth", type=int, default=8)
    p.add_argument("--ui-dir", default=None,
                   help="static UI bundle to serve at /")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", default=None,
                   help="override the manifest's output directory")
    p.set_defaults(func=cmd_rerun)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except SystemExit:
        raise
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
