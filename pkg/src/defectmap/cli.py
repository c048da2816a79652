"""Command-line entry point: ``defectmap <subcommand> ...``.

Configuration precedence: built-in defaults, then the ``--config`` JSON
file, then individual flags. Exit codes: 0 success, 2 bad input or
validation failure, 3 numerical failure, 4 configuration mismatch.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import statistics
import sys
import time
import warnings
from contextlib import contextmanager

import numpy as np

from . import errors
from .pipeline import PipelineConfig

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3, 4
MESH_SUFFIXES = (".off", ".obj", ".ply")

_INPUT_ERRORS = (errors.ParseError, errors.ValidationError, errors.EmptySubmesh,
                 errors.DimensionMismatch, errors.ResolutionUnachievable,
                 errors.DegenerateElement, FileNotFoundError, IsADirectoryError,
                 ValueError, KeyError, json.JSONDecodeError)
_NUMERIC_ERRORS = (errors.ConvergenceFailure, errors.RankDeficient, errors.NoNonzeroEigenvalue)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def build_config(args) -> PipelineConfig:
    values = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            values.update(PipelineConfig.from_dict(json.load(fh)).to_dict())
    flags = {"p": args.p, "K": args.K, "m": args.m, "q": args.q, "alpha": args.alpha,
             "epsilon": args.epsilon, "degree": args.degree, "roi_iters": args.roi_iters,
             "hks_scaling": args.hks_scaling}
    values.update({k: v for k, v in flags.items() if v is not None})
    return PipelineConfig.from_dict(values)


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def log_timing(args, name, seconds) -> None:
    """Wall-clock times go to a separate log so JSON outputs stay reproducible."""
    with open(os.path.join(args.out, "timings.log"), "a") as fh:
        fh.write(f"{name}\t{seconds:.6f}\n")


@contextmanager
def thread_limit(n):
    if not n:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        yield
        return
    with threadpool_limits(limits=int(n)):
        yield


def _load(path):
    from .mesh import load_mesh
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such mesh file: {path}")
    return load_mesh(path)


def _cache(args):
    return None if args.no_cache else os.path.join(args.out, "cache")


# ---------------------------------------------------------------------------
# subcommands


def cmd_spectrum(args, config: PipelineConfig) -> int:
    from .spectral import spectral_basis
    mesh = _load(args.mesh)
    if not 1 <= config.p < mesh.n_vertices:
        raise ValueError(f"p={config.p} must be smaller than the vertex count {mesh.n_vertices}")
    out = out_dir(args)
    t0 = time.perf_counter()
    basis = spectral_basis(mesh, config.degree, config.p, cache_dir=_cache(args))
    log_timing(args, "spectrum", time.perf_counter() - t0)
    with open(os.path.join(out, "eigenvalues.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue"])
        for i, lam in enumerate(basis.eigenvalues):
            w.writerow([i, repr(float(lam))])
    write_json(os.path.join(out, "spectrum.json"), {
        "schemaVersion": SCHEMA_VERSION,
        "config": config.to_dict(),
        "inputHash": file_hash(args.mesh),
        "meshSize": mesh.n_vertices,
        "eigenvalues": [float(v) for v in basis.eigenvalues],
        "symmetryClusters": basis.symmetry_clusters,
    })
    if not args.no_plots:
        from .plotting import plot_spectrum
        plot_spectrum(basis.eigenvalues, os.path.join(out, "spectrum.png"))
    print(f"{'i':>5}  {'lambda_i':>22}")
    for i, lam in enumerate(basis.eigenvalues):
        print(f"{i:>5}  {lam:>22.12g}")
    return EXIT_OK


def _roi_from_args(args, config, suspect, nominal):
    """ROI mask from ``--roi`` or, when ``roi_iters > 0``, from the recursive search."""
    from .roi import RoiResult, recursive_roi
    if args.roi:
        return RoiResult.load_mask(args.roi, suspect.n_vertices), f"file:{file_hash(args.roi)}"
    if config.roi_iters > 0:
        res = recursive_roi(suspect, nominal, config.roi_iters, config.degree)
        return res.mask, f"recursive:{res.iterations}"
    return None, None


def cmd_localize(args, config: PipelineConfig) -> int:
    from .stats import ThresholdModel, diagnose
    suspect, nominal = _load(args.suspect), _load(args.nominal)
    model = ThresholdModel.load(args.model) if args.model else None
    out = out_dir(args)
    t0 = time.perf_counter()
    roi, provenance = _roi_from_args(args, config, suspect, nominal)
    meta = {"suspectHash": file_hash(args.suspect), "nominalHash": file_hash(args.nominal),
            "roiProvenance": provenance,
            "modelHash": file_hash(args.model) if args.model else None}
    report = diagnose(suspect, nominal, model, roi, config, cache_dir=_cache(args), meta=meta)
    log_timing(args, "localize", time.perf_counter() - t0)
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    with open(os.path.join(out, "deviation.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex", "target", "deviation", "significant"])
        for i, (t, d, s) in enumerate(zip(report.target, report.deviation, report.significant)):
            w.writerow([i, int(t), repr(float(d)), int(s)])
    report.save_ply(suspect, os.path.join(out, "diagnosis.ply"))
    if not args.no_plots:
        from .plotting import plot_deviation_histogram, plot_mesh
        plot_deviation_histogram(report.deviation, os.path.join(out, "deviation_hist.png"),
                                 report.threshold)
        plot_mesh(suspect, report.deviation, os.path.join(out, "deviation.png"),
                  report.significant if model is not None else None)
    print(f"max deviation {report.deviation.max():.6g}")
    if model is not None:
        print(f"threshold {model.threshold:.6g}; {report.significant.sum()} significant vertices")
    return EXIT_OK


def _phase1_files(directory):
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"no such directory: {directory}")
    names = sorted(f for f in os.listdir(directory) if f.lower().endswith(MESH_SUFFIXES))
    if not names:
        raise ValueError(f"no mesh files in {directory}")
    return [os.path.join(directory, f) for f in names]


def cmd_calibrate(args, config: PipelineConfig) -> int:
    from .stats import calibrate, phase1_maxima
    files = _phase1_files(args.phase1_dir)
    nominal = _load(args.nominal)
    parts = [_load(f) for f in files]
    roi = None
    provenance = None
    if args.roi:
        from .roi import RoiResult
        roi = RoiResult.load_mask(args.roi, parts[0].n_vertices)
        provenance = f"file:{file_hash(args.roi)}"
    out = out_dir(args)
    t0 = time.perf_counter()
    maxima = phase1_maxima(parts, nominal, config, roi=roi, cache_dir=_cache(args))
    model = calibrate(maxima, config.alpha, config, provenance)
    log_timing(args, "calibrate", time.perf_counter() - t0)
    payload = model.to_dict()
    payload["nominalHash"] = file_hash(args.nominal)
    payload["phase1"] = [{"file": os.path.basename(f), "hash": file_hash(f), "max": float(v)}
                         for f, v in zip(files, maxima)]
    write_json(os.path.join(out, "threshold_model.json"), payload)
    if not args.no_plots:
        from .plotting import plot_phase1
        plot_phase1(maxima, model.threshold, os.path.join(out, "phase1.png"))
    print(f"m0={model.m0} alpha={model.alpha} -> threshold = rank {model.rank} "
          f"largest maximum = {model.threshold:.6g}")
    return EXIT_OK


def cmd_roi(args, config: PipelineConfig) -> int:
    from .roi import recursive_roi
    suspect, nominal = _load(args.suspect), _load(args.nominal)
    iters = config.roi_iters or 2
    out = out_dir(args)
    t0 = time.perf_counter()
    res = recursive_roi(suspect, nominal, iters, config.degree)
    log_timing(args, "roi", time.perf_counter() - t0)
    payload = res.to_dict()
    payload.update({"config": config.to_dict(), "suspectHash": file_hash(args.suspect),
                    "nominalHash": file_hash(args.nominal)})
    write_json(os.path.join(out, "roi.json"), payload)
    res.save_overlay(suspect, os.path.join(out, "roi_overlay.ply"))
    if not args.no_plots:
        from .plotting import plot_mesh
        plot_mesh(suspect, res.mask.astype(float), os.path.join(out, "roi.png"), res.mask)
    print(f"ROI: {int(res.mask.sum())} of {suspect.n_vertices} vertices after "
          f"{res.iterations} iteration(s)")
    return EXIT_OK


def bench_pair(size: int, seed: int):
    """Nominal sphere and a noisy replicate with ``size`` vertices each."""
    from .synth import PartSpec, generate
    nominal, _ = generate(PartSpec("sphere", size))
    suspect, _ = generate(PartSpec("sphere", size, noise_sigma=0.002, seed=seed))
    return suspect, nominal


def run_bench(sizes, reps, config: PipelineConfig, roi_fraction=None):
    """Rows of (size, mean, std, per-stage means) over ``reps`` timed pipeline runs."""
    from .pipeline import run_pipeline
    rows = []
    for size in sizes:
        totals, stages = [], []
        for r in range(reps):
            suspect, nominal = bench_pair(size, seed=r + 1)
            roi = None
            if roi_fraction is not None:
                roi = np.zeros(suspect.n_vertices, dtype=bool)
                roi[:max(1, int(round(roi_fraction * suspect.n_vertices)))] = True
            timings = {}
            t0 = time.perf_counter()
            run_pipeline(suspect, nominal, config, roi=roi, timings=timings)
            totals.append(time.perf_counter() - t0)
            stages.append(timings)
        std = statistics.stdev(totals) if len(totals) > 1 else 0.0
        row = {"size": size, "mean_seconds": statistics.fmean(totals), "std_seconds": std}
        for key in ("basis", "hks", "cmap", "recovery"):
            row[f"{key}_seconds"] = statistics.fmean(s[key] for s in stages)
        rows.append(row)
    return rows


def cmd_bench(args, config: PipelineConfig) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    if args.reps < 1:
        raise ValueError("reps must be at least 1")
    if not sizes or min(sizes) < 4:
        raise ValueError("sizes must be positive vertex counts >= 4")
    out = out_dir(args)
    rows = run_bench(sizes, args.reps, config)
    path = os.path.join(out, "bench.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    if not args.no_plots:
        from .plotting import plot_bench
        plot_bench([r["size"] for r in rows], [r["mean_seconds"] for r in rows],
                   [r["std_seconds"] for r in rows], os.path.join(out, "bench.png"))
    for r in rows:
        print(f"{r['size']:>7}  {r['mean_seconds']:.4f} s  (sd {r['std_seconds']:.4f}, "
              f"recovery {r['recovery_seconds']:.4f} s)")
    return EXIT_OK


def cmd_synth(args, config: PipelineConfig) -> int:
    from .mesh import save_off
    from .synth import PartSpec, generate, phase1_batch
    with open(args.spec) as fh:
        data = json.load(fh)
    count = data.pop("count", None)
    base_seed = data.pop("baseSeed", None)
    if "noiseSigma" in data:
        data["noise_sigma"] = data.pop("noiseSigma")
    spec = PartSpec.from_dict(data)
    out = out_dir(args)
    stem = args.name or spec.primitive
    if count is None:
        mesh, truth = generate(spec)
        save_off(mesh, os.path.join(out, f"{stem}.off"))
        with open(os.path.join(out, f"{stem}.truth.json"), "w") as fh:
            fh.write(truth.to_json() + "\n")
        print(f"wrote {stem}.off ({mesh.n_vertices} vertices, "
              f"{int(truth.defect_mask.sum())} defect vertices)")
    else:
        seed0 = spec.seed if base_seed is None else int(base_seed)
        meshes = phase1_batch(spec, int(count), seed0)
        width = len(str(max(len(meshes) - 1, 0)))
        for i, mesh in enumerate(meshes):
            save_off(mesh, os.path.join(out, f"{stem}_{i:0{width}d}.off"))
        print(f"wrote {len(meshes)} Phase-I replicates to {out}")
    return EXIT_OK


COMMANDS = {"spectrum": cmd_spectrum, "localize": cmd_localize, "calibrate": cmd_calibrate,
            "roi": cmd_roi, "bench": cmd_bench, "synth": cmd_synth}


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline configuration")
    g.add_argument("--config", help="JSON file with flat PipelineConfig keys")
    g.add_argument("--p", type=int, help="number of eigenpairs (200)")
    g.add_argument("--K", type=int, help="number of HKS times (100)")
    g.add_argument("--m", type=int, help="candidate count in point-map recovery (5)")
    g.add_argument("--q", type=float, help="ridge weight in [0, 1) (0.8)")
    g.add_argument("--alpha", type=float, help="significance level (0.05)")
    g.add_argument("--epsilon", type=float, help="HKS truncation precision (1e-4)")
    g.add_argument("--degree", type=str.upper, choices=["P1", "P3"], help="FEM degree (P3)")
    g.add_argument("--roi-iters", dest="roi_iters", type=int, help="recursive ROI iterations (0)")
    g.add_argument("--hks-scaling", dest="hks_scaling", choices=["integral", "nonzero"],
                   help="HKS normaliser (integral)")
    g.add_argument("--threads", type=int, help="cap on BLAS/LAPACK worker threads")
    g.add_argument("--out", default="out", help="output directory (out)")
    g.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    g.add_argument("--no-cache", action="store_true", help="do not cache spectral bases")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="defectmap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="eigenvalues of one mesh")
    p.add_argument("mesh")
    _common(p)

    p = sub.add_parser("localize", help="deviation field of a suspect against a nominal mesh")
    p.add_argument("suspect")
    p.add_argument("nominal")
    p.add_argument("--model", help="threshold model JSON from 'calibrate'")
    p.add_argument("--roi", help="ROI JSON (index list or 'roi' output)")
    _common(p)

    p = sub.add_parser("calibrate", help="threshold from a directory of Phase-I meshes")
    p.add_argument("nominal")
    p.add_argument("phase1_dir")
    p.add_argument("--roi", help="ROI JSON applied to every Phase-I part")
    _common(p)

    p = sub.add_parser("roi", help="recursive nodal-domain region of interest")
    p.add_argument("suspect")
    p.add_argument("nominal")
    _common(p)

    p = sub.add_parser("bench", help="time the pipeline on synthetic sphere pairs")
    p.add_argument("--sizes", default="500,1000,2000")
    p.add_argument("--reps", type=int, default=3)
    _common(p)

    p = sub.add_parser("synth", help="generate a synthetic part from a JSON spec")
    p.add_argument("spec")
    p.add_argument("--name", help="output file stem")
    _common(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    def show_warning(message, category, filename, lineno, file=None, line=None):
        print(f"warning: {category.__name__}: {message}", file=sys.stderr)

    with warnings.catch_warnings():
        warnings.showwarning = show_warning
        return _dispatch(args)


def _dispatch(args) -> int:
    try:
        config = build_config(args)
        with thread_limit(args.threads):
            return COMMANDS[args.command](args, config)
    except errors.ConfigMismatch as exc:
        print(f"error: configuration mismatch: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

if __name__ == "__main__":
    sys.exit(main())
