"""Command-line pipelines.

Subcommands: fit-image, fit-sdf, extract-mesh, analyze-spectrum, verify-init,
bench-idft. Every run takes an optional INI config file (one section named
after the subcommand, flat key = value entries), overridable by flags, and
writes its artifacts under --out. Unknown config keys are rejected by name.

All randomness flows from the single --seed through documented stream forks,
so reruns with the same seed and thread cap produce byte-identical numeric
artifacts (timing columns excepted: wall-clock is not reproducible).
Every CSV starts with a provenance comment (tool version, seed, config hash).

Exit codes: 0 success, 1 runtime failure, 2 configuration error; failures
emit a machine-readable JSON record on stderr.
"""

import argparse
import configparser
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidInputError
from .image_task import (
    ImageField, fit_image, load_image, make_test_image, pixel_grid,
    render_extrapolated, render_head, save_image,
)
from .mesh import read_obj, write_obj
from .network import (
    NetworkSpec, cumulative_bandwidth, evaluate_truncated, forward,
    init_network, legacy_filter_init, load_checkpoint, save_checkpoint,
)
from .numerics import dft_spectrum, sine_integral
from .rng import Rng
from .sdf_task import (
    MeshSdf, SphereSdf, chamfer, fit_sdf, iou, occupancy_grid,
    surface_points,
)
from .spectral import (
    activation_statistics, expand_network, predicted_frequency_variance,
    predicted_sine_count, _EXPANSION_GUARD,
)
from .extraction import ExtractionConfig, extract_mesh, timing_report
from .training import TrainConfig


class ConfigError(Exception):
    pass


# per-task option schema: key -> (type, default)
SCHEMAS = {
    "fit-image": {
        "input": (str, "demo"), "resolution": (int, 64), "channels": (int, 1),
        "hidden_dim": (int, 128), "steps": (int, 2000), "lr_start": (float, 1e-2),
        "lr_end": (float, 1e-3), "supervision": (str, "shared"),
        "bandwidth": (float, 0.0),
    },
    "fit-sdf": {
        "source": (str, "sphere"), "radius": (float, 0.25), "mesh": (str, ""),
        "hidden_dim": (int, 64), "steps": (int, 5000), "lr_start": (float, 1e-2),
        "lr_end": (float, 1e-4), "bandwidth": (float, 32.0),
        "lambda_sdf": (float, 0.01), "n_coarse": (int, 5000), "n_fine": (int, 5000),
        "eval_resolution": (int, 64),
    },
    "extract-mesh": {
        "checkpoint": (str, ""), "resolution": (int, 128), "strategy": (str, "all"),
        "tau_factor": (float, 0.7), "alpha": (float, 2.0), "levels": (int, 4),
    },
    "analyze-spectrum": {
        "checkpoint": (str, ""), "layers": (int, 5), "hidden_dim": (int, 32),
        "bandwidth": (float, 16.0), "in_dim": (int, 1), "grid": (int, 256),
    },
    "verify-init": {
        "d_h": (int, 1024), "layers": (int, 9), "bandwidth_rad": (float, 30 * np.pi),
        "samples": (int, 65536), "scheme": (str, "bandlimited"),
    },
    "bench-idft": {
        "sizes": (str, "512,1024,2048,4096,8192,16384,32768"),
        "n_samples": (int, 4096), "hidden_dim": (int, 128), "repeats": (int, 5),
    },
}

TASKS = tuple(SCHEMAS)


def _coerce(task, key, raw):
    typ = SCHEMAS[task][key][0]
    try:
        return typ(raw)
    except ValueError as e:
        raise ConfigError(f"config key {key!r}: {e}") from e


def load_config_file(path, task):
    """Read the task's section of an INI file; unknown keys are fatal."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    section = task if parser.has_section(task) else configparser.DEFAULTSECT
    out = {}
    for key, raw in parser.items(section):
        if key not in SCHEMAS[task]:
            raise ConfigError(f"unknown config key {key!r} for task {task}")
        out[key] = _coerce(task, key, raw)
    return out


def effective_config(task, args):
    cfg = {k: default for k, (_, default) in SCHEMAS[task].items()}
    if args.config:
        cfg.update(load_config_file(args.config, task))
    for key in SCHEMAS[task]:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    cfg["seed"] = args.seed
    return cfg


def config_hash(cfg):
    text = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_csv(path, header, rows, provenance):
    """CSV with one leading provenance comment line; floats at full precision."""

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.17g}"
        return str(v)

    with open(path, "w") as f:
        f.write(f"# bandnet={__version__} seed={provenance['seed']} "
                f"config_sha256={provenance['hash']}\n")
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(fmt(v) for v in row) + "\n")


def _loss_curve_rows(curve, heads):
    rows = []
    for rec in curve:
        rows.append([rec["step"], rec["lr"], rec["loss"]]
                    + [rec["head_losses"].get(h, 0.0) for h in heads])
    return rows


def _spectrum_csv(path, params, spec, head, grid, provenance):
    """Spectrum of the head sampled over one period: full for 1-2 input dims,
    the central 2d slice for 3."""
    n = grid
    axes = min(spec.in_dim, 2)
    coords = -0.5 + np.arange(n) / n
    if axes == 1:
        pts = np.zeros((n, spec.in_dim))
        pts[:, 0] = coords
        vals = evaluate_truncated(params, spec, pts, head)[:, 0]
        s = dft_spectrum(vals, period=spec.period)
        rows = [[int(k), float(m)] for k, m in zip(s.bins[0], s.magnitudes)]
        write_csv(path, ["frequency", "magnitude"], rows, provenance)
    else:
        gy, gx = np.meshgrid(coords, coords, indexing="ij")
        pts = np.zeros((n * n, spec.in_dim))
        pts[:, 0] = gy.ravel()
        pts[:, 1] = gx.ravel()
        vals = evaluate_truncated(params, spec, pts, head)[:, 0].reshape(n, n)
        s = dft_spectrum(vals, period=spec.period)
        rows = []
        for i, ky in enumerate(s.bins[0]):
            for j, kx in enumerate(s.bins[1]):
                rows.append([int(ky), int(kx), float(s.magnitudes[i, j])])
        write_csv(path, ["frequency_y", "frequency_x", "magnitude"], rows, provenance)


def run_fit_image(cfg, out, prov):
    if cfg["input"] == "demo":
        image = make_test_image(cfg["resolution"], channels=cfg["channels"],
                                seed=cfg["seed"])
    else:
        image = load_image(cfg["input"])
    tc = TrainConfig(total_steps=cfg["steps"], lr_start=cfg["lr_start"],
                     lr_end=cfg["lr_end"], seed=cfg["seed"],
                     supervision=cfg["supervision"])
    bandwidth = cfg["bandwidth"] if cfg["bandwidth"] > 0 else None
    result = fit_image(image, hidden_dim=cfg["hidden_dim"], config=tc,
                       bandwidth=bandwidth)
    heads = result.spec.heads
    write_csv(out / "loss_curve.csv",
              ["step", "lr", "total_loss"] + [f"loss_head{h}" for h in heads],
              _loss_curve_rows(result.curve, heads), prov)
    rows = [[h, m["resolution"], m["psnr"], m["ssim"]]
            for h, m in sorted(result.metrics.items())]
    write_csv(out / "metrics.csv", ["head", "resolution", "psnr", "ssim"], rows, prov)
    save_checkpoint(out / "checkpoint.npz", result.spec, result.params)
    for h, m in result.metrics.items():
        save_image(out / f"head{h}.png", render_head(result.params, result.spec,
                                                     h, m["resolution"]))
    save_image(out / "extrapolated.png",
               render_extrapolated(result.params, result.spec,
                                   samples_per_unit=image.shape[0]))
    for h in heads:
        _spectrum_csv(out / f"spectrum_head{h}.csv", result.params, result.spec,
                      h, image.shape[0], prov)
    return 0


def run_fit_sdf(cfg, out, prov):
    if cfg["source"] == "sphere":
        source = SphereSdf(cfg["radius"])
    elif cfg["source"] == "mesh":
        source = MeshSdf(read_obj(cfg["mesh"]))
    else:
        raise ConfigError(f"unknown sdf source {cfg['source']!r}")
    tc = TrainConfig(total_steps=cfg["steps"], lr_start=cfg["lr_start"],
                     lr_end=cfg["lr_end"], seed=cfg["seed"])
    result = fit_sdf(source, hidden_dim=cfg["hidden_dim"], bandwidth=cfg["bandwidth"],
                     config=tc, lam=cfg["lambda_sdf"], n_coarse=cfg["n_coarse"],
                     n_fine=cfg["n_fine"])
    heads = result.spec.heads
    write_csv(out / "loss_curve.csv",
              ["step", "lr", "total_loss"] + [f"loss_head{h}" for h in heads],
              _loss_curve_rows(result.curve, heads), prov)
    save_checkpoint(out / "checkpoint.npz", result.spec, result.params)

    res = cfg["eval_resolution"]
    ex_cfg = ExtractionConfig(resolution=res, levels=min(4, _max_levels(res)),
                              strategy="combined")
    report = extract_mesh(result.params, result.spec, ex_cfg)
    write_obj(out / "mesh.obj", report.mesh)
    rows = []
    field = _occupancy_field(result.params, result.spec)
    occ_net = occupancy_grid(field, res)
    occ_gt = occupancy_grid(source, res)
    rows.append(["iou", iou(occ_net, occ_gt)])
    if not report.mesh.is_empty():
        rng = Rng(cfg["seed"]).fork(99)
        gt_pts = source.surface_sample(100_000, rng) if hasattr(source, "surface_sample") \
            else surface_points(source, 100_000, rng)
        from .sdf_task import sample_mesh_surface
        net_pts = sample_mesh_surface(report.mesh, 100_000, rng.fork(1))
        rows.append(["chamfer", chamfer(gt_pts, net_pts)])
    write_csv(out / "metrics.csv", ["metric", "value"], rows, prov)
    return 0


def _max_levels(resolution):
    levels = 1
    while resolution % (2 ** levels) == 0 and 2 ** levels <= resolution // 4:
        levels += 1
    return levels


def _occupancy_field(params, spec):
    head = spec.heads[-1]

    def field(points):
        return evaluate_truncated(params, spec, points, head,
                                  dtype=np.float32)[:, 0].astype(np.float64)

    return field


def run_extract_mesh(cfg, out, prov):
    if not cfg["checkpoint"]:
        raise ConfigError("extract-mesh needs a checkpoint path")
    ck = Path(cfg["checkpoint"])
    if not ck.exists():
        raise ConfigError(f"checkpoint not found: {ck}")
    spec, params = load_checkpoint(ck)
    strategies = (["dense", "adaptive", "multiscale", "combined"]
                  if cfg["strategy"] == "all" else [cfg["strategy"]])
    reports = []
    for strategy in strategies:
        ex_cfg = ExtractionConfig(resolution=cfg["resolution"], levels=cfg["levels"],
                                  tau_factor=cfg["tau_factor"], alpha=cfg["alpha"],
                                  strategy=strategy)
        report = extract_mesh(params, spec, ex_cfg)
        reports.append(report)
        write_obj(out / f"mesh_{strategy}.obj", report.mesh)
    rows = [[r["strategy"], r["resolution"], r["cells_evaluated"], r["low_queries"],
             r["full_queries"], r["seconds"],
             "" if r["speedup_vs_dense"] is None else r["speedup_vs_dense"]]
            for r in timing_report(reports)]
    write_csv(out / "timings.csv",
              ["strategy", "resolution", "cells_evaluated", "low_queries",
               "full_queries", "seconds", "speedup_vs_dense"], rows, prov)
    return 0


def run_analyze_spectrum(cfg, out, prov):
    if cfg["checkpoint"]:
        spec, params = load_checkpoint(Path(cfg["checkpoint"]))
    else:
        n = cfg["layers"]
        spec = NetworkSpec(in_dim=cfg["in_dim"], hidden_dim=cfg["hidden_dim"],
                           n_layers=n, out_dim=1,
                           bandwidths=(cfg["bandwidth"] / n,) * n,
                           heads=tuple(range(max(0, n - 3), n)))
        params = init_network(spec, Rng(cfg["seed"]))
    stats = predicted_frequency_variance(spec)
    summary = {
        "p_m": stats.p_m.tolist(),
        "freq_variance_rad2": stats.freq_variance,
        "output_variance_rad2": stats.output_variance,
        "approximate": stats.approximate,
        "heads": {},
    }
    for h in spec.heads:
        count = predicted_sine_count(h + 1, spec.hidden_dim)
        entry = {
            "predicted_terms": count,
            "cumulative_bandwidth_cycles": cumulative_bandwidth(spec, h),
        }
        if count <= min(_EXPANSION_GUARD, 200_000):
            exp = expand_network(params, spec, h)
            entry["expanded_terms"] = exp.n_terms
            entry["max_frequency_rad"] = float(np.max(np.abs(exp.frequencies)))
        else:
            entry["expanded_terms"] = None
        summary["heads"][str(h)] = entry
    (out / "freq_stats.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    for h in spec.heads:
        _spectrum_csv(out / f"spectrum_head{h}.csv", params, spec, h,
                      cfg["grid"], prov)
    return 0


def run_verify_init(cfg, out, prov):
    n = cfg["layers"]
    b_rad = cfg["bandwidth_rad"]
    b_cycles = b_rad / (2 * np.pi)
    spec = NetworkSpec(in_dim=1, hidden_dim=cfg["d_h"], n_layers=n, out_dim=1,
                       bandwidths=(b_cycles,) * n, heads=(n - 1,), quantize=False)
    rng = Rng(cfg["seed"])
    if cfg["scheme"] == "bandlimited":
        params = init_network(spec, rng.fork(0))
        g_theory = 0.5 * (1 - sine_integral(b_rad) / b_rad)
        lin_theory, hid_theory = 1.0, 0.5
    elif cfg["scheme"] == "legacy":
        params = legacy_filter_init(spec, rng.fork(0))
        g_theory = lin_theory = hid_theory = float("nan")
    else:
        raise ConfigError(f"unknown init scheme {cfg['scheme']!r}")
    stats = activation_statistics(params, spec, cfg["samples"], rng.fork(1),
                                  dtype=np.float32)
    rows = []
    for i in range(n):
        rows.append(["sine", i, stats.sine_mean[i], stats.sine_var[i], g_theory])
        if i > 0:
            rows.append(["post_linear", i, stats.lin_mean[i], stats.lin_var[i],
                         lin_theory])
        rows.append(["hidden", i, stats.hidden_mean[i], stats.hidden_var[i],
                     g_theory if i == 0 else hid_theory])
    write_csv(out / "init_stats.csv",
              ["stage", "layer", "mean", "variance", "variance_theory"], rows, prov)
    return 0


def run_bench_idft(cfg, out, prov):
    sizes = [int(s) for s in cfg["sizes"].split(",") if s]
    for s in sizes:
        if s < 2 or s & (s - 1):
            raise ConfigError(f"spectrum sizes must be powers of two, got {s}")
    n = cfg["n_samples"]
    repeats = cfg["repeats"]
    rng = Rng(cfg["seed"])
    d_h = cfg["hidden_dim"]
    spec = NetworkSpec(in_dim=1, hidden_dim=d_h, n_layers=4, out_dim=1,
                       bandwidths=(8.0,) * 4, heads=(3,))
    params = init_network(spec, rng.fork(0))
    xs = rng.fork(1).uniform(-0.5, 0.5, size=(max(n, 1), 1))

    def time_network():
        evaluate_truncated(params, spec, xs, 3, dtype=np.float64)

    def bench(fn):
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        return best

    rows = []
    for size in sizes:
        coeffs = (rng.fork(size).standard_normal(size)
                  + 1j * rng.fork(size + 1).standard_normal(size))
        ks = np.arange(size)

        def naive_idft():
            # explicit sum over all coefficients per sample, chunked
            acc = np.zeros(n, dtype=np.complex128)
            for lo in range(0, n, 256):
                chunk = xs[lo:lo + 256, 0]
                phase = np.exp(2j * np.pi * np.outer(chunk, ks))
                acc[lo:lo + 256] = phase @ coeffs
            return acc / size

        def full_ifft():
            np.fft.ifft(coeffs)

        if n > 0:
            t_net = bench(time_network)
            t_naive = bench(naive_idft)
            rows.append([size, "network", t_net, t_net / n])
            rows.append([size, "naive_idft", t_naive, t_naive / n])
        t_fft = bench(full_ifft)
        rows.append([size, "full_ifft", t_fft, t_fft / max(n, 1)])
    write_csv(out / "bench.csv",
              ["spectrum_size", "method", "seconds", "seconds_per_sample"],
              rows, prov)
    return 0


RUNNERS = {
    "fit-image": run_fit_image,
    "fit-sdf": run_fit_sdf,
    "extract-mesh": run_extract_mesh,
    "analyze-spectrum": run_analyze_spectrum,
    "verify-init": run_verify_init,
    "bench-idft": run_bench_idft,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="bandnet",
                                     description="band-limited coordinate network pipelines")
    sub = parser.add_subparsers(dest="task", required=True)
    flag_types = {
        "resolution": int, "steps": int, "hidden_dim": int, "levels": int,
        "bandwidth": float, "tau_factor": float, "alpha": float,
        "strategy": str, "input": str, "checkpoint": str, "supervision": str,
        "radius": float, "mesh": str, "source": str, "bandwidth_rad": float,
        "samples": int, "scheme": str, "sizes": str, "n_samples": int,
        "repeats": int, "layers": int, "d_h": int, "in_dim": int, "grid": int,
        "lr_start": float, "lr_end": float, "lambda_sdf": float,
        "n_coarse": int, "n_fine": int, "eval_resolution": int, "channels": int,
    }
    for task in TASKS:
        p = sub.add_parser(task)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--out", type=str, default="out")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None)
        for key in SCHEMAS[task]:
            p.add_argument(f"--{key.replace('_', '-')}", dest=key,
                           type=flag_types[key], default=None)
    return parser


def run(argv) -> int:
    """Execute one pipeline; returns the process exit code."""
    args = build_parser().parse_args(argv)
    try:
        cfg = effective_config(args.task, args)
    except ConfigError as e:
        json.dump({"error": str(e), "kind": "config",
                   "config_path": args.config}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    limiter = None
    if args.threads is not None:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=args.threads)
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        prov = {"seed": cfg["seed"], "hash": config_hash(cfg)}
        return RUNNERS[args.task](cfg, out, prov)
    except ConfigError as e:
        json.dump({"error": str(e), "kind": "config",
                   "config_path": args.config}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except Exception as e:  # runtime failure: machine-readable record, exit 1
        json.dump({"error": str(e), "kind": "runtime",
                   "type": type(e).__name__}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    finally:
        if limiter is not None:
            limiter.unregister()


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
