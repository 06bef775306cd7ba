"""Command-line front end: ``gen``, ``render``, ``estimate``, ``eval``,
``check-grads`` and ``bench``.

Every option can also come from a flat ``key = value`` file given with
``--config``; explicit flags win over the file, and the fully resolved
configuration is logged to stderr before the command runs.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 I/O error.
"""

import argparse
import hashlib
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import serialization
from .dataset import Dataset, GenConfig, generate_dataset, make_sample
from .exceptions import (ConfigError, DatasetParseError, InvalidInputError, PrimPoseError)
from .geometry import CameraIntrinsics, Pose
from .gradcheck import REL_TOL, run_gradcheck
from .mesh import SYMMETRY_CLASSES, cube_mesh, load_obj
from .pipeline import NoiseModel, estimate_dataset, estimates_to_dict, evaluate_estimates, read_estimates
from .pnp import solve_pnp_ransac
from .primitive import PrimitiveSpec, primitive_corners_3d, project_keypoints
from .render import render_mesh, render_primitive

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_IO = 3

PNP_BUDGET_MS = 10.0
RENDER_BUDGET_MS = 50.0

log = logging.getLogger("primpose")

# Defaults per subcommand; also the set of keys a config file may set.
DEFAULTS = {
    "gen": {
        "model": None, "symmetry": "none", "n": 10, "seed": 0, "out": None, "jobs": 1,
        "tz_min": 0.4, "tz_max": 1.2, "margin_px": 10, "background": False, "jitter": 0.0,
        "occluders": 0, "occluder_min": 0.1, "occluder_max": 0.3, "noise_sigma": 0.0,
        "kappa": 1.3, "shading": "lambertian", "json": False,
    },
    "render": {
        "model": None, "what": "primitive", "quat": "1,0,0,0", "t": "0,0,0.8", "seed": 0,
        "out": None, "json": False,
    },
    "estimate": {
        "data": None, "out": None, "seed": 0, "sigma": 0.0, "outliers": 0.0, "occluders": 0,
        "iou": "1.0", "kappa": 1.3, "mode": "keypoints", "ransac_iters": 100, "threshold": 3.0,
        "json": False,
    },
    "eval": {"data": None, "estimates": None, "out": None, "seed": 0, "json": False},
    "check-grads": {
        "seed": 0, "n_seeds": 20, "max_size": 32, "tol": REL_TOL, "out": None, "json": False,
    },
    "bench": {"seed": 0, "n": 100, "out": None, "json": False, "check": False},
}


class UsageError(Exception):
    pass


def _flag(parser, name, **kw):
    # every flag defaults to None so that "not given" is distinguishable
    parser.add_argument(name, default=None, **kw)


def _switch(parser, name, help):
    parser.add_argument(name, action="store_const", const=True, default=None, help=help)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    _flag(common, "--seed", type=int, help="random seed")
    _flag(common, "--config", help="key = value config file; flags override it")
    _flag(common, "--out", help="output path")
    _switch(common, "--json", "print machine-readable JSON to stdout")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    p = argparse.ArgumentParser(prog="primpose", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    _flag(g, "--model", help="OBJ-style mesh (v/f lines); default: 0.1 m cube")
    _flag(g, "--symmetry", choices=SYMMETRY_CLASSES)
    _flag(g, "--n", type=int, help="number of samples")
    _flag(g, "--jobs", type=int, help="worker threads")
    _flag(g, "--tz-min", type=float, dest="tz_min")
    _flag(g, "--tz-max", type=float, dest="tz_max")
    _flag(g, "--margin-px", type=int, dest="margin_px")
    _switch(g, "--background", "randomize the background")
    _flag(g, "--jitter", type=float, help="color jitter amplitude")
    _flag(g, "--occluders", type=int)
    _flag(g, "--noise-sigma", type=float, dest="noise_sigma")
    _flag(g, "--kappa", type=float)

    r = sub.add_parser("render", parents=[common], help="render the primitive or model to PNG")
    _flag(r, "--model")
    _flag(r, "--what", choices=("primitive", "object"))
    _flag(r, "--quat", help="rotation quaternion w,x,y,z")
    _flag(r, "--t", help="translation x,y,z in meters")

    e = sub.add_parser("estimate", parents=[common], help="run the oracle pose pipeline")
    _flag(e, "--data", help="dataset directory")
    _flag(e, "--sigma", type=float, help="keypoint noise sigma in px")
    _flag(e, "--outliers", type=float, help="outlier fraction of the 21 keypoints")
    _flag(e, "--occluders", type=int)
    _flag(e, "--iou", help="detector IoU, or a comma-separated sweep")
    _flag(e, "--kappa", type=float)
    _flag(e, "--mode", choices=("keypoints", "image"))
    _flag(e, "--ransac-iters", type=int, dest="ransac_iters")
    _flag(e, "--threshold", type=float, help="RANSAC inlier threshold in px")

    v = sub.add_parser("eval", parents=[common], help="score an estimates file")
    _flag(v, "--data")
    _flag(v, "--estimates")

    c = sub.add_parser("check-grads", parents=[common], help="finite-difference gradient check")
    _flag(c, "--n-seeds", type=int, dest="n_seeds")
    _flag(c, "--max-size", type=int, dest="max_size")
    _flag(c, "--tol", type=float)

    b = sub.add_parser("bench", parents=[common], help="time PnP, rendering and the pipeline")
    _flag(b, "--n", type=int, help="repetitions")
    _switch(b, "--check", "exit 1 when a median exceeds its budget")
    return p


def resolve_config(command, args):
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    if args.config is not None:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise OSError(f"cannot read config file {args.config}: {exc.strerror}") from exc
        try:
            record = serialization.parse_record(text)
        except ValueError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        for k, val in record.items():
            k = k.replace("-", "_") if k.replace("-", "_") in cfg else k
            if k not in cfg:
                raise ConfigError(f"{args.config}: unknown key {k!r} for '{command}'")
            cfg[k] = _typed(val, cfg[k], k)
    for k in cfg:
        val = getattr(args, k, None)
        if val is not None:
            cfg[k] = val
    return cfg


def _typed(text, default, key):
    if default is None or isinstance(default, str):
        return text
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r}: expected a boolean, got {text!r}")
    try:
        return type(default)(text)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot read {text!r} as {type(default).__name__}") from exc


def _log_config(command, cfg):
    log.info("resolved config for '%s':\n%s", command,
             serialization.format_record({k: ("" if v is None else v) for k, v in cfg.items()}).rstrip())


def _require(cfg, key):
    if cfg[key] is None:
        raise UsageError(f"--{key.replace('_', '-')} is required")
    return cfg[key]


def _floats(text, n, name):
    try:
        vals = [float(x) for x in str(text).split(",")]
    except ValueError as exc:
        raise UsageError(f"--{name}: expected {n} comma-separated numbers, got {text!r}") from exc
    if len(vals) != n:
        raise UsageError(f"--{name}: expected {n} comma-separated numbers, got {text!r}")
    return np.array(vals)


def _load_model(path, symmetry="none"):
    if path is None:
        m = cube_mesh(0.1)
    else:
        if not Path(path).is_file():
            raise FileNotFoundError(f"model file not found: {path}")
        m = load_obj(path)
    m.symmetry = symmetry
    return m


def _emit(cfg, text, obj):
    if cfg["json"]:
        sys.stdout.write(serialization.dumps(obj))
    else:
        sys.stdout.write(text.rstrip("\n") + "\n")


def run_generate(cfg):
    out = Path(_require(cfg, "out"))
    model = _load_model(cfg["model"], cfg["symmetry"])
    spec = PrimitiveSpec.from_diameter(model.diameter)
    K = CameraIntrinsics.default()
    gc = GenConfig(n_samples=cfg["n"], seed=cfg["seed"], tz_min=cfg["tz_min"], tz_max=cfg["tz_max"],
                   margin_px=cfg["margin_px"], background=cfg["background"], jitter=cfg["jitter"],
                   occluders=cfg["occluders"], occluder_min=cfg["occluder_min"],
                   occluder_max=cfg["occluder_max"], noise_sigma=cfg["noise_sigma"],
                   kappa=cfg["kappa"], shading=cfg["shading"])
    gc.validate()
    manifest = generate_dataset(model, spec, K, gc, out, n_jobs=cfg["jobs"])
    digest = hashlib.sha256((out / "manifest.json").read_bytes()).hexdigest()
    text = (f"wrote {manifest['n_samples']} samples ({len(manifest['files'])} files) to {out}\n"
            f"manifest sha256 {digest}")
    _emit(cfg, text, {"out": str(out), "manifest_sha256": digest, **manifest})
    return EXIT_OK


def run_render(cfg):
    out = Path(_require(cfg, "out"))
    q = _floats(cfg["quat"], 4, "quat")
    if not np.linalg.norm(q) > 0:
        raise UsageError("--quat must be non-zero")
    # typed-in quaternions are rarely unit to 1e-6
    pose = Pose(q / np.linalg.norm(q), _floats(cfg["t"], 3, "t"))
    K = CameraIntrinsics.default()
    model = _load_model(cfg["model"])
    if cfg["what"] == "primitive":
        img = render_primitive(PrimitiveSpec.from_diameter(model.diameter), pose, K)
    else:
        img = render_mesh(model, pose, K)
    serialization.write_png(out, img.color)
    n = int(np.count_nonzero(img.mask))
    _emit(cfg, f"wrote {out} ({n} object pixels)", {"out": str(out), "object_pixels": n})
    return EXIT_OK


def _iou_list(text):
    try:
        vals = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"--iou: cannot parse {text!r}") from exc
    if not vals:
        raise UsageError("--iou: no values given")
    return vals


def run_estimate(cfg):
    ds = Dataset(_require(cfg, "data"))
    samples = list(ds.iter_samples(load_images=False))
    if not samples:
        raise UsageError(f"dataset {ds.root} has no samples")
    out = Path(cfg["out"]) if cfg["out"] is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    results = []
    for iou in _iou_list(cfg["iou"]):
        noise = NoiseModel(sigma_px=cfg["sigma"], outlier_frac=cfg["outliers"],
                           occluders=cfg["occluders"], iou=iou, kappa=cfg["kappa"], mode=cfg["mode"])
        est = estimate_dataset(samples, ds.K, ds.spec, noise, cfg["seed"],
                               ransac_iterations=cfg["ransac_iters"], inlier_threshold=cfg["threshold"])
        report = evaluate_estimates(samples, est, ds.model, ds.K)
        statuses = {}
        for e in est:
            statuses[e.status] = statuses.get(e.status, 0) + 1
        tag = f"iou{iou:.2f}"
        if out is not None:
            serialization.dump(estimates_to_dict(est, noise, cfg["seed"]), out / f"estimates_{tag}.json")
            serialization.dump({"iou": iou, "status_counts": dict(sorted(statuses.items())),
                                "report": report.to_dict()}, out / f"report_{tag}.json")
        results.append({"iou": iou, "status_counts": dict(sorted(statuses.items())),
                        "report": report.to_dict()})
        if not cfg["json"]:
            sys.stdout.write(f"# IoU {iou:.2f}  statuses {dict(sorted(statuses.items()))}\n")
            sys.stdout.write(report.to_text())
    if cfg["json"]:
        sys.stdout.write(serialization.dumps({"runs": results}))
    return EXIT_OK


def run_eval(cfg):
    ds = Dataset(_require(cfg, "data"))
    path = Path(_require(cfg, "estimates"))
    if not path.is_file():
        raise FileNotFoundError(f"estimates file not found: {path}")
    est = read_estimates(path)
    samples = list(ds.iter_samples(load_images=False))
    report = evaluate_estimates(samples, est, ds.model, ds.K)
    if cfg["out"] is not None:
        serialization.dump(report.to_dict(), cfg["out"])
    _emit(cfg, report.to_text(), report.to_dict())
    return EXIT_OK


def run_checkgrads(cfg, kernels=None):
    report = run_gradcheck(seed=cfg["seed"], n_seeds=cfg["n_seeds"], max_size=cfg["max_size"],
                           kernels=kernels, tol=cfg["tol"])
    d = report.to_dict()
    if cfg["out"] is not None:
        serialization.dump(d, cfg["out"])
    lines = []
    for k in d["kernels"]:
        state = "ok" if k["passed"] else "FAIL"
        lines.append(f"{k['name']:<24} max_rel_error={serialization.format_float(k['max_rel_error'])} "
                     f"checked={k['n_checked']} skipped={k['n_skipped']} {state}")
    _emit(cfg, "\n".join(lines), d)
    for k in report.failures():
        seed, arr, idx = k.worst if k.worst else (None, None, None)
        sys.stderr.write(f"gradient check failed: {k.name} max relative error {k.max_rel_error:.3e} "
                         f"(seed {seed}, input {arr}, index {idx})\n")
    return EXIT_OK if report.passed else EXIT_VERIFY


def _stats(ms):
    ms = np.asarray(ms)
    return {"median_ms": float(np.median(ms)), "mean_ms": float(ms.mean()),
            "p90_ms": float(np.percentile(ms, 90)), "n": int(ms.size)}


def run_bench(cfg):
    n = cfg["n"]
    if n < 1:
        raise UsageError("--n must be at least 1")
    rng = np.random.default_rng(cfg["seed"])
    K = CameraIntrinsics.default()
    model = cube_mesh(0.1)
    spec = PrimitiveSpec.from_diameter(model.diameter)
    X = primitive_corners_3d(spec)
    gen = GenConfig(n_samples=n, seed=cfg["seed"])

    from .dataset import sample_pose

    poses = [sample_pose(rng, gen, K, model.vertices) for _ in range(n)]
    pnp_ms, render_ms = [], []
    for i, pose in enumerate(poses):
        x = project_keypoints(pose, K, spec) + rng.normal(0.0, 1.0, (len(X), 2))
        t0 = time.perf_counter()
        solve_pnp_ransac(X, x, K, iterations=100, seed=i)
        pnp_ms.append(1e3 * (time.perf_counter() - t0))
        t0 = time.perf_counter()
        render_primitive(spec, pose, K)
        render_ms.append(1e3 * (time.perf_counter() - t0))

    n_pipe = min(n, 20)
    samples = [make_sample(model, spec, K, gen, i) for i in range(n_pipe)]
    noise = NoiseModel(sigma_px=1.0)
    pipe_ms = []
    for s in samples:
        t0 = time.perf_counter()
        estimate_dataset([s], K, spec, noise, cfg["seed"])
        pipe_ms.append(1e3 * (time.perf_counter() - t0))

    res = {"pnp_ransac_refine": _stats(pnp_ms), "render_primitive_640x480": _stats(render_ms),
           "oracle_estimate": _stats(pipe_ms)}
    res["within_budget"] = bool(res["pnp_ransac_refine"]["median_ms"] < PNP_BUDGET_MS
                                and res["render_primitive_640x480"]["median_ms"] < RENDER_BUDGET_MS)
    if cfg["out"] is not None:
        serialization.dump(res, cfg["out"])
    lines = [f"{k:<26} median {v['median_ms']:.2f} ms  mean {v['mean_ms']:.2f} ms  "
             f"p90 {v['p90_ms']:.2f} ms  (n={v['n']})" for k, v in res.items() if isinstance(v, dict)]
    lines.append(f"budget (PnP < {PNP_BUDGET_MS:g} ms, render < {RENDER_BUDGET_MS:g} ms): "
                 + ("met" if res["within_budget"] else "EXCEEDED"))
    _emit(cfg, "\n".join(lines), res)
    return EXIT_VERIFY if cfg["check"] and not res["within_budget"] else EXIT_OK


COMMANDS = {
    "gen": run_generate,
    "render": run_render,
    "estimate": run_estimate,
    "eval": run_eval,
    "check-grads": run_checkgrads,
    "bench": run_bench,
}


def main(argv=None, kernels=None):
    """Entry point; returns the exit code. ``kernels`` replaces the gradient
    kernels of ``check-grads`` (used to test the harness itself)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = resolve_config(args.command, args)
        _log_config(args.command, cfg)
        if args.command == "check-grads":
            return run_checkgrads(cfg, kernels)
        return COMMANDS[args.command](cfg)
    except (UsageError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DatasetParseError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except InvalidInputError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except PrimPoseError as exc:
        log.error("%s", exc)
        return EXIT_IO if isinstance(exc.__cause__, OSError) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
