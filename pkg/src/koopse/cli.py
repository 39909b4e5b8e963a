"""``koopse`` command line: simulate, train, estimate, compare, sweep, verify.

Exit codes: 0 success, 1 user error, 2 internal error. Errors are reported on stderr
as one line ``error: <code>: <message>``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline
from .baseline import BaselineConfig
from .config import ExperimentConfig, load_config
from .kernel_oracle import check_span_structure, solve_dual
from .recovery import combine_metrics, compute_metrics
from .simworld import SimTrajectory
from .storage import load_model, save_model
from .sysid import Hyperparams, IllConditionedError, Transitions, fit, lift_blocks

log = logging.getLogger("koopse")

TRANSITION_HEADER = ["prev_x", "prev_y", "prev_theta", "x", "y", "theta", "u", "omega"]


class UserError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_transitions(tr: Transitions, path: Path) -> None:
    n_r = tr.measurements.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRANSITION_HEADER + [f"r{j + 1}" for j in range(n_r)])
        rows = np.hstack([tr.prev_states, tr.states, tr.inputs, tr.measurements])
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def read_transitions(path: Path) -> Transitions:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:8] != TRANSITION_HEADER:
        raise UserError("bad_dataset", f"{path}: not a transitions file")
    if len(rows) < 2:
        raise UserError("bad_dataset", f"{path}: no transitions")
    body = np.array(rows[1:], dtype=float)
    return Transitions(body[:, 0:3], body[:, 3:6], body[:, 6:8], body[:, 8:])


def _load_manifest(dataset: Path) -> dict:
    path = dataset / "manifest.json"
    if not path.exists():
        raise UserError("bad_dataset", f"{path}: manifest not found")
    return json.loads(path.read_text())


def _test_trajectories(dataset: Path) -> list[SimTrajectory]:
    manifest = _load_manifest(dataset)
    trajs = [SimTrajectory.from_csv(dataset / name) for name in manifest["test_files"]]
    if not trajs:
        raise UserError("empty_test_set", f"{dataset}: no test trajectories")
    return trajs


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    if cfg.training.num_points < 1:
        raise UserError("empty_request", "empty training request")
    out.mkdir(parents=True, exist_ok=True)
    (out / "test").mkdir(exist_ok=True)
    tr = pipeline.simulate_training(cfg)
    write_transitions(tr, out / "train_transitions.csv")
    names = []
    for i, traj in enumerate(pipeline.simulate_test(cfg)):
        name = f"test/traj_{i:03d}.csv"
        traj.to_csv(out / name)
        names.append(name)
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "kernel_hash": cfg.kernel_hash(),
        "training_seed": cfg.training.seed,
        "testing_seed": cfg.testing.seed,
        "train_file": "train_transitions.csv",
        "test_files": names,
        "sha256": {n: _sha256(out / n) for n in ["train_transitions.csv", *names]},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def cmd_train(cfg: ExperimentConfig, dataset: Path, out_model: Path) -> dict:
    _load_manifest(dataset)
    tr = read_transitions(dataset / "train_transitions.csv")
    cfg.training.num_points = len(tr)
    cfg.validate()
    try:
        model = pipeline.train_model(cfg, tr)
    except IllConditionedError as exc:
        raise UserError("ill_conditioned", f"{exc} (rcond={exc.rcond:.2e}); raise the ridge lambdas") from exc
    save_model(model, out_model)
    train_log = {
        "points": len(tr),
        "fit_seconds": model.info["fit_seconds"],
        "rcond_motion": model.info["rcond_motion"],
        "rcond_measurement": model.info["rcond_measurement"],
        "kernel_hash": model.kernel_hash(),
        "fingerprint": model.fingerprint,
    }
    Path(str(out_model) + ".log.json").write_text(json.dumps(train_log, indent=1, sort_keys=True))
    return train_log


def _write_beliefs(belief, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "x", "y", "theta", "var_x", "cov_xy", "cov_xtheta", "var_y", "cov_ytheta", "var_theta"])
        for k, (m, S) in enumerate(zip(belief.mean, belief.covariance)):
            w.writerow([k, *(f"{v:.12g}" for v in m),
                        *(f"{v:.12g}" for v in (S[0, 0], S[0, 1], S[0, 2], S[1, 1], S[1, 2], S[2, 2]))])


def _check_hash(cfg: ExperimentConfig | None, model) -> None:
    if cfg is not None and cfg.kernel_hash() != model.kernel_hash():
        raise UserError("spec_hash_mismatch",
                        f"model kernel hash {model.kernel_hash()} != config kernel hash {cfg.kernel_hash()}")


def cmd_estimate(cfg: ExperimentConfig, model_path: Path, dataset: Path, out: Path,
                 check_config: bool = False) -> dict:
    model = load_model(model_path)
    _check_hash(cfg if check_config else None, model)
    trajs = _test_trajectories(dataset)
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for i, traj in enumerate(trajs):
        belief = pipeline.estimate(model, traj, pipeline.initial_state(cfg, traj, i))
        runs.append(belief)
        _write_beliefs(belief, out / f"beliefs_{i:03d}.csv")
        rep = compute_metrics(belief, traj.states)
        rep.to_csv(out / f"errors_{i:03d}.csv")
        rep.to_json(out / f"metrics_{i:03d}.json")
    pooled = combine_metrics(runs, [t.states for t in trajs])
    pooled.to_json(out / "metrics.json")
    return pooled.summary()


def cmd_compare(cfg: ExperimentConfig, model_path: Path, dataset: Path, out: Path | None,
                noisy_sensor_inflation: float = 1.0) -> pipeline.Comparison:
    model = load_model(model_path)
    trajs = _test_trajectories(dataset)
    bcfg = BaselineConfig.from_world(cfg.world, noisy_sensor_inflation)
    cmp_ = pipeline.compare(cfg, model, trajs, bcfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.json").write_text(json.dumps(cmp_.table(), indent=1, sort_keys=True))
        cmp_.koopse.to_csv(out / "koopse_errors.csv")
        cmp_.baseline.to_csv(out / "baseline_errors.csv")
    return cmp_


def cmd_sweep(cfg: ExperimentConfig, axis: str, grid, out: Path | None, plot: bool = False) -> list[dict]:
    rows = pipeline.sweep(cfg, axis, grid)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        if plot:
            _plot_sweep(rows, axis, out.with_suffix(".svg"))
    return rows


def _plot_sweep(rows, axis, path: Path) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not available; skipping %s", path)
        return
    xs = [r[axis] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(xs, [r["translation_rmse"] for r in rows], "o-", label="KoopSE translation (m)")
    ax.plot(xs, [r["orientation_rmse"] for r in rows], "s-", label="KoopSE orientation (rad)")
    ax.axhline(rows[0]["baseline_translation_rmse"], ls=":", c="C0", label="baseline translation")
    ax.axhline(rows[0]["baseline_orientation_rmse"], ls=":", c="C1", label="baseline orientation")
    ax.set_xscale("log", base=2)
    ax.set_xlabel(axis)
    ax.set_ylabel("RMSE")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_verify(seed: int = 0) -> dict:
    """Run the primal/dual and span checks on a small random problem."""
    rng = np.random.default_rng(seed)
    p, rx, ru, ry = 60, 12, 2, 5
    data = lift_blocks(rng.standard_normal((rx, p)), rng.standard_normal((rx, p)), rng.standard_normal((ru, p)),
                       rng.standard_normal((ry, p)), rng.standard_normal((4, p)))
    hp = Hyperparams(1e-2, 2e-2, 3e-2, 4e-2, 1e-3, 1e-3, 1e-6)
    model = fit(data, hp)
    dual = solve_dual(data, hp)
    rel = {}
    for name in ("A", "B", "H", "C", "Q", "R"):
        ref = getattr(model, name)
        rel[name] = float(np.linalg.norm(getattr(dual, name) - ref) / np.linalg.norm(ref))
    span = check_span_structure(model, data)
    return {"primal_dual_relative_error": rel, "span_ok": span.ok, "primal_dual_ok": max(rel.values()) < 1e-8}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="koopse", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON experiment config (default: $KOOPSE_CONFIG or built-in)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key, e.g. training.num_points=5000")
    ap.add_argument("--seed", type=int, help="override basis_seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write train/test CSVs and a manifest")
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("train", help="fit a model archive from a simulated dataset")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("estimate", help="smooth every test trajectory")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--check-config", action="store_true",
                   help="refuse when the config kernels differ from the model's")

    p = sub.add_parser("compare", help="KoopSE versus the model-based smoother")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--noisy-sensor-inflation", type=float, default=1.0)

    p = sub.add_parser("sweep", help="RMSE versus RFF count or training size")
    p.add_argument("--axis", choices=("rff", "train_size"), required=True)
    p.add_argument("--grid", help="comma-separated values (default: config sweep grid)")
    p.add_argument("--out", type=Path)
    p.add_argument("--plot", action="store_true", help="also write an SVG next to the CSV")

    sub.add_parser("verify", help="run the dual-form oracle checks")
    return ap


def _run(args) -> int:
    cfg = load_config(args.config)
    if args.set:
        cfg = cfg.with_overrides(args.set)
    if args.seed is not None:
        cfg.basis_seed = args.seed
    cfg.validate()
    t0 = time.perf_counter()
    if args.command == "simulate":
        m = cmd_simulate(cfg, args.out)
        print(json.dumps({"config_hash": m["config_hash"], "test_files": len(m["test_files"])}))
    elif args.command == "train":
        print(json.dumps(cmd_train(cfg, args.data, args.out), sort_keys=True))
    elif args.command == "estimate":
        print(json.dumps(cmd_estimate(cfg, args.model, args.data, args.out, args.check_config), sort_keys=True))
    elif args.command == "compare":
        print(cmd_compare(cfg, args.model, args.data, args.out, args.noisy_sensor_inflation).format_table())
    elif args.command == "sweep":
        grid = [int(v) for v in args.grid.split(",")] if args.grid else list(
            cfg.sweep.rff if args.axis == "rff" else cfg.sweep.train_size)
        rows = cmd_sweep(cfg, args.axis, grid, args.out, args.plot)
        for r in rows:
            print(json.dumps(r, sort_keys=True))
    elif args.command == "verify":
        res = cmd_verify()
        print(json.dumps(res, sort_keys=True))
        if not (res["span_ok"] and res["primal_dual_ok"]):
            raise UserError("verify_failed", "oracle checks failed")
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except UserError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {type(exc).__name__.lower()}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
