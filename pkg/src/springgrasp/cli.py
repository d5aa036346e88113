"""Command-line entry point: fit, plan, simulate, coverage, gradcheck.

Exit codes: 0 success, 2 infeasible/empty result, 3 I/O error,
4 config error, 5 numerical error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import coverage as cov
from .errors import (ConfigError, FormatError, NumericalError,
                     SpringGraspError)
from .gpis import GaussianProcessImplicitSurface, GpisConfig
from .hand import BUILTIN_CONFIGS, load_hand
from .objective import (TERM_NAMES, DecisionVars, EnergyWeights,
                        energy_and_gradient)
from .optimizer import (OptimizerOptions, grasp_to_dict, load_grasp_dict,
                        plan, seed_decision_vars)
from .hand import initial_seeds
from .pointcloud import load_point_cloud, oriented_bbox, sample_synthetic
from .spring import SpringSystem
from .dynamics import margin_trace, simulate

EXIT_OK = 0
EXIT_EMPTY = 2
EXIT_IO = 3
EXIT_CONFIG = 4
EXIT_NUMERICAL = 5

CSV_SCHEMA_HEADER = "# springgrasp-csv schema_version=1"


def _atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: str, header_cols, rows):
    lines = [CSV_SCHEMA_HEADER, ",".join(header_cols)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def _apply_thread_cap():
    cap = os.environ.get("SPRINGGRASP_THREADS")
    if cap:
        try:
            n = max(1, int(cap))
        except ValueError:
            raise ConfigError(f"SPRINGGRASP_THREADS not an integer: {cap!r}")
        import torch
        torch.set_num_threads(n)


def _weights_from_args(args) -> EnergyWeights:
    kwargs = {}
    if getattr(args, "weights", None):
        try:
            with open(args.weights) as fh:
                kwargs.update(json.load(fh))
        except OSError as exc:
            raise FormatError(str(exc), path=args.weights)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.weights}: invalid JSON ({exc})")
    if getattr(args, "mu", None) is not None:
        kwargs["mu"] = args.mu
    if getattr(args, "c", None) is not None:
        kwargs["c"] = args.c
    if getattr(args, "k_samples", None) is not None:
        kwargs["uncertainty_samples"] = args.k_samples
    try:
        return EnergyWeights(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad energy weights: {exc}")


def cmd_fit_gpis(args) -> int:
    cloud = load_point_cloud(args.cloud)
    cfg = GpisConfig(seed=args.seed_rng)
    model = GaussianProcessImplicitSurface(cfg)
    model.fit_point_cloud(cloud)
    model.save(args.out)
    classes = model.train_.classes
    mean = model.predict(model.train_.points)
    residual = float(np.abs(mean - model.train_.values).max())
    summary = {
        "schema_version": 1,
        "surface_points": int((classes == "surface").sum()),
        "exterior_points": int((classes == "exterior").sum()),
        "interior_points": int((classes == "interior").sum()),
        "kernel_scale": model.scale_,
        "max_training_residual": residual,
    }
    _atomic_write(args.out + ".summary.json", json.dumps(summary, indent=1))
    print(f"fit-gpis: {summary['surface_points']} surface, "
          f"{summary['exterior_points']} exterior, "
          f"{summary['interior_points']} interior points; "
          f"max residual {residual:.3e}")
    return EXIT_OK


def cmd_plan(args) -> int:
    cloud = load_point_cloud(args.cloud)
    hand = load_hand(args.hand)
    weights = _weights_from_args(args)
    options = OptimizerOptions(max_iterations=args.iterations)
    result = plan(cloud, hand, weights=weights, opts=options,
                  gpis_cfg=GpisConfig(seed=args.seed_rng),
                  n_seeds=args.seeds)
    os.makedirs(args.out, exist_ok=True)
    index_rows = []
    for rank, grasp in enumerate(result.ranked):
        name = f"grasp_seed{grasp.seed_index}.json"
        _atomic_write(os.path.join(args.out, name),
                      json.dumps(grasp_to_dict(grasp, weights), indent=1))
        index_rows.append((rank, grasp.seed_index, name,
                           f"{grasp.breakdown.total:.6g}",
                           f"{grasp.worst_margin:.6g}"))
    for grasp in result.grasps:
        if grasp.feasible:
            continue
        name = f"grasp_seed{grasp.seed_index}.json"
        _atomic_write(os.path.join(args.out, name),
                      json.dumps(grasp_to_dict(grasp, weights), indent=1))
    _write_csv(os.path.join(args.out, "ranking.csv"),
               ("rank", "seed_index", "file", "energy", "worst_margin"),
               index_rows)
    if not result.ranked:
        _atomic_write(os.path.join(args.out, "diagnostics.json"),
                      json.dumps({"schema_version": 1,
                                  "feasible": 0,
                                  "per_seed": result.diagnostics()}, indent=1))
        print("plan: no feasible grasp", file=sys.stderr)
        return EXIT_EMPTY
    print(f"plan: {len(result.ranked)} feasible grasp(s); "
          f"best seed {result.best.seed_index}, "
          f"energy {result.best.breakdown.total:.4g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    data = load_grasp_dict(args.grasp)
    contacts = np.asarray(data["contacts_t0"], dtype=float)
    targets = np.asarray(data["targets"], dtype=float)
    gains = np.asarray(data["gains"], dtype=float)
    normals = np.asarray(data["normals_t0"], dtype=float)
    mu = float(data.get("mu", 0.5))
    sys_ = SpringSystem(contacts=contacts, targets=targets, gains=gains)
    traj = simulate(sys_, record_stride=10)
    eps = margin_trace(traj, sys_, normals, mu)
    from scipy.spatial.transform import Rotation
    ref_rot = Rotation.from_quat(data["equilibrium_quat_xyzw"]).as_matrix()
    ref_trans = np.asarray(data["equilibrium_translation"], dtype=float)
    rot_err = float(np.abs(traj.final_rotation - ref_rot).max())
    trans_err = float(np.abs(traj.final_translation - ref_trans).max())
    min_margin = float(np.nanmin(eps)) if eps.size else float("nan")
    if not traj.settled:
        verdict = "TIMEOUT"
    elif rot_err <= 1e-3 and trans_err <= 1e-3 and min_margin >= -1e-3:
        verdict = "PASS"
    else:
        verdict = "FAIL"
    rows = []
    for t in range(len(traj.times)):
        flat_r = traj.rotations[t].reshape(-1)
        rows.append((f"{traj.times[t]:.6g}",
                     *(f"{v:.9g}" for v in flat_r),
                     *(f"{v:.9g}" for v in traj.translations[t]),
                     f"{traj.kinetic[t]:.9g}",
                     f"{np.nanmin(eps[t]):.9g}"))
    _write_csv(args.out,
               ("time", *(f"R{i}{j}" for i in range(3) for j in range(3)),
                "tx", "ty", "tz", "kinetic", "min_margin"),
               rows)
    print(f"simulate: {verdict} (rotation err {rot_err:.2e}, "
          f"translation err {trans_err:.2e}, min margin {min_margin:.4f})")
    return EXIT_OK if verdict == "PASS" else EXIT_EMPTY


def cmd_coverage(args) -> int:
    cfg = cov.CoverageConfig(
        n_poses=args.n_poses,
        tau_max=args.tau_max if args.tau_max is not None else 1.0,
        mu=args.mu if args.mu is not None else 0.5,
        rng_seed=args.seed_rng,
    )
    report = cov.run_coverage(cfg)
    rows = [(r.triangle, r.config, r.poses, r.compliant, r.direct_fc)
            for r in report.rows]
    _write_csv(args.out, ("triangle", "config", "poses", "compliant",
                          "direct_fc"), rows)
    agg = {
        "schema_version": 1,
        "total_compliant": report.total_compliant,
        "total_direct_fc": report.total_direct,
        "ratio": report.ratio,
        "subset_violations": report.subset_violations,
    }
    _atomic_write(args.out + ".aggregate.json", json.dumps(agg, indent=1))
    print(f"coverage: direct {report.total_direct} / compliant "
          f"{report.total_compliant} = {report.ratio:.3f}; "
          f"{report.subset_violations} subset violation(s)")
    if report.subset_violations:
        return EXIT_EMPTY
    return EXIT_OK


def _term_gradients(vars_, model, hand, weights, term):
    kwargs = {f"w_{n}": (1.0 if n == term else 0.0) for n in TERM_NAMES}
    w = EnergyWeights(mu=weights.mu, c=weights.c,
                      uncertainty_samples=weights.uncertainty_samples,
                      f_min=weights.f_min, **kwargs)
    return energy_and_gradient(vars_, model, hand, w)


def run_gradcheck(hand_name="four_finger", weights=None, rng_seed=0,
                  n_instances=20, coords_per_instance=4, h=1e-6,
                  corrupt_term=None):
    """Central-difference check of each energy term's gradient.

    Coordinates where the two one-sided differences disagree are near a
    branch boundary and skipped. Returns {term: max relative error}.
    """
    weights = weights or EnergyWeights()
    rng = np.random.default_rng(rng_seed)
    cloud = sample_synthetic("sphere", (0.05,), n=120,
                             rng=np.random.default_rng(7))
    model = GaussianProcessImplicitSurface(GpisConfig(seed=0))
    model.fit_point_cloud(cloud)
    hand = load_hand(hand_name)
    pose0 = initial_seeds(oriented_bbox(cloud), hand)[0]
    worst = {name: 0.0 for name in TERM_NAMES}
    for _ in range(n_instances):
        base = seed_decision_vars(hand, pose0)
        x = base.flatten() + 0.02 * rng.standard_normal(base.flatten().shape)
        vars_ = DecisionVars.from_flat(x, hand.q_dim, len(hand.fingers))
        for term in TERM_NAMES:
            f0, grad = _term_gradients(vars_, model, hand, weights, term)
            if corrupt_term == term:
                grad = -grad
            for idx in rng.choice(len(x), coords_per_instance, replace=False):
                xp, xm = x.copy(), x.copy()
                xp[idx] += h
                xm[idx] -= h
                fp = _term_gradients(
                    DecisionVars.from_flat(xp, hand.q_dim, len(hand.fingers)),
                    model, hand, weights, term)[0]
                fm = _term_gradients(
                    DecisionVars.from_flat(xm, hand.q_dim, len(hand.fingers)),
                    model, hand, weights, term)[0]
                fwd, bwd = (fp - f0) / h, (f0 - fm) / h
                scale = max(abs(fwd), abs(bwd), 1.0)
                if abs(fwd - bwd) > 0.05 * scale + 1e-7:
                    continue          # kink between x-h and x+h
                fd = (fp - fm) / (2 * h)
                err = abs(fd - grad[idx]) / max(abs(fd), 1.0)
                worst[term] = max(worst[term], err)
    return worst


def cmd_gradcheck(args) -> int:
    _ = _weights_from_args(args)
    worst = run_gradcheck(hand_name=args.hand, weights=_,
                          rng_seed=args.seed_rng,
                          corrupt_term=args.corrupt_term)
    failed = [name for name, err in worst.items() if err >= 1e-3]
    for name in TERM_NAMES:
        print(f"gradcheck {name}: max relative error {worst[name]:.3e}")
    if failed:
        bad = max(failed, key=lambda n: worst[n])
        print(f"gradcheck: FAIL (worst term {bad}, error {worst[bad]:.3e})",
              file=sys.stderr)
        return EXIT_NUMERICAL
    print("gradcheck: PASS")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="springgrasp",
        description="Compliant pre-grasp planning from partial point clouds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-gpis", help="fit an implicit surface to a cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed-rng", type=int, default=0)
    p.set_defaults(func=cmd_fit_gpis)

    p = sub.add_parser("plan", help="optimize compliant grasps")
    p.add_argument("--cloud", required=True)
    p.add_argument("--hand", default="four_finger",
                   help=f"builtin name ({', '.join(sorted(BUILTIN_CONFIGS))})"
                        " or YAML path")
    p.add_argument("--weights", help="JSON file of energy weight overrides")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed-rng", type=int, default=0)
    p.add_argument("--mu", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--k-samples", type=int)
    p.add_argument("--seeds", type=int, help="use only the first N seeds")
    p.add_argument("--iterations", type=int, default=2000)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="verify a grasp file in simulation")
    p.add_argument("--grasp", required=True)
    p.add_argument("--out", required=True, help="trajectory CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("coverage", help="run the planar coverage experiment")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--n-poses", type=int, default=100)
    p.add_argument("--tau-max", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--seed-rng", type=int, default=12345)
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--hand", default="four_finger")
    p.add_argument("--weights")
    p.add_argument("--seed-rng", type=int, default=0)
    p.add_argument("--corrupt-term", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_thread_cap()
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SpringGraspError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
