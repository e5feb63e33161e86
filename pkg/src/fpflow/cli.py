"""Command-line entry point: check, evolve, ergodic, particles, compare.

Every subcommand reads one declarative JSON config, writes machine-readable
outputs (JSON documents, RFC-4180 CSV, JSON-lines diagnostics) into --out,
and stamps each file with the config hash and tool version.  Exit codes:
0 pass, 1 domain failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .coefficients import (
    check_h1,
    check_h2,
    check_h3,
    check_uniqueness_condition,
    fixed_point_criteria,
)
from .config import (
    ConfigError,
    RunConfig,
    build_initial_field,
    build_observable,
    default_t_values,
    load_config,
)
from .discretization import (
    WeightedNormContext,
    l1_distance,
    write_field_binary,
)
from .ergodic import Observable, cesaro_mean_field, cesaro_observable, estimate_omega
from .particles import (
    marginal_ergodic_average,
    mc_standard_error,
    occupation_measure,
    simulate,
)
from .resolvent import NewtonError
from .semigroup import PositivityError, evolve, read_trajectory, write_trajectory

log = logging.getLogger("fpflow")

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def _write_csv(path, header: list[str], rows, config_hash: str) -> None:
    """RFC-4180 CSV with CRLF records; floats in shortest round-trip form."""
    def fmt(x):
        if isinstance(x, float) or isinstance(x, np.floating):
            return repr(float(x))
        return str(x)

    lines = [",".join(header + ["config_hash", "tool_version"])]
    for row in rows:
        lines.append(",".join([fmt(x) for x in row] + [config_hash, __version__]))
    with open(path, "w", newline="") as fh:
        fh.write("\r\n".join(lines) + "\r\n")


def _write_json(path, payload: dict, config_hash: str) -> None:
    payload = dict(payload)
    payload["config_hash"] = config_hash
    payload["tool_version"] = __version__
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _hypothesis_sample_points(cfg: RunConfig):
    hyp = cfg.hypotheses
    r_min = float(hyp.get("r_min", -2.0))
    r_max = float(hyp.get("r_max", 2.0))
    r_count = int(hyp.get("r_count", 201))
    r_samples = np.linspace(r_min, r_max, r_count)
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    x_count = int(hyp.get("x_count", 200))
    radius = float(hyp.get("quad_radius", cfg.grid.half_width))
    x = rng.uniform(-radius, radius, size=(x_count, cfg.grid.dim))
    shell = hyp.get("x_exclude_shell")
    if shell is not None:
        lo, hi = float(shell[0]), float(shell[1])
        r = np.linalg.norm(x, axis=1)
        x = x[(r < lo) | (r > hi)]
    return r_samples, x, radius


def cmd_check(cfg: RunConfig, outdir: str) -> int:
    cs = cfg.coefficient_set()
    os.makedirs(outdir, exist_ok=True)
    run_list = cfg.hypotheses.get("run", ["h1", "h2", "h3", "uniqueness"])
    r_samples, x_samples, radius = _hypothesis_sample_points(cfg)
    reports = {}
    if "h1" in run_list:
        reports["h1"] = check_h1(cs, r_samples)
    if "h2" in run_list:
        reports["h2"] = check_h2(cs, x_samples, quad_radius=radius)
    if "h3" in run_list:
        reports["h3"] = check_h3(
            cs,
            r_max=float(cfg.hypotheses.get("b_r_max", 10.0)),
            b_max_bound=float(cfg.hypotheses.get("b_max_bound", 1e6)),
        )
    if "uniqueness" in run_list:
        alpha = cfg.hypotheses.get("alpha", cs.alpha)
        if alpha is None:
            raise ConfigError("uniqueness check requested but no alpha configured")
        reports["uniqueness"] = check_uniqueness_condition(cs, float(alpha), r_samples)
    if "fixed-point" in run_list:
        up, down, relevant = fixed_point_criteria(
            cs,
            float(cfg.hypotheses.get("r_lo", 1e-3)),
            float(cfg.hypotheses.get("r_hi", 1e3)),
        )
        _write_json(
            os.path.join(outdir, "fixed_point.json"),
            {
                "limit_at_infinity_diverges": up,
                "limit_at_zero_diverges": down,
                "relevant_case": relevant,
            },
            cfg.hash,
        )
    all_passed = True
    for name, report in reports.items():
        _write_json(
            os.path.join(outdir, f"{name}.json"),
            {
                "name": report.name,
                "passed": report.passed,
                "margins": report.margins,
                "samples": report.samples,
                "notes": report.notes,
            },
            cfg.hash,
        )
        if not report.passed:
            failed = [k for k, v in report.margins.items() if v < 0]
            log.error("hypothesis %s failed: %s", name, ", ".join(failed))
            all_passed = False
    _write_json(
        os.path.join(outdir, "check_summary.json"),
        {"passed": all_passed, "reports": {k: v.passed for k, v in reports.items()}},
        cfg.hash,
    )
    return EXIT_OK if all_passed else EXIT_DOMAIN


def _run_evolution(cfg: RunConfig, outdir: str):
    cs = cfg.coefficient_set()
    grid = cfg.grid
    u0 = build_initial_field(cfg)
    T = float(cfg.evolution.get("T", 10.0))
    h = float(cfg.evolution.get("h", 0.05))
    n_snapshots = int(cfg.evolution.get("snapshots", 64))
    eta = float(cfg.evolution.get("eta", 10.0))
    ctx = WeightedNormContext.from_coefficients(cs, grid, eta)
    os.makedirs(outdir, exist_ok=True)
    diag_path = os.path.join(outdir, "diagnostics.jsonl")
    with open(diag_path, "w") as diag_fh:
        def sink(rec):
            diag_fh.write(json.dumps(rec, sort_keys=True) + "\n")

        traj = evolve(u0, T, h, cs, grid, cfg.solver, n_snapshots=n_snapshots,
                      norm_ctx=ctx, diag_sink=sink)
    write_trajectory(traj, outdir, config_hash=cfg.hash, tool_version=__version__, norm_ctx=ctx)
    return traj, cs, ctx


def cmd_evolve(cfg: RunConfig, outdir: str) -> int:
    traj, _, _ = _run_evolution(cfg, outdir)
    if not traj.complete:
        log.error("evolution stopped early; partial trajectory written with complete=false")
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_ergodic(cfg: RunConfig, outdir: str, traj_dir: str | None) -> int:
    os.makedirs(outdir, exist_ok=True)
    if traj_dir is not None:
        manifest_path = os.path.join(traj_dir, "manifest.json")
        if not os.path.exists(manifest_path):
            raise ConfigError(f"--traj {traj_dir} holds no trajectory manifest")
        traj, manifest = read_trajectory(traj_dir)
        if manifest.get("config_hash") != cfg.hash:
            raise ConfigError(
                "--traj was produced under a different config/seed "
                f"(hash {manifest.get('config_hash')!r} vs {cfg.hash!r})"
            )
        cs = cfg.coefficient_set()
    else:
        traj, cs, _ = _run_evolution(cfg, outdir)
        if not traj.complete:
            log.error("evolution stopped early during ergodic run")
            return EXIT_DOMAIN

    t_values = cfg.ergodic.get("t_values") or default_t_values(traj.span)
    specs = cfg.ergodic.get("observables", [{"label": "x2", "kind": "moment", "axis": 0, "power": 2}])
    rows = []
    for spec in specs:
        obs = build_observable(cfg.grid, spec)
        for t, val in zip(t_values, cesaro_observable(traj, obs, t_values)):
            rows.append([float(t), obs.label, val])
    _write_csv(os.path.join(outdir, "cesaro.csv"), ["T", "observable_label", "cesaro_value"], rows, cfg.hash)

    window = float(cfg.ergodic.get("window_fraction", 0.25))
    omega = estimate_omega(traj, window)
    for k, rep in enumerate(omega.representatives):
        write_field_binary(rep, os.path.join(outdir, f"omega_rep_{k:03d}.bin"))
    _write_json(
        os.path.join(outdir, "omega.json"),
        {
            "window": list(omega.window),
            "diameter": omega.diameter,
            "cluster_count": omega.cluster_count,
            "threshold": omega.threshold,
            "representative_times": omega.representative_times,
            "distance_matrix": omega.distance_matrix.tolist(),
            "notes": omega.notes,
        },
        cfg.hash,
    )
    return EXIT_OK


def _run_particles(cfg: RunConfig, outdir: str):
    cs = cfg.coefficient_set()
    grid = cfg.grid
    u0 = build_initial_field(cfg)
    p = cfg.particles
    specs = cfg.ergodic.get("observables", [{"label": "x2", "kind": "moment", "axis": 0, "power": 2}])
    observables = [build_observable(grid, s) for s in specs]
    summary = simulate(
        u0,
        n_particles=int(p.get("count", 10000)),
        T=float(p.get("T", 5.0)),
        dt=float(p.get("dt", 1e-3)),
        cs=cs,
        grid=grid,
        seed=cfg.seed,
        refresh_every=int(p.get("refresh_every", 1)),
        bandwidth=int(p.get("bandwidth", 0)),
        n_snapshots=int(p.get("snapshots", 64)),
        observables=observables,
    )
    os.makedirs(outdir, exist_ok=True)
    for k, est in enumerate(summary.estimates):
        write_field_binary(est.field, os.path.join(outdir, f"estimate_{k:06d}.bin"))
    mom_rows = [
        [m["t"]] + list(m["mean"]) + [m["second_moment"], m["reflections"]]
        for m in summary.moments
    ]
    mean_cols = [f"mean_x{k+1}" for k in range(grid.dim)]
    _write_csv(
        os.path.join(outdir, "summary.csv"),
        ["t"] + mean_cols + ["second_moment", "reflections"],
        mom_rows,
        cfg.hash,
    )
    T = float(p.get("T", 5.0))
    t_values = cfg.ergodic.get("t_values") or default_t_values(T)
    rows = []
    for obs in observables:
        for t, val in zip(t_values, marginal_ergodic_average(summary, obs, t_values)):
            rows.append([float(t), obs.label, val])
    _write_csv(
        os.path.join(outdir, "ergodic_averages.csv"),
        ["T", "observable_label", "average"],
        rows,
        cfg.hash,
    )
    _write_json(
        os.path.join(outdir, "particles_summary.json"),
        {"seed": cfg.seed, "reflections": summary.reflections, "params": summary.params},
        cfg.hash,
    )
    return summary, observables


def cmd_particles(cfg: RunConfig, outdir: str) -> int:
    _run_particles(cfg, outdir)
    return EXIT_OK


def cmd_compare(cfg: RunConfig, outdir: str) -> int:
    """Run the density flow and the particle system from one config and
    compare time marginals, ergodic averages and an occupation measure."""
    os.makedirs(outdir, exist_ok=True)
    p = cfg.particles
    T = float(p.get("T", 5.0))
    pde_cfg = RunConfig(**{**cfg.__dict__, "evolution": {**cfg.evolution, "T": T}})
    traj, cs, _ = _run_evolution(pde_cfg, os.path.join(outdir, "pde"))
    if not traj.complete:
        log.error("flow side of the comparison stopped early")
        return EXIT_DOMAIN
    summary, observables = _run_particles(cfg, os.path.join(outdir, "particles"))

    tol = cfg.compare.get("tolerances", {})
    tol_l1 = float(tol.get("l1_marginal", 5e-2))
    tol_se = float(tol.get("observable_se_multiple", 3.0))
    tol_occ = float(tol.get("occupation", 1e-2))

    rows = []
    worst_l1 = 0.0
    for k, t in enumerate(summary.times):
        if t <= 0:
            continue
        try:
            j = traj.checkpoint_index(t)
        except ValueError:
            continue
        d = l1_distance(summary.estimates[k].field, traj.snapshots[j])
        worst_l1 = max(worst_l1, d)
        rows.append([float(t), d])
    _write_csv(os.path.join(outdir, "comparison.csv"), ["t", "l1_distance"], rows, cfg.hash)

    checks = {"l1_marginal": {"worst": worst_l1, "tolerance": tol_l1, "passed": worst_l1 <= tol_l1}}
    gaps = []
    for obs in observables:
        pde_val = cesaro_observable(traj, obs, [T])[0]
        part_val = marginal_ergodic_average(summary, obs, [T])[0]
        se = mc_standard_error(summary, obs, T)
        gap = abs(part_val - pde_val)
        passed = gap <= tol_se * se if se > 0 else gap <= 1e-12
        gaps.append([obs.label, pde_val, part_val, gap, se, passed])
        checks[f"observable:{obs.label}"] = {
            "gap": gap,
            "se": se,
            "tolerance": tol_se * se,
            "passed": bool(passed),
        }
    _write_csv(
        os.path.join(outdir, "observable_gaps.csv"),
        ["observable_label", "flow_cesaro", "particle_average", "gap", "mc_standard_error", "passed"],
        gaps,
        cfg.hash,
    )

    box = cfg.compare.get("occupation_box")
    if box is not None:
        occ_p = occupation_measure(summary, box["lo"], box["hi"], T)
        ind = Observable.indicator_box(cfg.grid, box["lo"], box["hi"])
        occ_f = ind(cesaro_mean_field(traj, [T])[0])
        gap = abs(occ_p - occ_f)
        checks["occupation"] = {"gap": gap, "tolerance": tol_occ, "passed": gap <= tol_occ}

    all_passed = all(c["passed"] for c in checks.values())
    _write_json(os.path.join(outdir, "compare_summary.json"), {"passed": all_passed, "checks": checks}, cfg.hash)
    return EXIT_OK if all_passed else EXIT_DOMAIN


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpflow",
        description="Nonlinear Fokker-Planck flow: hypothesis checks, evolution, "
        "ergodic averages, particle simulation and cross-validation.",
    )
    parser.add_argument("--version", action="version", version=f"fpflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("check", "audit the coefficient hypotheses"),
        ("evolve", "run the density flow and write trajectory artifacts"),
        ("ergodic", "Cesaro averages and omega-limit estimates of a trajectory"),
        ("particles", "interacting-particle simulation"),
        ("compare", "flow vs particle cross-validation"),
    ]:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="path to the JSON run configuration")
        sp.add_argument("--out", required=True, help="output directory (created if missing)")
        sp.add_argument("--seed", type=int, default=0, help="seed folded into the config hash")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (falls back to FPFLOW_THREADS; informational)")
        sp.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
        if name == "ergodic":
            sp.add_argument("--traj", default=None,
                            help="existing trajectory directory to reuse (hash must match)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()))
    threads = args.threads
    if threads is None:
        env = os.environ.get("FPFLOW_THREADS")
        threads = int(env) if env else None
    if threads is not None:
        log.info("requested %d threads (single-process run; recorded only)", threads)
    try:
        cfg = load_config(args.config, seed=args.seed)
    except ConfigError as err:
        log.error("config error: %s", err)
        return EXIT_USAGE
    try:
        if args.command == "check":
            return cmd_check(cfg, args.out)
        if args.command == "evolve":
            return cmd_evolve(cfg, args.out)
        if args.command == "ergodic":
            return cmd_ergodic(cfg, args.out, args.traj)
        if args.command == "particles":
            return cmd_particles(cfg, args.out)
        if args.command == "compare":
            return cmd_compare(cfg, args.out)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as err:
        log.error("config error: %s", err)
        return EXIT_USAGE
    except (NewtonError, PositivityError, FloatingPointError, ValueError) as err:
        log.error("run failed: %s", err)
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
