"""Command-line front end: ``se3consensus run | preset | check``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis as an
from .checks import SUITES, run_suite
from .controllers import ALL_LAWS
from .errors import ConfigInvalid, OutsideInjectivityRegion, UnknownPreset
from .se3 import FormationSpec, Pose
from .simulator import InitSpec, Trace, TrialConfig, load_config, monte_carlo, run_trial
from .so3 import PARAMETERIZATIONS, log_so3, sample_rotation_ball

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CHECK = 0, 2, 3, 4

MC_HORIZON = 600.0
MC_STOP_TOL = 1e-8
DEFAULT_MC_TRIALS = 200
NOISE_TRIALS = 100


# ---------------------------------------------------------------- output helpers


def _mkdir(out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _trace_files(trace: Trace, out: Path, stem: str) -> None:
    an.write_trace_csv(trace, out / f"{stem}_trace.csv")
    an.write_events_csv(trace, out / f"{stem}_events.csv")
    names, table = an.figure_columns(trace)
    an.write_table_csv(names, table, out / f"{stem}_figure.csv")


def _tilde(trace: Trace, spec: FormationSpec) -> Trace:
    Rs = np.stack([t.R for t in spec.targets])
    Ts = np.stack([t.T for t in spec.targets])
    Rt = trace.R @ np.swapaxes(Rs, -1, -2)[None]
    Tt = trace.T - np.einsum("knij,nj->kni", Rt, Ts)
    return replace(trace, R=Rt, T=Tt)


def _formation_error(trace: Trace, spec: FormationSpec) -> float:
    """``max_ij ||G_i^-1 G_j - G_i*^-1 G_j*||_F`` at the last sample."""
    worst = 0.0
    R, T = trace.R[-1], trace.T[-1]
    for i in range(trace.n):
        for j in range(trace.n):
            cur = Pose(R[i].T @ R[j], R[i].T @ (T[j] - T[i])).as_matrix()
            worst = max(worst, float(np.linalg.norm(cur - spec.relative_target(i, j).as_matrix())))
    return worst


# ---------------------------------------------------------------- presets


def _base(law: str, seed: int, horizon: float, **kw) -> TrialConfig:
    kw.setdefault("init", InitSpec(rotation_radius=math.pi / 2))
    return TrialConfig(n=5, law=law, horizon=horizon, seed=seed, **kw)


def preset_fig1(out: Path, seed: int, horizon: float | None, **_) -> dict:
    rng = np.random.default_rng(seed)
    targets = [Pose(R, T) for R, T in zip(sample_rotation_ball(math.pi / 2, rng, 5), rng.random((5, 3)))]
    spec = FormationSpec(tuple(targets))
    report = {}
    for law in ("first_abs", "first_rel"):
        tr = run_trial(_base(law, seed, horizon or 20.0, formation=spec))
        tilde = _tilde(tr, spec)
        _trace_files(tr, out, f"fig1_{law}")
        names, table = an.figure_columns(tilde)
        an.write_table_csv(names, table, out / f"fig1_{law}_tilde_figure.csv")
        report[law] = {
            "tilde_rotation_error": an.rotation_consensus_error(tilde.R[-1]),
            "tilde_translation_error": an.translation_consensus_error(tilde.T[-1]),
            "formation_error": _formation_error(tr, spec),
        }
    return report


def preset_fig2(out: Path, seed: int, horizon: float | None, trials: int | None, threads: int, **_) -> dict:
    report = {}
    for law in ("first_abs", "first_rel"):
        cfg = _base(
            law, seed, horizon or 30.0, noise_magnitude=0.1,
            topology={"kind": "random_qsc_switching", "switch_rate": 10.0}, sample_rate=10.0,
        )
        _trace_files(run_trial(cfg), out, f"fig2_{law}")
        summary = monte_carlo(cfg, trials or NOISE_TRIALS, an.PracticalConsensusPredicate(), threads)
        an.write_monte_carlo_csv(summary, out / f"fig2_{law}_monte_carlo.csv")
        report[law] = {"rate": summary.rate, "successes": summary.successes, "trials": summary.trials}
    return report


def preset_fig3(out: Path, seed: int, horizon: float | None, **_) -> dict:
    cols, names, report = [], [], {}
    for law in ("rot_abs", "rot_rel"):
        # relative sin-map coordinates need pairwise angles below pi/2
        tr = run_trial(_base(law, seed, horizon or 20.0, parameterization="sin_map",
                             init=InitSpec(rotation_radius=0.45 * math.pi / 2)))
        _trace_files(tr, out, f"fig3_{law}")
        if not cols:
            cols.append(tr.t)
            names.append("t")
        cols.append(np.linalg.norm(tr.R - tr.R[:, :1], axis=(-2, -1)))
        names += [f"{law}_rot_frob_{i}" for i in range(tr.n)]
        report[law] = {"rotation_error": an.rotation_consensus_error(tr.R[-1])}
    an.write_table_csv(names, np.column_stack(cols), out / "fig3_rotation_errors.csv")
    return report


def preset_fig4(out: Path, seed: int, horizon: float | None, **_) -> dict:
    report = {}
    for law, param in (("torque_abs", "axis_angle"), ("torque_rel", "sin_map")):
        cfg = _base(
            law, seed, horizon or 20.0, mode="dynamic", parameterization=param, h=0.01,
            init=InitSpec(rotation_radius=math.pi / 8, omega_radius=0.1, v_radius=0.1),
        )
        tr = run_trial(cfg)
        _trace_files(tr, out, f"fig4_{law}")
        x = log_so3(tr.R)
        table = np.column_stack([
            tr.t,
            np.linalg.norm(x - x[:, :1], axis=-1),
            np.linalg.norm(tr.T - tr.T[:, :1], axis=-1),
        ])
        names = ["t"] + [f"x_dist_{i}" for i in range(tr.n)] + [f"trans_dist_{i}" for i in range(tr.n)]
        an.write_table_csv(names, table, out / f"fig4_{law}_distances.csv")
        report[law] = {
            "rotation_error": an.rotation_consensus_error(tr.R[-1]),
            "translation_error": an.translation_consensus_error(tr.T[-1]),
        }
    return report


def _preset_mc(radius: float, tag: str):
    def run(out: Path, seed: int, horizon: float | None, trials: int | None, threads: int, **_) -> dict:
        report = {}
        for law in ("first_abs", "first_rel"):
            cfg = _base(law, seed, horizon or MC_HORIZON, init=InitSpec(rotation_radius=radius), stop_tol=MC_STOP_TOL)
            summary = monte_carlo(cfg, trials or DEFAULT_MC_TRIALS, an.ConsensusPredicate(), threads)
            an.write_monte_carlo_csv(summary, out / f"{tag}_{law}.csv")
            report[law] = {"rate": summary.rate, "successes": summary.successes, "trials": summary.trials}
        return report

    return run


COUNTEREXAMPLE_ROTATION = np.diag([-1.0, -1.0, 1.0])


def counterexample_config(seed: int = 0, horizon: float = 20.0, n: int = 5) -> TrialConfig:
    """Every agent rotated by pi about z, planar translations, absolute translation law."""
    rng = np.random.default_rng(seed)
    T = np.zeros((n, 3))
    T[:, :2] = rng.random((n, 2))
    return TrialConfig(
        n=n, law="trans_abs", topology={"kind": "complete"}, horizon=horizon, seed=seed,
        init=InitSpec(rotations=np.broadcast_to(COUNTEREXAMPLE_ROTATION, (n, 3, 3)), translations=T),
    )


def preset_counterexample(out: Path, seed: int, horizon: float | None, **_) -> dict:
    tr = run_trial(counterexample_config(seed, horizon or 20.0))
    _trace_files(tr, out, "counterexample")
    norms = np.linalg.norm(tr.T.reshape(len(tr), -1), axis=1)
    an.write_table_csv(["t", "T_tot_norm"], np.column_stack([tr.t, norms]), out / "counterexample_norm.csv")
    return {
        "diverged": tr.diverged,
        "monotone_growth": bool(np.all(np.diff(norms) > 0)),
        "final_time": float(tr.t[-1]),
        "final_norm": float(norms[-1]),
    }


PRESETS = {
    "fig1-first-laws": preset_fig1,
    "fig2-noise-switching": preset_fig2,
    "fig3-rot-laws": preset_fig3,
    "fig4-dynamic": preset_fig4,
    "mc-uniform-so3": _preset_mc(math.pi, "mc_uniform"),
    "mc-halfpi-ball": _preset_mc(math.pi / 2, "mc_halfpi"),
    "counterexample-trans": preset_counterexample,
}


def run_preset(name: str, out, seed: int = 0, trials: int | None = None, threads: int = 1,
               horizon: float | None = None) -> dict:
    try:
        fn = PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
    out = _mkdir(out)
    report = fn(out=out, seed=seed, horizon=horizon, trials=trials, threads=threads)
    report = {"preset": name, "seed": seed, **report}
    an.write_json(report, out / f"{name}_report.json")
    return report


# ---------------------------------------------------------------- commands


def cmd_run(config: str, out: str, seed: int | None = None) -> int:
    try:
        cfg = load_config(config)
        if seed is not None:
            cfg = cfg.with_seed(seed)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        trace = run_trial(cfg)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read schedule: {exc}", file=sys.stderr)
        return EXIT_IO
    except OutsideInjectivityRegion as exc:
        # typically an initial ball too wide for the chosen coordinates
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        dest = _mkdir(out)
        _trace_files(trace, dest, "run")
        report = an.consensus_report(trace)
        (dest / "run_report.json").write_text(report.to_json() + "\n")
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    print(report.to_json())
    return EXIT_OK


def cmd_preset(name: str, out: str, seed: int = 0, trials: int | None = None, threads: int = 1,
               horizon: float | None = None) -> int:
    try:
        report = run_preset(name, out, seed, trials, threads, horizon)
    except UnknownPreset as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(report, sort_keys=True, indent=2, default=an._json_default))
    return EXIT_OK


def cmd_check(suite: str, q_factor: float | None = None, quick: bool = False) -> int:
    names = SUITES if suite == "all" else (suite,)
    summary = {}
    ok = True
    for name in names:
        results = run_suite(name, q_factor=q_factor, quick=quick)
        passed = all(r.passed for r in results)
        ok &= passed
        summary[name] = {"passed": passed, "results": [r.to_dict() for r in results]}
    print(json.dumps({"passed": ok, "suites": summary}, indent=2, default=an._json_default))
    return EXIT_OK if ok else EXIT_CHECK


HELP_EPILOG = (
    "law tags: " + ", ".join(ALL_LAWS) + "\n"
    "parameterizations: " + ", ".join(PARAMETERIZATIONS) + "\n"
    "presets: " + ", ".join(PRESETS) + "\n"
    "check suites: " + ", ".join(SUITES + ("all",)) + "\n"
    "exit codes: 0 ok, 2 config error, 3 IO error, 4 property-suite failure"
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="se3consensus",
        description="Simulate consensus and formation control of rigid bodies on SE(3).",
        epilog=HELP_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one trial from a YAML config", epilog=HELP_EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    p_run.add_argument("--config", required=True, metavar="PATH")
    p_run.add_argument("--out", default="out", metavar="DIR")
    p_run.add_argument("--seed", type=int)

    p_pre = sub.add_parser("preset", help="run a named experiment", epilog=HELP_EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    p_pre.add_argument("--preset", required=True, metavar="NAME")
    p_pre.add_argument("--out", default="out", metavar="DIR")
    p_pre.add_argument("--seed", type=int, default=0)
    p_pre.add_argument("--trials", type=int, help=f"Monte-Carlo trials (default {DEFAULT_MC_TRIALS})")
    p_pre.add_argument("--threads", type=int, default=1, help="worker processes for Monte-Carlo runs")
    p_pre.add_argument("--horizon", type=float, help="override the preset's horizon in seconds")

    p_chk = sub.add_parser("check", help="run property suites", epilog=HELP_EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    p_chk.add_argument("suite", choices=SUITES + ("all",))
    p_chk.add_argument("--q-factor", type=float, help="ball radius for lemma1 as a fraction of r")
    p_chk.add_argument("--quick", action="store_true", help="smaller sample counts")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed)
    if args.command == "preset":
        return cmd_preset(args.preset, args.out, args.seed, args.trials, args.threads, args.horizon)
    return cmd_check(args.suite, args.q_factor, args.quick)


if __name__ == "__main__":
    sys.exit(main())
