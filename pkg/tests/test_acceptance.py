"""Acceptance criteria, run at full size and stated tolerances.

Each test records a one-line verdict through ``record_criterion``; the lines are
collected in the terminal summary. Expect a few minutes of runtime.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from conftest import record_criterion
from se3consensus import checks
from se3consensus.analysis import (
    ConsensusPredicate,
    PracticalConsensusPredicate,
    check_ball_invariance,
    fit_exponential_rate,
    omega_bar_rel_series,
    rotation_error_series,
    translation_error_series,
    v6_series,
    v_bar_series,
    v_pairwise,
)
from se3consensus.cli import MC_HORIZON, MC_STOP_TOL, counterexample_config
from se3consensus.controllers import DynamicParams
from se3consensus.se3 import Pose
from se3consensus.simulator import AgentState, InitSpec, TrialConfig, monte_carlo, run_trial, step_dynamic, trial_seeds
from se3consensus.so3 import PARAMETERIZATIONS, get_parameterization, log_so3

KINDS = list(PARAMETERIZATIONS)
N = 5
# i listens to i+1, i+2 in one graph and to i-1, i-2 in the other; each is strongly connected
FORWARD = [[i, (i + d) % N] for i in range(N) for d in (1, 2)]
BACKWARD = [[i, (i - d) % N] for i in range(N) for d in (1, 2)]
ALTERNATING = {"kind": "alternating", "graphs": [FORWARD, BACKWARD], "dwell": 0.1}


def test_01_roundtrips():
    t0 = time.perf_counter()
    results = checks.suite_roundtrips(samples=10_000)
    elapsed = time.perf_counter() - t0
    worst = max(r.value for r in results)
    ok = all(r.passed for r in results) and elapsed < 10.0
    record_criterion(1, "exp/log and parameterization roundtrips", ok,
                     f"worst error {worst:.2e} (limit 1e-9), {elapsed:.1f} s (limit 10 s)")
    assert ok


def test_02_jacobians():
    rng = np.random.default_rng(2)
    errors = {"L_x": checks.jacobian_fd_error(None, 1000, rng, h=1e-6)}
    for kind in KINDS:
        errors[kind] = checks.jacobian_fd_error(kind, 1000, rng, h=1e-6)
    worst = max(errors.values())
    ok = worst <= 1e-5
    record_criterion(2, "Jacobian vs finite differences", ok,
                     f"worst relative error {worst:.2e} over {len(errors)} checks (limit 1e-5)")
    assert ok


def _sweep(law, topology, radius_factor, trials=50, horizon=30.0):
    t0 = time.perf_counter()
    out = {}
    for kind in KINDS:
        p = get_parameterization(kind)
        cfg = TrialConfig(n=N, law=law, parameterization=kind, topology=topology, horizon=horizon,
                          sample_rate=10.0, init=InitSpec(rotation_radius=radius_factor * p.r))
        inv = conv = 0
        worst = 0.0
        for s in trial_seeds(0, trials):
            tr = run_trial(cfg.with_seed(s))
            inv += check_ball_invariance(tr).ok
            e = rotation_error_series(tr)[-1]
            worst = max(worst, e)
            conv += e < 1e-3
        out[kind] = (inv, conv, worst)
    return out, time.perf_counter() - t0


def test_03_absolute_rotation_law_switching():
    res, elapsed = _sweep("rot_abs", ALTERNATING, 0.9)
    ok = all(inv == 50 and conv == 50 for inv, conv, _ in res.values()) and elapsed < 60.0
    detail = ", ".join(f"{k} {inv}/{conv}" for k, (inv, conv, _) in res.items())
    record_criterion(3, "absolute rotation law, alternating graphs, 0.9 r", ok,
                     f"invariant/converged per kind: {detail}; {elapsed:.0f} s (limit 60 s)")
    assert ok


def test_04_relative_rotation_law_qsc_switching():
    res, elapsed = _sweep("rot_rel", {"kind": "random_qsc_switching", "dwell": 0.1}, 0.45)
    converged = all(conv == 50 for _, conv, _ in res.values())
    # negative control: {0, 1} and {2, 3, 4} never exchange information
    split = {"kind": "alternating", "dwell": 0.1, "graphs": [[[0, 1]], [[1, 0], [2, 3], [3, 4], [4, 2]]]}
    plateaus = {}
    for kind in KINDS:
        p = get_parameterization(kind)
        cfg = TrialConfig(n=N, law="rot_rel", parameterization=kind, topology=split, horizon=30.0,
                          init=InitSpec(rotation_radius=0.45 * p.r))
        err = rotation_error_series(run_trial(cfg))
        plateaus[kind] = float(err[len(err) // 2:].min())
    control = all(v > 1e-2 for v in plateaus.values())
    ok = converged and control and elapsed < 60.0
    record_criterion(4, "relative rotation law, QSC switching, 0.45 r", ok,
                     f"converged {sum(c for _, c, _ in res.values())}/250, {elapsed:.0f} s; "
                     f"disconnected plateau min {min(plateaus.values()):.3f} (needs > 1e-2)")
    assert ok


def test_05_cone_property():
    results = checks.suite_cone(trials=10)
    worst = min(r.value for r in results)
    ok = all(r.passed for r in results)
    record_criterion(5, "velocity inside neighbor cone", ok,
                     f"smallest in-cone fraction {worst:.4f} (limit 0.99)")
    assert ok


def test_06_max_pair_sign_condition():
    results = checks.suite_lemma1(configs=10_000, q_factor=0.45)
    bad = sum(r.value for r in results)
    ok = bad == 0
    record_criterion(6, "maximal-pair sign condition at 0.45 r", ok,
                     f"{int(bad)} violations over 5 x 10^4 configurations")
    assert ok


def test_07_exponential_rate():
    # transitive tournament: every pair has exactly one edge
    tournament = {"kind": "explicit", "edges": [[i, j] for i in range(N) for j in range(i + 1, N)]}
    fits = []
    for s in trial_seeds(7, 10):
        cfg = TrialConfig(n=N, law="rot_rel", topology=tournament, horizon=20.0, seed=s,
                          init=InitSpec(rotation_radius=0.45 * np.pi))
        tr = run_trial(cfg)
        V = v_pairwise(tr.R)
        keep = (V <= 1e-1) & (V >= 1e-5)
        fits.append(fit_exponential_rate(tr.t[keep], V[keep]))
    ok = all(f.r2 >= 0.99 and f.rate < 0 for f in fits)
    record_criterion(7, "exponential decay of V on a pairwise-covered graph", ok,
                     f"min R^2 {min(f.r2 for f in fits):.5f}, slopes in "
                     f"[{min(f.rate for f in fits):.3f}, {max(f.rate for f in fits):.3f}] 1/s")
    assert ok


def test_08_monte_carlo():
    t0 = time.perf_counter()
    rates = {}
    for tag, radius in (("uniform", np.pi), ("half-pi", np.pi / 2)):
        for law in ("first_abs", "first_rel"):
            cfg = TrialConfig(n=N, law=law, horizon=MC_HORIZON, stop_tol=MC_STOP_TOL,
                              init=InitSpec(rotation_radius=radius))
            rates[tag, law] = monte_carlo(cfg, 200, ConsensusPredicate()).rate
    elapsed = time.perf_counter() - t0
    ok = (
        all(rates["uniform", law] >= 0.85 for law in ("first_abs", "first_rel"))
        and all(rates["half-pi", law] == 1.0 for law in ("first_abs", "first_rel"))
        and elapsed < 300.0
    )
    detail = ", ".join(f"{tag}/{law} {r:.3f}" for (tag, law), r in rates.items())
    record_criterion(8, "Monte-Carlo success rates", ok, f"{detail}; {elapsed:.0f} s (limit 300 s)")
    assert ok


def test_09_noise_and_switching():
    rates = {}
    for law in ("first_abs", "first_rel"):
        cfg = TrialConfig(n=N, law=law, horizon=30.0, sample_rate=10.0, noise_magnitude=0.1,
                          topology={"kind": "random_qsc_switching", "switch_rate": 10.0},
                          init=InitSpec(rotation_radius=np.pi / 2))
        rates[law] = monte_carlo(cfg, 100, PracticalConsensusPredicate()).rate
    ok = all(r == 1.0 for r in rates.values())
    record_criterion(9, "noisy measurements at 10 Hz switching", ok,
                     ", ".join(f"{k} {v:.2f}" for k, v in rates.items()))
    assert ok


def test_10_counterexample():
    tr = run_trial(counterexample_config())
    norms = np.linalg.norm(tr.T.reshape(len(tr), -1), axis=1)
    monotone = bool(np.all(np.diff(norms) > 0))
    ok = tr.diverged and monotone
    record_criterion(10, "absolute translation law with flipped rotations diverges", ok,
                     f"diverged={tr.diverged} at t={tr.t[-1]:.1f} s, monotone growth={monotone}")
    assert ok


def test_11_gain_bound():
    q = 1.0
    lines, ok = [], True
    for kind in ("axis_angle", "sin_map"):
        p = get_parameterization(kind)
        r1, r2 = 0.2 * p.r, 0.4 * p.r
        k = q * r2 / (r2 - r1) + 1.0
        top = rate_err = err = 0.0
        for s in trial_seeds(11, 10):
            cfg = TrialConfig(n=N, law="torque_rel", mode="dynamic", parameterization=kind,
                              topology={"kind": "random_qsc"}, h=0.01, horizon=12.0, gain=k, seed=s,
                              init=InitSpec(rotation_radius=r1, omega_radius=q, velocity_init="error"))
            tr = run_trial(cfg)
            verdict = check_ball_invariance(tr, q=r2)
            ok &= verdict.ok
            top = max(top, verdict.max_norm / r2)
            wbar = omega_bar_rel_series(tr, kind)
            window = tr.t <= 5.0
            for i in range(N):
                fit = fit_exponential_rate(tr.t[window], wbar[window, i])
                rate_err = max(rate_err, abs(fit.rate + k) / k)
            err = max(err, rotation_error_series(tr)[-1])
        ok &= rate_err <= 0.01 and err < 1e-3
        lines.append(f"{kind}: k={k:g}, max|x|/r2={top:.3f}, rate err {rate_err:.1e}, final error {err:.1e}")
    record_criterion(11, "gain bound keeps the rotation ball", ok, "; ".join(lines))
    assert ok


def test_12_absolute_torque_law():
    cycle = {"kind": "explicit", "edges": [[i, (i + 1) % N] for i in range(N)]}
    worst_rise = final = 0.0
    for s in trial_seeds(12, 20):
        cfg = TrialConfig(n=N, law="torque_abs", mode="dynamic", topology=cycle, h=0.01, horizon=15.0, seed=s,
                          init=InitSpec(rotation_radius=0.45 * np.pi, omega_radius=0.5, v_radius=0.5,
                                        velocity_init="error"))
        tr = run_trial(cfg)
        V = v6_series(tr)
        worst_rise = max(worst_rise, float((np.diff(V) / np.maximum(V[:-1], 1e-300)).max()))
        final = max(final, float(np.linalg.norm(log_so3(tr.R[-1]), axis=-1).max()))
    ok = worst_rise <= 1e-9 and final < 1e-3
    record_criterion(12, "absolute torque law: V6 non-increasing, consensus at x = 0", ok,
                     f"largest relative step increase {worst_rise:.1e} (slack 1e-9), final max|x| {final:.1e}")
    assert ok


def test_13_force_law():
    k = 3.0
    terr = rate_err = 0.0
    for s in trial_seeds(13, 20):
        cfg = TrialConfig(n=N, law="torque_rel", mode="dynamic", parameterization="sin_map",
                          topology={"kind": "random_qsc"}, h=0.01, horizon=12.0, gain=k, seed=s,
                          init=InitSpec(rotation_radius=0.2 * np.pi, omega_radius=0.5, v_radius=0.5,
                                        velocity_init="error"))
        tr = run_trial(cfg)
        terr = max(terr, translation_error_series(tr)[-1])
        vb = v_bar_series(tr)
        window = tr.t <= 5.0
        for i in range(N):
            rate_err = max(rate_err, abs(fit_exponential_rate(tr.t[window], vb[window, i]).rate + k) / k)
    ok = terr < 1e-3 and rate_err <= 0.01
    record_criterion(13, "force law on QSC graphs", ok,
                     f"final translation error {terr:.1e}, v_bar rate error {rate_err:.1e}")
    assert ok


def test_14_free_rigid_body():
    J = np.diag([1.0, 2.0, 3.0])
    s = AgentState(Pose.identity(), np.array([1.0, 0.5, -0.7]), np.zeros(3), DynamicParams(J))
    E0 = s.omega @ J @ s.omega
    L0 = s.pose.R @ J @ s.omega
    dE = dL = 0.0
    for _ in range(10_000):
        s = step_dynamic(s, np.zeros(3), np.zeros(3), 1e-3)
        dE = max(dE, abs(s.omega @ J @ s.omega - E0))
        dL = max(dL, float(np.linalg.norm(s.pose.R @ J @ s.omega - L0)))
    ok = dE <= 1e-6 and dL <= 1e-6
    record_criterion(14, "free rigid body conservation over 10 s", ok,
                     f"energy drift {dE:.1e}, momentum drift {dL:.1e} (limit 1e-6)")
    assert ok
