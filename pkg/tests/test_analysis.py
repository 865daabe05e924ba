from __future__ import annotations

import csv
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from se3consensus.analysis import (
    ConsensusPredicate,
    PracticalConsensusPredicate,
    certify_uniform_attractivity,
    check_ball_invariance,
    cone_membership,
    consensus_report,
    figure_columns,
    fit_exponential_rate,
    rotation_consensus_error,
    rotation_error_series,
    time_to_threshold,
    translation_consensus_error,
    v_pairwise,
    write_events_csv,
    write_json,
    write_monte_carlo_csv,
    write_trace_csv,
)
from se3consensus.errors import NonPositiveValue
from se3consensus.simulator import InitSpec, TrialConfig, monte_carlo, run_trial, trial_seeds
from se3consensus.so3 import exp_so3, get_parameterization, sample_rotation_ball

seeds = st.integers(0, 2**32 - 1)


def test_rotation_error_examples():
    R = exp_so3([0.1, 0.2, 0.3])
    assert rotation_consensus_error(np.stack([R, R, R])) == pytest.approx(0.0, abs=1e-7)
    pair = exp_so3(np.array([[0, 0, 0.0], [0, 0, 0.3]]))
    assert rotation_consensus_error(pair) == pytest.approx(0.3, abs=1e-12)


@given(seeds)
def test_rotation_error_bi_invariant(seed):
    rng = np.random.default_rng(seed)
    R = sample_rotation_ball(1.2, rng, 4)
    Q = exp_so3(rng.standard_normal(3))
    e = rotation_consensus_error(R)
    assert abs(rotation_consensus_error(Q @ R) - e) < 1e-12
    assert abs(rotation_consensus_error(R @ Q) - e) < 1e-10


def test_v_pairwise_is_squared_error(rng):
    R = sample_rotation_ball(1.0, rng, (7, 4))
    e = np.array([rotation_consensus_error(r) for r in R])
    assert np.allclose(v_pairwise(R), e**2)


def test_translation_error_examples(rng):
    assert translation_consensus_error(np.tile([1.0, 2.0, 3.0], (4, 1))) == 0.0
    assert translation_consensus_error([[1, 0, 0], [-1, 0, 0]]) == pytest.approx(np.sqrt(2))
    T = rng.standard_normal((5, 3))
    assert translation_consensus_error(T + [4.0, -1.0, 2.0]) == pytest.approx(translation_consensus_error(T))


def test_time_to_threshold():
    t = np.arange(6.0)
    assert time_to_threshold(t, [5, 4, 0.5, 2, 0.1, 0.05], 1.0) == 4.0
    assert time_to_threshold(t, [0.1] * 6, 1.0) == 0.0
    assert time_to_threshold(t, [0.1] * 5 + [2.0], 1.0) is None


# ------------------------------------------------------------ ball invariance


def _cfg(law="rot_abs", kind="axis_angle", q=0.9, **kw):
    p = get_parameterization(kind)
    base = dict(n=5, law=law, parameterization=kind, topology={"kind": "complete"}, horizon=5.0,
                init=InitSpec(rotation_radius=q * p.r))
    base.update(kw)
    return TrialConfig(**base)


def test_ball_constant_trajectory():
    cfg = _cfg(init=InitSpec(rotations=np.tile([0.3, 0.0, 0.0], (5, 1))))
    tr = run_trial(cfg)
    assert check_ball_invariance(tr).ok


@pytest.mark.parametrize("kind", ["axis_angle", "mrp", "sin_map"])
def test_ball_rot_abs_sweep(kind):
    cfg = _cfg(kind=kind, topology={"kind": "random_qsc"})
    for s in trial_seeds(5, 5):
        assert check_ball_invariance(run_trial(cfg.with_seed(s))).ok


def test_ball_detects_jump():
    tr = run_trial(_cfg(q=0.3))
    R = tr.R.copy()
    R[len(tr) // 2, 0] = exp_so3([0.0, 2.0, 0.0])
    verdict = check_ball_invariance(replace(tr, R=R))
    assert not verdict.ok and verdict.max_norm > verdict.bound


def test_ball_pair_mode_on_dynamic_trace():
    cfg = TrialConfig(n=3, law="torque_abs", mode="dynamic", topology={"kind": "complete"}, h=0.01, horizon=3.0,
                      init=InitSpec(rotation_radius=0.5, omega_radius=0.2, velocity_init="error"))
    assert check_ball_invariance(run_trial(cfg), which="rotation-velocity-pair").ok
    with pytest.raises(ValueError):
        check_ball_invariance(run_trial(cfg), which="sideways")


# ------------------------------------------------------------ rate fitting


def test_fit_synthetic_rate():
    t = np.linspace(0, 4, 41)
    fit = fit_exponential_rate(t, np.exp(-2.0 * t))
    assert abs(fit.rate + 2.0) < 1e-9 and fit.r2 == pytest.approx(1.0)
    flat = fit_exponential_rate(t, np.full_like(t, 3.0))
    assert flat.rate == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(NonPositiveValue):
        fit_exponential_rate(t, np.r_[np.exp(-t[:-1]), 0.0])
    with pytest.raises(ValueError):
        fit_exponential_rate(t[:5], np.exp(-t[:5]))


@given(st.floats(-50.0, -0.01), st.floats(-3.0, 3.0))
def test_fit_recovers_any_rate(rate, log_c):
    t = np.linspace(0.0, 2.0, 30)
    fit = fit_exponential_rate(t, np.exp(log_c + rate * t))
    assert abs(fit.rate - rate) <= 1e-6 * abs(rate)
    assert fit.intercept == pytest.approx(log_c, abs=1e-6)


# ------------------------------------------------------------ cone membership


def test_cone_examples(rng):
    zi = rng.standard_normal(3)
    zj = rng.standard_normal(3)
    assert cone_membership(zi, [zj], zj - zi) == pytest.approx(0.0, abs=1e-12)
    assert cone_membership(zi, [zj], -(zj - zi)) == pytest.approx(np.linalg.norm(zj - zi))
    with pytest.raises(ValueError):
        cone_membership(zi, [], zi)


@given(seeds)
def test_cone_contains_nonnegative_combinations(seed):
    rng = np.random.default_rng(seed)
    zi = rng.standard_normal(3)
    zs = rng.standard_normal((3, 3))
    w = rng.random(3)
    zdot = ((zs - zi) * w[:, None]).sum(axis=0)
    assert cone_membership(zi, list(zs), zdot) <= 1e-9 * max(1.0, np.linalg.norm(zdot))


# ------------------------------------------------------------ uniform attractivity


def test_attractivity_static_graph():
    cfg = _cfg(law="rot_rel", q=0.45, horizon=10.0)
    rep = certify_uniform_attractivity(cfg, [0.0, 0.3, 0.7], eps=1e-4)
    assert rep.reached and rep.spread == 0.0


def test_attractivity_periodic_trees():
    trees = {"kind": "alternating", "dwell": 0.5, "graphs": [[[0, 1], [1, 2]], [[2, 0]]]}
    cfg = TrialConfig(n=3, law="rot_rel", topology=trees, horizon=30.0, init=InitSpec(rotation_radius=1.0))
    period = 1.0
    phases = list(np.arange(10) * period / 10)
    rep = certify_uniform_attractivity(cfg, phases, eps=1e-4, period=period)
    assert rep.reached and rep.spread <= period


def test_attractivity_disconnected_never_reaches():
    split = {"kind": "explicit", "edges": [[0, 1], [1, 0], [2, 3], [3, 2]]}
    cfg = TrialConfig(n=4, law="rot_rel", topology=split, horizon=10.0, init=InitSpec(rotation_radius=1.0))
    rep = certify_uniform_attractivity(cfg, [0.0, 0.5], eps=1e-4)
    assert not rep.reached and rep.worst is None


# ------------------------------------------------------------ predicates and reports


def test_predicates():
    tr = run_trial(_cfg(law="first_rel", q=0.45, horizon=20.0))
    ok, info = ConsensusPredicate()(tr)
    assert ok and info["rotation_error"] < 1e-3
    early = replace(tr, t=tr.t[:3], R=tr.R[:3], T=tr.T[:3])
    assert not ConsensusPredicate()(early)[0]
    assert PracticalConsensusPredicate()(tr)[0]


def test_monte_carlo_with_predicate():
    cfg = _cfg(law="first_rel", q=0.45, horizon=15.0, topology={"kind": "random_qsc"})
    s = monte_carlo(cfg, 5, ConsensusPredicate())
    assert s.rate == 1.0


def test_consensus_report():
    tr = run_trial(_cfg(law="rot_rel", q=0.45, horizon=10.0))
    rep = consensus_report(tr, fit_rate=True)
    assert rep.rotation_error < 1e-3 and rep.ball_invariant and not rep.diverged
    assert rep.rate is not None and rep.rate < 0
    assert json.loads(rep.to_json())["threshold"] == 1e-3


# ------------------------------------------------------------ emission


def test_trace_csv_roundtrip(tmp_path):
    tr = run_trial(_cfg(law="first_abs", q=0.45, horizon=1.0))
    path = tmp_path / "trace.csv"
    write_trace_csv(tr, path)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == len(tr) * tr.n
    last = rows[-1]
    assert float(last["R01"]) == tr.R[-1, -1, 0, 1]  # full precision
    assert float(last["t"]) == tr.t[-1]


def test_other_writers(tmp_path):
    tr = run_trial(_cfg(law="rot_rel", q=0.45, horizon=1.0, topology={"kind": "random_qsc_switching", "dwell": 0.2}))
    write_events_csv(tr, tmp_path / "events.csv")
    lines = (tmp_path / "events.csv").read_text().splitlines()
    assert lines[0] == "t,agent,neighbors" and len(lines) == len(tr.events) + 1
    names, table = figure_columns(tr)
    assert table.shape == (len(tr), len(names))
    assert np.allclose(table[:, 1], 0.0)  # agent 0 against itself
    write_json({"x": np.float64(1.5), "a": np.arange(2)}, tmp_path / "o.json")
    assert json.loads((tmp_path / "o.json").read_text()) == {"a": [0, 1], "x": 1.5}
    s = monte_carlo(_cfg(law="first_rel", horizon=1.0), 2, ConsensusPredicate())
    write_monte_carlo_csv(s, tmp_path / "mc.csv")
    assert (tmp_path / "mc.csv").read_text().count("\n") == 3
