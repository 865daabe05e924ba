"""Property suites behind ``se3consensus check``.

Each suite returns a list of :class:`CheckResult`; a suite passes when all of
its results pass. The acceptance tests call the same functions at full size.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import controllers as ctl
from .analysis import cone_membership, fit_exponential_rate, omega_bar_rel_series, rotation_consensus_error
from .simulator import InitSpec, TrialConfig, run_trial, trial_seeds
from .so3 import (
    PARAMETERIZATIONS,
    exp_so3,
    from_param,
    get_parameterization,
    jacobian_axis_angle,
    jacobian_param,
    log_so3,
    sample_rotation_ball,
    to_param,
)
from .topology import Digraph

SUITES = ("roundtrips", "invariance", "lemma1", "cone", "rates")


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- roundtrips


def roundtrip_errors(kind: str, samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """Worst ``from_param(to_param(R))`` error (Frobenius) and worst relative ``y`` roundtrip error."""
    p = get_parameterization(kind)
    R = sample_rotation_ball(p.r, rng, samples)
    y = to_param(R, p)
    R_back = from_param(y, p)
    err_R = float(np.linalg.norm(R_back - R, axis=(-2, -1)).max())
    y_back = to_param(R_back, p)
    scale = np.maximum(1.0, np.linalg.norm(y, axis=-1))
    err_y = float((np.linalg.norm(y_back - y, axis=-1) / scale).max())
    return err_R, err_y


def exp_log_error(samples: int, rng: np.random.Generator) -> float:
    R = sample_rotation_ball(np.pi, rng, samples)
    # stay clear of the antipodal set, where log is undefined
    x = log_so3(R[_angles_below(R, np.pi - 1e-4)])
    return float(np.linalg.norm(log_so3(exp_so3(x)) - x, axis=-1).max())


def _angles_below(R, limit):
    tr = np.trace(R, axis1=-2, axis2=-1)
    return np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0)) < limit


def suite_roundtrips(samples: int = 10_000, seed: int = 0, tol: float = 1e-9) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = [CheckResult("exp_log", *_cmp(exp_log_error(samples, rng), tol))]
    for kind in PARAMETERIZATIONS:
        eR, ey = roundtrip_errors(kind, samples, rng)
        out.append(CheckResult(f"{kind}:rotation", *_cmp(eR, tol)))
        out.append(CheckResult(f"{kind}:coordinates", *_cmp(ey, tol)))
    return out


def _cmp(value: float, limit: float) -> tuple[bool, float, float]:
    return bool(value <= limit), float(value), float(limit)


# ---------------------------------------------------------------- Jacobians


def _axis_angle_fd(x, omega, h, central):
    fwd = log_so3(exp_so3(x) @ exp_so3(h * omega))
    if not central:
        return (fwd - x) / h
    back = log_so3(exp_so3(x) @ exp_so3(-h * omega))
    return (fwd - back) / (2 * h)


def jacobian_fd_error(kind: str | None, samples: int, rng, h: float = 1e-6, central: bool = False) -> float:
    """Worst relative error between ``L @ omega`` and a finite difference of the coordinates.

    ``kind=None`` checks the axis-angle Jacobian; otherwise ``jacobian_param`` of that kind.
    States are drawn from the ball of radius ``0.9 r``.
    """
    p = get_parameterization(kind or "axis_angle")
    R = sample_rotation_ball(0.9 * p.r, rng, samples)
    omega = rng.standard_normal((samples, 3))
    if kind is None:
        x = log_so3(R)
        pred = np.einsum("nij,nj->ni", jacobian_axis_angle(x), omega)
        fd = _axis_angle_fd(x, omega, h, central)
    else:
        y = to_param(R, p)
        pred = np.einsum("nij,nj->ni", jacobian_param(y, p), omega)
        fwd = to_param(R @ exp_so3(h * omega), p)
        if central:
            fd = (fwd - to_param(R @ exp_so3(-h * omega), p)) / (2 * h)
        else:
            fd = (fwd - y) / h
    rel = np.linalg.norm(fd - pred, axis=-1) / np.maximum(np.linalg.norm(pred, axis=-1), 1e-300)
    return float(rel.max())


# ---------------------------------------------------------------- invariance


def _random_common_frame(rng):
    return exp_so3(rng.standard_normal(3)), rng.standard_normal(3)


def suite_invariance(trials: int = 200, seed: int = 1, tol: float = 1e-11) -> list[CheckResult]:
    """Relative-information laws are unchanged by a common left transform of all poses."""
    rng = np.random.default_rng(seed)
    worst = {k: 0.0 for k in ("first_rel", "rot_rel", "trans_rel", "torque_rel", "rotation_error")}
    n = 5
    A = np.ones((n, n))
    for _ in range(trials):
        p = get_parameterization(rng.choice(list(PARAMETERIZATIONS)))
        R = sample_rotation_ball(0.45 * p.r, rng, n)
        T = rng.standard_normal((n, 3))
        w = rng.standard_normal((n, 3))
        v = rng.standard_normal((n, 3))
        Q, c = _random_common_frame(rng)
        R2 = Q @ R
        T2 = T @ Q.T + c
        for law in ("first_rel", "rot_rel"):
            a = np.concatenate(ctl.kinematic_twists(law, "trans_rel", R, T, A, p))
            b = np.concatenate(ctl.kinematic_twists(law, "trans_rel", R2, T2, A, p))
            worst[law] = max(worst[law], float(np.abs(a - b).max()))
        a = ctl.trans_rel_all(R, T, A)
        b = ctl.trans_rel_all(R2, T2, A)
        worst["trans_rel"] = max(worst["trans_rel"], float(np.abs(a - b).max()))
        a = ctl.dynamic_accels("torque_rel", None, R, T, w, v, A, p, 3.0)[0]
        b = ctl.dynamic_accels("torque_rel", None, R2, T2, w, v, A, p, 3.0)[0]
        worst["torque_rel"] = max(worst["torque_rel"], float(np.abs(a - b).max()))
        worst["rotation_error"] = max(
            worst["rotation_error"], abs(rotation_consensus_error(R) - rotation_consensus_error(R2))
        )
    return [CheckResult(k, *_cmp(v, tol)) for k, v in worst.items()]


# ---------------------------------------------------------------- Lemma 1


def sign_condition_violations(kind: str, configs: int, q_factor: float, rng, n: int = 5) -> tuple[int, float]:
    """Count sign-condition violations over random configurations in the ball ``q_factor * r``."""
    p = get_parameterization(kind)
    R = sample_rotation_ball(min(q_factor * p.r, np.pi), rng, (configs, n))
    ok, worst = ctl.max_pair_certificate(log_so3(R, tol=0.0), p)
    return int((~ok).sum()), float(worst.min())


def suite_lemma1(configs: int = 10_000, q_factor: float = 0.45, seed: int = 2) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for kind in PARAMETERIZATIONS:
        bad, worst = sign_condition_violations(kind, configs, q_factor, rng)
        out.append(CheckResult(kind, bad == 0, float(bad), 0.0, f"smallest inner product {worst:.3g}"))
    return out


# ---------------------------------------------------------------- cone property


def rodrigues_velocity_fd(R: np.ndarray, omega: np.ndarray, angle: float = 1e-6) -> np.ndarray:
    """Central difference of Rodrigues coordinates along ``R exp(s omega)``, per unit time."""
    speed = np.linalg.norm(omega, axis=-1, keepdims=True)
    eps = angle / np.maximum(speed, 1e-300)
    fwd = to_param(R @ exp_so3(eps * omega), "rodrigues")
    back = to_param(R @ exp_so3(-eps * omega), "rodrigues")
    return np.where(speed > 0, (fwd - back) / (2 * eps), 0.0)


CONE_TOPOLOGY = Digraph.from_edges(3, [(0, 1), (1, 2), (2, 0), (0, 2)])


def cone_fractions(kind: str, trials: int, seed: int, horizon: float = 3.0, rel_tol: float = 1e-3):
    """Fraction of (sample, agent) points whose Rodrigues velocity lies in the neighbor cone."""
    p = get_parameterization(kind)
    good = total = 0
    worst = 0.0
    cfg = TrialConfig(
        n=3, law="rot_rel", parameterization=kind, topology=CONE_TOPOLOGY, horizon=horizon,
        sample_rate=20.0, init=InitSpec(rotation_radius=0.45 * p.r), seed=seed,
    )
    for s in trial_seeds(seed, trials):
        tr = run_trial(cfg.with_seed(s))
        z = to_param(tr.R, "rodrigues")
        for k in range(len(tr)):
            zdot = rodrigues_velocity_fd(tr.R[k], tr.controls["omega_cmd"][k])
            A = tr.adjacency[k]
            for i in range(tr.n):
                nbrs = [j for j in np.flatnonzero(A[i]) if j != i]
                norm = np.linalg.norm(zdot[i])
                if norm == 0:
                    continue
                res = cone_membership(z[k, i], [z[k, j] for j in nbrs], zdot[i]) / norm
                worst = max(worst, res)
                good += res <= rel_tol
                total += 1
    return good / max(total, 1), worst


def suite_cone(trials: int = 10, seed: int = 3) -> list[CheckResult]:
    out = []
    for kind in PARAMETERIZATIONS:
        frac, worst = cone_fractions(kind, trials, seed)
        out.append(CheckResult(kind, bool(frac >= 0.99), float(frac), 0.99, f"worst relative residual {worst:.3g}"))
    return out


# ---------------------------------------------------------------- rates


def suite_rates(seed: int = 4) -> list[CheckResult]:
    out = []
    t = np.linspace(0.0, 5.0, 50)
    for rate in (-0.01, -1.0, -10.0):
        fit = fit_exponential_rate(t, np.exp(rate * t))
        out.append(CheckResult(f"synthetic:{rate:g}", *_cmp(abs(fit.rate - rate) / abs(rate), 1e-6)))
    k = 3.0
    cfg = TrialConfig(
        n=5, law="torque_rel", mode="dynamic", parameterization="sin_map", topology={"kind": "complete"},
        h=0.01, sample_rate=10.0, horizon=4.0, gain=k, seed=seed,
        init=InitSpec(rotation_radius=0.3, omega_radius=1.0, velocity_init="error"),
    )
    tr = run_trial(cfg)
    wbar = omega_bar_rel_series(tr, "sin_map")
    worst = 0.0
    for i in range(tr.n):
        fit = fit_exponential_rate(tr.t, wbar[:, i])
        worst = max(worst, abs(fit.rate + k) / k)
    out.append(CheckResult("torque_rel:omega_bar", *_cmp(worst, 0.01)))
    return out


def run_suite(name: str, q_factor: float | None = None, quick: bool = False) -> list[CheckResult]:
    if name == "roundtrips":
        return suite_roundtrips(1000 if quick else 10_000)
    if name == "invariance":
        return suite_invariance(50 if quick else 200)
    if name == "lemma1":
        return suite_lemma1(500 if quick else 10_000, 0.45 if q_factor is None else q_factor)
    if name == "cone":
        return suite_cone(2 if quick else 10)
    if name == "rates":
        return suite_rates()
    raise KeyError(name)
