"""Consensus metrics, stability certificates and trace/report emission."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from . import controllers as ctl
from .errors import NonPositiveValue
from .simulator import Trace, TrialConfig, build_schedule, run_trial
from .so3 import get_parameterization, log_so3


def _rotations(states) -> np.ndarray:
    if isinstance(states, np.ndarray):
        return states
    out = []
    for s in states:
        s = getattr(s, "pose", s)
        out.append(getattr(s, "R", s))
    return np.asarray(out, dtype=float)


def pairwise_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vectors ``x_kl`` of ``R_k^T R_l`` for all pairs, shape ``(..., n, n, 3)``.

    Raises:
        AntipodalRotation: if some pair is (numerically) antipodal.
    """
    R = np.asarray(R, dtype=float)
    rel = np.einsum("...ikj,...lkm->...iljm", R, R)
    return log_so3(rel)


def rotation_consensus_error(states) -> float:
    """Largest pairwise geodesic distance between the agents' rotations (radians).

    Raises:
        AntipodalRotation: if a pair is at distance pi, where the log is undefined.
    """
    X = pairwise_log(_rotations(states))
    return float(np.linalg.norm(X, axis=-1).max())


def translation_consensus_error(T_all) -> float:
    """Euclidean distance of the stacked translations to the consensus set."""
    T = np.asarray(T_all, dtype=float)
    return float(np.linalg.norm(T - T.mean(axis=0)))


def rotation_error_series(trace: Trace) -> np.ndarray:
    return np.linalg.norm(pairwise_log(trace.R), axis=-1).max(axis=(-2, -1))


def translation_error_series(trace: Trace) -> np.ndarray:
    T = trace.T
    return np.linalg.norm(T - T.mean(axis=1, keepdims=True), axis=(-2, -1))


def v_pairwise(R: np.ndarray) -> np.ndarray:
    """``V = max_(k,l) x_kl^T x_kl``; works on a stack of configurations."""
    X = pairwise_log(R)
    return np.einsum("...k,...k->...", X, X).max(axis=(-2, -1))


def time_to_threshold(t: np.ndarray, err: np.ndarray, eps: float) -> float | None:
    """First time after which ``err`` stays below ``eps``, or None."""
    above = np.flatnonzero(np.asarray(err) >= eps)
    if len(above) == 0:
        return float(t[0])
    k = above[-1] + 1
    return float(t[k]) if k < len(t) else None


# ---------------------------------------------------------------- ball invariance


@dataclass(frozen=True)
class BallVerdict:
    ok: bool
    max_norm: float
    bound: float


def _x_norms(trace: Trace) -> np.ndarray:
    return np.linalg.norm(log_so3(trace.R), axis=-1)


def check_ball_invariance(
    trace: Trace, q: float | None = None, which: str = "rotation-x", slack: float | None = None
) -> BallVerdict:
    """Whether the trajectory stays in the closed ball of radius ``q``.

    ``rotation-x`` uses ``max_i ||x_i||`` with ``x_i`` the axis-angle coordinates of
    ``R_i``; ``rotation-velocity-pair`` uses ``max_i sqrt(|x_i|^2 + |omega_bar_i|^2)``
    for the absolute torque law. ``q`` defaults to the initial value of that norm.
    The default slack ``1e-6 + dt * max|omega|`` absorbs sampling effects.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    x = log_so3(trace.R)
    if which == "rotation-x":
        norms = np.linalg.norm(x, axis=-1).max(axis=1)
    elif which == "rotation-velocity-pair":
        wbar = np.stack([ctl.omega_bar_abs(trace.R[k], trace.omega[k], trace.adjacency[k]) for k in range(len(trace))])
        norms = np.sqrt(np.einsum("kni,kni->kn", x, x) + np.einsum("kni,kni->kn", wbar, wbar)).max(axis=1)
    else:
        raise ValueError(f"unknown ball kind {which!r}")
    if q is None:
        q = float(norms[0])
    if slack is None:
        dt = float(np.diff(trace.t).max()) if len(trace) > 1 else 0.0
        slack = 1e-6 + dt * float(np.linalg.norm(trace.omega, axis=-1).max())
    top = float(norms.max())
    return BallVerdict(top <= q + slack, top, q + slack)


def v6_series(trace: Trace) -> np.ndarray:
    """``max_i (x_i^T x_i + omega_bar_i^T omega_bar_i)`` along a dynamic-mode trace."""
    x = log_so3(trace.R)
    wbar = np.stack([ctl.omega_bar_abs(trace.R[k], trace.omega[k], trace.adjacency[k]) for k in range(len(trace))])
    return (np.einsum("kni,kni->kn", x, x) + np.einsum("kni,kni->kn", wbar, wbar)).max(axis=1)


def omega_bar_rel_series(trace: Trace, p) -> np.ndarray:
    """Per-agent norms of ``omega_i - sum_j a_ij y_ij``, shape ``(K, n)``."""
    p = get_parameterization(p)
    return np.stack([
        np.linalg.norm(ctl.omega_bar_rel(trace.R[k], trace.omega[k], trace.adjacency[k], p), axis=-1)
        for k in range(len(trace))
    ])


def v_bar_series(trace: Trace) -> np.ndarray:
    """Per-agent norms of ``v_i - sum_j a_ij T_ij``, shape ``(K, n)``."""
    return np.stack([
        np.linalg.norm(ctl.v_bar(trace.R[k], trace.T[k], trace.v[k], trace.adjacency[k]), axis=-1)
        for k in range(len(trace))
    ])


# ---------------------------------------------------------------- rates and cones


@dataclass(frozen=True)
class RateFit:
    rate: float
    r2: float
    intercept: float


def fit_exponential_rate(t: Sequence[float], values: Sequence[float]) -> RateFit:
    """Least-squares slope of ``log(values)`` against ``t``.

    Raises:
        NonPositiveValue: if any value is not strictly positive.
        ValueError: with fewer than 10 points.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    if len(t) < 10 or len(t) != len(y):
        raise ValueError("need at least 10 matching (t, value) points")
    if np.any(~(y > 0)):
        raise NonPositiveValue("rate fitting needs strictly positive values")
    ly = np.log(y)
    tc = t - t.mean()
    slope = float(tc @ (ly - ly.mean()) / (tc @ tc))
    intercept = float(ly.mean() - slope * t.mean())
    resid = ly - (intercept + slope * t)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    ss_res = float(resid @ resid)
    # a flat series has nothing to explain; treat it as a perfect fit
    r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    return RateFit(slope, r2, intercept)


def cone_membership(z_i: np.ndarray, z_neighbors: Sequence[np.ndarray], zdot_i: np.ndarray) -> float:
    """Distance from ``zdot_i`` to the cone spanned by ``z_j - z_i`` with nonnegative weights."""
    z_i = np.asarray(z_i, dtype=float)
    zdot_i = np.asarray(zdot_i, dtype=float)
    if len(z_neighbors) == 0:
        raise ValueError("cone needs at least one neighbor")
    G = np.stack([np.asarray(z, dtype=float) - z_i for z in z_neighbors], axis=1)
    _, rnorm = nnls(G, zdot_i)
    return float(rnorm)


# ---------------------------------------------------------------- uniform attractivity


@dataclass
class AttractivityReport:
    phases: list[float]
    times: list[float | None]
    eps: float

    @property
    def reached(self) -> bool:
        return all(t is not None for t in self.times)

    @property
    def worst(self) -> float | None:
        return max(self.times) if self.reached else None

    @property
    def spread(self) -> float | None:
        return max(self.times) - min(self.times) if self.reached else None


def certify_uniform_attractivity(
    cfg: TrialConfig, phases: Sequence[float], eps: float = 1e-4, period: float | None = None
) -> AttractivityReport:
    """Time to reach ``eps`` rotation consensus when the schedule is entered at different phases.

    The schedule is realized once over an extended horizon and shifted so that the
    trial starts ``phase`` seconds into it; the initial state is the same for every
    phase. Bounded spread of the times is the evidence of uniformity.
    """
    pad = max(phases) + (period or 0.0)
    base = build_schedule(
        replace(cfg, horizon=cfg.horizon + pad), np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[0])
    )
    times = []
    for ph in phases:
        sched = base.shifted(-ph)
        tr = run_trial(replace(cfg, topology=sched))
        times.append(time_to_threshold(tr.t, rotation_error_series(tr), eps))
    return AttractivityReport(list(phases), times, eps)


# ---------------------------------------------------------------- predicates


@dataclass(frozen=True)
class ConsensusPredicate:
    """Success iff both consensus errors at the last sample are below the tolerances."""

    rot_tol: float = 1e-3
    trans_tol: float = 1e-3

    def __call__(self, trace: Trace):
        try:
            rot = rotation_consensus_error(trace.R[-1])
        except ValueError:
            rot = math.pi
        trans = translation_consensus_error(trace.T[-1])
        return (rot < self.rot_tol and trans < self.trans_tol), {"rotation_error": rot, "translation_error": trans}


@dataclass(frozen=True)
class PracticalConsensusPredicate:
    """Success iff the errors stay below tolerance over the final ``tail`` fraction of the run.

    Used with measurement noise, where exact consensus is not reachable.
    """

    rot_tol: float = 0.5
    trans_tol: float = 0.5
    tail: float = 0.2

    def __call__(self, trace: Trace):
        k0 = int(len(trace) * (1.0 - self.tail))
        try:
            rot = float(rotation_error_series(replace(trace, R=trace.R[k0:])).max())
        except ValueError:
            rot = math.pi
        trans = float(translation_error_series(replace(trace, T=trace.T[k0:])).max())
        return (rot < self.rot_tol and trans < self.trans_tol), {"rotation_error": rot, "translation_error": trans}


# ---------------------------------------------------------------- reports and files


@dataclass
class ConsensusReport:
    rotation_error: float
    translation_error: float
    time_to_threshold: float | None
    ball_invariant: bool | None
    rate: float | None
    diverged: bool
    threshold: float = 1e-3

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def consensus_report(trace: Trace, threshold: float = 1e-3, fit_rate: bool = False) -> ConsensusReport:
    try:
        rot_series = rotation_error_series(trace)
        rot = float(rot_series[-1])
    except ValueError:
        rot_series, rot = None, math.pi
    trans_series = translation_error_series(trace)
    err = trans_series if rot_series is None else np.maximum(rot_series, trans_series)
    if not np.all(np.isfinite(err)):
        err = np.where(np.isfinite(err), err, np.inf)
    ttt = None if rot_series is None else time_to_threshold(trace.t, err, threshold)
    try:
        ball = check_ball_invariance(trace).ok
    except ValueError:
        ball = None
    rate = None
    if fit_rate and rot_series is not None:
        keep = rot_series > 1e-12
        if keep.sum() >= 10:
            rate = fit_exponential_rate(trace.t[keep], rot_series[keep]).rate
    return ConsensusReport(rot, float(trans_series[-1]), ttt, ball, rate, bool(trace.diverged), threshold)


def _fmt(x) -> str:
    return "%.17g" % x


TRACE_HEADER = (
    ["t", "agent"]
    + [f"R{r}{c}" for r in range(3) for c in range(3)]
    + ["Tx", "Ty", "Tz", "wx", "wy", "wz", "vx", "vy", "vz"]
)


def write_trace_csv(trace: Trace, path: str | Path) -> None:
    lines = [",".join(TRACE_HEADER)]
    for k, t in enumerate(trace.t):
        for i in range(trace.n):
            vals = [t, *trace.R[k, i].ravel(), *trace.T[k, i], *trace.omega[k, i], *trace.v[k, i]]
            lines.append(",".join([_fmt(vals[0]), str(i)] + [_fmt(x) for x in vals[1:]]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_events_csv(trace: Trace, path: str | Path) -> None:
    lines = ["t,agent,neighbors"]
    lines += [f"{_fmt(t)},{i},{' '.join(map(str, nb))}" for t, i, nb in trace.events]
    Path(path).write_text("\n".join(lines) + "\n")


def figure_columns(trace: Trace) -> tuple[list[str], np.ndarray]:
    """Columns plotted in the experiments: ``||R_i - R_1||_F``, ``||T_i - T_1||`` and ``R_i[0, 0]``."""
    n = trace.n
    dR = np.linalg.norm(trace.R - trace.R[:, :1], axis=(-2, -1))
    dT = np.linalg.norm(trace.T - trace.T[:, :1], axis=-1)
    r00 = trace.R[:, :, 0, 0]
    names = (
        ["t"]
        + [f"rot_frob_{i}" for i in range(n)]
        + [f"trans_dist_{i}" for i in range(n)]
        + [f"R00_{i}" for i in range(n)]
    )
    return names, np.column_stack([trace.t, dR, dT, r00])


def write_table_csv(names: Sequence[str], table: np.ndarray, path: str | Path) -> None:
    lines = [",".join(names)] + [",".join(_fmt(x) for x in row) for row in np.atleast_2d(table)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_monte_carlo_csv(summary, path: str | Path) -> None:
    lines = ["trial,seed,status,rotation_error,translation_error"]
    for k, (seed, status, info) in enumerate(zip(summary.seeds, summary.statuses, summary.details)):
        rot = info.get("rotation_error", float("nan"))
        trans = info.get("translation_error", float("nan"))
        lines.append(f"{k},{seed},{status},{_fmt(rot)},{_fmt(trans)}")
    Path(path).write_text("\n".join(lines) + "\n")
