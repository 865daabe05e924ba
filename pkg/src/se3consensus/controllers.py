"""Consensus control laws on SE(3).

Per-agent functions take one agent index and a graph, mirroring how a single
robot would compute its input. The ``*_all`` functions evaluate a law for every
agent at once from stacked states ``R (n,3,3)``, ``T (n,3)``, ``omega (n,3)``,
``v (n,3)`` and an adjacency matrix ``A (n,n)``; the simulator uses those.

Dynamic laws are split into an acceleration command (``alpha`` for ``omega``,
``a`` for ``v``) and the cancellation of the body drift terms, so that
``tau = J alpha + omega x J omega`` and ``f = m (a + omega x v)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import MissingNeighbor
from .se3 import FormationSpec, Pose, Twist
from .so3 import (
    Parameterization,
    _param_jacobian_unchecked,
    _vee,
    cross3,
    exp_so3,
    get_parameterization,
    hat,
    jacobian_axis_angle,
    jacobian_param,
    log_so3,
    to_param,
)
from .topology import Digraph

KINEMATIC_LAWS = ("first_abs", "first_rel", "rot_abs", "rot_rel", "rot_fl", "trans_abs", "trans_rel")
DYNAMIC_LAWS = ("torque_abs", "torque_rel", "force")
ALL_LAWS = KINEMATIC_LAWS + DYNAMIC_LAWS
ROTATION_LAWS = ("rot_abs", "rot_rel", "rot_fl")
TRANSLATION_LAWS = ("trans_abs", "trans_rel")
RELATIVE_LAWS = ("first_rel", "rot_rel", "trans_rel", "torque_rel")

DEFAULT_GAIN = 3.0


@dataclass(frozen=True, eq=False)
class DynamicParams:
    """Inertia ``J`` (kg m^2), mass ``m`` (kg) and damping gain ``k`` (1/s)."""

    J: np.ndarray
    m: float = 1.0
    k: float = DEFAULT_GAIN

    def __post_init__(self):
        J = np.array(self.J, dtype=float).reshape(3, 3)
        if not np.allclose(J, J.T, atol=1e-12) or np.linalg.eigvalsh(J)[0] <= 0:
            raise ValueError("inertia must be symmetric positive definite")
        if not self.m > 0 or not self.k > 0:
            raise ValueError("mass and gain must be positive")
        J.setflags(write=False)
        object.__setattr__(self, "J", J)

    @classmethod
    def unit(cls, k: float = DEFAULT_GAIN) -> "DynamicParams":
        return cls(np.eye(3), 1.0, k)


def _adjacency(g: Digraph | np.ndarray) -> np.ndarray:
    return g.adjacency if isinstance(g, Digraph) else np.asarray(g, dtype=float)


def _neighbors(i: int, A: np.ndarray) -> list[int]:
    return [j for j in np.flatnonzero(A[i]).tolist() if j != i]


def _lookup(rel: Mapping, i: int, j: int):
    try:
        return rel[j]
    except KeyError:
        raise MissingNeighbor(f"agent {i} has no measurement for neighbor {j}") from None


def _consensus_term(A: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Rows ``sum_j a_ij (X_j - X_i)``; self-loops drop out."""
    return A @ X - A.sum(axis=1)[:, None] * X


# ---------------------------------------------------------------- first-order laws on SE(3)


def _as_matrix(p) -> np.ndarray:
    return p.as_matrix() if isinstance(p, Pose) else np.asarray(p, dtype=float)


def first_law_absolute(i: int, poses: Sequence[Pose | np.ndarray], g: Digraph) -> np.ndarray:
    """``sum_j a_ij ((G_j - G_i) + (G_i^-1 - G_j^-1))`` as a 4x4 matrix.

    Poses may be ``Pose`` objects or raw 4x4 matrices (noisy measurements are not
    rigid, so inverses are general matrix inverses).
    """
    A = _adjacency(g)
    Gi = _as_matrix(poses[i])
    Gi_inv = np.linalg.inv(Gi)
    out = np.zeros((4, 4))
    for j in _neighbors(i, A):
        Gj = _as_matrix(poses[j])
        out += A[i, j] * ((Gj - Gi) + (Gi_inv - np.linalg.inv(Gj)))
    return out


def first_law_relative(i: int, rel: Mapping[int, Pose | np.ndarray], g: Digraph) -> np.ndarray:
    """``sum_j a_ij (G_ij - G_ij^-1)`` as a 4x4 matrix.

    Raises:
        MissingNeighbor: if a neighbor of ``i`` is absent from ``rel``.
    """
    A = _adjacency(g)
    out = np.zeros((4, 4))
    for j in _neighbors(i, A):
        Gij = _as_matrix(_lookup(rel, i, j))
        out += A[i, j] * (Gij - np.linalg.inv(Gij))
    return out


def law_matrix_to_twist(M: np.ndarray) -> Twist:
    """Read a body twist off a first-order law matrix.

    ``omega`` is half the vee of the skew part of the rotation block, which turns
    ``R - R^T`` into ``sin(theta) u``; ``v`` is the translation column as is.
    """
    M = np.asarray(M, dtype=float)
    return Twist(0.5 * _vee(M[..., :3, :3]), M[..., :3, 3])


def _inverse_rigid(R: np.ndarray, T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Rt = np.swapaxes(R, -1, -2)
    return Rt, -np.einsum("...ij,...j->...i", Rt, T)


def first_abs_all(R, T, A, R_meas=None, inv_meas=None):
    """Batched first absolute law.

    ``R_meas[i, j]`` is agent ``i``'s measurement of ``R_j`` (defaults to the truth).
    With noisy, non-orthogonal measurements the inverse block comes from ``inv_meas``.
    """
    n = len(R)
    if R_meas is None:
        Rm = np.broadcast_to(R, (n,) + R.shape)
        Rinv, Tinv = _inverse_rigid(R, T)
        Rinv_m = np.broadcast_to(Rinv, Rm.shape)
        Tinv_m = np.broadcast_to(Tinv, (n, n, 3))
    else:
        Rm = R_meas
        Rinv_m, Tinv_m = inv_meas
    idx = np.arange(n)
    own_R = Rm[idx, idx]
    own_Ri, own_Ti = Rinv_m[idx, idx], Tinv_m[idx, idx]
    d = A.sum(axis=1)
    Aoff = A * (1.0 - np.eye(n))
    # rotation block: sum_j a_ij ((R_j - R_i) + (R_i^-1 - R_j^-1))
    B = np.einsum("ij,ijkl->ikl", Aoff, Rm - Rinv_m) - (d - np.diag(A))[:, None, None] * (own_R - own_Ri)
    tcol = np.einsum("ij,jk->ik", Aoff, T) - (d - np.diag(A))[:, None] * T
    tcol += (d - np.diag(A))[:, None] * own_Ti - np.einsum("ij,ijk->ik", Aoff, Tinv_m)
    return 0.5 * _vee(B), tcol


def first_rel_all(Rrel, Trel, A, inv_rel=None):
    """Batched first relative law from pairwise ``G_ij`` blocks ``Rrel (n,n,3,3)``, ``Trel (n,n,3)``."""
    n = len(A)
    Aoff = A * (1.0 - np.eye(n))
    if inv_rel is None:
        Rinv, Tinv = _inverse_rigid(Rrel, Trel)
    else:
        Rinv, Tinv = inv_rel
    B = np.einsum("ij,ijkl->ikl", Aoff, Rrel - Rinv)
    tcol = np.einsum("ij,ijk->ik", Aoff, Trel - Tinv)
    return 0.5 * _vee(B), tcol


# ---------------------------------------------------------------- rotation laws


def rot_law_absolute(i: int, y_all: np.ndarray, g: Digraph) -> np.ndarray:
    """``omega_i = sum_j a_ij (y_j - y_i)``."""
    A = _adjacency(g)
    y = np.asarray(y_all, dtype=float)
    return A[i] @ (y - y[i])


def rot_law_relative(i: int, y_rel: Mapping[int, np.ndarray], g: Digraph) -> np.ndarray:
    """``omega_i = sum_j a_ij y_ij`` with ``y_ij`` the coordinates of ``R_i^T R_j``."""
    A = _adjacency(g)
    out = np.zeros(3)
    for j in _neighbors(i, A):
        out += A[i, j] * np.asarray(_lookup(y_rel, i, j), dtype=float)
    return out


def rot_law_feedback_linearized(
    i: int, y_all: np.ndarray, g: Digraph, p: Parameterization | str
) -> np.ndarray:
    """``omega_i = L_{y_i}^-1 sum_j a_ij (y_j - y_i)``, so ``dy_i/dt`` is the linear consensus field.

    Raises:
        NearSingular: when ``y_i`` is close to the boundary of the image.
    """
    y = np.asarray(y_all, dtype=float)
    L = jacobian_param(y[i], p)
    return np.linalg.solve(L, rot_law_absolute(i, y, g))


def relative_rotations(R: np.ndarray) -> np.ndarray:
    """All ``R_i^T R_j`` as an ``(n, n, 3, 3)`` array."""
    return np.einsum("ikj,lkm->iljm", R, R)


def _edge_params(Rrel: np.ndarray, A: np.ndarray, p: Parameterization) -> np.ndarray:
    # coordinates of R_ij on edges only; non-edges may be antipodal and are left at zero
    n = len(A)
    ii, jj = np.nonzero(A * (1.0 - np.eye(n)))
    Y = np.zeros((n, n, 3))
    if len(ii):
        Y[ii, jj] = to_param(Rrel[ii, jj], p)
    return Y


def rot_abs_all(R, A, p):
    return _consensus_term(A, to_param(R, p))


def rot_rel_all(R, A, p, Rrel=None):
    Rrel = relative_rotations(R) if Rrel is None else Rrel
    return np.einsum("ij,ijk->ik", A, _edge_params(Rrel, A, p))


def rot_fl_all(R, A, p):
    y = to_param(R, p)
    L = jacobian_param(y, p)
    return np.linalg.solve(L, _consensus_term(A, y)[..., None])[..., 0]


# ---------------------------------------------------------------- translation laws


def trans_law_absolute(i: int, T_all: np.ndarray, g: Digraph) -> np.ndarray:
    """``v_i = sum_j a_ij (T_j - T_i)``, used directly as a body-frame velocity."""
    A = _adjacency(g)
    T = np.asarray(T_all, dtype=float)
    return A[i] @ (T - T[i])


def trans_law_relative(i: int, T_rel: Mapping[int, np.ndarray], g: Digraph) -> np.ndarray:
    """``v_i = sum_j a_ij T_ij`` with ``T_ij = R_i^T (T_j - T_i)``."""
    A = _adjacency(g)
    out = np.zeros(3)
    for j in _neighbors(i, A):
        out += A[i, j] * np.asarray(_lookup(T_rel, i, j), dtype=float)
    return out


def trans_abs_all(T, A):
    return _consensus_term(A, T)


def trans_rel_all(R, T, A):
    # R_i^T sum_j a_ij (T_j - T_i)
    return np.einsum("ikj,ik->ij", R, _consensus_term(A, T))


# ---------------------------------------------------------------- dynamic laws


def _angular_accel_abs(R, omega, A):
    x = log_so3(R)
    xdot = np.einsum("nij,nj->ni", jacobian_axis_angle(x), omega)
    d = A.sum(axis=1)[:, None]
    wbar = omega - _consensus_term(A, x)
    return -x + _consensus_term(A, xdot) - d * wbar


def _angular_accel_rel(R, omega, A, p, k):
    n = len(A)
    Rrel = relative_rotations(R)
    Y = _edge_params(Rrel, A, p)
    # omega_ij = R_ij omega_j - omega_i, then L_{-y_ij} omega_ij
    w_ij = np.einsum("ijkl,jl->ijk", Rrel, omega) - omega[:, None, :]
    Lm = _param_jacobian_unchecked(-Y, p)
    flow = np.einsum("ijkl,ijl->ijk", Lm, w_ij)
    Aoff = A * (1.0 - np.eye(n))
    wbar = omega - np.einsum("ij,ijk->ik", Aoff, Y)
    k = np.broadcast_to(np.asarray(k, dtype=float), (n,))[:, None]
    return -k * wbar + np.einsum("ij,ijk->ik", Aoff, flow)


def _linear_accel(R, T, omega, v, A, k):
    n = len(A)
    Rt = np.swapaxes(R, -1, -2)
    W = _consensus_term(A, T)
    U = _consensus_term(A, np.einsum("nij,nj->ni", R, v))
    body_W = np.einsum("nij,nj->ni", Rt, W)
    vbar = v - body_W
    k = np.broadcast_to(np.asarray(k, dtype=float), (n,))[:, None]
    return -k * vbar + np.einsum("nij,nj->ni", Rt, U) - cross3(omega, body_W)


def omega_bar_abs(R, omega, A):
    """``omega_i - sum_j a_ij (x_j - x_i)`` for the absolute torque law."""
    return omega - _consensus_term(A, log_so3(R))


def omega_bar_rel(R, omega, A, p):
    """``omega_i - sum_j a_ij y_ij`` for the relative torque law."""
    return omega - rot_rel_all(R, A, get_parameterization(p))


def v_bar(R, T, v, A):
    """``v_i - sum_j a_ij T_ij`` for the force law."""
    return v - trans_rel_all(R, T, A)


def _torque(J, alpha, omega):
    Jw = np.einsum("...ij,...j->...i", J, omega)
    return np.einsum("...ij,...j->...i", J, alpha) + cross3(omega, Jw)


def torque_law_absolute(
    i: int, x_all: np.ndarray, omega_all: np.ndarray, g: Digraph, dyn: DynamicParams
) -> np.ndarray:
    """Torque driving ``x`` to consensus at ``x = 0`` with ``omega_bar`` damped by the degree.

    ``x_all`` holds axis-angle coordinates of the absolute rotations.
    """
    A = _adjacency(g)
    x = np.asarray(x_all, dtype=float)
    w = np.asarray(omega_all, dtype=float)
    xdot = np.einsum("nij,nj->ni", jacobian_axis_angle(x), w)
    wbar = w[i] - A[i] @ (x - x[i])
    alpha = -x[i] + A[i] @ (xdot - xdot[i]) - A[i].sum() * wbar
    return _torque(dyn.J, alpha, w[i])


def torque_law_relative(
    i: int,
    y_rel: Mapping[int, np.ndarray],
    omega_self: np.ndarray,
    omega_rel: Mapping[int, np.ndarray],
    g: Digraph,
    dyn: DynamicParams,
    p: Parameterization | str,
) -> np.ndarray:
    """Torque from relative information only.

    ``omega_rel[j]`` is the relative angular velocity ``R_ij omega_j - omega_i``.
    The closed loop gives ``d/dt omega_bar' = -k omega_bar'`` exactly.
    """
    p = get_parameterization(p)
    A = _adjacency(g)
    w = np.asarray(omega_self, dtype=float)
    wbar = w.copy()
    flow = np.zeros(3)
    for j in _neighbors(i, A):
        y = np.asarray(_lookup(y_rel, i, j), dtype=float)
        wbar -= A[i, j] * y
        flow += A[i, j] * _param_jacobian_unchecked(-y, p) @ np.asarray(_lookup(omega_rel, i, j))
    return _torque(dyn.J, -dyn.k * wbar + flow, w)


def force_law(
    i: int,
    T_all: np.ndarray,
    v_all: np.ndarray,
    R_all: np.ndarray,
    omega_self: np.ndarray,
    g: Digraph,
    dyn: DynamicParams,
) -> np.ndarray:
    """Force giving ``dT_i/dt = sum_j a_ij (T_j - T_i) + R_i v_bar_i`` with ``v_bar`` decaying at rate ``k``."""
    A = _adjacency(g)
    T = np.asarray(T_all, dtype=float)
    v = np.asarray(v_all, dtype=float)
    R = np.asarray(R_all, dtype=float)
    w = np.asarray(omega_self, dtype=float)
    Ri = R[i]
    dT = A[i] @ (T - T[i])
    vw = np.einsum("nij,nj->ni", R, v)
    vbar = v[i] - Ri.T @ dT
    a = -dyn.k * vbar + Ri.T @ (A[i] @ (vw - vw[i])) - hat(w) @ (Ri.T @ dT)
    return dyn.m * (a + cross3(w, v[i]))


# ---------------------------------------------------------------- dispatch used by the simulator


def kinematic_twists(law, trans_law, R, T, A, p, meas=None):
    """Body twists ``(omega, v)`` of every agent for a kinematic law pair.

    ``meas`` optionally carries noisy measurement arrays for the first-order laws:
    ``("abs", R_meas, (Rinv, Tinv))`` or ``("rel", Rrel, Trel, (Rinv, Tinv))``.
    """
    n = len(R)
    if law == "first_abs":
        if meas is not None:
            return first_abs_all(R, T, A, meas[1], meas[2])
        return first_abs_all(R, T, A)
    if law == "first_rel":
        if meas is not None:
            return first_rel_all(meas[1], meas[2], A, meas[3])
        Rrel = relative_rotations(R)
        Trel = np.einsum("ikj,ilk->ilj", R, T[None, :, :] - T[:, None, :])
        return first_rel_all(Rrel, Trel, A)
    if law == "rot_abs":
        omega = rot_abs_all(R, A, p)
    elif law == "rot_rel":
        omega = rot_rel_all(R, A, p)
    elif law == "rot_fl":
        omega = rot_fl_all(R, A, p)
    elif law in TRANSLATION_LAWS:
        omega = np.zeros((n, 3))
        trans_law = law
    else:
        raise ValueError(f"{law!r} is not a kinematic law")
    if trans_law is None:
        v = np.zeros((n, 3))
    elif trans_law == "trans_abs":
        v = trans_abs_all(T, A)
    elif trans_law == "trans_rel":
        v = trans_rel_all(R, T, A)
    else:
        raise ValueError(f"{trans_law!r} is not a translation law")
    return omega, v


def dynamic_accels(law, trans_law, R, T, omega, v, A, p, k):
    """Acceleration commands ``(alpha, a)`` for ``omega`` and ``v``.

    ``law`` picks the rotation part ("torque_abs", "torque_rel", or "force" for
    no rotation control); ``trans_law`` is "force" or None (hold ``v``).
    """
    n = len(R)
    if law == "torque_abs":
        alpha = _angular_accel_abs(R, omega, A)
    elif law == "torque_rel":
        alpha = _angular_accel_rel(R, omega, A, p, k)
    elif law == "force":
        alpha = np.zeros((n, 3))
        trans_law = "force"
    else:
        raise ValueError(f"{law!r} is not a dynamic law")
    if trans_law == "force":
        a = _linear_accel(R, T, omega, v, A, k)
    elif trans_law is None:
        a = np.zeros((n, 3))
    else:
        raise ValueError(f"{trans_law!r} is not a dynamic translation law")
    return alpha, a


def torques_and_forces(alpha, a, omega, v, J, m):
    """Physical inputs that realize the acceleration commands through the rigid-body equations."""
    tau = _torque(J, alpha, omega)
    f = np.asarray(m, dtype=float).reshape(-1, 1) * (a + cross3(omega, v))
    return tau, f


# ---------------------------------------------------------------- formation wrappers


def _stack_targets(spec: FormationSpec):
    Rs = np.stack([t.R for t in spec.targets])
    Ts = np.stack([t.T for t in spec.targets])
    return Rs, Ts


def to_tilde(R, T, spec: FormationSpec):
    """Stacked ``G G*^-1``."""
    Rs, Ts = _stack_targets(spec)
    Rt = R @ np.swapaxes(Rs, -1, -2)
    return Rt, T - np.einsum("nij,nj->ni", Rt, Ts)


def twist_to_tilde(omega, v, spec: FormationSpec):
    Rs, Ts = _stack_targets(spec)
    wt = np.einsum("nij,nj->ni", Rs, omega)
    return wt, -cross3(wt, Ts) + np.einsum("nij,nj->ni", Rs, v)


def twist_from_tilde(wt, vt, spec: FormationSpec):
    Rs, Ts = _stack_targets(spec)
    Rst = np.swapaxes(Rs, -1, -2)
    return np.einsum("nij,nj->ni", Rst, wt), np.einsum("nij,nj->ni", Rst, cross3(wt, Ts) + vt)


def formation_kinematic_twists(law, trans_law, R, T, A, p, spec: FormationSpec, meas=None):
    """Run a kinematic law on ``G~ = G G*^-1`` and map the twist back with ``G*^-1 xi~ G*``."""
    Rt, Tt = to_tilde(R, T, spec)
    wt, vt = kinematic_twists(law, trans_law, Rt, Tt, A, p, meas)
    return twist_from_tilde(wt, vt, spec)


def formation_dynamic_inputs(law, trans_law, R, T, omega, v, A, p, k, spec: FormationSpec, J, m):
    """Torques and forces so that the tilde variables obey the chosen dynamic law.

    The tilde accelerations ``(alpha~, a~)`` are realized by
    ``tau = J R*^T alpha~ + omega x J omega`` and
    ``f = m R*^T (a~ + omega~ x (omega~ x T* + v~) + alpha~ x T*)``.
    """
    Rs, Ts = _stack_targets(spec)
    Rst = np.swapaxes(Rs, -1, -2)
    Rt, Tt = to_tilde(R, T, spec)
    wt, vt = twist_to_tilde(omega, v, spec)
    alpha_t, a_t = dynamic_accels(law, trans_law, Rt, Tt, wt, vt, A, p, k)
    Jw = np.einsum("...ij,...j->...i", J, omega)
    tau = np.einsum("...ij,...j->...i", J, np.einsum("nij,nj->ni", Rst, alpha_t)) + cross3(omega, Jw)
    inner = a_t + cross3(wt, cross3(wt, Ts) + vt) + cross3(alpha_t, Ts)
    f = np.asarray(m, dtype=float).reshape(-1, 1) * np.einsum("nij,nj->ni", Rst, inner)
    return tau, f


def formation_wrap(law: str, spec: FormationSpec, poses: Sequence[Pose], g: Digraph, p="axis_angle",
                   trans_law: str | None = "trans_rel") -> list[Twist]:
    """Kinematic formation control for a list of poses; returns one body twist per agent."""
    R = np.stack([q.R for q in poses])
    T = np.stack([q.T for q in poses])
    w, v = formation_kinematic_twists(law, trans_law, R, T, _adjacency(g), get_parameterization(p), spec)
    return [Twist(w[i], v[i]) for i in range(len(poses))]


# ---------------------------------------------------------------- geometric certificate


def max_pair_certificate(x: np.ndarray, p: Parameterization | str, tol: float = 1e-12):
    """Check the maximal-pair sign condition.

    For the pair ``(i, j)`` with the largest relative angle, every ``k`` must satisfy
    ``x_ij . y_ik >= 0``, where ``x_ij`` is the axis-angle vector of ``R_i^T R_j`` and
    ``y_ik`` the coordinates of ``R_i^T R_k``. Both orientations of the pair are checked.
    A relative rotation outside the coordinate domain counts as a violation.

    ``x`` holds axis-angle states, shape ``(n, 3)`` or a stack ``(..., n, 3)``.

    Returns:
        ``(ok, worst)`` where ``worst`` is the smallest inner product found
        (``-inf`` when some ``y_ik`` does not exist).
    """
    p = get_parameterization(p)
    x = np.asarray(x, dtype=float)
    xb = x.reshape((-1,) + x.shape[-2:])
    m, n = xb.shape[:2]
    R = exp_so3(xb)
    Rrel = np.einsum("cikj,clkm->ciljm", R, R)
    # tol=0: near-antipodal pairs still get a (non-unique) log instead of an error
    X = log_so3(Rrel, tol=0.0)
    dist = np.linalg.norm(X, axis=-1)
    i, j = np.divmod(dist.reshape(m, -1).argmax(axis=1), n)
    c = np.arange(m)
    worst = np.full(m, np.inf)
    for a, b in ((i, j), (j, i)):
        inside = dist[c, a] < p.r
        Y = np.zeros((m, n, 3))
        Y[inside] = to_param(Rrel[c, a][inside], p)
        ip = np.einsum("cnk,ck->cn", Y, X[c, a, b])
        ip[~inside] = -np.inf
        ip[c, a] = np.inf
        worst = np.minimum(worst, ip.min(axis=1))
    ok = worst >= -tol
    if x.ndim == 2:
        return bool(ok[0]), float(worst[0])
    return ok.reshape(x.shape[:-2]), worst.reshape(x.shape[:-2])
