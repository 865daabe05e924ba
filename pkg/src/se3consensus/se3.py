"""Pose algebra on SE(3) and the consensus/formation change of coordinates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import MissingPair
from .so3 import SMALL_ANGLE, _vee, exp_so3, hat, is_rotation, project_to_so3, sinc

_I3 = np.eye(3)

REPROJECT_EVERY = 1000
REPROJECT_TOL = 1e-9


def _frozen(a, shape) -> np.ndarray:
    a = np.array(a, dtype=float).reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``G = [[R, T], [0, 1]]``."""

    R: np.ndarray = field(default_factory=lambda: _I3)
    T: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "R", _frozen(self.R, (3, 3)))
        object.__setattr__(self, "T", _frozen(self.T, (3,)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, G: np.ndarray) -> "Pose":
        G = np.asarray(G, dtype=float)
        return cls(G[:3, :3], G[:3, 3])

    def as_matrix(self) -> np.ndarray:
        G = np.eye(4)
        G[:3, :3] = self.R
        G[:3, 3] = self.T
        return G

    def to_row(self) -> list[float]:
        """Row-major R followed by T, the trace-file serialization."""
        return [*self.R.ravel().tolist(), *self.T.tolist()]

    @classmethod
    def from_row(cls, row: Sequence[float]) -> "Pose":
        row = np.asarray(row, dtype=float)
        return cls(row[:9].reshape(3, 3), row[9:12])

    def is_valid(self, tol: float = 1e-9) -> bool:
        return is_rotation(self.R, tol)

    def inverse(self) -> "Pose":
        return inverse(self)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def allclose(self, other: "Pose", atol: float = 1e-10) -> bool:
        return bool(np.allclose(self.R, other.R, atol=atol) and np.allclose(self.T, other.T, atol=atol))


@dataclass(frozen=True, eq=False)
class Twist:
    """Body-frame angular velocity ``omega`` and linear velocity ``v``."""

    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "omega", _frozen(self.omega, (3,)))
        object.__setattr__(self, "v", _frozen(self.v, (3,)))
        if not (np.all(np.isfinite(self.omega)) and np.all(np.isfinite(self.v))):
            raise ValueError("twist entries must be finite")

    def as_matrix(self) -> np.ndarray:
        xi = np.zeros((4, 4))
        xi[:3, :3] = hat(self.omega)
        xi[:3, 3] = self.v
        return xi

    @classmethod
    def from_matrix(cls, xi: np.ndarray) -> "Twist":
        """Read ``omega`` from the skew part of the top-left block, ``v`` from the top-right column."""
        xi = np.asarray(xi, dtype=float)
        return cls(_vee(xi[:3, :3]), xi[:3, 3])

    def allclose(self, other: "Twist", atol: float = 1e-10) -> bool:
        return bool(np.allclose(self.omega, other.omega, atol=atol) and np.allclose(self.v, other.v, atol=atol))


@dataclass(frozen=True)
class FormationSpec:
    """Desired poses ``G_i*``; relative targets ``G_i*^-1 G_j*`` are consistent by construction."""

    targets: tuple[Pose, ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))

    @property
    def n(self) -> int:
        return len(self.targets)

    def relative_target(self, i: int, j: int) -> Pose:
        return relative_pose(self.targets[i], self.targets[j])


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.R @ b.R, a.R @ b.T + a.T)


def inverse(g: Pose) -> Pose:
    return Pose(g.R.T, -g.R.T @ g.T)


def relative_pose(gi: Pose, gj: Pose) -> Pose:
    """``G_ij = G_i^-1 G_j``: rotation ``R_i^T R_j``, translation ``R_i^T (T_j - T_i)``."""
    return Pose(gi.R.T @ gj.R, gi.R.T @ (gj.T - gi.T))


def to_formation_frame(g: Pose, gstar: Pose) -> Pose:
    """``G~ = G G*^-1``; consensus in these coordinates is the desired formation."""
    return compose(g, inverse(gstar))


def from_formation_frame(gt: Pose, gstar: Pose) -> Pose:
    return compose(gt, gstar)


def conjugate_twist(xi: Twist, gstar: Pose) -> Twist:
    """``xi~ = G* xi G*^-1``: ``omega~ = R* omega``, ``v~ = -R* hat(omega) R*^T T* + R* v``."""
    Rs, Ts = gstar.R, gstar.T
    w = Rs @ xi.omega
    return Twist(w, -hat(w) @ Ts + Rs @ xi.v)


def unconjugate_twist(xt: Twist, gstar: Pose) -> Twist:
    """``xi = G*^-1 xi~ G*``: ``omega = R*^T omega~``, ``v = R*^T (hat(omega~) T* + v~)``."""
    Rs, Ts = gstar.R, gstar.T
    return Twist(Rs.T @ xt.omega, Rs.T @ (hat(xt.omega) @ Ts + xt.v))


def check_transitive_consistency(
    rel: Mapping[tuple[int, int], Pose], nodes: Sequence[int] | None = None, tol: float = 1e-8
) -> bool:
    """True iff ``G_ij G_jk == G_ik`` for every ordered triple of nodes.

    Raises:
        MissingPair: if some ordered pair of nodes has no entry.
    """
    if nodes is None:
        nodes = sorted({i for pair in rel for i in pair})
    for i in nodes:
        for j in nodes:
            if (i, j) not in rel:
                raise MissingPair(f"relative pose for pair {(i, j)} is missing")
    for i in nodes:
        for j in nodes:
            gij = rel[(i, j)]
            for k in nodes:
                if not compose(gij, rel[(j, k)]).allclose(rel[(i, k)], atol=tol):
                    return False
    return True


def se3_left_jacobian_rot(phi: np.ndarray) -> np.ndarray:
    """``V(phi) = sum_k hat(phi)^k / (k+1)!``, so that ``int_0^1 exp(s hat(phi)) ds = V``.

    Works on stacks ``(..., 3)``.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    K = hat(phi)
    b = 0.5 * sinc(0.5 * theta) ** 2
    t2 = theta * theta
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = (1.0 - sinc(theta)) / t2
    c = np.where(theta < SMALL_ANGLE, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, direct)
    return _I3 + b * K + c * (K @ K)


def exp_se3(omega: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation and translation of ``exp([[hat(omega), v], [0, 0]])``; stacks allowed."""
    omega = np.asarray(omega, dtype=float)
    R = exp_so3(omega)
    T = np.einsum("...ij,...j->...i", se3_left_jacobian_rot(omega), np.asarray(v, dtype=float))
    return R, T


class Reprojector:
    """Counts composed updates and re-projects rotations when drift exceeds the tolerance.

    Checks every ``every`` calls; between checks rotations are left untouched.
    """

    def __init__(self, every: int = REPROJECT_EVERY, tol: float = REPROJECT_TOL):
        self.every = every
        self.tol = tol
        self.count = 0
        self.repairs = 0

    def __call__(self, R: np.ndarray) -> np.ndarray:
        self.count += 1
        if self.count % self.every:
            return R
        resid = np.linalg.norm(np.swapaxes(R, -1, -2) @ R - _I3, axis=(-2, -1))
        if np.any(resid > self.tol):
            self.repairs += 1
            return project_to_so3(R)
        return R
