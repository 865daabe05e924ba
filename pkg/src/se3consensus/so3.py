"""Rotation-group math: hat/vee, exp/log, geodesic distance, local parameterizations.

Every function accepts a single vector/matrix or a stack of them along leading
axes (shape ``(..., 3)`` or ``(..., 3, 3)``) and returns the matching shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    AntipodalRotation,
    NearSingular,
    NotSkew,
    OutsideImage,
    OutsideInjectivityRegion,
)

SMALL_ANGLE = 1e-4
ANTIPODAL_TOL = 1e-5
SKEW_TOL = 1e-8
NEAR_SINGULAR_COND = 1e8

_I3 = np.eye(3)


def hat(p: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector, so that ``hat(p) @ q == cross(p, q)``."""
    p = np.asarray(p, dtype=float)
    out = np.zeros(p.shape[:-1] + (3, 3))
    out[..., 0, 1] = -p[..., 2]
    out[..., 0, 2] = p[..., 1]
    out[..., 1, 0] = p[..., 2]
    out[..., 1, 2] = -p[..., 0]
    out[..., 2, 0] = -p[..., 1]
    out[..., 2, 1] = p[..., 0]
    return out


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product over the last axis; cheaper than ``np.cross`` for small stacks."""
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def _vee(S: np.ndarray) -> np.ndarray:
    # vee of the skew part, no validation
    return 0.5 * np.stack(
        [S[..., 2, 1] - S[..., 1, 2], S[..., 0, 2] - S[..., 2, 0], S[..., 1, 0] - S[..., 0, 1]],
        axis=-1,
    )


def vee(S: np.ndarray, tol: float = SKEW_TOL) -> np.ndarray:
    """Inverse of :func:`hat`.

    Raises:
        NotSkew: if ``||S + S^T||_F`` exceeds ``tol`` for any matrix in the stack.
    """
    S = np.asarray(S, dtype=float)
    asym = np.linalg.norm(S + np.swapaxes(S, -1, -2), axis=(-2, -1))
    if np.any(asym > tol):
        raise NotSkew(f"matrix is not skew-symmetric (||S + S^T||_F = {np.max(asym):.3g})")
    return _vee(S)


def sinc(beta: np.ndarray | float) -> np.ndarray:
    """``sin(beta)/beta`` with ``sinc(0) = 1``; Taylor series below 1e-4."""
    b = np.asarray(beta, dtype=float)
    b2 = b * b
    series = 1.0 - b2 / 6.0 + b2 * b2 / 120.0 - b2 * b2 * b2 / 5040.0
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = np.sin(b) / b
    return np.where(np.abs(b) < SMALL_ANGLE, series, direct)


def exp_so3(x: np.ndarray) -> np.ndarray:
    """Rotation ``exp(hat(x))`` by the Rodrigues formula."""
    x = np.asarray(x, dtype=float)
    theta = np.linalg.norm(x, axis=-1)[..., None, None]
    K = hat(x)
    a = sinc(theta)
    b = 0.5 * sinc(0.5 * theta) ** 2  # (1 - cos t) / t^2 without cancellation
    return _I3 + a * K + b * (K @ K)


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Geodesic distance from the identity, in ``[0, pi]``."""
    R = np.asarray(R, dtype=float)
    s = np.linalg.norm(_vee(R), axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(s, c)


def geodesic_distance(R1: np.ndarray, R2: np.ndarray) -> np.ndarray:
    """Riemannian distance ``d(R1, R2)`` = angle of ``R1^T R2``."""
    R1 = np.asarray(R1, dtype=float)
    return rotation_angle(np.swapaxes(R1, -1, -2) @ np.asarray(R2, dtype=float))


def log_so3(R: np.ndarray, tol: float = ANTIPODAL_TOL) -> np.ndarray:
    """Axis-angle vector ``(Log R)^vee`` with norm in ``[0, pi)``.

    Angles above 3*pi/4 take the axis from the symmetric part of ``R`` so that
    accuracy does not degrade as ``sin(theta)`` shrinks.

    Raises:
        AntipodalRotation: if the angle is within ``tol`` of pi.
    """
    R = np.asarray(R, dtype=float)
    theta = rotation_angle(R)
    if np.any(theta >= np.pi - tol):
        raise AntipodalRotation(f"rotation angle {np.max(theta):.12g} is outside B_pi(I)")
    w = _vee(R)  # sin(theta) * u
    th = theta[..., None]
    t2 = th * th
    small_scale = 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0
    with np.errstate(invalid="ignore", divide="ignore"):
        mid_scale = th / np.sin(th)
    out = np.where(th < SMALL_ANGLE, small_scale, mid_scale) * w

    big = theta > 0.75 * np.pi
    if np.any(big):
        Rb = R[big] if R.ndim > 2 else R[None]
        tb = theta[big] if R.ndim > 2 else np.atleast_1d(theta)
        cb = np.cos(tb)
        S = 0.5 * (Rb + np.swapaxes(Rb, -1, -2)) - cb[:, None, None] * _I3
        d = np.diagonal(S, axis1=-2, axis2=-1)
        k = np.argmax(d, axis=-1)
        col = np.take_along_axis(S, k[:, None, None], axis=-1)[..., 0]
        dk = np.take_along_axis(d, k[:, None], axis=-1)
        u = col / np.sqrt(dk * (1.0 - cb)[:, None])
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        wb = w[big] if R.ndim > 2 else w[None]
        sign = np.where(np.sum(u * wb, axis=-1) < 0.0, -1.0, 1.0)
        xb = (sign * tb)[:, None] * u
        if R.ndim > 2:
            out[big] = xb
        else:
            out = xb[0]
    return out


def jacobian_axis_angle(x: np.ndarray) -> np.ndarray:
    """Transition matrix ``L_x`` with ``dx/dt = L_x @ omega`` for ``dR/dt = R hat(omega)``.

    ``L_x = I + hat(x)/2 + (1 - sinc(t)/sinc(t/2)^2) hat(u)^2`` with ``t = |x|``.
    The coefficient on ``hat(x)^2`` uses its Taylor series near zero.
    """
    x = np.asarray(x, dtype=float)
    theta = np.linalg.norm(x, axis=-1)[..., None, None]
    K = hat(x)
    t2 = theta * theta
    series = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = (1.0 - sinc(theta) / sinc(0.5 * theta) ** 2) / t2
    c = np.where(theta < SMALL_ANGLE, series, direct)
    return _I3 + 0.5 * K + c * (K @ K)


@dataclass(frozen=True)
class Parameterization:
    """Local coordinates ``f(R) = g(theta) u`` on the ball ``B_r(I)``.

    ``g1`` and ``g3`` are the Taylor coefficients ``g(t) = g1 t + g3 t^3 + O(t^5)``
    used near the identity.
    """

    kind: str
    g: Callable[[np.ndarray], np.ndarray]
    g_inv: Callable[[np.ndarray], np.ndarray]
    dg: Callable[[np.ndarray], np.ndarray]
    r: float
    r_prime: float
    g1: float
    g3: float

    def ratio(self, theta: np.ndarray) -> np.ndarray:
        """``g(theta) / theta``, continuous at zero."""
        theta = np.asarray(theta, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            direct = self.g(theta) / theta
        return np.where(theta < SMALL_ANGLE, self.g1 + self.g3 * theta * theta, direct)

    def __repr__(self) -> str:
        return f"Parameterization({self.kind!r}, r={self.r:.6g}, r'={self.r_prime:.6g})"


PARAMETERIZATIONS: dict[str, Parameterization] = {
    "axis_angle": Parameterization(
        "axis_angle", lambda t: t * 1.0, lambda s: s * 1.0, lambda t: np.ones_like(t),
        np.pi, np.pi, 1.0, 0.0,
    ),
    "rodrigues": Parameterization(
        "rodrigues", lambda t: np.tan(t / 2), lambda s: 2 * np.arctan(s),
        lambda t: 0.5 / np.cos(t / 2) ** 2, np.pi, np.inf, 0.5, 1.0 / 24.0,
    ),
    "mrp": Parameterization(
        "mrp", lambda t: np.tan(t / 4), lambda s: 4 * np.arctan(s),
        lambda t: 0.25 / np.cos(t / 4) ** 2, np.pi, 1.0, 0.25, 1.0 / 192.0,
    ),
    "sin_map": Parameterization(
        "sin_map", np.sin, np.arcsin, np.cos, np.pi / 2, 1.0, 1.0, -1.0 / 6.0,
    ),
    "quat_vec": Parameterization(
        "quat_vec", lambda t: np.sin(t / 2), lambda s: 2 * np.arcsin(s),
        lambda t: 0.5 * np.cos(t / 2), np.pi, 1.0, 0.5, -1.0 / 48.0,
    ),
}

_ALIASES = {
    "AxisAngle": "axis_angle",
    "Rodrigues": "rodrigues",
    "ModifiedRodrigues": "mrp",
    "SinMap": "sin_map",
    "QuaternionVector": "quat_vec",
}


def get_parameterization(name: str | Parameterization) -> Parameterization:
    if isinstance(name, Parameterization):
        return name
    key = _ALIASES.get(name, name)
    try:
        return PARAMETERIZATIONS[key]
    except KeyError:
        raise KeyError(
            f"unknown parameterization {name!r}; expected one of {sorted(PARAMETERIZATIONS)}"
        ) from None


def to_param(R: np.ndarray, p: Parameterization | str) -> np.ndarray:
    """Coordinates ``g(theta) u`` of ``R``.

    Raises:
        OutsideInjectivityRegion: if ``d(I, R) >= p.r``.
    """
    p = get_parameterization(p)
    R = np.asarray(R, dtype=float)
    theta = rotation_angle(R)
    if np.any(theta >= p.r):
        raise OutsideInjectivityRegion(
            f"rotation angle {np.max(theta):.6g} >= injectivity radius {p.r:.6g} of {p.kind}"
        )
    x = log_so3(R)
    return p.ratio(theta)[..., None] * x


def param_to_axis_angle(y: np.ndarray, p: Parameterization | str) -> np.ndarray:
    """Axis-angle vector of the rotation whose coordinates are ``y``."""
    p = get_parameterization(p)
    y = np.asarray(y, dtype=float)
    s = np.linalg.norm(y, axis=-1)
    if np.any(s >= p.r_prime):
        raise OutsideImage(f"|y| = {np.max(s):.6g} >= image radius {p.r_prime:.6g} of {p.kind}")
    theta = p.g_inv(s)
    return y / p.ratio(theta)[..., None]


def from_param(y: np.ndarray, p: Parameterization | str) -> np.ndarray:
    """Rotation with coordinates ``y``; inverse of :func:`to_param`.

    Raises:
        OutsideImage: if ``|y| >= p.r_prime``.
    """
    return exp_so3(param_to_axis_angle(y, p))


def relative_param(xi: np.ndarray, xj: np.ndarray, p: Parameterization | str) -> np.ndarray:
    """Coordinates of the relative rotation ``R_i^T R_j`` given axis-angle states."""
    Ri = exp_so3(xi)
    Rj = exp_so3(xj)
    return to_param(np.swapaxes(Ri, -1, -2) @ Rj, p)


def _param_jacobian_unchecked(y: np.ndarray, p: Parameterization) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    x = param_to_axis_angle(y, p)
    theta = np.linalg.norm(x, axis=-1)
    th = theta[..., None, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        u = x / theta[..., None]
    uu = u[..., :, None] * u[..., None, :]
    direct = p.dg(th) * uu + p.ratio(th) * (_I3 - uu)
    # Taylor form: (g1 + g3 t^2) I + 2 g3 x x^T
    xx = x[..., :, None] * x[..., None, :]
    series = (p.g1 + p.g3 * th * th) * _I3 + 2.0 * p.g3 * xx
    M = np.where(th < SMALL_ANGLE, series, direct)
    return M @ jacobian_axis_angle(x)


def jacobian_param(
    y: np.ndarray, p: Parameterization | str, cond_limit: float = NEAR_SINGULAR_COND
) -> np.ndarray:
    """Jacobian ``L_y`` with ``dy/dt = L_y @ omega`` along ``dR/dt = R hat(omega)``.

    Built by the chain rule through the axis-angle Jacobian. ``jacobian_param(-y, p)``
    is the Jacobian for a world-frame angular velocity, since ``L_{-y} = L_y R^T``.

    Raises:
        NearSingular: if ``L_y`` is ill-conditioned, or its gain relative to the
            identity-scaled ``g'(0) I`` leaves ``[1/cond_limit, cond_limit]``.
    """
    p = get_parameterization(p)
    L = _param_jacobian_unchecked(y, p)
    sv = np.linalg.svd(L, compute_uv=False) / p.g1
    smax = sv[..., 0]
    smin = sv[..., -1]
    if np.any((smax > cond_limit) | (smin < 1.0 / cond_limit) | (smax > cond_limit * smin)):
        raise NearSingular(
            f"L_y for {p.kind} is near singular (singular values relative to g'(0): "
            f"max {np.max(smax):.3g}, min {np.min(smin):.3g})"
        )
    return L


def is_rotation(m: np.ndarray, tol: float = 1e-9) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3):
        return False
    ortho = np.linalg.norm(np.swapaxes(m, -1, -2) @ m - _I3, axis=(-2, -1))
    return bool(np.all(ortho <= tol) and np.all(np.abs(np.linalg.det(m) - 1.0) <= tol))


def project_to_so3(m: np.ndarray) -> np.ndarray:
    """Nearest rotation in Frobenius norm (polar factor via SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(m, dtype=float))
    D = np.ones(U.shape[:-1])
    D[..., -1] = np.sign(np.linalg.det(U @ Vt))
    return (U * D[..., None, :]) @ Vt


def _sample_haar_angle(radius: float, u: np.ndarray, iters: int = 64) -> np.ndarray:
    # inverse CDF of density (1 - cos t) on [0, radius) by bisection
    total = radius - np.sin(radius)
    target = u * total
    lo = np.zeros_like(u)
    hi = np.full_like(u, radius)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = (mid - np.sin(mid)) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def sample_rotation_ball(
    radius: float, rng: np.random.Generator, size: int | tuple[int, ...] | None = None
) -> np.ndarray:
    """Haar-uniform rotations conditioned on ``d(I, R) < radius``.

    ``radius = pi`` gives the uniform distribution on SO(3).
    """
    if not 0.0 < radius <= np.pi:
        raise ValueError(f"radius must lie in (0, pi], got {radius}")
    shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
    axis = rng.standard_normal(shape + (3,))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    theta = _sample_haar_angle(radius, rng.random(shape))
    theta = np.minimum(theta, np.nextafter(radius, 0.0))
    return exp_so3(theta[..., None] * axis)
