"""Closed-loop simulation of multi-agent consensus on SE(3).

Kinematic mode holds each agent's twist constant between sample points and
advances the pose with the exact constant-twist exponential. Dynamic mode
integrates the rigid-body equations with a Runge-Kutta-Munthe-Kaas scheme
(RK4 in exponential coordinates around the current pose), re-evaluating the
feedback at every stage.
"""

from __future__ import annotations

import bisect
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import yaml

from . import controllers as ctl
from .controllers import DynamicParams
from .errors import ConfigInvalid, NumericalDivergence, OutsideInjectivityRegion
from .se3 import FormationSpec, Pose, Reprojector, Twist, exp_se3
from .so3 import (
    PARAMETERIZATIONS,
    _ALIASES,
    cross3,
    exp_so3,
    get_parameterization,
    hat,
    jacobian_axis_angle,
    sample_rotation_ball,
)
from .topology import Digraph, SwitchingSchedule, random_qsc_graph

DIVERGENCE_LIMIT = 1e9
GRID_TOL = 1e-9


# ---------------------------------------------------------------- single-agent stepping


@dataclass(frozen=True)
class AgentState:
    pose: Pose
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dyn: DynamicParams | None = None


def step_kinematic(state: AgentState, twist: Twist, h: float) -> AgentState:
    """Advance one agent by ``h`` under a constant body twist (exact)."""
    if not h > 0:
        raise ValueError("step must be positive")
    dR, dT = exp_se3(h * twist.omega, h * twist.v)
    R = state.pose.R
    return replace(state, pose=Pose(R @ dR, state.pose.T + R @ dT), omega=twist.omega, v=twist.v)


def _rigid_rates(omega, v, tau, f, J, Jinv, m):
    Jw = np.einsum("...ij,...j->...i", J, omega)
    wdot = np.einsum("...ij,...j->...i", Jinv, tau - cross3(omega, Jw))
    vdot = f / m[..., None] - cross3(omega, v)
    return wdot, vdot


def _rkmk4(R, T, omega, v, h, inputs):
    """One RKMK4 step of ``dR = R hat(w)``, ``dT = R v`` plus velocity rates.

    ``inputs(R, T, omega, v)`` returns ``(wdot, vdot)``. The pose is written as
    ``R_n exp(theta)`` and ``theta`` is integrated from zero.
    """
    def rates(theta, Tk, wk, vk):
        Rk = R @ exp_so3(theta)
        wdot, vdot = inputs(Rk, Tk, wk, vk)
        dtheta = np.einsum("...ij,...j->...i", jacobian_axis_angle(theta), wk)
        dT = np.einsum("...ij,...j->...i", Rk, vk)
        return dtheta, dT, wdot, vdot

    th0 = np.zeros_like(omega)
    k1 = rates(th0, T, omega, v)
    k2 = rates(*(a + 0.5 * h * b for a, b in zip((th0, T, omega, v), k1)))
    k3 = rates(*(a + 0.5 * h * b for a, b in zip((th0, T, omega, v), k2)))
    k4 = rates(*(a + h * b for a, b in zip((th0, T, omega, v), k3)))
    inc = [h / 6.0 * (a + 2 * b + 2 * c + d) for a, b, c, d in zip(k1, k2, k3, k4)]
    return R @ exp_so3(inc[0]), T + inc[1], omega + inc[2], v + inc[3]


def step_dynamic(state: AgentState, torque: np.ndarray, force: np.ndarray, h: float) -> AgentState:
    """Advance one rigid body by ``h`` with torque and force held over the step."""
    if state.dyn is None:
        raise ValueError("dynamic stepping needs DynamicParams on the state")
    J = state.dyn.J
    Jinv = np.linalg.inv(J)
    m = np.asarray(state.dyn.m, dtype=float)
    tau = np.asarray(torque, dtype=float)
    f = np.asarray(force, dtype=float)
    R, T, w, v = _rkmk4(
        state.pose.R, state.pose.T, state.omega, state.v, h,
        lambda Rk, Tk, wk, vk: _rigid_rates(wk, vk, tau, f, J, Jinv, m),
    )
    return replace(state, pose=Pose(R, T), omega=w, v=v)


# ---------------------------------------------------------------- noise


def inject_noise(measurement: np.ndarray, magnitude: float, rng: np.random.Generator) -> np.ndarray:
    """Additive perturbation of a fixed size.

    Arrays ending in ``(3, 3)`` get a random skew matrix of Frobenius norm
    ``magnitude``; arrays ending in ``3`` get a uniform-direction vector of that norm.
    Leading axes are treated as independent measurements.
    """
    if magnitude < 0:
        raise ValueError("noise magnitude must be nonnegative")
    m = np.asarray(measurement, dtype=float)
    if magnitude == 0:
        return m.copy()
    is_matrix = m.ndim >= 2 and m.shape[-2:] == (3, 3)
    batch = m.shape[:-2] if is_matrix else m.shape[:-1]
    d = rng.standard_normal(batch + (3,))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    if is_matrix:
        # ||hat(w)||_F = sqrt(2) ||w||
        return m + hat(d * (magnitude / math.sqrt(2.0)))
    return m + magnitude * d


def _noisy_measurements(law, R, T, magnitude, rng):
    n = len(R)
    if law == "first_abs":
        Rm = inject_noise(np.broadcast_to(R, (n, n, 3, 3)), magnitude, rng)
        G = np.zeros((n, n, 4, 4))
        G[..., :3, :3] = Rm
        G[..., :3, 3] = T[None, :, :]
        G[..., 3, 3] = 1.0
        Gi = np.linalg.inv(G)
        return ("abs", Rm, (Gi[..., :3, :3], Gi[..., :3, 3]))
    Rrel = ctl.relative_rotations(R)
    Trel = np.einsum("ikj,ilk->ilj", R, T[None, :, :] - T[:, None, :])
    Rm = inject_noise(Rrel, magnitude, rng)
    G = np.zeros((n, n, 4, 4))
    G[..., :3, :3] = Rm
    G[..., :3, 3] = Trel
    G[..., 3, 3] = 1.0
    Gi = np.linalg.inv(G)
    return ("rel", Rm, Trel, (Gi[..., :3, :3], Gi[..., :3, 3]))


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class InitSpec:
    """How initial states are drawn.

    Rotations are Haar-uniform in the geodesic ball of ``rotation_radius`` around
    the identity, translations uniform in ``[0, translation_box]^3``. Angular and
    linear velocities are uniform in balls; with ``velocity_init = "error"`` the
    sampled vectors are the damped error variables of the dynamic laws instead of
    the raw velocities. Explicit ``rotations`` (axis-angle rows or 3x3 matrices),
    ``translations``, ``omegas`` and ``velocities`` override sampling.
    """

    rotation_radius: float = math.pi
    translation_box: float = 1.0
    omega_radius: float = 0.0
    v_radius: float = 0.0
    velocity_init: str = "raw"
    rotations: Any = None
    translations: Any = None
    omegas: Any = None
    velocities: Any = None


@dataclass(frozen=True)
class TrialConfig:
    """One simulation run.

    ``topology`` is either a ready :class:`SwitchingSchedule` / :class:`Digraph` or
    a mapping describing how to build one (random kinds are drawn from the seed).
    """

    n: int
    law: str
    mode: str = "kinematic"
    trans_law: str | None = "default"
    parameterization: str = "axis_angle"
    topology: Any = field(default_factory=lambda: {"kind": "random_qsc"})
    h: float = 1e-3
    horizon: float = 20.0
    sample_rate: float = 10.0
    noise_magnitude: float = 0.0
    seed: int = 0
    formation: FormationSpec | None = None
    init: InitSpec = field(default_factory=InitSpec)
    gain: float = ctl.DEFAULT_GAIN
    inertia: Any = None
    mass: Any = 1.0
    stop_tol: float | None = None

    def __post_init__(self):
        validate_config(self)

    @property
    def resolved_trans_law(self) -> str | None:
        if self.trans_law != "default":
            return None if self.trans_law in (None, "none") else self.trans_law
        if self.mode == "dynamic":
            return "force"
        return "trans_rel" if self.law in ctl.ROTATION_LAWS else None

    @property
    def sample_period(self) -> float:
        return 1.0 / self.sample_rate

    def with_seed(self, seed: int) -> "TrialConfig":
        return replace(self, seed=int(seed))

    def dynamic_params(self) -> tuple[np.ndarray, np.ndarray]:
        J = np.eye(3) if self.inertia is None else np.asarray(self.inertia, dtype=float)
        J = np.broadcast_to(J.reshape(-1, 3, 3) if J.size != 9 else J.reshape(3, 3), (self.n, 3, 3)).copy()
        m = np.broadcast_to(np.asarray(self.mass, dtype=float), (self.n,)).copy()
        for i in range(self.n):
            DynamicParams(J[i], m[i], self.gain)  # validates
        return J, m


def _fail(msg: str, key: str):
    raise ConfigInvalid(msg, key=key)


def validate_config(cfg: TrialConfig) -> None:
    if not isinstance(cfg.n, (int, np.integer)) or cfg.n < 1:
        _fail("must be a positive integer", "n")
    if cfg.mode not in ("kinematic", "dynamic"):
        _fail("must be 'kinematic' or 'dynamic'", "mode")
    allowed = ctl.KINEMATIC_LAWS if cfg.mode == "kinematic" else ctl.DYNAMIC_LAWS
    if cfg.law not in allowed:
        _fail(f"{cfg.law!r} is not a {cfg.mode} law; expected one of {list(allowed)}", "law")
    tl = cfg.trans_law
    if tl not in ("default", None, "none"):
        ok = ctl.TRANSLATION_LAWS if cfg.mode == "kinematic" else ("force",)
        if tl not in ok:
            _fail(f"{tl!r} is not valid in {cfg.mode} mode; expected one of {list(ok)}", "trans_law")
    if cfg.parameterization not in PARAMETERIZATIONS and cfg.parameterization not in _ALIASES:
        _fail(f"unknown parameterization {cfg.parameterization!r}", "parameterization")
    for key in ("h", "horizon", "sample_rate"):
        val = getattr(cfg, key)
        if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
            _fail("must be a positive number", key)
    if not cfg.noise_magnitude >= 0:
        _fail("must be nonnegative", "noise_magnitude")
    if cfg.noise_magnitude > 0 and cfg.law not in ("first_abs", "first_rel"):
        _fail("measurement noise is only modeled for first_abs and first_rel", "noise_magnitude")
    if cfg.mode == "dynamic":
        ratio = cfg.sample_period / cfg.h
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            _fail("sample period must be a whole multiple of the integration step h", "sample_rate")
    if not 0 < cfg.init.rotation_radius <= math.pi:
        _fail("must lie in (0, pi]", "init.rotation_radius")
    if cfg.init.velocity_init not in ("raw", "error"):
        _fail("must be 'raw' or 'error'", "init.velocity_init")
    if cfg.formation is not None and cfg.formation.n != cfg.n:
        _fail(f"needs {cfg.n} targets, got {cfg.formation.n}", "formation")
    if not cfg.gain > 0:
        _fail("must be positive", "gain")
    if cfg.stop_tol is not None and (cfg.mode != "kinematic" or not cfg.stop_tol > 0):
        _fail("early stopping needs a positive tolerance and kinematic mode", "stop_tol")
    if isinstance(cfg.topology, (Digraph, SwitchingSchedule)):
        if cfg.topology.n != cfg.n:
            _fail(f"graph has {cfg.topology.n} nodes but n = {cfg.n}", "topology")
    elif isinstance(cfg.topology, Mapping):
        if cfg.topology.get("kind") not in TOPOLOGY_KINDS:
            _fail(f"kind must be one of {list(TOPOLOGY_KINDS)}", "topology.kind")
    else:
        _fail("must be a graph, a schedule or a mapping", "topology")


TOPOLOGY_KINDS = ("complete", "explicit", "random_qsc", "alternating", "random_qsc_switching", "schedule")


def _graph_from_edges(n, edges, weights=None) -> Digraph:
    try:
        if weights is not None and np.ndim(weights) == 2:
            W = np.asarray(weights, dtype=float)
            A = np.zeros((n, n))
            for i, j in edges:
                A[i, j] = W[i, j]
            np.fill_diagonal(A, np.where(np.diag(W) > 0, np.diag(W), 1.0))
            return Digraph(A)
        return Digraph.from_edges(n, [tuple(e) for e in edges])
    except (ValueError, IndexError, TypeError) as exc:
        raise ConfigInvalid(str(exc), key="topology.edges") from None


def build_schedule(cfg: TrialConfig, rng: np.random.Generator) -> SwitchingSchedule:
    """Realize the configured topology as a schedule over ``[0, horizon]``."""
    top = cfg.topology
    n, horizon = cfg.n, cfg.horizon
    if isinstance(top, SwitchingSchedule):
        return top
    if isinstance(top, Digraph):
        return SwitchingSchedule.constant(top, horizon)
    kind = top["kind"]
    if kind == "complete":
        return SwitchingSchedule.constant(Digraph.complete(n, top.get("weight", 1.0)), horizon)
    if kind == "explicit":
        if "edges" not in top:
            _fail("explicit topology needs an edge list", "topology.edges")
        return SwitchingSchedule.constant(_graph_from_edges(n, top["edges"], top.get("weights")), horizon)
    if kind == "random_qsc":
        g = random_qsc_graph(n, rng) if n > 1 else Digraph(np.ones((1, 1)))
        return SwitchingSchedule.constant(g, horizon)
    dwell = float(top.get("dwell", 1.0 / top.get("switch_rate", 10.0)))
    if not dwell > 0:
        _fail("must be positive", "topology.dwell")
    if kind == "alternating":
        graphs = [_graph_from_edges(n, e, top.get("weights")) for e in top.get("graphs", [])]
        if len(graphs) < 1:
            _fail("alternating topology needs at least one graph", "topology.graphs")
        return SwitchingSchedule.periodic(graphs, dwell, horizon)
    if kind == "random_qsc_switching":
        master = rng.integers(1, 3, size=(n, n)).astype(float)
        np.fill_diagonal(master, 1.0)
        count = int(math.ceil(horizon / dwell - 1e-9))
        graphs = []
        for _ in range(count):
            g = random_qsc_graph(n, rng)
            graphs.append(Digraph(np.where(g.adjacency > 0, master, 0.0)))
        return SwitchingSchedule.from_graph_sequence(
            [k * dwell for k in range(count)], graphs, master, 0.5 * dwell, horizon
        )
    if kind == "schedule":
        data = top
        if "path" in top:
            try:
                data = json.loads(Path(top["path"]).read_text())
            except OSError:
                raise
            except json.JSONDecodeError as exc:
                _fail(f"schedule file is not valid JSON: {exc}", "topology.path")
        try:
            return SwitchingSchedule.from_records(
                n, data["records"], np.asarray(data.get("weights", np.ones((n, n))), dtype=float),
                float(data.get("dwell_floor", 0.0)), horizon,
            )
        except KeyError as exc:
            _fail(f"schedule is missing {exc}", "topology.records")
    _fail(f"unknown kind {kind!r}", "topology.kind")


# YAML loading -------------------------------------------------------------------

_TOP_KEYS = {
    "n", "mode", "law", "trans_law", "parameterization", "topology", "h", "horizon",
    "sample_rate", "noise_magnitude", "seed", "formation", "init", "gain", "inertia", "mass", "stop_tol",
}


def _formation_from(data) -> FormationSpec:
    targets = []
    for k, t in enumerate(data.get("targets", [])):
        try:
            rot = np.asarray(t.get("rotation", [0.0, 0.0, 0.0]), dtype=float)
            R = exp_so3(rot) if rot.size == 3 else rot.reshape(3, 3)
            targets.append(Pose(R, t.get("translation", [0.0, 0.0, 0.0])))
        except (ValueError, AttributeError) as exc:
            _fail(str(exc), f"formation.targets[{k}]")
    return FormationSpec(tuple(targets))


def config_from_dict(data: Mapping[str, Any]) -> TrialConfig:
    """Build a validated config from plain (YAML/JSON-like) data."""
    if not isinstance(data, Mapping):
        raise ConfigInvalid("config must be a mapping at the top level")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        _fail("unknown key", sorted(unknown)[0])
    for key in ("n", "law"):
        if key not in data:
            _fail("missing required key", key)
    kw = dict(data)
    init = kw.pop("init", None) or {}
    if not isinstance(init, Mapping):
        _fail("must be a mapping", "init")
    try:
        kw["init"] = InitSpec(**init)
    except TypeError as exc:
        _fail(str(exc), "init")
    if kw.get("formation") is not None:
        kw["formation"] = _formation_from(kw["formation"])
    if "topology" in kw and not isinstance(kw["topology"], Mapping):
        _fail("must be a mapping with a 'kind' entry", "topology")
    for key in ("h", "horizon", "sample_rate", "noise_magnitude", "gain"):
        if key in kw:
            try:
                kw[key] = float(kw[key])
            except (TypeError, ValueError):
                _fail("must be a number", key)
    if "seed" in kw:
        try:
            kw["seed"] = int(kw["seed"])
        except (TypeError, ValueError):
            _fail("must be an integer", "seed")
    return TrialConfig(**kw)


def load_config(path: str | Path) -> TrialConfig:
    """Read a YAML (or JSON) config file."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"could not parse config: {exc}") from None
    return config_from_dict(data)


# ---------------------------------------------------------------- trial execution


@dataclass
class Trace:
    """Sampled trajectory of all agents.

    Attributes:
        t: sample times ``(K,)``.
        R, T, omega, v: states at the samples, shapes ``(K, n, 3, 3)`` and ``(K, n, 3)``.
        controls: named control arrays aligned with ``t`` (held twists in kinematic
            mode, torques and forces in dynamic mode).
        adjacency: active adjacency matrix at each sample ``(K, n, n)``.
        events: ``(time, agent, neighbors)`` whenever an agent's neighborhood changed.
        diverged: set when a state norm left the divergence limit.
        stopped_early: set when the run ended at consensus before the horizon
            (only with ``stop_tol``).
    """

    t: np.ndarray
    R: np.ndarray
    T: np.ndarray
    omega: np.ndarray
    v: np.ndarray
    controls: dict[str, np.ndarray]
    adjacency: np.ndarray
    events: list[tuple[float, int, tuple[int, ...]]]
    diverged: bool = False
    config: TrialConfig | None = None
    stopped_early: bool = False

    @property
    def n(self) -> int:
        return self.R.shape[1]

    def __len__(self) -> int:
        return len(self.t)


def _initial_state(cfg: TrialConfig, rng: np.random.Generator):
    n, ini = cfg.n, cfg.init
    if ini.rotations is not None:
        rot = np.asarray(ini.rotations, dtype=float)
        R = exp_so3(rot) if rot.shape[-1] == 3 and rot.ndim == 2 else rot.reshape(n, 3, 3)
    else:
        R = sample_rotation_ball(ini.rotation_radius, rng, n)
    if ini.translations is not None:
        T = np.asarray(ini.translations, dtype=float).reshape(n, 3)
    else:
        T = rng.uniform(0.0, ini.translation_box, size=(n, 3))

    def ball(radius):
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * (radius * rng.random(n) ** (1.0 / 3.0))[:, None]

    omega = np.asarray(ini.omegas, dtype=float).reshape(n, 3) if ini.omegas is not None else ball(ini.omega_radius)
    v = np.asarray(ini.velocities, dtype=float).reshape(n, 3) if ini.velocities is not None else ball(ini.v_radius)
    if R.shape != (n, 3, 3) or T.shape != (n, 3):
        _fail("explicit initial state has the wrong shape", "init")
    return R, T, omega, v


def _error_to_raw_velocity(cfg, R, T, omega, v, A, p):
    # sampled vectors are omega_bar / v_bar; recover raw velocities for the active law
    if cfg.formation is not None:
        R, T = ctl.to_tilde(R, T, cfg.formation)
    if cfg.law == "torque_abs":
        omega = omega + ctl._consensus_term(A, ctl.log_so3(R))
    elif cfg.law == "torque_rel":
        omega = omega + ctl.rot_rel_all(R, A, p)
    if cfg.resolved_trans_law == "force":
        v = v + ctl.trans_rel_all(R, T, A)
    return omega, v


def _at_consensus(R, T, cfg, tol) -> bool:
    # all poses (in formation coordinates if any) agree to ``tol``; under the
    # kinematic laws consensus is an equilibrium set, so the run can end here
    if cfg.formation is not None:
        R, T = ctl.to_tilde(R, T, cfg.formation)
    return bool(np.abs(R - R[0]).max() < tol and np.abs(T - T[0]).max() < tol)


def run_trial(cfg: TrialConfig, raise_on_divergence: bool = False) -> Trace:
    """Simulate one trial; deterministic for a given config and seed.

    Raises:
        ConfigInvalid: on inconsistent configuration.
        NumericalDivergence: only with ``raise_on_divergence``; otherwise the trace
            is cut at the offending sample and flagged.
        OutsideInjectivityRegion: if a law needs a logarithm of an antipodal rotation.
    """
    graph_ss, init_ss, noise_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    schedule = build_schedule(cfg, np.random.default_rng(graph_ss))
    init_rng = np.random.default_rng(init_ss)
    noise_rng = np.random.default_rng(noise_ss)
    p = get_parameterization(cfg.parameterization)
    trans_law = cfg.resolved_trans_law

    R, T, omega, v = _initial_state(cfg, init_rng)
    dt = cfg.sample_period
    steps = int(math.floor(cfg.horizon / dt + 1e-9))

    switch_times = schedule.switch_times()
    cache: dict[int, np.ndarray] = {}

    def adjacency_at(t):
        tq = min(t + GRID_TOL * dt, schedule.horizon)
        seg = bisect.bisect_right(switch_times, tq)
        if seg not in cache:
            cache.clear()
            cache[seg] = schedule.graph_at(tq).adjacency
        return cache[seg]

    A0 = adjacency_at(0.0)
    if cfg.init.velocity_init == "error" and cfg.mode == "dynamic":
        omega, v = _error_to_raw_velocity(cfg, R, T, omega, v, A0, p)

    if cfg.mode == "kinematic":
        def controls(R, T, omega, v, A):
            meas = None
            if cfg.noise_magnitude > 0:
                Rm, Tm = (R, T) if cfg.formation is None else ctl.to_tilde(R, T, cfg.formation)
                meas = _noisy_measurements(cfg.law, Rm, Tm, cfg.noise_magnitude, noise_rng)
            if cfg.formation is None:
                return ctl.kinematic_twists(cfg.law, trans_law, R, T, A, p, meas)
            return ctl.formation_kinematic_twists(cfg.law, trans_law, R, T, A, p, cfg.formation, meas)
    else:
        J, m = cfg.dynamic_params()
        Jinv = np.linalg.inv(J)

        def controls(R, T, omega, v, A):
            if cfg.formation is None:
                alpha, a = ctl.dynamic_accels(cfg.law, trans_law, R, T, omega, v, A, p, cfg.gain)
                return ctl.torques_and_forces(alpha, a, omega, v, J, m)
            return ctl.formation_dynamic_inputs(
                cfg.law, trans_law, R, T, omega, v, A, p, cfg.gain, cfg.formation, J, m
            )

    ts, Rs, Ts, Ws, Vs, C1, C2, As = [], [], [], [], [], [], [], []
    events: list[tuple[float, int, tuple[int, ...]]] = []
    reproject = Reprojector()
    prev_A = None
    diverged = stopped_early = False
    substeps = 1 if cfg.mode == "kinematic" else int(round(dt / cfg.h))
    h = dt / substeps

    for k in range(steps + 1):
        t = k * dt
        A = adjacency_at(t)
        if prev_A is None or not np.array_equal(A, prev_A):
            for i in range(cfg.n):
                if prev_A is None or not np.array_equal(A[i] > 0, prev_A[i] > 0):
                    nb = tuple(j for j in np.flatnonzero(A[i]).tolist() if j != i)
                    events.append((t, i, nb))
        prev_A = A
        if cfg.mode == "kinematic":
            w_cmd, v_cmd = controls(R, T, omega, v, A)
            omega, v = w_cmd, v_cmd
            c1, c2 = w_cmd, v_cmd
        else:
            c1, c2 = controls(R, T, omega, v, A)
        ts.append(t)
        Rs.append(R)
        Ts.append(T)
        Ws.append(omega)
        Vs.append(v)
        C1.append(c1)
        C2.append(c2)
        As.append(A)
        big = max(np.abs(T).max(), np.abs(omega).max(), np.abs(v).max())
        if not np.isfinite(big) or big > DIVERGENCE_LIMIT:
            diverged = True
            if raise_on_divergence:
                raise NumericalDivergence(f"state norm exceeded {DIVERGENCE_LIMIT:g} at t = {t:g}")
            break
        if k == steps:
            break
        if cfg.stop_tol is not None and _at_consensus(R, T, cfg, cfg.stop_tol):
            stopped_early = True
            break
        if cfg.mode == "kinematic":
            dR, dT = exp_se3(dt * omega, dt * v)
            T = T + np.einsum("nij,nj->ni", R, dT)
            R = R @ dR
        else:
            def rates(Rk, Tk, wk, vk):
                tau, f = controls(Rk, Tk, wk, vk, A)
                return _rigid_rates(wk, vk, tau, f, J, Jinv, m)

            for _ in range(substeps):
                R, T, omega, v = _rkmk4(R, T, omega, v, h, rates)
        R = reproject(R)

    names = ("omega_cmd", "v_cmd") if cfg.mode == "kinematic" else ("torque", "force")
    return Trace(
        t=np.asarray(ts),
        R=np.asarray(Rs),
        T=np.asarray(Ts),
        omega=np.asarray(Ws),
        v=np.asarray(Vs),
        controls={names[0]: np.asarray(C1), names[1]: np.asarray(C2)},
        adjacency=np.asarray(As),
        events=events,
        diverged=diverged,
        config=cfg,
        stopped_early=stopped_early,
    )


# ---------------------------------------------------------------- Monte Carlo


@dataclass
class MonteCarloSummary:
    trials: int
    successes: int
    statuses: list[str]
    seeds: list[int]
    details: list[dict] = field(default_factory=list)

    @property
    def rate(self) -> float:
        return self.successes / self.trials

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "successes": self.successes,
            "rate": self.rate,
            "statuses": self.statuses,
            "seeds": self.seeds,
            "details": self.details,
        }


def trial_seeds(master_seed: int, trials: int) -> list[int]:
    """Per-trial seeds derived from one master seed."""
    return [int(s) for s in np.random.SeedSequence(master_seed).generate_state(trials)]


def _run_one(args):
    cfg, predicate = args
    try:
        trace = run_trial(cfg)
    except OutsideInjectivityRegion as exc:
        return "error", {"seed": cfg.seed, "error": type(exc).__name__}
    if trace.diverged:
        return "diverged", {"seed": cfg.seed}
    ok, info = predicate(trace)
    return ("converged" if ok else "failed"), {"seed": cfg.seed, **info}


def monte_carlo(
    cfg: TrialConfig,
    trials: int,
    predicate: Callable[[Trace], tuple[bool, dict]],
    threads: int = 1,
) -> MonteCarloSummary:
    """Run ``trials`` copies of ``cfg`` with seeds derived from ``cfg.seed``.

    ``predicate(trace)`` returns ``(success, info)``; ``info`` is stored per trial.
    With ``threads > 1`` trials run in worker processes (the predicate must be
    picklable). Results are ordered by trial index either way.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    seeds = trial_seeds(cfg.seed, trials)
    jobs = [(cfg.with_seed(s), predicate) for s in seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    statuses = [r[0] for r in results]
    return MonteCarloSummary(
        trials=trials,
        successes=sum(s == "converged" for s in statuses),
        statuses=statuses,
        seeds=seeds,
        details=[r[1] for r in results],
    )
