"""Fully discrete time-stepping schemes for the jump-driven heat equation.

Both schemes share one one-step map: semigroup decay of the current state,
an exponential-integrator drift increment with the nonlinearity frozen at the
left node, the exact Wiener convolution increment, and a jump term multiplied
by the full-step semigroup (the jump term is frozen at the left node on
purpose; the Wiener term alone uses the in-step convolution weights).

Scheme A steps on the jump-adapted partition (uniform nodes merged with the
realized jump times).  Between jumps the jump term is the compensator alone,
and each realized jump is applied at its node to the pre-jump state.  Scheme B
steps on the plain uniform grid and aggregates the jumps of each step into the
frozen jump term.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .noise import (
    CoupledNoisePath,
    JumpSkeleton,
    MarkModel,
    StepBundle,
    compensator_coeffs,
    restrict_path,
)
from .spectral import (
    NemytskiiKernel,
    NonlinearitySpec,
    SpectralState,
    eigenvalues,
    project,
)

__all__ = [
    "SCHEME_A",
    "SCHEME_B",
    "DivergenceError",
    "TimePartition",
    "uniform_partition",
    "build_adapted_partition",
    "SchemeConfig",
    "StepNoise",
    "Trajectory",
    "one_step_phi",
    "jump_apply",
    "run_scheme_A",
    "run_scheme_B",
]

SCHEME_A = "jump_adapted_A"
SCHEME_B = "uniform_B"


class DivergenceError(RuntimeError):
    """A scheme state left the finite range; the sample must be aborted."""

    def __init__(self, step: int, time: float):
        super().__init__(f"non-finite state after step {step} at t = {time}")
        self.step = step
        self.time = time


# ---------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class TimePartition:
    """Sorted nodes 0 = t_0 < ... < t_n = T with per-node provenance flags.

    `on_grid` marks multiples of dt_nominal, `at_jump` marks realized jump
    times; a merged coincident node carries both flags.  Every step is at
    most dt_nominal long and every multiple of dt_nominal is a node.
    """

    nodes: np.ndarray
    dt_nominal: float
    on_grid: np.ndarray
    at_jump: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64).copy()
        grid = np.asarray(self.on_grid, dtype=bool).copy()
        jump = np.asarray(self.at_jump, dtype=bool).copy()
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a partition needs at least one step")
        if nodes.shape != grid.shape or nodes.shape != jump.shape:
            raise ValueError("per-node flags must match the node vector")
        if nodes[0] != 0.0 or np.any(np.diff(nodes) <= 0.0):
            raise ValueError("nodes must increase strictly from zero")
        if not np.all(grid | jump):
            raise ValueError("every node needs a provenance flag")
        if self.dt_nominal <= 0 or not np.isfinite(self.dt_nominal):
            raise ValueError("dt_nominal must be positive and finite")
        if np.max(np.diff(nodes)) > self.dt_nominal * (1.0 + 1e-12):
            raise ValueError("maximal step exceeds dt_nominal")
        n_nominal = nodes[-1] / self.dt_nominal
        if abs(n_nominal - round(n_nominal)) > 1e-9:
            raise ValueError("horizon must be an integer multiple of dt_nominal")
        base = np.arange(round(n_nominal), dtype=np.float64) * self.dt_nominal
        if not np.all(np.isin(base, nodes)):
            raise ValueError("every multiple of dt_nominal must be a node")
        nodes.setflags(write=False)
        grid.setflags(write=False)
        jump.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "on_grid", grid)
        object.__setattr__(self, "at_jump", jump)

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.nodes)


def uniform_partition(horizon: float, dt_nominal: float) -> TimePartition:
    """The plain deterministic grid with step dt_nominal."""
    n = horizon / dt_nominal
    if abs(n - round(n)) > 1e-9 or round(n) < 1:
        raise ValueError("horizon must be an integer multiple of dt_nominal")
    n = int(round(n))
    nodes = np.arange(n + 1, dtype=np.float64) * dt_nominal
    nodes[-1] = horizon
    flags = np.ones(n + 1, dtype=bool)
    return TimePartition(nodes, dt_nominal, flags, np.zeros(n + 1, dtype=bool))


def build_adapted_partition(horizon: float, dt_nominal: float,
                            skeleton: JumpSkeleton) -> TimePartition:
    """Merge the uniform grid with the jump times of a skeleton.

    A jump time coinciding with a grid node collapses to a single node
    flagged as both; the continuous step is applied first and the jump
    second, so the order of updates at such a node is unambiguous.
    """
    times = skeleton.times
    if times.size and times[-1] > horizon:
        raise ValueError("skeleton extends beyond the partition horizon")
    base = uniform_partition(horizon, dt_nominal).nodes
    nodes = np.union1d(base, times)
    return TimePartition(
        nodes, dt_nominal, np.isin(nodes, base), np.isin(nodes, times)
    )


# ---------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class SchemeConfig:
    """Everything that defines a scheme run except the noise realization."""

    scheme: str
    n_modes: int
    dt_nominal: float
    horizon: float
    nonlinearity: NonlinearitySpec
    model: MarkModel
    x0: SpectralState

    def __post_init__(self):
        if self.scheme not in (SCHEME_A, SCHEME_B):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.n_modes < 1:
            raise ValueError("mode count must be positive")
        if not isinstance(self.nonlinearity, NonlinearitySpec):
            raise TypeError("nonlinearity must be a NonlinearitySpec")
        if not isinstance(self.model, MarkModel):
            raise TypeError("model must be a MarkModel")
        if not isinstance(self.x0, SpectralState):
            raise TypeError("x0 must be a SpectralState")
        if self.horizon <= 0 or self.dt_nominal <= 0:
            raise ValueError("horizon and dt_nominal must be positive")
        n = self.horizon / self.dt_nominal
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError("horizon must be an integer multiple of dt_nominal")
        if self.scheme == SCHEME_B and self.model.g1.bound > 0:
            warnings.warn(
                "uniform-grid scheme with a multiplicative jump coefficient: "
                "the strong-order guarantee covers additive jumps only",
                UserWarning,
                stacklevel=2,
            )


@dataclass(frozen=True)
class StepNoise:
    """Noise consumed by a single step: the exact Wiener convolution
    increment and, for the uniform scheme, the magnitudes of the jumps
    landing inside the step (empty between jumps on the adapted grid)."""

    wiener: np.ndarray
    xis: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Per-node states of one scheme run.

    `states[i]` is the value at node i after any jump applied there;
    `pre_jump[j]` keeps the pre-jump value at node `jump_nodes[j]` for the
    adapted scheme.  All states are finite by construction.
    """

    partition: TimePartition
    states: np.ndarray
    jump_nodes: np.ndarray
    pre_jump: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] != self.partition.nodes.size:
            raise ValueError("one state per partition node required")
        if not np.all(np.isfinite(states)):
            raise ValueError("trajectory contains non-finite states")
        jn = np.asarray(self.jump_nodes, dtype=np.int64)
        pre = np.asarray(self.pre_jump, dtype=np.float64)
        if pre.shape != (jn.size, states.shape[1]):
            raise ValueError("pre-jump rows must match the jump nodes")
        states.setflags(write=False)
        jn.setflags(write=False)
        pre.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "jump_nodes", jn)
        object.__setattr__(self, "pre_jump", pre)

    @property
    def n_modes(self) -> int:
        return self.states.shape[1]

    @property
    def final(self) -> SpectralState:
        return SpectralState(self.states[-1])

    def state(self, i: int) -> SpectralState:
        return SpectralState(self.states[i])

    def state_before(self, i: int) -> SpectralState:
        """The pre-jump value at node i (equals the node value off jumps)."""
        hits = np.nonzero(self.jump_nodes == i)[0]
        if hits.size:
            return SpectralState(self.pre_jump[hits[0]])
        return SpectralState(self.states[i])


# ---------------------------------------------------------------------------
# the one-step map


def _apply_step(x, fv, wiener, e_vec, p_vec, jump_coeff, jump_shift):
    # y = E(dt) x + phi1(dt) F_N(x) + WienerConvIncrement + E(dt) JumpTerm
    # with JumpTerm = jump_coeff * x + jump_shift; the runners and the public
    # one_step_phi share this kernel so they agree bit for bit
    y = e_vec * x
    if fv is not None:
        y += p_vec * fv
    y += wiener
    if jump_shift is not None:
        jv = jump_coeff * x
        jv += jump_shift
        jv *= e_vec
        y += jv
    return y


def one_step_phi(x: SpectralState, step_noise: StepNoise, dt_step: float,
                 cfg: SchemeConfig) -> SpectralState:
    """One application of the one-step map on a coefficient state.

    For the adapted scheme the jump term is the compensator alone (realized
    jumps are applied separately at nodes via `jump_apply`); for the uniform
    scheme the jumps supplied in `step_noise.xis` are aggregated into it.
    """
    n = cfg.n_modes
    if x.dim != n:
        raise ValueError("state dimension does not match the configuration")
    wiener = np.asarray(step_noise.wiener, dtype=np.float64)
    xis = np.asarray(step_noise.xis, dtype=np.float64)
    if wiener.shape != (n,):
        raise ValueError("step noise does not match the mode count")
    if dt_step <= 0:
        raise ValueError("step size must be positive")
    if cfg.scheme == SCHEME_A and xis.size:
        raise ValueError("adapted-scheme steps carry no aggregated jumps")
    lam = eigenvalues(n)
    e_vec = np.exp(-lam * dt_step)
    p_vec = -np.expm1(-lam * dt_step) / lam
    fv = None
    if cfg.nonlinearity.kind != "zero":
        fv = NemytskiiKernel(cfg.nonlinearity, n, n)(x.coeffs)
    coeff, shift = None, None
    if cfg.model.intensity > 0 or xis.size:
        mean_g1, mean_g = compensator_coeffs(cfg.model, n)
        shift = -dt_step * mean_g.coeffs
        coeff = -dt_step * mean_g1
        if cfg.scheme == SCHEME_B:
            sum_g1 = 0.0
            sum_xi = 0.0
            for g1 in cfg.model.g1_values(xis):
                sum_g1 += g1
            for xi in xis:
                sum_xi += xi
            coeff += sum_g1
            if sum_xi != 0.0:
                shift = sum_xi * project(cfg.model.profile, n).coeffs + shift
    return SpectralState(_apply_step(x.coeffs, fv, wiener, e_vec, p_vec,
                                     coeff, shift))


def jump_apply(x_minus: SpectralState, mark: SpectralState, xi: float,
               model: MarkModel) -> SpectralState:
    """Apply one realized jump to the pre-jump state:
    (1 + g1(z)) X_minus + P_N(mark)."""
    if xi == 0.0:
        raise ValueError("zero mark: the jump indicator vanishes, skip the node")
    y = (1.0 + model.g1_value(xi)) * x_minus.coeffs
    y += project(mark, x_minus.dim).coeffs
    return SpectralState(y)


# ---------------------------------------------------------------------------
# scheme drivers


def _check_coupling(cfg: SchemeConfig, path: CoupledNoisePath) -> None:
    if path.grid.horizon != cfg.horizon:
        raise ValueError("path horizon does not match the configuration")
    ratio = cfg.dt_nominal / path.grid.dt_ref
    r = int(round(ratio))
    if r < 1 or abs(ratio - r) > 1e-9 * ratio or (r & (r - 1)):
        raise ValueError(
            "dt_nominal must be the reference step times a power of two"
        )


def _run(cfg: SchemeConfig, part: TimePartition,
         bundle: StepBundle) -> Trajectory:
    n = cfg.n_modes
    lam = eigenvalues(n)
    model = cfg.model
    adapted = cfg.scheme == SCHEME_A
    kernel = None
    if cfg.nonlinearity.kind != "zero":
        kernel = NemytskiiKernel(cfg.nonlinearity, n, n)
    sk = bundle.skeleton
    g1s = model.g1_values(sk.xis)
    phi_vec = project(model.profile, n).coeffs
    # the frozen jump term runs whenever the compensator is non-trivial or
    # (uniform scheme) realized jumps need aggregating
    live = model.intensity > 0 or (not adapted and sk.count > 0)
    mean_g1, mean_g_vec = 0.0, None
    if live:
        if model.intensity > 0:
            mean_g1, mg = compensator_coeffs(model, n)
            mean_g_vec = mg.coeffs
        else:
            mean_g_vec = np.zeros(n)
    deltas = part.deltas
    n_steps = deltas.size
    if not adapted and sk.count:
        sum_g1 = np.bincount(bundle.event_step, weights=g1s, minlength=n_steps)
        sum_xi = np.bincount(bundle.event_step, weights=sk.xis,
                             minlength=n_steps)
    else:
        sum_g1 = sum_xi = np.zeros(n_steps)

    tables = {}  # per distinct step size: (E(dt), phi1(dt), -dt*mean_g)
    states = np.empty((part.nodes.size, n))
    x = project(cfg.x0, n).coeffs.copy()
    states[0] = x
    node_event = bundle.node_event
    wiener = bundle.wiener
    jump_nodes, pre_rows = [], []
    for i in range(n_steps):
        dt = deltas[i]
        tab = tables.get(dt)
        if tab is None:
            e_vec = np.exp(-lam * dt)
            p_vec = -np.expm1(-lam * dt) / lam
            base_shift = -dt * mean_g_vec if live else None
            tab = (e_vec, p_vec, base_shift)
            tables[dt] = tab
        e_vec, p_vec, base_shift = tab
        fv = kernel(x) if kernel is not None else None
        coeff, shift = None, base_shift
        if live:
            coeff = -dt * mean_g1
            if not adapted:
                coeff += sum_g1[i]
                if sum_xi[i] != 0.0:
                    shift = sum_xi[i] * phi_vec + base_shift
        y = _apply_step(x, fv, wiener[i], e_vec, p_vec, coeff, shift)
        if adapted:
            ev = node_event[i + 1]
            if ev >= 0:
                jump_nodes.append(i + 1)
                pre_rows.append(y.copy())
                y *= 1.0 + g1s[ev]
                y += sk.xis[ev] * phi_vec
        if not np.isfinite(y).all():
            raise DivergenceError(i, float(part.nodes[i + 1]))
        states[i + 1] = y
        x = y
    pre = (np.array(pre_rows) if pre_rows
           else np.empty((0, n)))
    return Trajectory(part, states, np.array(jump_nodes, dtype=np.int64), pre)


def run_scheme_A(cfg: SchemeConfig, path: CoupledNoisePath) -> Trajectory:
    """Run the jump-adapted scheme on one noise path."""
    if cfg.scheme != SCHEME_A:
        raise ValueError("configuration does not select the adapted scheme")
    _check_coupling(cfg, path)
    part = build_adapted_partition(cfg.horizon, cfg.dt_nominal, path.skeleton)
    bundle = restrict_path(path, part, cfg.n_modes)
    return _run(cfg, part, bundle)


def run_scheme_B(cfg: SchemeConfig, path: CoupledNoisePath) -> Trajectory:
    """Run the uniform-grid scheme on one noise path."""
    if cfg.scheme != SCHEME_B:
        raise ValueError("configuration does not select the uniform scheme")
    _check_coupling(cfg, path)
    part = uniform_partition(cfg.horizon, cfg.dt_nominal)
    bundle = restrict_path(path, part, cfg.n_modes)
    return _run(cfg, part, bundle)
