"""Convergence-order studies on exactly coupled noise paths.

A study draws M independent reference-resolution noise paths, runs the scheme
at the reference resolution and at every coarse level on restrictions of the
same path, and turns the per-sample coupled errors into L^p error estimates
with bootstrap intervals and a fitted order (log-log least squares).  The
Hölder study skips the schemes entirely and evaluates the compensated jump
convolution straight from the skeletons.

Samples are keyed by (seed, sample index) counter streams, so the same plan
always produces the same report no matter how samples are scheduled across
workers; the reduction runs in fixed sample order.
"""

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .noise import (
    PURPOSE_BOOTSTRAP,
    PURPOSE_JUMPS,
    MarkModel,
    compensator_coeffs,
    sample_jump_skeleton,
    sample_path,
    stream,
)
from .schemes import (
    SCHEME_A,
    SCHEME_B,
    DivergenceError,
    SchemeConfig,
    run_scheme_A,
    run_scheme_B,
)
from .spectral import NonlinearitySpec, SpectralState, eigenvalues, hnorm, project

__all__ = [
    "AXES",
    "StudyPlan",
    "OrderReport",
    "StudyResult",
    "estimate_lp_error",
    "fit_order",
    "run_temporal_study",
    "run_spatial_study",
    "run_holder_study",
    "run_study",
]

AXES = ("temporal", "spatial", "holder")
N_BOOTSTRAP = 1000


# ---------------------------------------------------------------------------
# plans and reports


@dataclass(frozen=True)
class StudyPlan:
    """A complete, self-contained description of one convergence study."""

    name: str
    axis: str
    levels: tuple
    n_ref: int
    dt_ref: float
    p_list: tuple
    samples: int
    scheme: str
    horizon: float
    nonlinearity: NonlinearitySpec
    model: MarkModel
    x0: SpectralState
    seed: int
    model_info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown study axis {self.axis!r}")
        if self.scheme not in (SCHEME_A, SCHEME_B):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.name or "/" in self.name:
            raise ValueError("study name must be a non-empty file stem")
        if self.n_ref < 1:
            raise ValueError("reference mode count must be positive")
        if self.dt_ref <= 0 or self.horizon <= 0:
            raise ValueError("dt_ref and horizon must be positive")
        n = self.horizon / self.dt_ref
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError("horizon must be an integer multiple of dt_ref")
        levels = tuple(self.levels)
        if not levels:
            raise ValueError("a study needs at least one level")
        if self.axis == "temporal":
            levels = tuple(float(v) for v in levels)
            for dt in levels:
                ratio = dt / self.dt_ref
                r = round(ratio)
                if r < 1 or abs(ratio - r) > 1e-9 * ratio or (r & (r - 1)):
                    raise ValueError(
                        f"temporal level {dt} is not dt_ref times a power of two"
                    )
        elif self.axis == "spatial":
            coerced = []
            for v in levels:
                if float(v) != int(v):
                    raise ValueError(f"spatial level {v} is not an integer")
                coerced.append(int(v))
                if not 1 <= int(v) <= self.n_ref:
                    raise ValueError(f"spatial level {v} outside [1, n_ref]")
            levels = tuple(coerced)
        else:
            levels = tuple(float(v) for v in levels)
            for h in levels:
                if not 0.0 < h <= self.horizon / 2.0:
                    raise ValueError(
                        f"increment {h} must lie in (0, horizon/2]"
                    )
            if self.model.g1.bound > 0:
                raise ValueError("the regularity study needs additive jumps")
        object.__setattr__(self, "levels", levels)
        p_list = tuple(float(p) for p in self.p_list)
        if not p_list or any(p < 2 for p in p_list):
            raise ValueError("p values must be reals >= 2")
        object.__setattr__(self, "p_list", p_list)
        if self.samples < 1:
            raise ValueError("sample count must be positive")
        if self.samples < 100:
            warnings.warn(
                "fewer than 100 samples: bootstrap uncertainty will dominate",
                UserWarning,
                stacklevel=2,
            )
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if not isinstance(self.model_info, dict):
            raise TypeError("model_info must be a dict")


@dataclass(frozen=True)
class OrderReport:
    """Per-level L^p errors with bootstrap intervals and the fitted order.

    `order` is the log-log slope against the level values, except for the
    spatial axis where the sign is flipped so that positive orders mean
    decay in N.  `order`, `stderr` and `intercept` are None when the plan
    has fewer than three levels (no fit).
    """

    p: float
    levels: np.ndarray
    errors: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    order: float = None
    stderr: float = None
    intercept: float = None

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64)
        errors = np.asarray(self.errors, dtype=np.float64)
        lo = np.asarray(self.ci_lo, dtype=np.float64)
        hi = np.asarray(self.ci_hi, dtype=np.float64)
        if not (levels.shape == errors.shape == lo.shape == hi.shape):
            raise ValueError("per-level columns must align")
        if np.any(errors <= 0):
            raise ValueError("errors must be strictly positive")
        if np.any(hi < lo):
            raise ValueError("interval bounds are reversed")
        for arr in (levels, errors, lo, hi):
            arr.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "errors", errors)
        object.__setattr__(self, "ci_lo", lo)
        object.__setattr__(self, "ci_hi", hi)

    @property
    def half_widths(self) -> np.ndarray:
        return (self.ci_hi - self.ci_lo) / 2.0


@dataclass(frozen=True)
class StudyResult:
    """One executed plan: a report per p plus sample accounting."""

    plan: StudyPlan
    reports: tuple
    aborts: int
    extras: dict = field(default_factory=dict)

    @property
    def effective_samples(self) -> int:
        return self.plan.samples - self.aborts

    def report_for(self, p: float) -> OrderReport:
        for rep in self.reports:
            if rep.p == p:
                return rep
        raise KeyError(f"no report for p = {p}")


# ---------------------------------------------------------------------------
# error estimation and order fitting


def _lp_point(norms: np.ndarray, p: float) -> float:
    return float(np.mean(norms**p) ** (1.0 / p))


def _bootstrap_interval(norms: np.ndarray, p: float, rng) -> tuple:
    m = norms.size
    powers = norms**p
    stats = np.empty(N_BOOTSTRAP)
    for b in range(N_BOOTSTRAP):
        idx = rng.integers(0, m, m)
        stats[b] = np.mean(powers[idx]) ** (1.0 / p)
    return float(np.percentile(stats, 2.5)), float(np.percentile(stats, 97.5))


def estimate_lp_error(ref_terminals, coarse_terminals, p: float,
                      seed: int = 0) -> tuple:
    """L^p(Omega, H) distance of two coupled terminal-value samples.

    Returns (error, half_width): the p-power mean of the per-sample H-norm
    differences and half the spread of its 95% bootstrap interval
    (1000 resamples, 2.5/97.5 percentiles, deterministic for a given seed).
    """
    if len(ref_terminals) != len(coarse_terminals):
        raise ValueError("coupled samples must have equal length")
    if len(ref_terminals) == 0:
        raise ValueError("empty sample")
    if p < 2:
        raise ValueError("p must be >= 2")
    norms = np.array(
        [hnorm(r - c) for r, c in zip(ref_terminals, coarse_terminals)]
    )
    lo, hi = _bootstrap_interval(norms, p, stream(seed, 0, PURPOSE_BOOTSTRAP))
    return _lp_point(norms, p), (hi - lo) / 2.0


def _ols(x: np.ndarray, y: np.ndarray) -> tuple:
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise ValueError("levels are all identical; no order to fit")
    slope = float(dx @ (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    dof = x.size - 2
    stderr = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else 0.0
    return slope, intercept, stderr


def fit_order(levels, errors) -> tuple:
    """Least-squares slope of log(error) against log(level).

    Returns (order, stderr).  Spatial studies pass N values and negate the
    slope afterwards so that positive orders mean decay in N.
    """
    levels = np.asarray(levels, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if levels.size < 3:
        raise ValueError("order fitting needs at least three levels")
    if np.any(errors <= 0) or np.any(levels <= 0):
        raise ValueError("levels and errors must be strictly positive")
    slope, _, stderr = _ols(np.log(levels), np.log(errors))
    return slope, stderr


def _build_reports(plan: StudyPlan, norms: np.ndarray,
                   negate_order: bool) -> tuple:
    """Reports per p from the (samples, levels) matrix of coupled norms."""
    rng = stream(plan.seed, 0, PURPOSE_BOOTSTRAP)
    levels = np.asarray(plan.levels, dtype=np.float64)
    reports = []
    for p in plan.p_list:
        errors = np.empty(levels.size)
        lo = np.empty(levels.size)
        hi = np.empty(levels.size)
        for j in range(levels.size):
            errors[j] = _lp_point(norms[:, j], p)
            lo[j], hi[j] = _bootstrap_interval(norms[:, j], p, rng)
        order = stderr = intercept = None
        if levels.size >= 3:
            slope, intercept, stderr = _ols(np.log(levels), np.log(errors))
            order = -slope if negate_order else slope
            intercept = float(intercept)
            stderr = float(stderr)
        reports.append(OrderReport(p, levels, errors, lo, hi,
                                   order, stderr, intercept))
    return tuple(reports)


# ---------------------------------------------------------------------------
# per-sample workers


def _scheme_runner(scheme: str):
    return run_scheme_A if scheme == SCHEME_A else run_scheme_B


def _temporal_norms(plan: StudyPlan, index: int):
    """Coupled error norms of one sample at every temporal level, or None
    if the sample aborted on a non-finite state."""
    run = _scheme_runner(plan.scheme)
    path = sample_path(plan.horizon, plan.dt_ref, plan.n_ref, plan.model,
                       plan.seed, index)
    try:
        ref_cfg = SchemeConfig(plan.scheme, plan.n_ref, plan.dt_ref,
                               plan.horizon, plan.nonlinearity, plan.model,
                               plan.x0)
        ref = run(ref_cfg, path).final
        out = np.empty(len(plan.levels))
        for j, dt in enumerate(plan.levels):
            cfg = SchemeConfig(plan.scheme, plan.n_ref, dt, plan.horizon,
                               plan.nonlinearity, plan.model, plan.x0)
            out[j] = hnorm(ref - run(cfg, path).final)
        return out
    except DivergenceError:
        return None


def _spatial_norms(plan: StudyPlan, index: int):
    run = _scheme_runner(plan.scheme)
    path = sample_path(plan.horizon, plan.dt_ref, plan.n_ref, plan.model,
                       plan.seed, index)
    try:
        ref_cfg = SchemeConfig(plan.scheme, plan.n_ref, plan.dt_ref,
                               plan.horizon, plan.nonlinearity, plan.model,
                               plan.x0)
        ref = run(ref_cfg, path).final
        out = np.empty(len(plan.levels))
        for j, n in enumerate(plan.levels):
            cfg = SchemeConfig(plan.scheme, n, plan.dt_ref, plan.horizon,
                               plan.nonlinearity, plan.model, plan.x0)
            out[j] = hnorm(ref - run(cfg, path).final)
        return out
    except DivergenceError:
        return None


def _collect_norms(plan: StudyPlan, worker, workers: int) -> tuple:
    rows = []
    if workers <= 1:
        for i in range(plan.samples):
            rows.append(worker(plan, i))
    else:
        chunk = max(1, plan.samples // (workers * 8))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(partial(worker, plan), range(plan.samples),
                                 chunksize=chunk))
    kept = [r for r in rows if r is not None]
    aborts = plan.samples - len(kept)
    if not kept:
        raise RuntimeError("every sample aborted; nothing to estimate")
    return np.vstack(kept), aborts


# ---------------------------------------------------------------------------
# studies


def run_temporal_study(plan: StudyPlan, workers: int = 1) -> StudyResult:
    """Coupled temporal-refinement study at fixed N = n_ref.

    The reference is the same scheme on the same path at dt_ref; each level
    reruns the scheme on the exact restriction of that path.
    """
    if plan.axis != "temporal":
        raise ValueError("plan axis must be temporal")
    norms, aborts = _collect_norms(plan, _temporal_norms, workers)
    return StudyResult(plan, _build_reports(plan, norms, False), aborts,
                       dict(plan.model_info))


def run_spatial_study(plan: StudyPlan, workers: int = 1) -> StudyResult:
    """Coupled mode-truncation study at fixed dt = dt_ref.

    The reported order is the decay exponent in N (negated log-log slope).
    """
    if plan.axis != "spatial":
        raise ValueError("plan axis must be spatial")
    norms, aborts = _collect_norms(plan, _spatial_norms, workers)
    return StudyResult(plan, _build_reports(plan, norms, True), aborts,
                       dict(plan.model_info))


def _holder_norms(plan: StudyPlan) -> np.ndarray:
    """Norms of jump-convolution increments N(t+h) - N(t) at t = T/2.

    Evaluated in closed form from the skeletons: jumps before t contribute
    through a per-sample mode profile scaled by (e^{-lam h} - 1), jumps
    inside (t, t+h] enter with their own decay, and the compensator adds a
    deterministic phi1 difference.
    """
    t = plan.horizon / 2.0
    n = plan.n_ref
    lam = eigenvalues(n)
    phi = project(plan.model.profile, n).coeffs
    _, mean_g = compensator_coeffs(plan.model, n)
    mg = mean_g.coeffs

    m_samples = plan.samples
    times_parts, xis_parts, counts = [], [], np.empty(m_samples, dtype=np.int64)
    for i in range(m_samples):
        sk = sample_jump_skeleton(plan.horizon, plan.model,
                                  stream(plan.seed, i, PURPOSE_JUMPS))
        counts[i] = sk.count
        if sk.count:
            times_parts.append(sk.times)
            xis_parts.append(sk.xis)
    times = np.concatenate(times_parts) if times_parts else np.empty(0)
    xis = np.concatenate(xis_parts) if xis_parts else np.empty(0)
    owner = np.repeat(np.arange(m_samples), counts)

    # per-sample profile of the pre-t jumps: S[i, k] = sum_j xi_j e^{-lam_k (t - sigma_j)}
    old = times <= t
    s_old = np.zeros((m_samples, n))
    if np.any(old):
        decay = xis[old, None] * np.exp(-lam[None, :] * (t - times[old, None]))
        for k in range(n):
            s_old[:, k] = np.bincount(owner[old], weights=decay[:, k],
                                      minlength=m_samples)
    s_old *= phi

    norms = np.empty((m_samples, len(plan.levels)))
    for j, h in enumerate(plan.levels):
        delta = s_old * np.expm1(-lam * h)
        fresh = (t < times) & (times <= t + h)
        if np.any(fresh):
            rows = xis[fresh, None] * np.exp(
                -lam[None, :] * (t + h - times[fresh, None])
            ) * phi
            np.add.at(delta, owner[fresh], rows)
        # compensator part of the increment: -(phi1(t+h) - phi1(t)) mean_g
        comp = (np.expm1(-lam * (t + h)) - np.expm1(-lam * t)) / lam * mg
        delta += comp
        norms[:, j] = np.sqrt(np.einsum("ij,ij->i", delta, delta))
    return norms


def run_holder_study(plan: StudyPlan, workers: int = 1) -> StudyResult:
    """Temporal-regularity exponents of the compensated jump convolution.

    Fits, per p, the growth exponent of the L^p norm of increments over
    h; p = 2 sits near 1/2 while large p is capped near 1/p by single-jump
    dominance.  No scheme runs are involved.
    """
    if plan.axis != "holder":
        raise ValueError("plan axis must be holder")
    del workers  # the evaluation is vectorized across samples already
    norms = _holder_norms(plan)
    if not norms.any():
        raise ValueError(
            "all increments vanish (zero jump model?); exponents undefined"
        )
    return StudyResult(plan, _build_reports(plan, norms, False), 0,
                       dict(plan.model_info))


def run_study(plan: StudyPlan, workers: int = 1) -> StudyResult:
    """Dispatch a plan to the runner for its axis."""
    runner = {
        "temporal": run_temporal_study,
        "spatial": run_spatial_study,
        "holder": run_holder_study,
    }[plan.axis]
    return runner(plan, workers=workers)
