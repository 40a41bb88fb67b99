"""Acceptance gate: every criterion runs at its stated configuration and
tolerance and emits one PASS/FAIL line into acceptance_report.txt (echoed
in the terminal summary).

The convergence-order criteria are expensive (about five minutes total on
one core); they share module-scoped study results.  Interval bounds are
asserted exactly as stated — a measured order outside its band fails here
even when the run itself is sound.
"""

import math
import os

import numpy as np
import pytest

import test_schemes as schemes_suite
from levyheat.cli import config_digest, execute
from levyheat.experiments import (
    StudyPlan,
    run_holder_study,
    run_spatial_study,
    run_temporal_study,
)
from levyheat.noise import (
    PURPOSE_JUMPS,
    G1Spec,
    MarkModel,
    TwoPointLaw,
    compensated_jump_convolution,
    compose_convolution,
    conv_variance,
    power_profile,
    restrict_path,
    sample_jump_skeleton,
    sample_path,
    stream,
    truncate_levy,
)
from levyheat.schemes import SCHEME_A, SCHEME_B, uniform_partition
from levyheat.spectral import (
    NonlinearitySpec,
    SpectralState,
    eigenvalues,
    from_physical,
    hnorm,
    semigroup_apply,
    to_physical,
)

REPORT = os.path.abspath(
    os.path.join(os.path.dirname(__file__), os.pardir,
                 "acceptance_report.txt")
)
if os.path.exists(REPORT):
    os.unlink(REPORT)

STUDY_SEED = 20260815


def record(name: str, passed: bool, detail: str) -> bool:
    line = f"{name}: {'PASS' if passed else 'FAIL'} ({detail})"
    with open(REPORT, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
    print(line)
    return passed


# ---------------------------------------------------------------------------
# shared study results (module scope: each heavy study runs once)


def _temporal_model(g1: G1Spec, n: int = 64) -> MarkModel:
    return MarkModel(2.0, TwoPointLaw(0.5, 2.0, -1.0),
                     power_profile(1.0, 2.0, n), g1)


def _temporal_plan(name, scheme, g1) -> StudyPlan:
    return StudyPlan(
        name=name,
        axis="temporal",
        levels=tuple(2.0**-k for k in range(4, 9)),
        n_ref=64,
        dt_ref=2.0**-12,
        p_list=(2.0, 4.0, 8.0),
        samples=1000,
        scheme=scheme,
        horizon=1.0,
        nonlinearity=NonlinearitySpec.sine(1.0),
        model=_temporal_model(g1),
        x0=SpectralState([1.0]),
        seed=STUDY_SEED,
    )


@pytest.fixture(scope="module")
def temporal_a():
    return run_temporal_study(
        _temporal_plan("acceptance_temporal_a", SCHEME_A,
                       G1Spec.constant(0.3))
    )


@pytest.fixture(scope="module")
def temporal_b():
    return run_temporal_study(
        _temporal_plan("acceptance_temporal_b", SCHEME_B, G1Spec.zero())
    )


@pytest.fixture(scope="module")
def spatial_result():
    plan = StudyPlan(
        name="acceptance_spatial",
        axis="spatial",
        levels=(4, 8, 16, 32),
        n_ref=256,
        dt_ref=2.0**-10,
        p_list=(2.0, 4.0, 8.0),
        samples=1000,
        scheme=SCHEME_A,
        horizon=1.0,
        nonlinearity=NonlinearitySpec.sine(1.0),
        model=_temporal_model(G1Spec.constant(0.3), n=256),
        x0=SpectralState([1.0]),
        seed=STUDY_SEED,
    )
    return run_spatial_study(plan)


@pytest.fixture(scope="module")
def holder_result():
    plan = StudyPlan(
        name="acceptance_holder",
        axis="holder",
        levels=tuple(2.0**-j for j in range(12, 6, -1)),
        n_ref=64,
        dt_ref=2.0**-12,
        p_list=(2.0, 8.0),
        samples=100000,
        scheme=SCHEME_A,
        horizon=1.0,
        nonlinearity=NonlinearitySpec.zero(),
        model=_temporal_model(G1Spec.zero()),
        x0=SpectralState([1.0]),
        seed=STUDY_SEED,
    )
    return run_holder_study(plan)


@pytest.fixture(scope="module")
def stable_manifest(tmp_path_factory):
    """Criterion 8 runs through the CLI batch path so the truncation
    residual lands in a real manifest."""
    plans = []
    for eps in (0.1, 0.05):
        profile = power_profile(1.0, 2.0, 64)
        model, residual = truncate_levy(0.5, eps, profile)
        plans.append(StudyPlan(
            name=f"acceptance_stable_eps{eps}",
            axis="temporal",
            levels=tuple(2.0**-k for k in range(4, 9)),
            n_ref=64,
            dt_ref=2.0**-12,
            p_list=(2.0,),
            samples=400,
            scheme=SCHEME_B,
            horizon=1.0,
            nonlinearity=NonlinearitySpec.sine(1.0),
            model=model,
            x0=SpectralState([1.0]),
            seed=STUDY_SEED,
            model_info={"alpha": 0.5, "eps": eps,
                        "intensity": model.intensity, "residual": residual},
        ))
    out = tmp_path_factory.mktemp("stable_run")
    manifest = execute(plans, out)
    assert manifest.digest == config_digest(plans)
    return manifest


# ---------------------------------------------------------------------------
# criterion 1: unit and property invariants, compact re-assertion


def test_criterion_01_unit_property_invariants():
    rng = np.random.default_rng(12)
    u = SpectralState(rng.standard_normal(33))

    # Parseval: interior-grid quadrature norm equals the coefficient norm
    m = 2 * u.dim + 1
    vals = to_physical(u, m)
    parseval_gap = abs(math.sqrt(float(np.sum(vals**2)) / (m + 1)) - hnorm(u))
    ok = parseval_gap <= 1e-10

    # transform round trip at 1e-12
    v = from_physical(to_physical(u, m), u.dim)
    ok &= float(np.max(np.abs(v.coeffs - u.coeffs))) <= 1e-12

    # semigroup composition law at 1e-13
    w1 = semigroup_apply(semigroup_apply(u, 0.3), 0.45)
    w2 = semigroup_apply(u, 0.75)
    ok &= float(np.max(np.abs(w1.coeffs - w2.coeffs))) <= 1e-13

    # per-mode smoothing and increment-Hoelder bounds
    lam = eigenvalues(64)
    for gamma in (0.25, 0.5, 1.0):
        const = gamma**gamma * math.exp(-gamma)
        for t in (1e-5, 0.01, 1.0):
            ok &= bool(np.all(lam**gamma * np.exp(-lam * t)
                              <= const * t**-gamma * (1.0 + 1e-12)))
    for rho in (0.25, 0.5, 1.0):
        for s, t in ((0.1, 0.3), (0.5, 0.52), (1.0, 2.5)):
            lhs = lam**-rho * (np.exp(-lam * s) - np.exp(-lam * t))
            ok &= bool(np.all(lhs <= (t - s) ** rho * (1.0 + 1e-12)))

    # convolution composition variance identity at 1e-14
    a, b = 0.375, 0.1875
    lhs = np.exp(-2.0 * lam * b) * conv_variance(lam, a) + conv_variance(lam, b)
    ok &= float(np.max(np.abs(lhs - conv_variance(lam, a + b)))) <= 1e-14

    # compensated-jump martingale mean within 3 SE over 1e5 samples
    model = _temporal_model(G1Spec.zero(), n=8)
    dt = 0.25
    mrng = np.random.default_rng(505)
    m_samples = 100000
    counts = mrng.poisson(model.intensity * dt, m_samples)
    xis = model.law.sample(mrng, int(counts.sum()))
    sums = np.bincount(np.repeat(np.arange(m_samples), counts), weights=xis,
                       minlength=m_samples)
    centred = sums - dt * model.intensity * model.law.mean()
    ok &= abs(float(centred.mean())) < 3.0 * float(centred.std()) / math.sqrt(m_samples)

    # coupling bit-exactness: coarse Wiener increments are exactly the
    # left-to-right composition fold of the micro increments (jump-free
    # path so micro rows pair up; the jump-interleaved fold is covered by
    # the noise suite)
    quiet = MarkModel(0.0, model.law, model.profile, model.g1)
    path = sample_path(1.0, 2.0**-6, 8, quiet, 7, 3)
    bundle = restrict_path(path, uniform_partition(1.0, 2.0**-5), 8)
    lam8 = eigenvalues(8)
    for j in range(bundle.wiener.shape[0]):
        manual = compose_convolution(path.wiener[2 * j], path.wiener[2 * j + 1],
                                     lam8, 2.0**-6)
        ok &= bundle.wiener[j].tobytes() == manual.tobytes()

    # determinism byte-identity of resampled paths
    again = sample_path(1.0, 2.0**-6, 8, quiet, 7, 3)
    ok &= path.wiener.tobytes() == again.wiener.tobytes()
    jumpy = sample_path(1.0, 2.0**-6, 8, model, 7, 3)
    jumpy2 = sample_path(1.0, 2.0**-6, 8, model, 7, 3)
    ok &= jumpy.skeleton.times.tobytes() == jumpy2.skeleton.times.tobytes()
    ok &= jumpy.wiener.tobytes() == jumpy2.wiener.tobytes()

    assert record("criterion 1 unit/property invariants", bool(ok),
                  "Parseval, transforms, semigroup bounds, convolution "
                  "identities, martingale mean, coupling and determinism")


def test_criterion_02_scalar_oracle_equivalence():
    # the full 100-configuration brute-force comparison from the scheme suite
    schemes_suite.test_single_mode_runs_match_scalar_oracle()
    assert record("criterion 2 scalar-oracle equivalence", True,
                  "both schemes match the independent scalar recursion to "
                  "1e-12 over 100 random configurations")


# ---------------------------------------------------------------------------
# criteria 3-5: temporal orders and p-independence


def _order_detail(result, ps):
    return ", ".join(
        f"p={p:g}: {result.report_for(p).order:.4f}" for p in ps
    )


def test_criterion_03_temporal_order_scheme_a(temporal_a):
    assert temporal_a.aborts == 0
    orders = [temporal_a.report_for(p).order for p in (2.0, 4.0, 8.0)]
    ok = all(0.4 <= o <= 0.65 for o in orders)
    detail = (_order_detail(temporal_a, (2.0, 4.0, 8.0))
              + "; required [0.40, 0.65]")
    assert record("criterion 3 temporal order, scheme A", ok, detail), detail


def test_criterion_04_temporal_order_scheme_b(temporal_b):
    assert temporal_b.aborts == 0
    orders = [temporal_b.report_for(p).order for p in (2.0, 4.0, 8.0)]
    ok = all(0.4 <= o <= 0.65 for o in orders)
    detail = (_order_detail(temporal_b, (2.0, 4.0, 8.0))
              + "; required [0.40, 0.65]")
    assert record("criterion 4 temporal order, scheme B", ok, detail), detail


def test_criterion_05_p_independence(temporal_a, temporal_b):
    gap_a = abs(temporal_a.report_for(8.0).order
                - temporal_a.report_for(2.0).order)
    gap_b = abs(temporal_b.report_for(8.0).order
                - temporal_b.report_for(2.0).order)
    ok = gap_a <= 0.15 and gap_b <= 0.15
    detail = (f"|order(8)-order(2)| = {gap_a:.4f} (A), {gap_b:.4f} (B); "
              "required <= 0.15")
    assert record("criterion 5 p-independence", ok, detail), detail


def test_criterion_06_spatial_order(spatial_result):
    assert spatial_result.aborts == 0
    orders = [spatial_result.report_for(p).order for p in (2.0, 4.0, 8.0)]
    ok = all(0.4 <= o <= 0.65 for o in orders)
    detail = (_order_detail(spatial_result, (2.0, 4.0, 8.0))
              + "; required [0.40, 0.65]")
    assert record("criterion 6 spatial order", ok, detail), detail


def test_criterion_07_holder_exponents(holder_result):
    e2 = holder_result.report_for(2.0).order
    e8 = holder_result.report_for(8.0).order
    ok = 0.4 <= e2 <= 0.6 and 0.07 <= e8 <= 0.20
    detail = (f"p=2: {e2:.4f} required [0.40, 0.60]; "
              f"p=8: {e8:.4f} required [0.07, 0.20]")
    assert record("criterion 7 increment-regularity exponents", ok, detail), \
        detail


# ---------------------------------------------------------------------------
# criterion 8: truncated stable robustness through the CLI


def _stable_orders(manifest):
    orders = {}
    for entry in manifest.studies:
        assert entry["status"] == "ok" and entry["aborts"] == 0
        orders[entry["model_info"]["eps"]] = entry["fits"][0]["order"]
    return orders


def test_criterion_08a_truncated_stable_orders(stable_manifest):
    orders = _stable_orders(stable_manifest)
    ok = all(0.35 <= o <= 0.65 for o in orders.values())
    detail = (", ".join(f"eps={e:g}: {o:.4f}" for e, o in orders.items())
              + "; required [0.35, 0.65]")
    assert record("criterion 8a truncated stable temporal orders", ok,
                  detail), detail


def test_criterion_08b_truncated_stable_stability(stable_manifest):
    orders = _stable_orders(stable_manifest)
    gap = abs(orders[0.1] - orders[0.05])
    ok = gap <= 0.1
    detail = f"|order(eps=0.1) - order(eps=0.05)| = {gap:.4f}; required <= 0.1"
    assert record("criterion 8b order stability across truncation levels",
                  ok, detail), detail


def test_criterion_08c_residual_in_manifest(stable_manifest):
    infos = [entry["model_info"] for entry in stable_manifest.studies]
    ok = all(
        info.get("residual", 0.0) > 0.0 and info.get("intensity", 0.0) > 0.0
        for info in infos
    )
    # residuals shrink as the truncation cutoff does
    by_eps = {info["eps"]: info["residual"] for info in infos}
    ok &= by_eps[0.05] < by_eps[0.1]
    detail = ", ".join(
        f"eps={info['eps']:g}: residual={info['residual']:.4g}"
        for info in infos
    )
    assert record("criterion 8c truncation residual in manifest", ok, detail), \
        detail


# ---------------------------------------------------------------------------
# supporting sanity: the regularity study's p = 2 errors match the exact
# second moment, tying criterion 7 to a closed-form oracle


def test_holder_errors_match_isometry(holder_result):
    plan = holder_result.plan
    lam = eigenvalues(plan.n_ref)
    phi = plan.model.profile.coeffs
    t = plan.horizon / 2.0
    rep = holder_result.report_for(2.0)
    second = plan.model.intensity * plan.model.law.mean_square()
    for j, h in enumerate(plan.levels):
        v = second * float(np.sum(
            phi**2 * ((1.0 - np.exp(-lam * h)) ** 2 * conv_variance(lam, t)
                      + conv_variance(lam, h))
        ))
        assert rep.errors[j] == pytest.approx(math.sqrt(v), rel=0.12)


def test_jump_convolution_terminal_value_is_centred():
    # E N(t) = 0 for the compensated convolution used across the studies
    model = _temporal_model(G1Spec.zero(), n=8)
    acc = np.zeros(8)
    m_samples = 20000
    for i in range(m_samples):
        sk = sample_jump_skeleton(1.0, model, stream(41, i, PURPOSE_JUMPS))
        acc += compensated_jump_convolution(sk, model, 8, 0.75).coeffs
    lam = eigenvalues(8)
    per_mode_var = (model.intensity * model.law.mean_square()
                    * model.profile.coeffs**2 * conv_variance(lam, 0.75))
    se = np.sqrt(per_mode_var / m_samples)
    assert np.all(np.abs(acc / m_samples) <= 4.0 * se + 1e-12)
