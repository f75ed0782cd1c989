import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedledger import (
    ALPHA_GRID,
    AccountantState,
    InfeasiblePrivacyBudgetError,
    ParameterVector,
    PrivacySpec,
    RngStream,
    adaptive_noise,
    calibrate_noise,
    clip_update,
    gaussian_sigma,
    laplace_scale,
    mlp_layout,
    rdp_of_gaussian,
    rdp_to_dp,
)
from fedledger.personalization import PersonalizationMask, all_shared_mask
from fedledger.privacy import Z_GRID, composed_epsilon

LAYOUT = mlp_layout(4, 5, 3)  # total_dim = 20 + 5 + 15 + 3 = 43


def pv(values):
    return ParameterVector(np.asarray(values, dtype=float), LAYOUT)


def mask_with_layers(*names):
    bits = np.zeros(LAYOUT.total_dim, dtype=bool)
    for name in names:
        span = LAYOUT.span(name)
        bits[span.offset : span.offset + span.length] = True
    return PersonalizationMask(bits, LAYOUT, 0.5)


# --- Laplace ---------------------------------------------------------------

def test_laplace_scale_identity_cases():
    assert laplace_scale(1.0, 1.0) == 1.0
    assert laplace_scale(2.0, 4.0) == 0.5


def test_laplace_scale_rejects_nonpositive():
    with pytest.raises(ValueError):
        laplace_scale(0.0, 1.0)
    with pytest.raises(ValueError):
        laplace_scale(1.0, 0.0)


def test_laplace_sampling_moments():
    # Monte Carlo moment oracle at b = 1: Var = 2 b^2.
    samples = RngStream(100, "laplace").laplace(scale=laplace_scale(1.0, 1.0), n=1_000_000)
    assert abs(samples.mean()) <= 0.01
    assert 1.98 <= samples.var() <= 2.02


# --- Gaussian --------------------------------------------------------------

def test_gaussian_sigma_against_high_precision_oracle():
    import mpmath

    mpmath.mp.dps = 50
    expected = float(mpmath.sqrt(2 * mpmath.log(mpmath.mpf("1.25") / mpmath.mpf("1e-5"))))
    got = gaussian_sigma(1.0, 1.0, 1e-5)
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(4.845, abs=5e-4)


def test_gaussian_sigma_scalings_exact():
    assert gaussian_sigma(2.0, 1.0, 1e-5) == 2.0 * gaussian_sigma(1.0, 1.0, 1e-5)
    assert gaussian_sigma(1.0, 2.0, 1e-5) == gaussian_sigma(1.0, 1.0, 1e-5) / 2.0


def test_gaussian_sigma_rejects_bad_delta():
    with pytest.raises(ValueError):
        gaussian_sigma(1.0, 1.0, 1.3)
    with pytest.raises(ValueError):
        gaussian_sigma(1.0, 1.0, 0.0)


# --- Clipping ---------------------------------------------------------------

def test_clip_halves_an_overlong_vector():
    values = np.zeros(LAYOUT.total_dim)
    values[:4] = 5.0  # norm 10
    clipped = clip_update(pv(values), 5.0)
    assert np.array_equal(clipped.values[:4], np.full(4, 2.5))
    assert clipped.norm() == pytest.approx(5.0, abs=1e-12)


def test_clip_noop_is_bit_exact():
    values = np.zeros(LAYOUT.total_dim)
    values[0] = 3.0
    original = pv(values)
    clipped = clip_update(original, 5.0)
    assert np.array_equal(clipped.values, original.values)


def test_clip_zero_vector_passes_through():
    clipped = clip_update(pv(np.zeros(LAYOUT.total_dim)), 1.0)
    assert np.array_equal(clipped.values, np.zeros(LAYOUT.total_dim))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 10_000), clip=st.floats(0.01, 10.0))
def test_clip_norm_bound_property(seed, clip):
    values = np.random.default_rng(seed).standard_normal(LAYOUT.total_dim) * 3
    clipped = clip_update(pv(values), clip)
    assert clipped.norm() <= clip + 1e-12
    if np.linalg.norm(values) <= clip:
        assert np.array_equal(clipped.values, values)


def test_clip_norm_bound_thousand_random_vectors():
    rng = np.random.default_rng(77)
    for _ in range(1000):
        values = rng.standard_normal(LAYOUT.total_dim) * rng.uniform(0.1, 20)
        clip = rng.uniform(0.05, 5.0)
        assert clip_update(pv(values), clip).norm() <= clip + 1e-12


# --- Adaptive two-tier noise -------------------------------------------------

def test_adaptive_noise_zero_sigmas_identity():
    update = pv(np.linspace(-1, 1, LAYOUT.total_dim))
    noised = adaptive_noise(update, mask_with_layers("hidden_weights"), 0.0, 0.0,
                            RngStream(1, "noise"))
    assert np.array_equal(noised.values, update.values)


def test_adaptive_noise_mask_routing():
    update = pv(np.linspace(-1, 1, LAYOUT.total_dim))
    mask = mask_with_layers("hidden_weights", "hidden_bias")
    noised = adaptive_noise(update, mask, 0.0, 1.0, RngStream(2, "noise"))
    assert np.array_equal(noised.values[mask.bits], update.values[mask.bits])
    assert np.all(noised.values[~mask.bits] != update.values[~mask.bits])


def test_adaptive_noise_rejects_inverted_tiers():
    update = pv(np.zeros(LAYOUT.total_dim))
    with pytest.raises(ValueError):
        adaptive_noise(update, all_shared_mask(LAYOUT), 2.0, 1.0, RngStream(3))


def test_adaptive_noise_per_tier_variances():
    # Monte Carlo moment oracle on a large layout.
    layout = mlp_layout(100, 500, 100)  # 100600 coordinates
    half = layout.total_dim // 2
    bits = np.zeros(layout.total_dim, dtype=bool)
    bits[: layout.span("output_weights").offset] = True  # layers 0-1 personalized
    mask = PersonalizationMask(bits, layout, 0.5)
    update = ParameterVector(np.zeros(layout.total_dim), layout)
    noised = adaptive_noise(update, mask, 1.0, 3.0, RngStream(4, "noise"))
    personal = noised.values[mask.bits]
    shared = noised.values[~mask.bits]
    assert len(personal) > 10_000 and len(shared) > 10_000
    assert abs(personal.var() - 1.0) <= 0.05
    assert abs(shared.var() - 9.0) <= 9.0 * 0.05


def test_adaptive_noise_groups_uncorrelated():
    layout = mlp_layout(100, 500, 100)
    bits = np.zeros(layout.total_dim, dtype=bool)
    bits[: layout.total_dim // 2] = False
    bits[layout.span("output_weights").offset :] = True
    # Layer-constant masks: personalize the output layers only.
    mask = PersonalizationMask(bits, layout, 0.5)
    update = ParameterVector(np.zeros(layout.total_dim), layout)
    noised = adaptive_noise(update, mask, 1.0, 1.0, RngStream(5, "noise"))
    personal = noised.values[mask.bits]
    shared = noised.values[~mask.bits]
    n = min(len(personal), len(shared), 100_000)
    r = np.corrcoef(personal[:n], shared[:n])[0, 1]
    assert abs(r) <= 0.01


def test_adaptive_noise_deterministic_per_stream():
    update = pv(np.zeros(LAYOUT.total_dim))
    mask = mask_with_layers("hidden_bias")
    a = adaptive_noise(update, mask, 0.5, 1.0, RngStream(6, "noise"))
    b = adaptive_noise(update, mask, 0.5, 1.0, RngStream(6, "noise"))
    assert np.array_equal(a.values, b.values)


# --- RDP accounting -----------------------------------------------------------

def test_rdp_of_gaussian_values():
    assert rdp_of_gaussian(1.0, 2.0) == 1.0
    assert rdp_of_gaussian(2.0, 2.0) == 0.25


def test_rdp_of_gaussian_monotonicity_grid_sweep():
    alphas = np.linspace(1.1, 64, 50)
    zs = np.linspace(0.4, 8, 40)
    for z in zs:
        values = [rdp_of_gaussian(z, a) for a in alphas]
        assert all(x < y for x, y in zip(values, values[1:]))
    for a in alphas:
        values = [rdp_of_gaussian(z, a) for z in zs]
        assert all(x > y for x, y in zip(values, values[1:]))


def test_rdp_of_gaussian_rejects_bad_args():
    with pytest.raises(ValueError):
        rdp_of_gaussian(0.0, 2.0)
    with pytest.raises(ValueError):
        rdp_of_gaussian(1.0, 1.0)


def brute_force_epsilon(z, releases, delta):
    # Independent oracle: direct minimization over the same grid.
    best = math.inf
    for alpha in ALPHA_GRID:
        eps = releases * alpha / (2 * z * z) + math.log(1 / delta) / (alpha - 1)
        best = min(best, eps)
    return best


def test_rdp_to_dp_matches_brute_force_oracle():
    state = AccountantState()
    state.add_release(1.0)
    eps, alpha = rdp_to_dp(state, 1e-5)
    assert eps == pytest.approx(brute_force_epsilon(1.0, 1, 1e-5), abs=1e-9)
    assert alpha in ALPHA_GRID


def test_rdp_to_dp_fifty_random_cases():
    rng = np.random.default_rng(123)
    for _ in range(50):
        z = float(rng.uniform(0.4, 16.0))
        releases = int(rng.integers(1, 40))
        delta = float(10.0 ** rng.uniform(-8, -1))
        state = AccountantState()
        for _ in range(releases):
            state.add_release(z)
        eps, _ = rdp_to_dp(state, delta)
        assert eps == pytest.approx(brute_force_epsilon(z, releases, delta), abs=1e-9)


def test_epsilon_strictly_increases_with_releases():
    state = AccountantState()
    previous = 0.0
    for _ in range(10):
        state.add_release(2.0)
        eps, _ = rdp_to_dp(state, 1e-5)
        assert eps > previous
        previous = eps


def test_epsilon_grows_as_delta_shrinks():
    state = AccountantState()
    state.add_release(2.0)
    epsilons = [rdp_to_dp(state, d)[0] for d in (1e-2, 1e-4, 1e-6, 1e-8)]
    assert all(x < y for x, y in zip(epsilons, epsilons[1:]))


def test_accountant_composition_is_additive_per_alpha():
    single = AccountantState()
    single.add_release(1.5)
    repeated = AccountantState()
    for _ in range(7):
        repeated.add_release(1.5)
    assert np.array_equal(repeated.accumulated_rdp, 7 * single.accumulated_rdp)
    assert repeated.releases == 7


def test_rdp_to_dp_requires_a_release():
    with pytest.raises(ValueError):
        rdp_to_dp(AccountantState(), 1e-5)


# --- Calibration ----------------------------------------------------------------

def test_calibrate_single_round_is_grid_minimal():
    spec = PrivacySpec(epsilon_target=1.0, delta=1e-5, clip_c=1.0,
                       noise_split_rho=1.0, rounds=1)
    scales = calibrate_noise(spec)
    z = scales.noise_multiplier
    assert composed_epsilon(z, 1, 1e-5) <= 1.0
    smaller = [g for g in Z_GRID if g < z]
    if smaller:
        assert composed_epsilon(float(smaller[-1]), 1, 1e-5) > 1.0
    assert scales.sigma_u == pytest.approx(z * spec.clip_c)


def test_calibrate_more_rounds_never_lowers_z():
    for rounds, more in ((1, 2), (5, 10), (15, 30)):
        a = calibrate_noise(PrivacySpec(2.0, 1e-4, 1.0, 1.5, rounds))
        b = calibrate_noise(PrivacySpec(2.0, 1e-4, 1.0, 1.5, more))
        assert b.noise_multiplier >= a.noise_multiplier


def test_calibrate_tier_ratio_exact():
    scales = calibrate_noise(PrivacySpec(4.0, 1e-3, 0.7, 2.5, 10))
    assert scales.sigma_v == pytest.approx(2.5 * scales.sigma_u, rel=1e-15)


def test_calibrate_result_verified_by_accountant():
    spec = PrivacySpec(epsilon_target=3.0, delta=1e-4, clip_c=0.5, rounds=15)
    scales = calibrate_noise(spec)
    state = AccountantState()
    for _ in range(spec.rounds):
        state.add_release(scales.noise_multiplier)
    assert rdp_to_dp(state, spec.delta)[0] <= spec.epsilon_target


def test_calibrate_infeasible_budget():
    with pytest.raises(InfeasiblePrivacyBudgetError):
        calibrate_noise(PrivacySpec(1e-6, 1e-9, 1.0, 1.0, 50))


def test_privacy_spec_validation():
    with pytest.raises(ValueError):
        PrivacySpec(0.0, 1e-5, 1.0)
    with pytest.raises(ValueError):
        PrivacySpec(1.0, 1.5, 1.0)
    with pytest.raises(ValueError):
        PrivacySpec(1.0, 1e-5, 0.0)
    with pytest.raises(ValueError):
        PrivacySpec(1.0, 1e-5, 1.0, noise_split_rho=0.5)
