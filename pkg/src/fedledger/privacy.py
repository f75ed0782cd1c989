"""Differential-privacy mechanisms and the Renyi accountant.

Noise calibration works backwards from the round budget: the accountant
composes one Gaussian release per round at noise multiplier z (sigma/clip
ratio), rdp(alpha) = alpha / (2 z^2), and converts to (epsilon, delta) by
minimizing rdp(alpha) + log(1/delta)/(alpha - 1) over a fixed alpha grid.
``calibrate_noise`` picks the smallest z on a geometric grid whose composed
epsilon fits the target, then splits it into two tiers: personalized
coordinates get sigma_u = z * clip, shared coordinates get the larger
sigma_v = rho * sigma_u. The guarantee is accounted at sigma_u, the weaker
tier, so it holds for every coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ParameterVector
from .personalization import PersonalizationMask
from .rng import RngStream

# Dense at small alpha where the conversion minimum usually falls.
ALPHA_GRID: tuple[float, ...] = (1.25, 1.5, 1.75, *[float(a) for a in range(2, 65)], 128.0, 256.0)

# Geometric search grid for the noise multiplier.
Z_GRID: np.ndarray = np.geomspace(0.3, 64.0, 200)


class InfeasiblePrivacyBudgetError(ValueError):
    """No noise multiplier in the search range satisfies the budget."""


@dataclass(frozen=True)
class PrivacySpec:
    """Privacy budget and noise-shape parameters for one training run."""

    epsilon_target: float
    delta: float
    clip_c: float
    noise_split_rho: float = 2.0
    rounds: int = 15

    def __post_init__(self):
        if self.epsilon_target <= 0:
            raise ValueError("epsilon_target must be > 0")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if self.clip_c <= 0:
            raise ValueError("clip_c must be > 0")
        if self.noise_split_rho < 1.0:
            raise ValueError("noise_split_rho must be >= 1 (shared tier is noisier)")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")


def laplace_scale(sensitivity_l1: float, epsilon: float) -> float:
    """Laplace mechanism scale b = sensitivity / epsilon."""
    if sensitivity_l1 <= 0:
        raise ValueError("sensitivity must be > 0 (zero signals a degenerate query)")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    return sensitivity_l1 / epsilon


def gaussian_sigma(sensitivity_l2: float, epsilon: float, delta: float) -> float:
    """Closed-form Gaussian mechanism sigma = s * sqrt(2 ln(1.25/delta)) / eps."""
    if sensitivity_l2 <= 0 or epsilon <= 0 or delta <= 0:
        raise ValueError("sensitivity, epsilon, delta must all be > 0")
    if delta >= 1.0:
        raise ValueError("delta must be < 1")
    return sensitivity_l2 * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def clip_update(update: ParameterVector, clip_c: float) -> ParameterVector:
    """Scale the update by min(1, clip_c / ||update||_2)."""
    if clip_c <= 0:
        raise ValueError("clip_c must be > 0")
    norm = np.linalg.norm(update.values)
    if norm <= clip_c:
        return update.copy()
    return ParameterVector(update.values * (clip_c / norm), update.layout)


def adaptive_noise(
    update: ParameterVector,
    mask: PersonalizationMask,
    sigma_u: float,
    sigma_v: float,
    stream: RngStream,
) -> ParameterVector:
    """Two-tier Gaussian noise: masked (personalized) coordinates get
    sigma_u, the rest get sigma_v. Deterministic for a given stream."""
    if sigma_u < 0 or sigma_v < 0:
        raise ValueError("noise sigmas must be >= 0")
    if sigma_u > sigma_v:
        raise ValueError("personalized tier must not be noisier than shared tier")
    if mask.bits.shape[0] != update.values.shape[0]:
        raise ValueError("mask length does not match update dimension")
    if sigma_u == 0.0 and sigma_v == 0.0:
        return update.copy()
    sigmas = np.where(mask.bits, sigma_u, sigma_v)
    noise = stream.normal(update.values.shape[0]) * sigmas
    return ParameterVector(update.values + noise, update.layout)


def rdp_of_gaussian(noise_multiplier: float, alpha: float) -> float:
    """Renyi divergence bound alpha / (2 z^2) of one Gaussian release."""
    if noise_multiplier <= 0:
        raise ValueError("noise multiplier must be > 0")
    if alpha <= 1:
        raise ValueError("alpha must be > 1")
    return alpha / (2.0 * noise_multiplier * noise_multiplier)


@dataclass
class AccountantState:
    """Accumulated RDP over a sequence of Gaussian releases.

    Releases are tallied per distinct multiplier so that T identical
    releases compose to exactly T times the single-release curve.
    """

    alphas: tuple[float, ...] = ALPHA_GRID
    release_counts: dict[float, int] = field(default_factory=dict)
    releases: int = 0

    def __post_init__(self):
        if any(a <= 1 for a in self.alphas):
            raise ValueError("alpha grid values must be > 1")

    def add_release(self, noise_multiplier: float) -> None:
        if noise_multiplier <= 0:
            raise ValueError("noise multiplier must be > 0")
        z = float(noise_multiplier)
        self.release_counts[z] = self.release_counts.get(z, 0) + 1
        self.releases += 1

    @property
    def accumulated_rdp(self) -> np.ndarray:
        total = np.zeros(len(self.alphas))
        for z, count in self.release_counts.items():
            total += count * np.array([rdp_of_gaussian(z, a) for a in self.alphas])
        return total


def rdp_to_dp(state: AccountantState, delta: float) -> tuple[float, float]:
    """(epsilon, argmin alpha) for the accumulated RDP at the given delta."""
    if state.releases < 1:
        raise ValueError("accountant has no releases to convert")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must be in (0, 1)")
    log_inv_delta = math.log(1.0 / delta)
    best_eps = math.inf
    best_alpha = state.alphas[0]
    for alpha, rdp in zip(state.alphas, state.accumulated_rdp):
        eps = rdp + log_inv_delta / (alpha - 1.0)
        if eps < best_eps:
            best_eps = eps
            best_alpha = alpha
    return best_eps, best_alpha


@dataclass(frozen=True)
class NoiseScales:
    sigma_u: float
    sigma_v: float
    noise_multiplier: float


def composed_epsilon(noise_multiplier: float, releases: int, delta: float) -> float:
    """Epsilon after composing `releases` Gaussian releases at one multiplier."""
    state = AccountantState()
    for _ in range(releases):
        state.add_release(noise_multiplier)
    return rdp_to_dp(state, delta)[0]


def calibrate_noise(spec: PrivacySpec) -> NoiseScales:
    """Smallest grid multiplier whose composed epsilon fits the budget.

    Returns sigma_u = z * clip_c for personalized coordinates and
    sigma_v = rho * sigma_u for shared ones.
    """
    if spec.rounds < 1:
        raise ValueError("calibration needs at least one round")
    for z in Z_GRID:
        if composed_epsilon(float(z), spec.rounds, spec.delta) <= spec.epsilon_target:
            sigma_u = float(z) * spec.clip_c
            return NoiseScales(sigma_u, spec.noise_split_rho * sigma_u, float(z))
    raise InfeasiblePrivacyBudgetError(
        f"no multiplier in [{Z_GRID[0]:.3g}, {Z_GRID[-1]:.3g}] reaches "
        f"epsilon={spec.epsilon_target} at delta={spec.delta} over {spec.rounds} rounds"
    )
