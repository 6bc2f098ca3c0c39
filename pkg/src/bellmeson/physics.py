"""Closed-form correlation functions and CHSH combinations.

Two settings are covered: the photon-polarization analogue, where the
correlation depends on the analyzer angle difference, and the entangled
neutral-meson pair, where decay times play the role of analyzer settings
and flavor mixing plays the role of polarizer rotation.

All functions accept scalars or numpy arrays and are pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

#: Speed of light in micrometers per picosecond.
C_UM_PER_PS = 299.792458

#: Default mixing frequency, rad/ps.
DEFAULT_DELTA_M = 0.507
#: Mean neutral-B lifetime, ps.
DEFAULT_TAU_B = 1.542
#: Boost of the 3.5 GeV + 8 GeV collider, (E- - E+) / (2 sqrt(E- E+)).
DEFAULT_BETA_GAMMA = round((8.0 - 3.5) / (2.0 * math.sqrt(8.0 * 3.5)), 3)

SAME_FLAVOR = "same"
OPPOSITE_FLAVOR = "opposite"


@dataclass(frozen=True)
class PhysicsParams:
    tau_b: float = DEFAULT_TAU_B
    delta_m: float = DEFAULT_DELTA_M
    beta_gamma: float = DEFAULT_BETA_GAMMA

    def __post_init__(self):
        for name in ("tau_b", "delta_m", "beta_gamma"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.tau_b <= 0:
            raise ValueError(f"tau_b must be > 0, got {self.tau_b}")
        if self.delta_m < 0:
            raise ValueError(f"delta_m must be >= 0, got {self.delta_m}")
        if self.beta_gamma <= 0:
            raise ValueError(f"beta_gamma must be > 0, got {self.beta_gamma}")


@dataclass(frozen=True)
class AngleSettings:
    alpha: float
    alpha_prime: float
    beta: float
    beta_prime: float

    def __post_init__(self):
        for name in ("alpha", "alpha_prime", "beta", "beta_prime"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def from_theta(cls, theta: float) -> AngleSettings:
        """One-parameter family alpha=0, alpha'=2θ, beta=θ, beta'=3θ."""
        return cls(0.0, 2.0 * theta, theta, 3.0 * theta)


@dataclass(frozen=True)
class TimePair:
    t_a: float
    t_b: float

    def __post_init__(self):
        if not (self.t_a >= 0 and self.t_b >= 0):
            raise ValueError(f"decay times must be >= 0, got ({self.t_a}, {self.t_b})")

    @property
    def t_min(self) -> float:
        return min(self.t_a, self.t_b)

    @property
    def dt(self) -> float:
        return abs(self.t_a - self.t_b)


@dataclass(frozen=True)
class FlavorPair:
    side_a: int
    side_b: int

    def __post_init__(self):
        if self.side_a not in (1, -1) or self.side_b not in (1, -1):
            raise ValueError(f"flavors must be +1 or -1, got ({self.side_a}, {self.side_b})")

    @property
    def same_flavor(self) -> bool:
        return self.side_a == self.side_b


def _nonneg(x, name):
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr >= 0)):
        raise ValueError(f"{name} must be >= 0")
    return arr


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def correlation_qm(alpha, beta):
    """Quantum correlation of two polarization analyzers, cos(alpha - beta)."""
    return _scalar(np.cos(np.asarray(alpha, dtype=float) - np.asarray(beta, dtype=float)))


def chsh_s(settings: AngleSettings, correlation=correlation_qm) -> float:
    """E(a,b) - E(a,b') + E(a',b) + E(a',b') for an arbitrary correlation function."""
    s = settings
    return (
        correlation(s.alpha, s.beta)
        - correlation(s.alpha, s.beta_prime)
        + correlation(s.alpha_prime, s.beta)
        + correlation(s.alpha_prime, s.beta_prime)
    )


def chsh_s_photon(theta):
    """S(θ) = 3 cos θ - cos 3θ."""
    theta = np.asarray(theta, dtype=float)
    return _scalar(3.0 * np.cos(theta) - np.cos(3.0 * theta))


def find_violation_boundary(xtol: float = 1e-10) -> float:
    """Smallest θ > 0 with S(θ) = 2, in radians.

    S(θ) - 2 changes sign exactly once on [0.9, 1.5].
    """
    return float(bisect(lambda t: chsh_s_photon(t) - 2.0, 0.9, 1.5, xtol=xtol, maxiter=200))


def violation_boundary_dt(params: PhysicsParams) -> float:
    """Δt (ps) below which the renormalized meson S exceeds 2."""
    if params.delta_m == 0:
        return math.inf
    return find_violation_boundary() / params.delta_m


def rate_joint(flavors: FlavorPair, times: TimePair, params: PhysicsParams) -> float:
    """Joint decay density for a flavor pair at (t_a, t_b), in ps^-2.

    Normalized so that the sum over the four flavor combinations integrates
    to one over the positive quadrant.
    """
    return float(rate_joint_array(flavors.same_flavor, times.t_a, times.t_b, params))


def rate_joint_array(same_flavor, t_a, t_b, params: PhysicsParams):
    """Vectorized :func:`rate_joint`; ``same_flavor`` is a boolean (array)."""
    t_a = _nonneg(t_a, "t_a")
    t_b = _nonneg(t_b, "t_b")
    tau = params.tau_b
    t_min = np.minimum(t_a, t_b)
    dt = np.abs(t_a - t_b)
    sign = np.where(np.asarray(same_flavor, dtype=bool), -1.0, 1.0)
    return _scalar(
        np.exp(-2.0 * t_min / tau) * np.exp(-dt / tau)
        * (1.0 + sign * np.cos(params.delta_m * dt)) / (4.0 * tau * tau)
    )


def correlation_damped(times: TimePair, params: PhysicsParams) -> float:
    """Flavor correlation of the decaying pair, -e^{-2t'/τ} e^{-Δt/τ} cos(Δm Δt)."""
    return float(correlation_damped_array(times.t_min, times.dt, params))


def correlation_damped_array(t_min, dt, params: PhysicsParams):
    t_min = _nonneg(t_min, "t_min")
    dt = _nonneg(dt, "dt")
    tau = params.tau_b
    return _scalar(-np.exp(-2.0 * t_min / tau) * np.exp(-dt / tau) * np.cos(params.delta_m * dt))


def chsh_s_damped(t_min, dt, params: PhysicsParams):
    """CHSH combination built from the damped correlation at (Δt, 3Δt), same t'.

    Uses the opposite-flavor-positive sign so that the undecayed limit
    matches :func:`chsh_s_meson`.
    """
    dt = _nonneg(dt, "dt")
    e1 = -np.asarray(correlation_damped_array(t_min, dt, params))
    e3 = -np.asarray(correlation_damped_array(t_min, 3.0 * dt, params))
    return _scalar(3.0 * e1 - e3)


def correlation_renormalized(dt, params: PhysicsParams):
    """Correlation normalized to undecayed pairs, cos(Δm Δt)."""
    dt = _nonneg(dt, "dt")
    return _scalar(np.cos(params.delta_m * dt))


def chsh_s_meson(dt, params: PhysicsParams):
    """S(Δt) = 3 E_R(Δt) - E_R(3Δt)."""
    dt = _nonneg(dt, "dt")
    return _scalar(
        3.0 * np.asarray(correlation_renormalized(dt, params))
        - np.asarray(correlation_renormalized(3.0 * dt, params))
    )


def _exp_cos_antiderivative(x, a, b):
    # d/dx of this equals e^{-a x} cos(b x)
    return np.exp(-a * x) * (b * np.sin(b * x) - a * np.cos(b * x)) / (a * a + b * b)


def expected_er_window(lo: float, hi: float, params: PhysicsParams) -> float:
    """Mean of cos(Δm Δt) over [lo, hi] for the ideal |t_a - t_b| distribution.

    |t_a - t_b| of two independent exponential lifetimes is itself
    exponential with mean τ, so this is an exponentially weighted average.
    """
    if not 0 <= lo < hi:
        raise ValueError(f"invalid window [{lo}, {hi}]")
    a = 1.0 / params.tau_b
    b = params.delta_m
    num = _exp_cos_antiderivative(hi, a, b) - _exp_cos_antiderivative(lo, a, b)
    den = (math.exp(-a * lo) - math.exp(-a * hi)) / a
    return float(num / den)


def expected_s_window(center: float, halfwidth: float, params: PhysicsParams,
                      far_scale: float = 3.0) -> float:
    """Ideal-detector expectation of the windowed S estimator."""
    e1 = expected_er_window(center - halfwidth, center + halfwidth, params)
    w3 = far_scale * halfwidth
    e3 = expected_er_window(3.0 * center - w3, 3.0 * center + w3, params)
    return 3.0 * e1 - e3
