"""Karras noise ladder and denoiser preconditioning coefficients.

Everything here is a pure function of the schedule parameters.  The ladder is
indexed by a step index t in {0, ..., T-1} with sigma strictly decreasing in t:
t = 0 is the noisiest rung (sigma_max) and t = T-1 is the floor (sigma_min).
All other modules derive sigmas exclusively through `karras_sigma`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_SIGMA_MIN = 0.002
DEFAULT_SIGMA_MAX = 80.0
DEFAULT_SIGMA_DATA = 0.5
DEFAULT_RHO = 7.0
DEFAULT_T = 40


@dataclass(frozen=True)
class ScheduleParams:
    """Hyperparameters of the rho-spaced noise ladder."""

    sigma_min: float = DEFAULT_SIGMA_MIN
    sigma_max: float = DEFAULT_SIGMA_MAX
    sigma_data: float = DEFAULT_SIGMA_DATA
    rho: float = DEFAULT_RHO
    T: int = DEFAULT_T

    def __post_init__(self):
        if not (self.sigma_min > 0 and self.sigma_max > 0 and self.sigma_data > 0):
            raise ValueError("sigma_min, sigma_max, sigma_data must be positive")
        if self.sigma_min >= self.sigma_max:
            raise ValueError("sigma_min must be < sigma_max")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if int(self.T) != self.T or self.T < 2:
            raise ValueError("T must be an integer >= 2")

    def to_dict(self) -> dict:
        return {
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "sigma_data": self.sigma_data,
            "rho": self.rho,
            "T": int(self.T),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScheduleParams":
        return cls(
            sigma_min=float(d["sigma_min"]),
            sigma_max=float(d["sigma_max"]),
            sigma_data=float(d["sigma_data"]),
            rho=float(d["rho"]),
            T=int(d["T"]),
        )


@dataclass(frozen=True)
class PrecondCoeffs:
    """Input/skip/output rescaling at one noise level."""

    c_in: float
    c_skip: float
    c_out: float
    sigma: float


def karras_sigma(t: int, params: ScheduleParams) -> float:
    """Noise level at rung t of the rho-spaced ladder.

    Strictly decreasing in t.  The endpoints are snapped to exactly
    sigma_max / sigma_min so that boundary identities (e.g. the student
    denoiser being the identity at the floor) hold bit-for-bit.
    """
    if int(t) != t or t < 0 or t > params.T - 1:
        raise IndexError(f"step index {t} outside [0, {params.T - 1}]")
    if t == 0:
        return params.sigma_max
    if t == params.T - 1:
        return params.sigma_min
    inv_rho = 1.0 / params.rho
    hi = params.sigma_max ** inv_rho
    lo = params.sigma_min ** inv_rho
    return (hi + (t / (params.T - 1)) * (lo - hi)) ** params.rho


def sigma_ladder(params: ScheduleParams) -> np.ndarray:
    """All T noise levels as a float64 array, decreasing."""
    return np.array([karras_sigma(t, params) for t in range(params.T)])


def precond_edm(sigma: float, sigma_data: float) -> PrecondCoeffs:
    """Teacher-style preconditioning at noise level sigma."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    denom_sq = sigma * sigma + sigma_data * sigma_data
    denom = math.sqrt(denom_sq)
    return PrecondCoeffs(
        c_in=1.0 / denom,
        c_skip=(sigma_data * sigma_data) / denom_sq,
        c_out=(sigma * sigma_data) / denom,
        sigma=sigma,
    )


def precond_cm_boundary(sigma: float, params: ScheduleParams) -> PrecondCoeffs:
    """Student preconditioning with an exact identity at the schedule floor.

    Uses the sigma_min-shifted form: c_skip and c_out depend on
    (sigma - sigma_min), so c_skip(sigma_min) == 1 and c_out(sigma_min) == 0
    exactly, making the consistency denoiser the identity map there.
    """
    if sigma < params.sigma_min:
        raise ValueError(f"sigma {sigma} below schedule floor {params.sigma_min}")
    sd = params.sigma_data
    shift = sigma - params.sigma_min
    denom_sq = shift * shift + sd * sd
    return PrecondCoeffs(
        c_in=1.0 / math.sqrt(sigma * sigma + sd * sd),
        c_skip=(sd * sd) / denom_sq,
        c_out=(shift * sd) / math.sqrt(denom_sq),
        sigma=sigma,
    )


def sample_step_index(rng: np.random.Generator, T: int) -> int:
    """Uniform draw over {0, ..., T-1}."""
    if T < 2:
        raise ValueError("T must be >= 2")
    return int(rng.integers(0, T))


def log_sigma_unit(sigma: float, params: ScheduleParams) -> float:
    """Map sigma to [0, 1] on a log scale: 0 at sigma_max, 1 at sigma_min.

    This is the scalar the step-index embedding featurizes, so the noisiest
    rung maps to the zero feature vector.
    """
    num = math.log(sigma) - math.log(params.sigma_max)
    den = math.log(params.sigma_min) - math.log(params.sigma_max)
    return num / den
