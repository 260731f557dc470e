"""Control-field-modified susceptibility of a cold 85Rb cloud and the
optical-depth geometry of a spherical Gaussian atom distribution.

Frequencies are in units of the natural decay rate gamma.  Lengths are SI.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf, erfc

# 85Rb D2 line, closed F0=3 -> F=4 component.
RB85_GAMMA = 2 * math.pi * 6.0666e6  # rad/s
RB85_WAVELENGTH = 780.241e-9  # m
# Unpolarized closed transition: (2F+1)/(2F0+1) * lambda^2 / 2pi.
RB85_SIGMA0 = 9.0 / 7.0 * RB85_WAVELENGTH**2 / (2 * math.pi)
# Upper-state F=4 <-> F=3 splitting, 120.64 MHz.
RB85_HPF_SPLITTING = 120.640e6 / 6.0666e6
SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class MediumModel:
    gamma: float = RB85_GAMMA
    lambda_res: float = RB85_WAVELENGTH
    sigma0: float = RB85_SIGMA0
    hpf_splitting: float = RB85_HPF_SPLITTING
    rabi_control: float = 1.0
    control_detuning: float = -2.5
    ground_decoherence: float = 1e-3
    at_weight: float = 0.2
    # O(1) prefactor of the Autler-Townes bandwidth estimate.
    at_prefactor: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.sigma0 > 0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")
        if not self.lambda_res > 0:
            raise ValueError(f"lambda_res must be positive, got {self.lambda_res}")
        if not 0.0 <= self.at_weight <= 1.0:
            raise ValueError(f"at_weight must lie in [0, 1], got {self.at_weight}")
        if not self.ground_decoherence >= 0:
            raise ValueError("ground_decoherence must be nonnegative")
        if not self.rabi_control >= 0:
            raise ValueError("rabi_control must be nonnegative")
        if not self.at_prefactor > 0:
            raise ValueError("at_prefactor must be positive")

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.lambda_res

    @property
    def scale(self) -> float:
        """Prefactor C of the dimensionless susceptibility.

        Chosen so that 4*pi*k*Im(chi) = n*sigma0 on resonance with the control
        off, i.e. C = sigma0 k^2 / (8 pi); equals 3/4 for a two-level atom.
        """
        return self.sigma0 * self.wavenumber**2 / (8 * math.pi)

    def with_control(self, rabi_control: float) -> "MediumModel":
        d = asdict(self)
        d["rabi_control"] = rabi_control
        return MediumModel(**d)

    def control_off(self) -> "MediumModel":
        return self.with_control(0.0)


@dataclass(frozen=True)
class GaussianCloud:
    """Spherical cloud with density n0 * exp(-r^2 / (2 r0^2))."""

    n0: float
    r0: float

    def __post_init__(self):
        if not self.n0 >= 0:
            raise ValueError(f"n0 must be nonnegative, got {self.n0}")
        if not self.r0 > 0:
            raise ValueError(f"r0 must be positive, got {self.r0}")

    @classmethod
    def from_optical_depth(cls, b0: float, r0: float, sigma0: float) -> "GaussianCloud":
        if b0 < 0:
            raise ValueError("b0 must be nonnegative")
        return cls(n0=b0 / (math.sqrt(2 * math.pi) * sigma0 * r0), r0=r0)

    def peak_optical_depth(self, sigma0: float) -> float:
        return math.sqrt(2 * math.pi) * self.n0 * sigma0 * self.r0

    def density(self, r):
        r = np.asarray(r, dtype=float)
        return self.n0 * np.exp(-np.sum(r**2, axis=-1) / (2 * self.r0**2))


def at_self_energy(detuning, medium: MediumModel):
    """Light shift + broadening the control field adds to the excited state."""
    detuning = np.asarray(detuning, dtype=float)
    rabi = medium.rabi_control
    if rabi == 0.0:
        return np.zeros_like(detuning, dtype=complex)
    return (rabi / 2) ** 2 / (detuning - medium.control_detuning + 0.5j * medium.ground_decoherence)


def _lambda_response(detuning, medium: MediumModel):
    detuning = np.asarray(detuning, dtype=float)
    rabi = medium.rabi_control
    if rabi == 0.0:
        return -1.0 / (detuning + 0.5j)
    two_photon = detuning - medium.control_detuning + 0.5j * medium.ground_decoherence
    # -1/(D + i/2 - W/T) rewritten as -T/((D + i/2) T - W) so that T = 0
    # (exact two-photon resonance with no ground decoherence) is regular.
    denom = (detuning + 0.5j) * two_photon - (rabi / 2) ** 2
    # denom vanishes only when T = 0 and the coupling underflows: bare limit
    degenerate = denom == 0
    out = -two_photon / np.where(degenerate, 1.0, denom)
    return np.where(degenerate, -1.0 / (detuning + 0.5j), out)


def normalized_response(detuning, medium: MediumModel):
    """Mixture (1-w) L0 + w L_Lambda of bare and control-dressed responses."""
    detuning = np.asarray(detuning, dtype=float)
    bare = -1.0 / (detuning + 0.5j)
    w = medium.at_weight
    if w == 0.0 or medium.rabi_control == 0.0:
        return bare
    return (1 - w) * bare + w * _lambda_response(detuning, medium)


def susceptibility(detuning, medium: MediumModel):
    """Complex susceptibility in units of n0 (lambda / 2 pi)^3.

    Accepts scalars or arrays of detunings (gamma units).
    """
    out = medium.scale * normalized_response(detuning, medium)
    return out[()] if isinstance(out, np.ndarray) and out.ndim == 0 else out


def cross_section(detuning, medium: MediumModel):
    # Im chi0(0) = 2 C for the bare Lorentzian.
    chi = normalized_response(detuning, medium)
    out = medium.sigma0 * np.imag(chi) / 2.0
    return out[()] if isinstance(out, np.ndarray) and out.ndim == 0 else out


def at_linewidth(medium: MediumModel) -> float:
    """Autler-Townes bandwidth estimate Omega_c^2 / Delta_hpf^2 (gamma units)."""
    if medium.hpf_splitting == 0:
        raise ValueError("hpf_splitting must be nonzero to estimate the AT bandwidth")
    return medium.at_prefactor * medium.rabi_control**2 / medium.hpf_splitting**2


def _check_direction(direction):
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
        raise ValueError(f"direction must be a unit vector, |u| = {np.linalg.norm(direction)!r}")
    return direction


def erf_difference(a, b):
    """erf(b) - erf(a) without cancellation in either tail."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    right = (a >= 0) & (b >= 0)
    left = (a <= 0) & (b <= 0)
    out = erf(b) - erf(a)
    out = np.where(right, erfc(a) - erfc(b), out)
    out = np.where(left, erfc(-b) - erfc(-a), out)
    return out[()] if out.ndim == 0 else out


def column_density(origin, direction, s, cloud: GaussianCloud):
    """Integral of the density along origin + direction * s', s' in [0, s].

    ``s`` may be ``np.inf``.
    """
    origin = np.asarray(origin, dtype=float)
    direction = _check_direction(direction)
    if np.any(np.asarray(s) < 0):
        raise ValueError("path length s must be nonnegative")
    r0 = cloud.r0
    s_c = float(origin @ direction)
    rho2 = max(float(origin @ origin) - s_c**2, 0.0)
    lo = s_c / (math.sqrt(2) * r0)
    hi = (np.asarray(s, dtype=float) + s_c) / (math.sqrt(2) * r0)
    pref = cloud.n0 * math.exp(-rho2 / (2 * r0**2)) * r0 * math.sqrt(math.pi / 2)
    return pref * erf_difference(lo, hi)


def optical_depth_along_ray(origin, direction, s, detuning, cloud: GaussianCloud, medium: MediumModel):
    """Optical depth sigma(detuning) * column density over [0, s] of the ray."""
    return cross_section(detuning, medium) * column_density(origin, direction, s, cloud)


def spectrum_table(detunings, medium: MediumModel) -> dict[str, np.ndarray]:
    """Columns for a Fig.-2 style susceptibility export."""
    detunings = np.asarray(detunings, dtype=float)
    on = np.asarray(susceptibility(detunings, medium))
    off = np.asarray(susceptibility(detunings, medium.control_off()))
    return {
        "detuning": detunings,
        "re_chi": on.real,
        "im_chi": on.imag,
        "im_chi_control_off": off.imag,
        "re_chi_control_off": off.real,
        "re_chi_at": on.real - off.real,
        "im_chi_at": on.imag - off.imag,
    }
