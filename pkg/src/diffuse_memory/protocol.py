"""Write-in criteria for the diffuse Raman memory and the photon -> atom map."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_MARGIN = 10.0


class Verdict(str, enum.Enum):
    STORABLE = "STORABLE"
    TOO_NARROW_LOSSY = "TOO_NARROW_LOSSY"
    TOO_BROAD_DISPERSIONLESS = "TOO_BROAD_DISPERSIONLESS"
    INCONSISTENT = "INCONSISTENT"


@dataclass(frozen=True)
class RegimeReport:
    pulse_width: float
    gamma_at: float
    b_sigma: float
    margin: float
    dispersive_margin: float  # pulse_width / (gamma_at * b_sigma)
    loss_margin: float  # pulse_width / (gamma_at * sqrt(b_sigma))
    dispersive_ok: bool
    loss_ok: bool
    verdict: Verdict
    optimal_bandwidth: bool

    @property
    def window(self) -> tuple[float, float]:
        """Open interval of storable pulse widths (may be empty)."""
        return (self.margin * self.gamma_at * math.sqrt(self.b_sigma),
                self.gamma_at * self.b_sigma / self.margin)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["verdict"] = self.verdict.value
        d["window"] = list(self.window)
        return d


def storable_window_nonempty(b_sigma: float, margin: float = DEFAULT_MARGIN) -> bool:
    # kappa G sqrt(b) < G b / kappa  <=>  b > kappa^4
    return b_sigma > margin**4


def check_optimal_bandwidth(pulse_width: float) -> bool:
    """Advisory flag: pulse no broader than the natural linewidth."""
    if not pulse_width > 0:
        raise ValueError("pulse width must be positive")
    return pulse_width <= 1.0


def classify_regime(pulse_width: float, gamma_at: float, b_sigma: float,
                    margin: float = DEFAULT_MARGIN) -> RegimeReport:
    """Check a pulse against both write-in inequalities.

    The upper bound (dispersion still acts on the pulse) is
    pulse_width < gamma_at * b_sigma / margin; the lower bound (spontaneous
    Raman loss negligible) is pulse_width > margin * gamma_at * sqrt(b_sigma).
    All widths in units of gamma.
    """
    for name, v in (("pulse_width", pulse_width), ("gamma_at", gamma_at), ("b_sigma", b_sigma)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if not margin > 1:
        raise ValueError(f"margin factor must exceed 1, got {margin}")
    upper = gamma_at * b_sigma / margin
    lower = margin * gamma_at * math.sqrt(b_sigma)
    dispersive_ok = pulse_width < upper
    loss_ok = pulse_width > lower
    if not storable_window_nonempty(b_sigma, margin):
        verdict = Verdict.INCONSISTENT
    elif dispersive_ok and loss_ok:
        verdict = Verdict.STORABLE
    elif not dispersive_ok:
        verdict = Verdict.TOO_BROAD_DISPERSIONLESS
    else:
        verdict = Verdict.TOO_NARROW_LOSSY
    return RegimeReport(
        pulse_width=pulse_width, gamma_at=gamma_at, b_sigma=b_sigma, margin=margin,
        dispersive_margin=pulse_width / (gamma_at * b_sigma),
        loss_margin=pulse_width / (gamma_at * math.sqrt(b_sigma)),
        dispersive_ok=dispersive_ok, loss_ok=loss_ok, verdict=verdict,
        optimal_bandwidth=check_optimal_bandwidth(pulse_width),
    )


def write_in_map(photons, efficiency: float, rng: np.random.Generator):
    """Atoms transferred to the signal level: binomial thinning of the photon count.

    Works elementwise on arrays.  efficiency = 1 is the identity.
    """
    if not 0.0 <= efficiency <= 1.0:
        raise ValueError("efficiency must lie in [0, 1]")
    photons = np.asarray(photons)
    if np.any(photons < 0):
        raise ValueError("photon counts must be nonnegative")
    if efficiency == 1.0:
        out = photons.astype(np.int64)
    else:
        out = np.asarray(rng.binomial(photons.astype(np.int64), efficiency))
    return int(out) if out.ndim == 0 else out
