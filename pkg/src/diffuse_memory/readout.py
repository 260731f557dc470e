"""Interferometric readout of stored atom numbers and the pair-sector Bell test.

A Mach-Zehnder probe picks up a phase xi per atom; the balanced difference
current is i_minus = i_bar * xi * n plus Gaussian shot noise of standard
deviation i_bar * exp(-r) / sqrt(N_p).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .hologram import (H1, H2, V1, V2, FourModeFock, MemoryUnitSet, PolarizationBasis,
                       SchmidtSpec, build_state, joint_number_distribution, rotate_basis)

LINEAR_LIMIT = 0.3
MAX_CHSH_NBAR = 0.2
MIN_PAIRS = 100
OPTIMAL_CHSH_ANGLES = (0.0, math.pi / 4, math.pi / 8, 3 * math.pi / 8)


@dataclass(frozen=True)
class InterferometerConfig:
    xi: float = 1e-3  # phase per atom [rad]
    probe_photons: float = 1e6
    squeeze_r: float = 0.0
    mean_current: float = 1.0

    def __post_init__(self):
        if not 0 < self.xi < 0.1:
            raise ValueError(f"xi must satisfy 0 < xi < 0.1, got {self.xi}")
        if not self.probe_photons > 0:
            raise ValueError("probe_photons must be positive")
        if not self.squeeze_r >= 0:
            raise ValueError("squeeze_r must be nonnegative")
        if not self.mean_current > 0:
            raise ValueError("mean_current must be positive")

    @property
    def current_noise(self) -> float:
        """Std of the difference current per shot."""
        return self.mean_current * math.exp(-self.squeeze_r) / math.sqrt(self.probe_photons)

    @property
    def atom_noise(self) -> float:
        """Std of a single-shot atom-number estimate."""
        return phase_sensitivity(self) / self.xi


@dataclass(frozen=True)
class MeasurementRecord:
    unit_id: int | str
    raw_current: float  # mean difference current over the samples
    n_hat: float
    sigma_n: float
    n_samples: int = 1

    def __post_init__(self):
        if not self.sigma_n > 0:
            raise ValueError("sigma_n must be positive")


def phase_sensitivity(cfg: InterferometerConfig) -> float:
    return math.exp(-cfg.squeeze_r) / math.sqrt(cfg.probe_photons)


def mz_signal(n_atoms, cfg: InterferometerConfig, rng: np.random.Generator | None = None,
              size=None, noiseless: bool = False):
    """Difference current for the given atom number(s).

    ``size`` draws repeated shots; the output shape is broadcast(n_atoms, size).
    """
    n = np.asarray(n_atoms, dtype=float)
    if np.any(n < 0):
        raise ValueError("atom numbers must be nonnegative")
    if np.any(cfg.xi * n >= LINEAR_LIMIT):
        raise ValueError(f"xi * n_atoms must stay below {LINEAR_LIMIT} (linear regime)")
    signal = cfg.mean_current * cfg.xi * n
    if size is not None:
        signal = np.broadcast_to(signal, size)
    if noiseless:
        out = np.array(signal, dtype=float)
    else:
        if rng is None:
            raise ValueError("an rng is needed for noisy readout")
        out = signal + rng.normal(0.0, cfg.current_noise, size=np.shape(signal))
    return float(out) if np.ndim(out) == 0 else out


def estimate_atoms(samples, cfg: InterferometerConfig, unit_id=0) -> MeasurementRecord:
    """Mean-current estimator of the atom number with its standard error.

    With fewer than two samples, or identical samples, the standard error
    falls back to the model value atom_noise / sqrt(#samples).
    """
    x = np.atleast_1d(np.asarray(samples, dtype=float))
    if x.size < 1:
        raise ValueError("need at least one sample")
    if cfg.xi == 0:
        raise ValueError("xi must be nonzero")
    scale = cfg.mean_current * cfg.xi
    k = x.size
    mean = float(np.mean(x))
    std = float(np.std(x, ddof=1)) if k > 1 else 0.0
    sigma = std / (scale * math.sqrt(k)) if std > 0 else cfg.atom_noise / math.sqrt(k)
    return MeasurementRecord(unit_id, mean, mean / scale, sigma, k)


def _pearson(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Correlation matrix of the columns and the mask of undefined entries."""
    c = x - x.mean(axis=0)
    k = c.shape[1]
    # pairwise dots so identical columns give exactly cov == var
    cov = np.array([[np.dot(c[:, i], c[:, j]) for j in range(k)] for i in range(k)])
    var = np.diag(cov).copy()
    undefined = (var[:, None] <= 0) | (var[None, :] <= 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = cov / np.sqrt(np.outer(var, var))
    r[undefined] = np.nan
    return np.clip(r, -1.0, 1.0), undefined


@dataclass
class CorrelationReport:
    matrix: np.ndarray
    errors: np.ndarray
    undefined: np.ndarray
    estimates: np.ndarray  # (repetitions, 4) estimated atom numbers
    sigma_n: float

    def pair(self, i: int, j: int) -> float:
        return float(self.matrix[i, j])

    def to_dict(self) -> dict:
        def clean(a):
            return [[None if np.isnan(v) else float(v) for v in row] for row in a]
        return {
            "modes": ["H1", "V1", "V2", "H2"],
            "correlation": clean(self.matrix),
            "bootstrap_error": clean(self.errors),
            "undefined": self.undefined.tolist(),
            "repetitions": int(self.estimates.shape[0]),
            "sigma_n": self.sigma_n,
        }


def correlation_recovery(units: MemoryUnitSet, cfg: InterferometerConfig, rng: np.random.Generator,
                         samples_per_unit: int = 1, noiseless: bool = False,
                         n_bootstrap: int = 200) -> CorrelationReport:
    """Read every stored record and correlate the estimated atom numbers."""
    atoms = np.atleast_2d(units.atoms)
    reps = atoms.shape[0]
    if reps < 2:
        raise ValueError("need at least two repetitions")
    k = int(samples_per_unit)
    currents = mz_signal(atoms[..., None], cfg, rng, size=atoms.shape + (k,), noiseless=noiseless)
    est = currents.mean(axis=-1) / (cfg.mean_current * cfg.xi)
    matrix, undefined = _pearson(est)
    boot = np.empty((n_bootstrap, 4, 4))
    for b in range(n_bootstrap):
        boot[b] = _pearson(est[rng.integers(0, reps, reps)])[0]
    with np.errstate(invalid="ignore"), warnings.catch_warnings():
        # all-NaN entries (undefined correlations) stay NaN
        warnings.simplefilter("ignore", RuntimeWarning)
        errors = np.nanstd(boot, axis=0) if n_bootstrap > 1 else np.full((4, 4), np.nan)
    errors[undefined] = np.nan
    sigma = 0.0 if noiseless else cfg.atom_noise / math.sqrt(k)
    return CorrelationReport(matrix, errors, undefined, est, sigma)


def attenuated_correlation(var_m: float, sigma_n: float) -> float:
    """Expected Corr of two noisy readouts of the same count with variance var_m."""
    return var_m / (var_m + sigma_n**2)


# --- Bell test on the one-pair sector -------------------------------------

def _as_basis(b) -> PolarizationBasis:
    return b if isinstance(b, PolarizationBasis) else PolarizationBasis(float(b), 0.0)


def pair_table(state: FourModeFock, basis1, basis2) -> np.ndarray:
    """Exact post-selected 2x2 table P(beam-1 outcome, beam-2 outcome).

    Outcome 0 is the first (H-like) mode of the rotated basis, 1 the second.
    """
    rot = rotate_basis(state, _as_basis(basis1), _as_basis(basis2))
    a = rot.amplitudes
    if rot.nmax < 1:
        raise ValueError("state has no one-photon sector")
    t = np.array([[a[1, 0, 0, 1], a[1, 0, 1, 0]],
                  [a[0, 1, 0, 1], a[0, 1, 1, 0]]])
    p = np.abs(t) ** 2
    total = p.sum()
    if total <= 0:
        raise ValueError("one-pair sector is empty")
    return p / total


def correlation_from_table(p: np.ndarray) -> float:
    return float(p[0, 0] + p[1, 1] - p[0, 1] - p[1, 0])


def chsh_from_correlations(e_ab, e_abp, e_apb, e_apbp) -> float:
    return abs(e_ab - e_abp + e_apb + e_apbp)


def _settings(angles):
    a, ap, b, bp = (_as_basis(x) for x in angles)
    return {"ab": (a, b), "ab'": (a, bp), "a'b": (ap, b), "a'b'": (ap, bp)}


def chsh_exact(state: FourModeFock, angles=OPTIMAL_CHSH_ANGLES) -> float:
    e = {k: correlation_from_table(pair_table(state, *v)) for k, v in _settings(angles).items()}
    return chsh_from_correlations(e["ab"], e["ab'"], e["a'b"], e["a'b'"])


def singlet_correlation(theta_a: float, theta_b: float) -> float:
    return -math.cos(2 * (theta_a - theta_b))


@dataclass
class ChshResult:
    S: float
    standard_error: float
    correlations: dict
    correlation_errors: dict
    pairs: dict
    shots: int
    exact_S: float
    nbar: float | None = None

    @property
    def violation_sigma(self) -> float:
        return (self.S - 2.0) / self.standard_error

    def to_dict(self) -> dict:
        return {
            "S": self.S, "standard_error": self.standard_error,
            "exact_S": self.exact_S, "tsirelson": 2 * math.sqrt(2),
            "correlations": self.correlations, "correlation_errors": self.correlation_errors,
            "pairs": self.pairs, "shots_per_setting": self.shots, "nbar": self.nbar,
            "violates_classical_bound": bool(self.S - 3 * self.standard_error > 2.0),
        }


def _postselected_counts(p_dense: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Sample full outcomes and keep those with one photon per beam."""
    d = p_dense.shape[0]
    p = p_dense.ravel()
    flat = rng.choice(p.size, size=shots, p=p / p.sum())
    o = np.stack(np.unravel_index(flat, (d,) * 4), axis=-1)
    keep = (o[:, H1] + o[:, V1] == 1) & (o[:, H2] + o[:, V2] == 1)
    o = o[keep]
    # outcome index: 0 if the photon is in the first rotated mode, 1 otherwise
    i = o[:, V1]
    j = o[:, V2]
    counts = np.zeros((2, 2), dtype=np.int64)
    np.add.at(counts, (i, j), 1)
    return counts


def chsh_test(nbar: float, angles=OPTIMAL_CHSH_ANGLES, shots: int = 50_000,
              rng: np.random.Generator | None = None, state: FourModeFock | None = None,
              nmax: int | None = None) -> ChshResult:
    """Sampled CHSH statistic on post-selected single pairs.

    ``state`` overrides the singlet-type source (used for separable-state
    checks); ``shots`` is the number of raw events per setting.
    """
    if rng is None:
        raise ValueError("an rng is required")
    if state is None:
        if not 0 < nbar <= MAX_CHSH_NBAR:
            raise ValueError(f"nbar must lie in (0, {MAX_CHSH_NBAR}] for the rare-pair regime")
        state = build_state(SchmidtSpec(nbar, nmax))
    e, err, pairs = {}, {}, {}
    for key, (b1, b2) in _settings(angles).items():
        rot = rotate_basis(state, b1, b2)
        counts = _postselected_counts(joint_number_distribution(rot), int(shots), rng)
        n = int(counts.sum())
        if n < MIN_PAIRS:
            raise ValueError(f"only {n} post-selected pairs for setting {key}; increase shots")
        ev = (counts[0, 0] + counts[1, 1] - counts[0, 1] - counts[1, 0]) / n
        e[key] = float(ev)
        err[key] = math.sqrt(max(1.0 - ev**2, 1.0 / n) / n)
        pairs[key] = n
    s = chsh_from_correlations(e["ab"], e["ab'"], e["a'b"], e["a'b'"])
    se = math.sqrt(sum(v**2 for v in err.values()))
    return ChshResult(s, se, e, err, pairs, int(shots), chsh_exact(state, angles), nbar)
