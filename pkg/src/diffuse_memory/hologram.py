"""Truncated Fock-space model of the macroscopic singlet-type state of two
light beams and its record in four memory units.

Tensor axes follow the mode order (H1, V1, V2, H2), so the freshly built
state has amplitude Lambda_mn at index (m, n, m, n).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .protocol import write_in_map

MODES = ("H1", "V1", "V2", "H2")
H1, V1, V2, H2 = range(4)
DEFAULT_TAIL = 1e-8
LOG_SPACE_ORDER = 200
MAX_DENSE_ELEMENTS = 3_000_000


def lambda_coeff(m, n, nbar: float):
    """Schmidt coefficient (-1)^n nbar^((m+n)/2) / (1+nbar)^((m+n)/2+1)."""
    if nbar < 0:
        raise ValueError("nbar must be nonnegative")
    m = np.asarray(m)
    n = np.asarray(n)
    if np.any(m < 0) or np.any(n < 0):
        raise ValueError("photon numbers must be nonnegative")
    k = (m + n).astype(float)
    sign = np.where(n % 2 == 0, 1.0, -1.0)
    if nbar == 0:
        out = np.where(k == 0, 1.0, 0.0)
    else:
        t = nbar / (1 + nbar)
        with np.errstate(over="ignore", under="ignore"):
            direct = t ** (k / 2) / (1 + nbar)
            logged = np.exp(k / 2 * math.log(nbar) - (k / 2 + 1) * math.log1p(nbar))
        out = sign * np.where(k > LOG_SPACE_ORDER, logged, direct)
    return float(out) if out.ndim == 0 else out


def schmidt_tail(nbar: float, nmax: int) -> float:
    """Closed form of sum over m+n > nmax of Lambda_mn^2."""
    if nbar == 0:
        return 0.0
    t = nbar / (1 + nbar)
    # sum_{k>N} (k+1) t^k (1-t)^2
    return (nmax + 2) * t ** (nmax + 1) - (nmax + 1) * t ** (nmax + 2)


def schmidt_norm(nbar: float, nmax: int) -> float:
    """Closed form of sum over m+n <= nmax of Lambda_mn^2."""
    if nbar == 0:
        return 1.0
    return 1.0 - schmidt_tail(nbar, nmax)


def min_nmax(nbar: float, tail: float = DEFAULT_TAIL) -> int:
    nmax = 0
    while schmidt_tail(nbar, nmax) >= tail:
        nmax += 1
    return nmax


@dataclass(frozen=True)
class SchmidtSpec:
    nbar: float
    nmax: int | None = None  # default: smallest truncation meeting the tail bound
    tail_tolerance: float = DEFAULT_TAIL

    def __post_init__(self):
        if not self.nbar >= 0:
            raise ValueError("nbar must be nonnegative")
        if self.nmax is None:
            object.__setattr__(self, "nmax", min_nmax(self.nbar, self.tail_tolerance))
        if self.nmax < 0:
            raise ValueError("nmax must be nonnegative")

    @property
    def tail(self) -> float:
        return schmidt_tail(self.nbar, self.nmax)


class FourModeFock:
    """Immutable four-mode state with each occupation in [0, nmax].

    Held either as a dense (nmax+1)^4 amplitude tensor or, for states of the
    paired form sum c_mn |m, n, m, n>, as the (nmax+1)^2 matrix c.
    """

    def __init__(self, nmax: int, dense: np.ndarray | None = None, paired: np.ndarray | None = None,
                 renormalization: float = 1.0):
        if (dense is None) == (paired is None):
            raise ValueError("give exactly one of dense or paired amplitudes")
        self.nmax = int(nmax)
        d = self.nmax + 1
        if dense is not None:
            dense = np.array(dense, dtype=complex)
            if dense.shape != (d, d, d, d):
                raise ValueError(f"dense amplitudes must have shape {(d,) * 4}")
            dense.flags.writeable = False
        if paired is not None:
            paired = np.array(paired, dtype=complex)
            if paired.shape != (d, d):
                raise ValueError(f"paired amplitudes must have shape {(d, d)}")
            paired.flags.writeable = False
        self._dense = dense
        self._paired = paired
        self.renormalization = renormalization

    @property
    def is_paired(self) -> bool:
        return self._paired is not None

    @property
    def paired(self) -> np.ndarray:
        if self._paired is None:
            raise ValueError("state is not stored in paired form")
        return self._paired

    @property
    def amplitudes(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense
        d = self.nmax + 1
        if d**4 > MAX_DENSE_ELEMENTS:
            raise MemoryError(f"dense tensor with nmax={self.nmax} is too large")
        out = np.zeros((d,) * 4, dtype=complex)
        m, n = np.indices((d, d))
        out[m, n, m, n] = self._paired
        out.flags.writeable = False
        return out

    def norm(self) -> float:
        a = self._paired if self._paired is not None else self._dense
        return float(np.sqrt(np.sum(np.abs(a) ** 2)))

    def beam_total_bound(self) -> int:
        """Largest per-beam photon total carrying amplitude."""
        if self._paired is not None:
            m, n = np.nonzero(self._paired)
            return int((m + n).max()) if len(m) else 0
        idx = np.nonzero(self._dense)
        if not len(idx[0]):
            return 0
        return int(max((idx[H1] + idx[V1]).max(), (idx[V2] + idx[H2]).max()))


def vacuum(nmax: int = 0) -> FourModeFock:
    c = np.zeros((nmax + 1, nmax + 1))
    c[0, 0] = 1.0
    return FourModeFock(nmax, paired=c)


def fock_state(occupations, nmax: int | None = None) -> FourModeFock:
    """Number state |n_H1, n_V1, n_V2, n_H2>."""
    occupations = tuple(int(k) for k in occupations)
    if len(occupations) != 4 or min(occupations) < 0:
        raise ValueError("need four nonnegative occupations")
    nmax = max(occupations) if nmax is None else nmax
    d = nmax + 1
    a = np.zeros((d,) * 4, dtype=complex)
    a[occupations] = 1.0
    return FourModeFock(nmax, dense=a)


def build_state(spec: SchmidtSpec) -> FourModeFock:
    """Paired-form singlet-type state with m + n <= nmax, renormalized.

    ``renormalization`` on the result is the norm before rescaling.
    """
    if spec.tail >= spec.tail_tolerance:
        raise ValueError(
            f"truncation tail {spec.tail:.3e} exceeds {spec.tail_tolerance:.1e}; "
            f"use nmax >= {min_nmax(spec.nbar, spec.tail_tolerance)}")
    d = spec.nmax + 1
    m, n = np.indices((d, d))
    c = np.where(m + n <= spec.nmax, lambda_coeff(m, n, spec.nbar), 0.0)
    norm = math.sqrt(float(np.sum(c**2)))
    return FourModeFock(spec.nmax, paired=c / norm, renormalization=norm)


@dataclass(frozen=True)
class PolarizationBasis:
    """Orthogonal elliptical polarization pair reached by an SU(2) rotation of (H, V)."""

    theta: float = 0.0
    phi: float = 0.0

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        e = complex(math.cos(self.phi), math.sin(self.phi))
        return np.array([[c, -s / e], [e * s, c]], dtype=complex)


@lru_cache(maxsize=4096)
def _block_cached(u_key, total):
    u = np.array(u_key, dtype=complex).reshape(2, 2)
    return _two_mode_block(u, total)


def _two_mode_block(u: np.ndarray, total: int) -> np.ndarray:
    """Matrix of the passive two-mode unitary on the span of |k, total-k>.

    Uses U a_i^dag U^dag = sum_j u[j, i] a_j^dag; rows/columns are indexed by
    the occupation of the first mode.
    """
    u11, u12, u21, u22 = u[0, 0], u[0, 1], u[1, 0], u[1, 1]
    lf = gammaln(np.arange(total + 1) + 1.0)  # log factorials
    out = np.zeros((total + 1, total + 1), dtype=complex)
    for k in range(total + 1):
        for p in range(k + 1):
            cp = math.comb(k, p) * u11**p * u21 ** (k - p)
            for q in range(total - k + 1):
                j = p + q
                cq = math.comb(total - k, q) * u12**q * u22 ** (total - k - q)
                scale = math.exp(0.5 * (lf[j] + lf[total - j] - lf[k] - lf[total - k]))
                out[j, k] += cp * cq * scale
    return out


def two_mode_block(u, total: int) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    return _block_cached(tuple(u.ravel().tolist()), int(total))


def _rotate_pair(tensor: np.ndarray, u: np.ndarray, nmax: int) -> np.ndarray:
    """Apply u to the mode pair on axes (0, 1) of a dense tensor."""
    out = np.zeros_like(tensor)
    for total in range(2 * nmax + 1):
        k = np.arange(max(0, total - nmax), min(total, nmax) + 1)
        block = tensor[k, total - k]
        if total > nmax:
            if np.any(block != 0):
                raise ValueError("state has beam photon totals above nmax; rotation would not be exact")
            continue
        out[k, total - k] = np.tensordot(two_mode_block(u, total), block, axes=1)
    return out


def rotate_basis(state: FourModeFock, basis1: PolarizationBasis, basis2: PolarizationBasis) -> FourModeFock:
    """Re-express the state in rotated polarization bases of beam 1 and beam 2.

    basis1 acts on (H1, V1), basis2 on (H2, V2).  Per-beam photon number is
    conserved, so the result is exact whenever every beam total is <= nmax.
    """
    a = np.array(state.amplitudes)
    n = state.nmax
    a = _rotate_pair(a, basis1.matrix, n)
    # bring (H2, V2) to the front: axes order (H2, V2, H1, V1)
    b = a.transpose(H2, V2, H1, V1)
    b = _rotate_pair(np.ascontiguousarray(b), basis2.matrix, n)
    a = b.transpose(2, 3, 1, 0)
    norm = math.sqrt(float(np.sum(np.abs(a) ** 2)))
    return FourModeFock(n, dense=a / norm)


def joint_number_distribution(state: FourModeFock) -> np.ndarray:
    """P(n_H1, n_V1, n_V2, n_H2) as a dense tensor in MODES order."""
    return np.abs(state.amplitudes) ** 2


def pair_distribution(state: FourModeFock) -> np.ndarray:
    """P(m, n) of the outcome (m, n, m, n) for a paired-form state."""
    return np.abs(state.paired) ** 2


def sample_outcome(state: FourModeFock, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Occupation quadruple(s) (n_H1, n_V1, n_V2, n_H2) drawn from |amplitude|^2."""
    d = state.nmax + 1
    if state.is_paired:
        p = pair_distribution(state).ravel()
        flat = rng.choice(p.size, size=size, p=p / p.sum())
        m, n = np.unravel_index(flat, (d, d))
        out = np.stack([m, n, m, n], axis=-1)
    else:
        p = joint_number_distribution(state).ravel()
        flat = rng.choice(p.size, size=size, p=p / p.sum())
        out = np.stack(np.unravel_index(flat, (d,) * 4), axis=-1)
    return out.astype(np.int64)


def beam_total_distribution(state: FourModeFock) -> np.ndarray:
    """Distribution of n_H1 + n_V1 (photons in beam 1)."""
    d = state.nmax + 1
    out = np.zeros(2 * d - 1)
    if state.is_paired:
        p = pair_distribution(state)
        m, n = np.indices((d, d))
        np.add.at(out, (m + n).ravel(), p.ravel())
    else:
        p = joint_number_distribution(state).sum(axis=(V2, H2))
        m, n = np.indices((d, d))
        np.add.at(out, (m + n).ravel(), p.ravel())
    return out


@dataclass
class MemoryUnitSet:
    """Atoms moved to the signal level in the four clouds, order (H1, V1, V2, H2).

    ``atoms`` is a length-4 vector or an (n, 4) batch.
    """

    atoms: np.ndarray
    efficiency: float = 1.0

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.int64)
        if self.atoms.shape[-1] != 4 or np.any(self.atoms < 0):
            raise ValueError("atoms must hold four nonnegative counts per record")

    def anticorrelated(self) -> np.ndarray:
        a = self.atoms
        return (a[..., H1] == a[..., V2]) & (a[..., V1] == a[..., H2])


def store_hologram(outcomes, efficiency: float, rng: np.random.Generator | None = None) -> MemoryUnitSet:
    """Map photon numbers of each mode onto atom numbers of its memory unit."""
    outcomes = np.asarray(outcomes)
    if efficiency < 1.0 and rng is None:
        raise ValueError("an rng is needed for efficiency < 1")
    atoms = write_in_map(outcomes, efficiency, rng)
    return MemoryUnitSet(np.asarray(atoms), efficiency)


def thinned_correlation(photons, efficiency: float) -> float:
    """Predicted Corr between two binomially thinned copies of the same count m.

    Cov = eta^2 Var(m), Var(thinned) = eta^2 Var(m) + eta (1-eta) E[m].
    """
    m = np.asarray(photons, dtype=float)
    var, mean = m.var(), m.mean()
    eta = efficiency
    return eta**2 * var / (eta**2 * var + eta * (1 - eta) * mean)


def write_tensor_text(state: FourModeFock, path) -> None:
    """One line per nonzero amplitude: n_H1 n_V1 n_V2 n_H2 re im."""
    with open(path, "w") as fh:
        fh.write(tensor_text(state))


def tensor_text(state: FourModeFock) -> str:
    lines = [f"# modes {' '.join(MODES)}", f"# nmax {state.nmax}"]
    if state.is_paired:
        c = state.paired
        entries = ((m, n, m, n, c[m, n]) for m, n in zip(*np.nonzero(c)))
    else:
        a = state.amplitudes
        entries = (tuple(idx) + (a[idx],) for idx in zip(*np.nonzero(a)))
    for i, j, k, l, z in entries:
        lines.append(f"{i} {j} {k} {l} {z.real:.17g} {z.imag:.17g}")
    return "\n".join(lines) + "\n"


def read_tensor_text(path) -> FourModeFock:
    nmax = None
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts and parts[0] == "nmax":
                    nmax = int(parts[1])
                continue
            f = line.split()
            entries.append((tuple(int(x) for x in f[:4]), complex(float(f[4]), float(f[5]))))
    if nmax is None:
        nmax = max((max(i) for i, _ in entries), default=0)
    if all(i[H1] == i[V2] and i[V1] == i[H2] for i, _ in entries):
        c = np.zeros((nmax + 1,) * 2, dtype=complex)
        for idx, z in entries:
            c[idx[H1], idx[V1]] = z
        return FourModeFock(nmax, paired=c)
    a = np.zeros((nmax + 1,) * 4, dtype=complex)
    for idx, z in entries:
        a[idx] = z
    return FourModeFock(nmax, dense=a)
