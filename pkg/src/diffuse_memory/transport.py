"""Monte-Carlo transport of signal photons through the Gaussian cloud.

Photons enter as a pencil beam along +z (or start at a point inside), fly
free paths sampled from the exact (error-function) optical depth of the Gaussian density, scatter
isotropically and are followed until they escape.  Lengths inside the kernels
are in units of the cloud radius r0.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .medium import GaussianCloud, MediumModel, SPEED_OF_LIGHT, cross_section
from .rng import trajectory_generator

_SQRT2 = math.sqrt(2.0)
_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
_ERFC_Z_MAX = 26.5  # erfc(26.5) ~ 1e-307
MAX_ROOT_ITERATIONS = 200
DEFAULT_SUPPORT_RADIUS = 8.0  # in r0; density there is exp(-32) of peak
DEFAULT_MAX_EVENTS = 1_000_000


class RootSolveError(RuntimeError):
    pass


@numba.njit(cache=True)
def _erfc_inverse(target):
    """z >= 0 with erfc(z) = target for target in (0, 1]."""
    if target >= 1.0:
        return 0.0
    if target <= math.erfc(_ERFC_Z_MAX):
        return _ERFC_Z_MAX
    lo = 0.0
    hi = _ERFC_Z_MAX
    log_target = math.log(target)
    z = math.sqrt(-log_target)
    if z >= hi:
        z = 0.5 * (lo + hi)
    for _ in range(MAX_ROOT_ITERATIONS):
        e = math.erfc(z)
        h = math.log(e) - log_target
        if h > 0.0:
            lo = z
        else:
            hi = z
        slope = -_TWO_OVER_SQRT_PI * math.exp(-z * z) / e
        z_new = z - h / slope
        if not (lo < z_new < hi):
            z_new = 0.5 * (lo + hi)
        if abs(z_new - z) <= 1e-14 * max(1.0, z) or hi - lo <= 1e-15 * max(1.0, z):
            return z_new
        z = z_new
    raise RuntimeError("free-path root solve did not converge")


@numba.njit(cache=True)
def _erf_difference(a, b):
    if a >= 0.0 and b >= 0.0:
        return math.erfc(a) - math.erfc(b)
    if a <= 0.0 and b <= 0.0:
        return math.erfc(-b) - math.erfc(-a)
    return math.erf(b) - math.erf(a)


@numba.njit(cache=True)
def _reduced_column(px, py, pz, ux, uy, uz, s):
    """Integral of exp(-|x|^2/2) along the ray over [0, s] (r0 units)."""
    s_c = px * ux + py * uy + pz * uz
    rho2 = max(px * px + py * py + pz * pz - s_c * s_c, 0.0)
    return math.exp(-0.5 * rho2) * _SQRT_HALF_PI * _erf_difference(s_c / _SQRT2, (s + s_c) / _SQRT2)


@numba.njit(cache=True)
def _free_path(px, py, pz, ux, uy, uz, tau_star, kappa):
    """Distance s at which the optical depth reaches tau_star.

    kappa = sigma * n0 * r0.  Returns (s, escaped); s is inf on escape.
    """
    s_c = px * ux + py * uy + pz * uz
    rho2 = max(px * px + py * py + pz * pz - s_c * s_c, 0.0)
    amp = kappa * math.exp(-0.5 * rho2) * _SQRT_HALF_PI
    if tau_star <= 0.0:
        return 0.0, False
    if amp <= 0.0:
        return math.inf, True
    t = tau_star / amp
    yc = s_c / _SQRT2
    if yc >= 0.0:
        rest = math.erfc(yc) - t
        if rest <= 0.0:
            return math.inf, True
        y = _erfc_inverse(rest)
    elif t <= math.erf(-yc):
        # root before the point of closest approach
        y = -_erfc_inverse(math.erfc(-yc) + t)
    else:
        rest = math.erfc(yc) - t
        if rest <= 0.0:
            return math.inf, True
        y = _erfc_inverse(rest)
    return max(_SQRT2 * y - s_c, 0.0), False


@numba.njit(cache=True)
def _exit_length(px, py, pz, ux, uy, uz, radius):
    s_c = px * ux + py * uy + pz * uz
    p2 = px * px + py * py + pz * pz
    rho2 = max(p2 - s_c * s_c, 0.0)
    if rho2 >= radius * radius:
        return 0.0
    return max(-s_c + math.sqrt(radius * radius - rho2), 0.0)


@numba.njit(cache=True)
def _walk(gen, px, py, pz, ux, uy, uz, kappa, radius, max_events, isotropic_start, seg_buf, want, peel_buf):
    """Follow one photon until escape or until max_events scatterings.

    Returns (order, length, column, inner, exit ux, uy, uz, capped, npeel).
    ``inner`` is the path between scattering events (the source point counts
    as an event when ``isotropic_start``).  Segments go into seg_buf (start
    xyz, direction xyz, length) while rows last.  At every event whose order
    k has want[k] set, a forward (+z) peel-off record (k, length, column,
    exp(-tau_forward)) is written to peel_buf.
    """
    if isotropic_start:
        cos_t = 2.0 * gen.random() - 1.0
        phi = 2.0 * math.pi * gen.random()
        sin_t = math.sqrt(max(1.0 - cos_t * cos_t, 0.0))
        ux = sin_t * math.cos(phi)
        uy = sin_t * math.sin(phi)
        uz = cos_t
    order = 0
    length = 0.0
    column = 0.0
    inner = 0.0
    npeel = 0
    nseg = seg_buf.shape[0]
    nwant = want.shape[0]
    while True:
        tau_star = gen.standard_exponential()
        s, escaped = _free_path(px, py, pz, ux, uy, uz, tau_star, kappa)
        if escaped:
            s = _exit_length(px, py, pz, ux, uy, uz, radius)
            column += _reduced_column(px, py, pz, ux, uy, uz, s)
        else:
            column += tau_star / kappa
            if order > 0 or isotropic_start:
                inner += s
        if order < nseg:
            seg_buf[order, 0] = px
            seg_buf[order, 1] = py
            seg_buf[order, 2] = pz
            seg_buf[order, 3] = ux
            seg_buf[order, 4] = uy
            seg_buf[order, 5] = uz
            seg_buf[order, 6] = s
        length += s
        if escaped:
            return order, length, column, inner, ux, uy, uz, False, npeel
        px += s * ux
        py += s * uy
        pz += s * uz
        order += 1
        if order < nwant and want[order]:
            s_f = _exit_length(px, py, pz, 0.0, 0.0, 1.0, radius)
            peel_buf[npeel, 0] = order
            peel_buf[npeel, 1] = length + s_f
            peel_buf[npeel, 2] = column + _reduced_column(px, py, pz, 0.0, 0.0, 1.0, s_f)
            peel_buf[npeel, 3] = math.exp(-kappa * _reduced_column(px, py, pz, 0.0, 0.0, 1.0, math.inf))
            npeel += 1
        if order >= max_events:
            return order, length, column, inner, ux, uy, uz, True, npeel
        cos_t = 2.0 * gen.random() - 1.0
        phi = 2.0 * math.pi * gen.random()
        sin_t = math.sqrt(max(1.0 - cos_t * cos_t, 0.0))
        ux = sin_t * math.cos(phi)
        uy = sin_t * math.sin(phi)
        uz = cos_t


@dataclass(frozen=True)
class FreeFlight:
    length: float  # m; inf on escape
    point: np.ndarray | None  # next scattering point, None on escape

    @property
    def escaped(self) -> bool:
        return self.point is None


def sample_free_path(position, direction, detuning, cloud: GaussianCloud, medium: MediumModel,
                     rng: np.random.Generator, tau_star: float | None = None,
                     homogeneous_density: float | None = None) -> FreeFlight:
    """Draw the next scattering point along a ray, or report escape.

    ``homogeneous_density`` replaces the Gaussian profile by a constant density
    (test harness for the r0 -> infinity limit).
    """
    position = np.asarray(position, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    if tau_star is None:
        tau_star = rng.standard_exponential()
    sigma = float(cross_section(detuning, medium))
    if homogeneous_density is not None:
        extinction = homogeneous_density * sigma
        if extinction <= 0:
            return FreeFlight(math.inf, None)
        s = tau_star / extinction
        return FreeFlight(s, position + s * direction)
    r0 = cloud.r0
    kappa = sigma * cloud.n0 * r0
    p = position / r0
    try:
        s, escaped = _free_path(p[0], p[1], p[2], direction[0], direction[1], direction[2],
                                float(tau_star), kappa)
    except RuntimeError as exc:
        raise RootSolveError(str(exc)) from exc
    if escaped:
        return FreeFlight(math.inf, None)
    return FreeFlight(s * r0, position + s * r0 * direction)


@numba.njit(cache=True)
def _free_path_batch(px, py, pz, ux, uy, uz, taus, kappa):
    n = taus.shape[0]
    out = np.empty(n)
    esc = np.empty(n, dtype=np.bool_)
    for i in range(n):
        out[i], esc[i] = _free_path(px, py, pz, ux, uy, uz, taus[i], kappa)
    return out, esc


def sample_free_paths(position, direction, detuning, cloud: GaussianCloud, medium: MediumModel,
                      rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` independent free-path draws along one ray.

    Returns (lengths in m, escaped flags); lengths are inf where escaped.
    """
    position = np.asarray(position, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    r0 = cloud.r0
    p = position / r0
    taus = rng.standard_exponential(int(n))
    try:
        s, esc = _free_path_batch(p[0], p[1], p[2], direction[0], direction[1], direction[2],
                                  taus, _kappa(detuning, cloud, medium))
    except RuntimeError as exc:
        raise RootSolveError(str(exc)) from exc
    return s * r0, esc


@dataclass(frozen=True)
class EntryRay:
    """Incident pencil beam entering the support sphere along +z."""

    impact: tuple[float, float] = (0.0, 0.0)  # (x, y) in units of r0

    def start(self, support_radius: float):
        x, y = self.impact
        rho2 = x * x + y * y
        if rho2 >= support_radius**2:
            raise ValueError("entry ray misses the cloud support")
        return np.array([x, y, -math.sqrt(support_radius**2 - rho2)]), np.array([0.0, 0.0, 1.0]), False


@dataclass(frozen=True)
class PointSource:
    """Photon released isotropically from a point inside the cloud (r0 units)."""

    position: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def start(self, support_radius: float):
        p = np.asarray(self.position, dtype=float)
        if p @ p >= support_radius**2:
            raise ValueError("point source lies outside the cloud support")
        return p, np.array([0.0, 0.0, 1.0]), True


def make_source(spec) -> EntryRay | PointSource:
    if isinstance(spec, (EntryRay, PointSource)):
        return spec
    if spec in (None, "beam"):
        return EntryRay()
    if spec == "center":
        return PointSource()
    raise ValueError(f"unknown source {spec!r}; use 'beam' or 'center'")


@dataclass
class Trajectory:
    segments: list[tuple[np.ndarray, np.ndarray, float]]  # (start m, direction, length m)
    order: int
    path_total: float  # m
    exit_direction: np.ndarray
    column: float  # density integrated along the path, 1/m^2
    capped: bool = False

    def __post_init__(self):
        if not self.capped and self.order != len(self.segments) - 1:
            raise ValueError("order must equal number of segments - 1")


def _kappa(detuning, cloud, medium):
    return float(cross_section(detuning, medium)) * cloud.n0 * cloud.r0


_NO_ORDERS = np.zeros(0, dtype=np.bool_)


def propagate_trajectory(detuning, cloud: GaussianCloud, medium: MediumModel, rng: np.random.Generator,
                         source=None, max_events: int = DEFAULT_MAX_EVENTS,
                         support_radius: float = DEFAULT_SUPPORT_RADIUS) -> Trajectory:
    """Full segment record of one photon random walk.

    ``rng`` is consumed exactly as the ensemble kernel consumes it, so with the
    stream of trajectory i this reproduces entry i of :func:`simulate_ensemble`.
    """
    p, u, iso = make_source(source).start(support_radius)
    kappa = _kappa(detuning, cloud, medium)
    state = rng.bit_generator.state
    rows = 1024
    peel = np.empty((0, 4))
    while True:
        buf = np.empty((rows, 7))
        out = _walk(rng, p[0], p[1], p[2], u[0], u[1], u[2], kappa, support_radius, max_events, iso,
                    buf, _NO_ORDERS, peel)
        order, length, column, _inner, ex, ey, ez, capped, _ = out
        if order < rows:
            break
        rows = max(2 * rows, order + 1)
        rng.bit_generator.state = state
    r0 = cloud.r0
    nseg = order if capped else order + 1
    segments = [(buf[i, :3] * r0, buf[i, 3:6].copy(), float(buf[i, 6] * r0)) for i in range(nseg)]
    return Trajectory(segments=segments, order=int(order), path_total=length * r0,
                      exit_direction=np.array([ex, ey, ez]), column=column * cloud.n0 * r0,
                      capped=bool(capped))


@dataclass
class TrajectoryEnsemble:
    """Per-trajectory summaries plus forward peel-off records.

    The spectral response of a path depends only on (order, length, column),
    so full segment lists are not kept.  ``peel`` rows are
    (trajectory index, order, length m, column 1/m^2, weight), where weight is
    exp(-tau) for leaving the cloud along +z from that scattering event.
    """

    order: np.ndarray
    path_length: np.ndarray  # m
    column: np.ndarray  # 1/m^2
    inner_length: np.ndarray  # m, path between scattering events
    exit_direction: np.ndarray  # (n, 3)
    capped: np.ndarray  # bool
    peel: np.ndarray
    detuning: float
    cloud: GaussianCloud
    medium: MediumModel
    seed: int
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.order)

    @property
    def valid(self) -> np.ndarray:
        return ~self.capped

    @property
    def n_capped(self) -> int:
        return int(self.capped.sum())

    def forward_mask(self, half_angle_deg: float = 10.0) -> np.ndarray:
        return self.exit_direction[:, 2] >= math.cos(math.radians(half_angle_deg))

    def time_of_flight(self, length=None) -> np.ndarray:
        """Geometric flight time in units of 1/gamma."""
        length = self.path_length if length is None else np.asarray(length)
        return length * self.medium.gamma / SPEED_OF_LIGHT


def _run_chunk(args):
    indices, seed, kappa, p, u, iso, radius, max_events, want = args
    n = len(indices)
    out = np.empty((n, 9))
    peels = []
    empty = np.empty((0, 7))
    peel_buf = np.empty((max(int(want.sum()), 1), 4))
    for k, i in enumerate(indices):
        gen = trajectory_generator(seed, i)
        order, length, column, inner, ex, ey, ez, capped, npeel = _walk(
            gen, p[0], p[1], p[2], u[0], u[1], u[2], kappa, radius, max_events, iso, empty, want, peel_buf)
        out[k] = (order, length, column, inner, ex, ey, ez, capped, npeel)
        if npeel:
            rows = np.empty((npeel, 5))
            rows[:, 0] = i
            rows[:, 1:] = peel_buf[:npeel]
            peels.append(rows)
    peel = np.concatenate(peels) if peels else np.empty((0, 5))
    return out, peel


def simulate_ensemble(n_trajectories: int, cloud: GaussianCloud, medium: MediumModel, detuning: float = 0.0,
                      seed: int = 0, source=None, max_events: int = DEFAULT_MAX_EVENTS,
                      support_radius: float = DEFAULT_SUPPORT_RADIUS, peel_orders=(),
                      workers: int = 1, chunk_size: int = 2000) -> TrajectoryEnsemble:
    """Run ``n_trajectories`` independent photon walks.

    Trajectory i uses the stream (seed, i), so the result does not depend on
    ``workers`` or ``chunk_size``.  ``peel_orders`` lists scattering orders for
    which forward peel-off records are collected.
    """
    if n_trajectories < 1:
        raise ValueError("need at least one trajectory")
    source = make_source(source)
    p, u, iso = source.start(support_radius)
    kappa = _kappa(detuning, cloud, medium)
    peel_orders = sorted({int(k) for k in peel_orders if int(k) > 0})
    want = np.zeros((peel_orders[-1] + 1) if peel_orders else 0, dtype=np.bool_)
    want[peel_orders] = True
    chunks = [np.arange(a, min(a + chunk_size, n_trajectories)) for a in range(0, n_trajectories, chunk_size)]
    jobs = [(c, seed, kappa, p, u, iso, support_radius, max_events, want) for c in chunks]
    workers = max(1, min(int(workers), len(jobs)))
    try:
        if workers == 1:
            parts = [_run_chunk(j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(_run_chunk, jobs))
    except RuntimeError as exc:
        raise RootSolveError(str(exc)) from exc
    data = np.concatenate([d for d, _ in parts])
    peel = np.concatenate([q for _, q in parts])
    r0 = cloud.r0
    peel[:, 2] *= r0
    peel[:, 3] *= cloud.n0 * r0
    return TrajectoryEnsemble(
        order=data[:, 0].astype(np.int64),
        path_length=data[:, 1] * r0,
        column=data[:, 2] * cloud.n0 * r0,
        inner_length=data[:, 3] * r0,
        exit_direction=data[:, 4:7].copy(),
        capped=data[:, 7].astype(bool),
        peel=peel,
        detuning=float(detuning),
        cloud=cloud,
        medium=medium,
        seed=int(seed),
        meta={"support_radius": support_radius, "max_events": max_events,
              "source": type(source).__name__, "peel_orders": peel_orders},
    )


@dataclass
class PathStatistics:
    n: int
    n_capped: int
    mean_order: float
    sem_order: float
    mean_path_length: float  # m, full path inside the support sphere
    sem_path_length: float
    mean_diffusive_length: float  # m, between scattering events
    sem_diffusive_length: float
    b_sigma: float  # n0 sigma0 <diffusive length>
    sem_b_sigma: float
    b_sigma_local: float  # sigma0 * density integrated along the full path
    sem_b_sigma_local: float
    b_sigma_lambda: float  # n0 (lambda/2pi)^2 <diffusive length>
    order_histogram: np.ndarray

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "order_histogram"}
        d["order_histogram"] = [int(c) for c in self.order_histogram]
        d["units"] = {"lengths": "m", "b_sigma": "dimensionless", "order": "scattering events"}
        return d


def _mean_sem(x):
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def path_statistics(ensemble: TrajectoryEnsemble) -> PathStatistics:
    """Sample means (with standard errors) of the path observables."""
    ok = ensemble.valid
    if not ok.any():
        raise ValueError("ensemble has no completed trajectories")
    sigma0 = ensemble.medium.sigma0
    n0 = ensemble.cloud.n0
    order = ensemble.order[ok]
    m_o, e_o = _mean_sem(order)
    m_l, e_l = _mean_sem(ensemble.path_length[ok])
    m_d, e_d = _mean_sem(ensemble.inner_length[ok])
    m_b, e_b = _mean_sem(ensemble.column[ok] * sigma0)
    lam = ensemble.medium.lambda_res
    return PathStatistics(
        n=int(ok.sum()), n_capped=ensemble.n_capped,
        mean_order=m_o, sem_order=e_o,
        mean_path_length=m_l, sem_path_length=e_l,
        mean_diffusive_length=m_d, sem_diffusive_length=e_d,
        b_sigma=n0 * sigma0 * m_d, sem_b_sigma=n0 * sigma0 * e_d,
        b_sigma_local=m_b, sem_b_sigma_local=e_b,
        b_sigma_lambda=float(n0 * (lam / (2 * math.pi)) ** 2 * m_d),
        order_histogram=np.bincount(order),
    )


def scaling_slope(b0_values, observable) -> float:
    """Log-log least-squares slope of an observable against b0."""
    return float(np.polyfit(np.log(np.asarray(b0_values, float)), np.log(np.asarray(observable, float)), 1)[0])
