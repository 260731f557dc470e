"""Coherent spectral bookkeeping along Monte-Carlo paths and the resulting
order-resolved exit pulse profiles.

Each path multiplies the incident spectrum by

    A(D) = exp(i D t_flight) * exp(i (2 pi / k^2) Re chi(D) N_col) * f(D)^N,

with D the detuning (gamma units), N_col the density integrated along the
path and f the per-event scattering amplitude.  Extinction is already in the
event sampling, so segments only contribute the dispersive phase.  Time is in
units of 1/gamma.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .medium import SPEED_OF_LIGHT, MediumModel, cross_section, normalized_response
from .transport import Trajectory, TrajectoryEnsemble, _reduced_column

DEFAULT_POINTS = 2**12
DEFAULT_SPAN_WIDTHS = 64
EDGE_FRACTION = 0.01


class AliasingError(RuntimeError):
    """Profile energy reaches the end of the periodic time window."""


@dataclass(frozen=True)
class PulseSpectrum:
    """Pulse spectrum on a uniform detuning grid.

    ``shape='flat'`` is a flat top over [center - width/2, center + width/2];
    ``shape='gaussian'`` has spectral intensity FWHM equal to ``width``.
    """

    center: float = 0.0
    width: float = 1.0
    n_points: int = DEFAULT_POINTS
    span: float | None = None  # default: 64 pulse widths
    t_in: float | None = None  # incident peak position; default: 1/8 of the window
    shape: str = "flat"

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("pulse width must be positive")
        if self.shape not in ("flat", "gaussian"):
            raise ValueError(f"unknown pulse shape {self.shape!r}")
        if self.n_points < 16:
            raise ValueError("n_points too small")
        lo, hi = self.support()
        if self.grid_span < 1.05 * (hi - lo):
            raise ValueError("frequency grid does not cover the pulse spectrum")

    @property
    def grid_span(self) -> float:
        return self.span if self.span is not None else DEFAULT_SPAN_WIDTHS * self.width

    @property
    def step(self) -> float:
        return self.grid_span / self.n_points

    @property
    def detunings(self) -> np.ndarray:
        return self.center + (np.arange(self.n_points) - self.n_points // 2) * self.step

    @property
    def window(self) -> float:
        return 2 * math.pi / self.step

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_points) * (self.window / self.n_points)

    @property
    def t_start(self) -> float:
        return self.window / 8 if self.t_in is None else self.t_in

    def field(self) -> np.ndarray:
        """Spectral amplitude normalized to sum |E|^2 dD = 1."""
        d = self.detunings
        if self.shape == "flat":
            amp = (np.abs(d - self.center) <= self.width / 2 + 1e-12 * self.width).astype(complex)
        else:
            amp = np.exp(-2 * math.log(2) * ((d - self.center) / self.width) ** 2).astype(complex)
        amp /= math.sqrt(np.sum(np.abs(amp) ** 2) * self.step)
        return amp

    def support(self) -> tuple[float, float]:
        # gaussian: intensity below 1e-16 of peak outside +-3.3 FWHM
        half = self.width / 2 if self.shape == "flat" else 3.3 * self.width
        return self.center - half, self.center + half

    def check_covers(self, detunings) -> None:
        lo, hi = self.support()
        d = np.asarray(detunings)
        if lo < d[0] or hi > d[-1]:
            raise ValueError("frequency grid does not cover the pulse spectrum support")


def event_amplitude(detuning, medium: MediumModel):
    """Per-scattering spectral factor f = (i/2)/(D + i/2 - Sigma_AT), |f| <= 1."""
    return -0.5j * normalized_response(detuning, medium)


def _response_derivative(detuning, medium: MediumModel):
    d = np.asarray(detuning, dtype=float)
    bare = 1.0 / (d + 0.5j) ** 2
    w = medium.at_weight
    if w == 0.0 or medium.rabi_control == 0.0:
        return bare
    two_photon = d - medium.control_detuning + 0.5j * medium.ground_decoherence
    coupling = (medium.rabi_control / 2) ** 2
    denom = (d + 0.5j) * two_photon - coupling
    # L = -T/denom, denom' = T + (D + i/2)
    lam = -(denom - two_photon * (two_photon + d + 0.5j)) / denom**2
    return (1 - w) * bare + w * lam


def wigner_delay(detuning, medium: MediumModel):
    """Analytic d arg f / dD: time delay of one scattering event (1/gamma)."""
    r = normalized_response(detuning, medium)
    return np.imag(_response_derivative(detuning, medium) / r)


def dispersion_phase_coefficient(medium: MediumModel) -> float:
    """(2 pi / k^2) * C, phase per unit column density per unit Re(response)."""
    return medium.sigma0 / 4.0


def dispersive_phase(detuning, column, medium: MediumModel):
    return dispersion_phase_coefficient(medium) * np.real(normalized_response(detuning, medium)) * column


def dispersive_delay(detuning, column, medium: MediumModel):
    return dispersion_phase_coefficient(medium) * np.real(_response_derivative(detuning, medium)) * column


def flight_time(length, medium: MediumModel):
    return np.asarray(length) * medium.gamma / SPEED_OF_LIGHT


def path_amplitudes(detunings, order, length, column, medium: MediumModel) -> np.ndarray:
    """A(D) for a batch of paths; returns shape (n_paths, n_detunings)."""
    d = np.asarray(detunings, dtype=float)
    order = np.atleast_1d(np.asarray(order, dtype=float))
    t_f = np.atleast_1d(flight_time(length, medium))
    column = np.atleast_1d(np.asarray(column, dtype=float))
    disp = dispersion_phase_coefficient(medium) * np.real(normalized_response(d, medium))
    with np.errstate(divide="ignore"):
        log_f = np.log(event_amplitude(d, medium))
    phase = np.outer(t_f, d) + np.outer(column, disp)
    log_a = 1j * phase + np.outer(order, log_f)
    # order 0 paths must not pick up 0 * (-inf)
    log_a[order == 0] = 1j * phase[order == 0]
    return np.exp(log_a)


def spectral_amplitude(trajectory: Trajectory, spectrum: PulseSpectrum, medium: MediumModel) -> np.ndarray:
    """Complex transfer function of one trajectory on the spectrum grid."""
    spectrum.check_covers(spectrum.detunings)
    return path_amplitudes(spectrum.detunings, trajectory.order, trajectory.path_total,
                           trajectory.column, medium)[0]


def numerical_group_delay(detunings, amplitude) -> np.ndarray:
    """Phase slope d arg A / dD by finite differences of the unwrapped phase."""
    return np.gradient(np.unwrap(np.angle(amplitude)), detunings)


def time_fields(spectrum: PulseSpectrum, amplitudes) -> np.ndarray:
    """Time-domain fields for rows of spectral transfer functions."""
    e = spectrum.field() * np.exp(1j * spectrum.detunings * spectrum.t_start)
    return spectrum.step / math.sqrt(2 * math.pi) * np.fft.fft(e * amplitudes, axis=-1)


def input_profile(spectrum: PulseSpectrum) -> np.ndarray:
    return np.abs(time_fields(spectrum, np.ones(spectrum.n_points))) ** 2


def _check_aliasing(intensity, label, tolerance):
    total = intensity.sum()
    if total <= 0:
        return
    m = len(intensity)
    edge = max(1, int(round(EDGE_FRACTION * m)))
    frac = intensity[-edge:].sum() / total
    if frac > tolerance:
        raise AliasingError(
            f"{label}: {frac:.2e} of the energy sits in the last 1% of the time window; "
            "increase n_points (longer window) or reduce the span")


def _peak_time(times, intensity):
    k = int(np.argmax(intensity))
    if 0 < k < len(intensity) - 1:
        y0, y1, y2 = intensity[k - 1:k + 2]
        den = y0 - 2 * y1 + y2
        if den != 0:
            return times[k] + 0.5 * (y0 - y2) / den * (times[1] - times[0])
    return times[k]


@dataclass
class OrderResolvedProfile:
    orders: list[int]
    time_grid: np.ndarray  # 1/gamma
    intensity: np.ndarray  # (n_orders, n_times)
    counts: list[int]
    estimator: str
    t_in: float
    input_intensity: np.ndarray = field(repr=False, default=None)

    @property
    def energies(self) -> np.ndarray:
        dt = self.time_grid[1] - self.time_grid[0]
        return self.intensity.sum(axis=1) * dt

    def peak_times(self) -> np.ndarray:
        return np.array([_peak_time(self.time_grid, row) for row in self.intensity])

    def delays(self) -> np.ndarray:
        """Peak times relative to the incident pulse peak."""
        return self.peak_times() - _peak_time(self.time_grid, self.input_intensity)


def _accumulate(spectrum, order, length, column, weights, medium, chunk=256):
    out = np.zeros(spectrum.n_points)
    d = spectrum.detunings
    for a in range(0, len(order), chunk):
        sl = slice(a, a + chunk)
        fields = time_fields(spectrum, path_amplitudes(d, order[sl], length[sl], column[sl], medium))
        out += weights[sl] @ (np.abs(fields) ** 2)
    return out


def ballistic_path(ensemble: TrajectoryEnsemble):
    """(length m, column 1/m^2, weight) of the unscattered beam along its axis."""
    if ensemble.meta.get("source") != "EntryRay":
        raise ValueError("order-0 peel-off needs an incident beam source")
    r = ensemble.meta["support_radius"]
    cloud = ensemble.cloud
    kappa_col = _reduced_column(0.0, 0.0, -r, 0.0, 0.0, 1.0, 2 * r)
    column = kappa_col * cloud.n0 * cloud.r0
    tau = float(cross_section(ensemble.detuning, ensemble.medium)) * column
    return 2 * r * cloud.r0, column, math.exp(-tau)


def pulse_profile_by_order(ensemble: TrajectoryEnsemble, spectrum: PulseSpectrum, orders=(0, 50, 100),
                           estimator: str = "peel", cone_half_angle: float = 10.0,
                           alias_tolerance: float = 1e-3) -> OrderResolvedProfile:
    """Ensemble-averaged exit intensity I_N(t) in the forward direction for each order.

    ``estimator='peel'`` scores every scattering event of order N by the
    probability of leaving along +z (next-event estimate of the flux into the
    forward cone); ``'cone'`` keeps trajectories whose actual exit direction
    lies inside the cone.  Intensities of different paths add incoherently.
    """
    spectrum.check_covers(spectrum.detunings)
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    medium = ensemble.medium
    n = int(ensemble.valid.sum())
    solid = 2 * math.pi * (1 - math.cos(math.radians(cone_half_angle)))
    orders = [int(k) for k in orders]
    rows, counts = [], []
    for k in orders:
        if estimator == "peel":
            if k == 0:
                length, column, w = ballistic_path(ensemble)
                order = np.zeros(1)
                lengths, columns = np.array([length]), np.array([column])
                weights = np.array([w])
                count = 1  # deterministic straight-through path
            else:
                sel = (ensemble.peel[:, 1] == k) & ensemble.valid[ensemble.peel[:, 0].astype(int)]
                if k not in ensemble.meta.get("peel_orders", []):
                    raise ValueError(f"order {k} was not requested as a peel-off order")
                rec = ensemble.peel[sel]
                order, lengths, columns = rec[:, 1], rec[:, 2], rec[:, 3]
                weights = rec[:, 4] * solid / (4 * math.pi) / n
                count = len(rec)
        elif estimator == "cone":
            sel = ensemble.valid & (ensemble.order == k) & ensemble.forward_mask(cone_half_angle)
            order = ensemble.order[sel]
            lengths, columns = ensemble.path_length[sel], ensemble.column[sel]
            weights = np.full(int(sel.sum()), 1.0 / n)
            count = int(sel.sum())
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
        if count == 0:
            raise ValueError(f"no trajectories contribute to order {k}; run more trajectories")
        intensity = _accumulate(spectrum, np.asarray(order), lengths, columns, weights, medium)
        _check_aliasing(intensity, f"order {k}", alias_tolerance)
        rows.append(intensity)
        counts.append(count)
    return OrderResolvedProfile(orders=orders, time_grid=spectrum.times, intensity=np.array(rows),
                                counts=counts, estimator=estimator, t_in=spectrum.t_start,
                                input_intensity=input_profile(spectrum))


def order_energies(ensemble: TrajectoryEnsemble, spectrum: PulseSpectrum) -> dict[int, float]:
    """Ensemble-mean transmitted energy per scattering order (all directions)."""
    e2 = np.abs(spectrum.field()) ** 2 * spectrum.step
    f2 = np.abs(event_amplitude(spectrum.detunings, ensemble.medium)) ** 2
    ok = ensemble.valid
    n = int(ok.sum())
    orders, counts = np.unique(ensemble.order[ok], return_counts=True)
    return {int(k): float(c / n * np.sum(e2 * f2 ** int(k))) for k, c in zip(orders, counts)}


@dataclass
class ExitFlux:
    time_grid: np.ndarray
    intensity: np.ndarray
    n_paths: int

    @property
    def total(self) -> float:
        dt = self.time_grid[1] - self.time_grid[0]
        return float(self.intensity.sum() * dt)


def exit_flux(ensemble: TrajectoryEnsemble, spectrum: PulseSpectrum, max_trajectories: int | None = None,
              alias_tolerance: float = 1e-3) -> ExitFlux:
    """Mean intensity leaving the cloud in any direction, summed over all orders."""
    idx = np.flatnonzero(ensemble.valid)
    if max_trajectories is not None:
        idx = idx[:max_trajectories]
    if len(idx) == 0:
        raise ValueError("ensemble has no completed trajectories")
    w = np.full(len(idx), 1.0 / len(idx))
    intensity = _accumulate(spectrum, ensemble.order[idx].astype(float), ensemble.path_length[idx],
                            ensemble.column[idx], w, ensemble.medium)
    _check_aliasing(intensity, "exit flux", alias_tolerance)
    return ExitFlux(spectrum.times, intensity, len(idx))


def storage_efficiency(flux: ExitFlux, t_off):
    """Fraction of the light not yet escaped when the control is switched off at t_off.

    Times are measured from the start of the simulation window (the incident
    pulse peak sits at ``spectrum.t_start``).  The fraction is taken relative
    to the total energy that eventually escapes, so it runs from 1 at
    t_off = 0 to 0 at t_off -> infinity.
    """
    t_off = np.asarray(t_off, dtype=float)
    if np.any(t_off < 0):
        raise ValueError("t_off must be nonnegative")
    dt = flux.time_grid[1] - flux.time_grid[0]
    edges = np.concatenate([[0.0], flux.time_grid + dt])
    cum = np.concatenate([[0.0], np.cumsum(flux.intensity) * dt])
    total = cum[-1]
    if total <= 0:
        raise ValueError("no escaping energy")
    out = 1.0 - np.interp(t_off, edges, cum, right=total) / total
    return out[()] if out.ndim == 0 else out
