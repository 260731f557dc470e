"""Command-line front end.

Every subcommand validates the full configuration first, computes all of its
outputs in memory and only then writes them, so a failed run leaves no
partial files.  Exit codes: 0 success, 2 invalid configuration or output
path, 3 numerical guard abort.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .hologram import (H1, H2, V1, V2, PolarizationBasis, SchmidtSpec, build_state,
                       joint_number_distribution, pair_distribution, rotate_basis, sample_outcome,
                       store_hologram, tensor_text)
from .medium import at_linewidth, spectrum_table
from .profiles import AliasingError, pulse_profile_by_order, wigner_delay
from .protocol import classify_regime
from .readout import (attenuated_correlation, chsh_test, correlation_recovery, estimate_atoms,
                      mz_signal, phase_sensitivity)
from .rng import stream_generator
from .transport import RootSolveError, path_statistics, simulate_ensemble

EXIT_OK, EXIT_INVALID, EXIT_GUARD = 0, 2, 3
SUBCOMMANDS = ("susceptibility", "transport", "regime", "hologram", "readout", "chsh", "all")


class NumericalGuardError(RuntimeError):
    pass


# --- serialization ---------------------------------------------------------

def _plain(obj):
    """JSON-safe copy: numpy scalars to Python, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def json_text(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def csv_text(columns: dict) -> str:
    """Columns given as name -> 1-d array; header names carry units in brackets."""
    names = list(columns)
    data = [np.asarray(columns[k]) for k in names]
    n = len(data[0])
    if any(len(d) != n for d in data):
        raise ValueError("CSV columns differ in length")
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    for i in range(n):
        buf.write(",".join(_cell(d[i]) for d in data) + "\n")
    return buf.getvalue()


def _cell(x) -> str:
    if isinstance(x, (np.integer, int)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


# --- subcommands ------------------------------------------------------------

def run_susceptibility(cfg: ExperimentConfig, workers: int = 1) -> dict:
    s = cfg.spectrum
    d = np.linspace(s.detuning_min, s.detuning_max, int(s.points))
    t = spectrum_table(d, cfg.medium)
    u = "[n0(lambda/2pi)^3]"
    csv = csv_text({
        "detuning[gamma]": t["detuning"],
        f"re_chi_on{u}": t["re_chi"], f"im_chi_on{u}": t["im_chi"],
        f"re_chi_off{u}": t["re_chi_control_off"], f"im_chi_off{u}": t["im_chi_control_off"],
        f"re_chi_at{u}": t["re_chi_at"], f"im_chi_at{u}": t["im_chi_at"],
    })
    step = d[1] - d[0]
    # The dressed line also carries a light shift of the main resonance, so the
    # global minimum of the difference need not be the two-photon dip; search
    # within the Autler-Townes splitting around the configured position.
    near = np.abs(d - cfg.medium.control_detuning) <= max(cfg.medium.rabi_control / 2, step)
    dip = float(d[near][np.argmin(t["im_chi_at"][near])]) if near.any() else float("nan")
    summary = {
        "grid": {"min": s.detuning_min, "max": s.detuning_max, "points": int(s.points), "step": step},
        "control_detuning": cfg.medium.control_detuning,
        "rabi_control": cfg.medium.rabi_control,
        "transparency_dip_detuning": dip,
        "global_min_im_chi_at_detuning": float(d[np.argmin(t["im_chi_at"])]),
        "dip_within_one_step": abs(dip - cfg.medium.control_detuning) <= step,
        "at_linewidth": at_linewidth(cfg.medium),
        "units": {"detuning": "gamma", "chi": "n0 (lambda/2pi)^3"},
    }
    return {"susceptibility.csv": csv, "susceptibility.json": json_text(summary)}


def _regime(cfg: ExperimentConfig, b_sigma: float):
    return classify_regime(cfg.pulse.width, at_linewidth(cfg.medium), b_sigma, cfg.protocol.margin)


def run_transport(cfg: ExperimentConfig, workers: int = 1) -> dict:
    medium = cfg.medium
    cloud = cfg.cloud.build(medium)
    spectrum = cfg.pulse.build()
    orders = [int(k) for k in cfg.pulse.orders]
    run = cfg.run
    columns = {}
    hist = {}
    summary = {"b0": cloud.peak_optical_depth(medium.sigma0), "trajectories": run.trajectories,
               "orders": orders, "estimator": cfg.pulse.estimator, "runs": {}}
    stats_on = None
    for label, med in (("on", medium), ("off", medium.control_off())):
        ens = simulate_ensemble(run.trajectories, cloud, med, detuning=cfg.pulse.center, seed=run.seed,
                                source="beam", max_events=run.max_events, peel_orders=orders,
                                workers=workers)
        frac = ens.n_capped / len(ens)
        if frac > run.cap_fraction:
            raise NumericalGuardError(
                f"control {label}: {ens.n_capped} of {len(ens)} trajectories hit the event cap "
                f"({run.max_events}); raise run.max_events")
        prof = pulse_profile_by_order(ens, spectrum, orders, estimator=cfg.pulse.estimator,
                                      cone_half_angle=cfg.pulse.cone_half_angle)
        if not columns:
            columns["time[1/gamma]"] = prof.time_grid
            columns["input[gamma]"] = prof.input_intensity
        for k, row in zip(orders, prof.intensity):
            columns[f"control_{label}_order_{k}[gamma]"] = row
        stats = path_statistics(ens)
        hist[label] = stats.order_histogram
        if label == "on":
            stats_on = stats
        summary["runs"][f"control_{label}"] = {
            "path_statistics": {k: v for k, v in stats.to_dict().items() if k != "order_histogram"},
            "capped_fraction": frac,
            "peak_times": prof.peak_times(),
            "delays": prof.delays(),
            "energies": prof.energies,
            "contributions": prof.counts,
            "wigner_delay_center": float(wigner_delay(cfg.pulse.center, med)),
            "order_histogram_max": int(len(stats.order_histogram) - 1),
        }
    n = max(len(h) for h in hist.values())
    hist_csv = csv_text({"order[events]": np.arange(n),
                         **{f"count_control_{k}": np.pad(h, (0, n - len(h))) for k, h in hist.items()}})
    summary["t_in"] = spectrum.t_start
    summary["regime"] = _regime(cfg, stats_on.b_sigma).to_dict()
    summary["units"] = {"time": "1/gamma", "intensity": "gamma (input energy normalized to 1)"}
    return {"profiles.csv": csv_text(columns), "order_histogram.csv": hist_csv,
            "transport.json": json_text(summary)}


def run_regime(cfg: ExperimentConfig, workers: int = 1) -> dict:
    cloud = cfg.cloud.build(cfg.medium)
    b0 = cloud.peak_optical_depth(cfg.medium.sigma0)
    b_sigma = cfg.protocol.b_sigma if cfg.protocol.b_sigma is not None else b0**2
    report = _regime(cfg, b_sigma).to_dict()
    report["b_sigma_source"] = "config" if cfg.protocol.b_sigma is not None else "b0^2 diffusive estimate"
    report["units"] = {"pulse_width": "gamma", "gamma_at": "gamma"}
    return {"regime.json": json_text(report)}


def _sampled_units(cfg: ExperimentConfig):
    spec = cfg.hologram.build()
    state = build_state(spec)
    outcomes = sample_outcome(state, stream_generator(cfg.run.seed, "hologram"), int(cfg.hologram.samples))
    units = store_hologram(outcomes, cfg.protocol.efficiency, stream_generator(cfg.run.seed, "protocol"))
    return spec, state, outcomes, units


def _pair_corr(report, i, j):
    v = report.matrix[i, j]
    return None if np.isnan(v) else float(v)


def _invariance_check(nbar: float, rng) -> float:
    """Max amplitude change of a small truncated state under one identical random rotation."""
    nmax = min(SchmidtSpec(nbar).nmax, 6)
    state = build_state(SchmidtSpec(nbar, nmax, tail_tolerance=1.0))
    basis = PolarizationBasis(float(rng.uniform(0, math.pi)), float(rng.uniform(0, 2 * math.pi)))
    rot = rotate_basis(state, basis, basis)
    return float(np.max(np.abs(joint_number_distribution(rot) - joint_number_distribution(state))))


def run_hologram(cfg: ExperimentConfig, workers: int = 1) -> dict:
    spec, state, outcomes, units = _sampled_units(cfg)
    rcfg = cfg.readout.build()
    noiseless = correlation_recovery(units, rcfg, stream_generator(cfg.run.seed, "readout", 0),
                                     noiseless=True, n_bootstrap=cfg.readout.bootstrap)
    paired = bool(np.all((outcomes[:, H1] == outcomes[:, V2]) & (outcomes[:, V1] == outcomes[:, H2])))
    c_hv, c_vh = _pair_corr(noiseless, H1, V2), _pair_corr(noiseless, V1, H2)
    undefined = c_hv is None or c_vh is None
    perfect = None if undefined else (c_hv == 1.0 and c_vh == 1.0)
    inv = _invariance_check(max(spec.nbar, 1e-3), stream_generator(cfg.run.seed, "hologram", 1))
    chsh = chsh_test(cfg.chsh.nbar, cfg.chsh.angles, cfg.run.shots, stream_generator(cfg.run.seed, "chsh"),
                     nmax=cfg.chsh.nmax)
    flags = {
        "norm_within_1e-10": abs(state.norm() - 1) < 1e-10,
        "tail_below_tolerance": spec.tail < spec.tail_tolerance,
        "samples_paired": paired,
        "units_anticorrelated": bool(np.all(units.anticorrelated())) if cfg.protocol.efficiency == 1 else None,
        "noiseless_correlation_perfect": perfect,
        "rotation_invariance_1e-10": inv < 1e-10,
        "chsh_within_3se_of_tsirelson": abs(chsh.S - 2 * math.sqrt(2)) < 3 * chsh.standard_error,
    }
    summary = {
        "nbar": spec.nbar, "nmax": spec.nmax, "tail": spec.tail,
        "renormalization": state.renormalization,
        "samples": int(cfg.hologram.samples), "efficiency": cfg.protocol.efficiency,
        "mean_atoms": units.atoms.mean(axis=0),
        "noiseless_readout": noiseless.to_dict(),
        "correlations_undefined": undefined,
        "rotation_invariance_max_deviation": inv,
        "chsh": chsh.to_dict(),
        "flags": flags,
        "passed": all(v for v in flags.values() if v is not None),
    }
    d = state.nmax + 1
    m, n = np.indices((d, d))
    p = pair_distribution(state)
    pairs = csv_text({"n_H1=n_V2": m.ravel(), "n_V1=n_H2": n.ravel(), "probability": p.ravel()})
    atoms = csv_text({"sample": np.arange(len(units.atoms)),
                      **{f"atoms_{name}": units.atoms[:, i] for i, name in enumerate(("H1", "V1", "V2", "H2"))}})
    return {"hologram.json": json_text(summary), "hologram_pairs.csv": pairs,
            "hologram_units.csv": atoms, "hologram_state.txt": tensor_text(state)}


def run_readout(cfg: ExperimentConfig, workers: int = 1) -> dict:
    rcfg = cfg.readout.build()
    r = cfg.readout
    _, _, _, units = _sampled_units(cfg)
    rep = correlation_recovery(units, rcfg, stream_generator(cfg.run.seed, "readout", 0),
                               samples_per_unit=r.samples_per_unit, noiseless=r.noiseless,
                               n_bootstrap=r.bootstrap)
    var_m = float(np.var(units.atoms[:, H1]))
    predicted = attenuated_correlation(var_m, rep.sigma_n) if var_m > 0 else None
    # single-shot noise check at zero signal
    rng = stream_generator(cfg.run.seed, "readout", 1)
    shots = mz_signal(0, rcfg, rng, size=int(cfg.run.shots))
    rec = estimate_atoms(shots, rcfg, unit_id="reference")
    summary = {
        "phase_sensitivity": phase_sensitivity(rcfg),
        "atom_noise_per_shot": rcfg.atom_noise,
        "empirical_atom_noise_per_shot": float(np.std(shots, ddof=1) / (rcfg.mean_current * rcfg.xi))
        if len(shots) > 1 else None,
        "zero_signal_estimate": {"n_hat": rec.n_hat, "sigma_n": rec.sigma_n, "samples": rec.n_samples},
        "correlation": rep.to_dict(),
        "var_m_H1": var_m,
        "predicted_correlation_H1_V2": predicted,
        "noiseless": r.noiseless,
    }
    est = rep.estimates
    cols = {"record": np.repeat(np.arange(len(est)), 4), "unit": np.tile(np.arange(4), len(est)),
            "atoms": units.atoms.ravel(), "n_hat[atoms]": est.ravel()}
    return {"readout.json": json_text(summary), "readout_shots.csv": csv_text(cols)}


def run_chsh(cfg: ExperimentConfig, workers: int = 1) -> dict:
    res = chsh_test(cfg.chsh.nbar, cfg.chsh.angles, cfg.run.shots, stream_generator(cfg.run.seed, "chsh"),
                    nmax=cfg.chsh.nmax)
    out = res.to_dict()
    out["angles"] = list(cfg.chsh.angles)
    out["within_3se_of_tsirelson"] = abs(res.S - 2 * math.sqrt(2)) < 3 * res.standard_error
    return {"chsh.json": json_text(out)}


RUNNERS = {
    "susceptibility": run_susceptibility,
    "transport": run_transport,
    "regime": run_regime,
    "hologram": run_hologram,
    "readout": run_readout,
    "chsh": run_chsh,
}


def run_all(cfg: ExperimentConfig, workers: int = 1) -> dict:
    files = {}
    for name in SUBCOMMANDS[:-1]:
        files.update(RUNNERS[name](cfg, workers))
    return files


RUNNERS["all"] = run_all


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffuse-memory",
                                     description="Diffuse-light Raman memory and quantum hologram simulator.")
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--workers", type=int, help="worker processes for Monte Carlo")
    common.add_argument("--trajectories", type=int, help="Monte Carlo trajectories per run")
    common.add_argument("--shots", type=int, help="shots per CHSH setting / readout check")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _check_output(path: str) -> None:
    """Fail early if ``path`` cannot become a writable directory."""
    probe = os.path.abspath(path)
    while not os.path.exists(probe):
        parent = os.path.dirname(probe)
        if parent == probe:
            break
        probe = parent
    if os.path.exists(os.path.abspath(path)) and not os.path.isdir(path):
        raise ConfigError(f"output path {path!r} is not a directory")
    if not (os.path.isdir(probe) and os.access(probe, os.W_OK)):
        raise ConfigError(f"output directory {path!r} is not writable")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, execution = load_config(args.config)
        cfg = cfg.replace_run(seed=args.seed, trajectories=args.trajectories, shots=args.shots)
        cfg.validate()
        workers = args.workers if args.workers is not None else int(execution.get("workers", 1))
        if workers < 1:
            raise ConfigError("workers must be >= 1")
        out = args.out or execution.get("out", "out")
        if not isinstance(out, str):
            raise ConfigError("run.out must be a path string")
        _check_output(out)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        files = RUNNERS[args.command](cfg, workers)
    except (NumericalGuardError, AliasingError, RootSolveError) as exc:
        print(f"error: numerical guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (ValueError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    files["effective_config.json"] = cfg.to_json()
    try:
        os.makedirs(out, exist_ok=True)
        for name, text in files.items():
            with open(os.path.join(out, name), "w", newline="\n") as fh:
                fh.write(text)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for name in sorted(files):
        print(os.path.join(out, name))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
