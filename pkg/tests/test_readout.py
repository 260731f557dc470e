import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffuse_memory.hologram import (H1, H2, V1, V2, PolarizationBasis, SchmidtSpec, build_state, fock_state,
                                     sample_outcome, store_hologram)
from diffuse_memory.readout import (OPTIMAL_CHSH_ANGLES, InterferometerConfig, MeasurementRecord,
                                    attenuated_correlation, chsh_exact, chsh_test, correlation_from_table,
                                    correlation_recovery, estimate_atoms, mz_signal, pair_table,
                                    phase_sensitivity, singlet_correlation)

TSIRELSON = 2 * math.sqrt(2)


def test_zero_signal_mean(rng):
    cfg = InterferometerConfig(probe_photons=1e6)
    x = mz_signal(0, cfg, rng, size=10_000)
    assert abs(x.mean() / cfg.mean_current) < 3 * 1e-3 / 100


def test_noiseless_linearity():
    cfg = InterferometerConfig(xi=2e-3, mean_current=3.0)
    assert mz_signal(37, cfg, noiseless=True) / 3.0 == pytest.approx(2e-3 * 37, rel=1e-15)


def test_squeezing_reduces_noise(rng):
    plain = mz_signal(5, InterferometerConfig(), rng, size=10_000).std()
    squeezed = mz_signal(5, InterferometerConfig(squeeze_r=1.0), rng, size=10_000).std()
    assert plain / squeezed == pytest.approx(math.e, rel=0.05)


def test_linear_regime_enforced():
    with pytest.raises(ValueError):
        mz_signal(300, InterferometerConfig(xi=1e-3), noiseless=True)
    with pytest.raises(ValueError):
        mz_signal(-1, InterferometerConfig(), noiseless=True)


@pytest.mark.parametrize("kwargs", [dict(xi=0.0), dict(xi=0.1), dict(probe_photons=0), dict(squeeze_r=-1)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        InterferometerConfig(**kwargs)


def test_estimate_noiseless_single_sample():
    cfg = InterferometerConfig()
    rec = estimate_atoms([mz_signal(12, cfg, noiseless=True)], cfg)
    assert rec.n_hat == pytest.approx(12.0, rel=1e-12)
    assert rec.sigma_n > 0


def test_estimate_error_propagation(rng):
    cfg = InterferometerConfig(xi=1e-3, probe_photons=1e8)
    rec = estimate_atoms(mz_signal(50, cfg, rng, size=100), cfg)
    assert rec.sigma_n == pytest.approx(0.01, rel=0.25)
    assert abs(rec.n_hat - 50) < 3 * 0.01


def test_squeezing_shrinks_estimate_error(rng):
    s0 = estimate_atoms(mz_signal(20, InterferometerConfig(), rng, size=4000), InterferometerConfig()).sigma_n
    cfg2 = InterferometerConfig(squeeze_r=2.0)
    s2 = estimate_atoms(mz_signal(20, cfg2, rng, size=4000), cfg2).sigma_n
    assert s0 / s2 == pytest.approx(math.e**2, rel=0.05)


def test_record_requires_positive_sigma():
    with pytest.raises(ValueError):
        MeasurementRecord(0, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("r, n_p, want", [(0.0, 1e6, 1e-3), (0.5, 1e6, 1e-3 * math.exp(-0.5))])
def test_phase_sensitivity(r, n_p, want):
    assert phase_sensitivity(InterferometerConfig(probe_photons=n_p, squeeze_r=r)) == pytest.approx(want, rel=1e-12)


def test_phase_sensitivity_square_root_law():
    a = phase_sensitivity(InterferometerConfig(probe_photons=1e6))
    b = phase_sensitivity(InterferometerConfig(probe_photons=4e6))
    assert a / b == pytest.approx(2.0, rel=1e-14)


@pytest.mark.parametrize("n", [0, 1, 17, 120, 299])
def test_estimator_unbiased(n):
    cfg = InterferometerConfig()
    rng = np.random.default_rng(1000 + n)
    x = mz_signal(np.full(10_000, n), cfg, rng)
    n_hat = x / (cfg.mean_current * cfg.xi)
    assert abs(n_hat.mean() - n) < 3 * cfg.atom_noise / 100


def test_sensitivity_scaling_grid(rng):
    k = 4
    for r in (0.0, 0.5, 1.0):
        for n_p in (1e5, 1e6, 1e7):
            cfg = InterferometerConfig(probe_photons=n_p, squeeze_r=r)
            shots = mz_signal(10, cfg, rng, size=(2000, k))
            est = shots.mean(axis=1) / (cfg.mean_current * cfg.xi)
            want = math.exp(-r) / (cfg.xi * math.sqrt(n_p * k))
            assert est.std(ddof=1) == pytest.approx(want, rel=0.10)


def _units(nbar, reps, rng):
    s = build_state(SchmidtSpec(nbar))
    return store_hologram(sample_outcome(s, rng, reps), 1.0)


def test_correlation_noiseless_identity(rng):
    rep = correlation_recovery(_units(1.0, 1000, rng), InterferometerConfig(), rng, noiseless=True)
    assert rep.pair(H1, V2) == 1.0
    assert rep.pair(V1, H2) == 1.0


def test_correlation_with_shot_noise(rng):
    units = _units(5.0, 1000, rng)
    cfg = InterferometerConfig()
    rep = correlation_recovery(units, cfg, rng)
    var_m = units.atoms[:, H1].var()
    assert rep.pair(H1, V2) > 0.9
    # attenuation formula with the simulated photon-number variance
    want = attenuated_correlation(var_m, cfg.atom_noise)
    assert rep.pair(H1, V2) == pytest.approx(want, abs=3 * rep.errors[H1, V2])


def test_correlation_vacuum(rng):
    units = _units(0.0, 1000, rng)
    rep = correlation_recovery(units, InterferometerConfig(), rng)
    off = ~np.eye(4, dtype=bool)
    assert np.all(np.abs(rep.matrix[off]) <= 3 * rep.errors[off])


def test_correlation_undefined_flagged(rng):
    rep = correlation_recovery(_units(0.0, 50, rng), InterferometerConfig(), rng, noiseless=True)
    assert rep.undefined.all()
    assert np.isnan(rep.matrix).all()
    assert rep.to_dict()["correlation"][0][1] is None


def test_exact_chsh_is_tsirelson():
    s = build_state(SchmidtSpec(0.2))
    assert chsh_exact(s, OPTIMAL_CHSH_ANGLES) == pytest.approx(TSIRELSON, abs=1e-10)


@given(a=st.floats(-math.pi, math.pi), b=st.floats(-math.pi, math.pi))
def test_pair_sector_is_singlet(a, b):
    s = build_state(SchmidtSpec(0.1))
    e = correlation_from_table(pair_table(s, a, b))
    assert e == pytest.approx(singlet_correlation(a, b), abs=1e-10)


@given(a=st.floats(-math.pi, math.pi), phi=st.floats(-math.pi, math.pi))
def test_identical_settings_anticorrelate(a, phi):
    s = build_state(SchmidtSpec(0.1))
    b = PolarizationBasis(a, phi)
    assert correlation_from_table(pair_table(s, b, b)) == pytest.approx(-1.0, abs=1e-10)


def test_sampled_chsh(rng):
    res = chsh_test(0.2, shots=50_000, rng=rng)
    assert min(res.pairs.values()) >= 10_000
    assert abs(res.S - TSIRELSON) < 3 * res.standard_error
    assert res.violation_sigma > 3
    assert res.to_dict()["violates_classical_bound"]


def test_product_state_respects_classical_bound(rng):
    for occ in ((1, 0, 1, 0), (0, 1, 0, 1), (1, 0, 0, 1)):
        res = chsh_test(0.2, shots=2000, rng=rng, state=fock_state(occ, nmax=1))
        assert res.S <= 2 + 3 * res.standard_error
        assert res.exact_S <= 2 + 1e-12


def test_chsh_preconditions(rng):
    with pytest.raises(ValueError):
        chsh_test(0.5, rng=rng)
    with pytest.raises(ValueError, match="shots"):
        chsh_test(0.05, shots=200, rng=rng)
