import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.signal import hilbert

from diffuse_memory.medium import (GaussianCloud, MediumModel, at_linewidth, column_density, cross_section,
                                   optical_depth_along_ray, spectrum_table, susceptibility)

OFF = MediumModel(rabi_control=0.0)


def lorentzian(d):
    return -1.0 / (d + 0.5j)


def test_control_off_is_bare_lorentzian():
    d = np.linspace(-30, 30, 601)
    chi = susceptibility(d, OFF)
    np.testing.assert_allclose(chi, OFF.scale * lorentzian(d), rtol=1e-14)


def test_eit_zero_at_two_photon_resonance():
    m = MediumModel(rabi_control=1.0, control_detuning=-2.5, ground_decoherence=0.0, at_weight=1.0)
    assert abs(susceptibility(-2.5, m).imag) < 1e-15


def test_far_wing_ratio():
    ratio = susceptibility(20.0, OFF).imag / susceptibility(0.0, OFF).imag
    assert ratio == pytest.approx(1 / (4 * 20.0**2 + 1), rel=1e-3)


def test_cross_section_anchor_and_hwhm():
    assert cross_section(0.0, OFF) == pytest.approx(OFF.sigma0, rel=1e-14)
    for d in (0.5, -0.5):
        assert cross_section(d, OFF) == pytest.approx(OFF.sigma0 / 2, rel=1e-14)


def test_transparency_dip_lowers_cross_section():
    m = MediumModel()
    assert cross_section(m.control_detuning, m) < cross_section(m.control_detuning, m.control_off())


@pytest.mark.parametrize("rabi, split, expected", [(0.0, 19.9, 0.0), (3.0, 3.0, 1.0), (2.0, 10.0, 0.04)])
def test_at_linewidth(rabi, split, expected):
    m = MediumModel(rabi_control=rabi, hpf_splitting=split)
    assert at_linewidth(m) == pytest.approx(expected, abs=1e-15)


def test_at_linewidth_zero_splitting():
    with pytest.raises(ValueError):
        at_linewidth(MediumModel(hpf_splitting=0.0))


@pytest.mark.parametrize("kwargs", [dict(gamma=0), dict(sigma0=-1), dict(at_weight=1.5),
                                    dict(ground_decoherence=-1e-3)])
def test_medium_validation(kwargs):
    with pytest.raises(ValueError):
        MediumModel(**kwargs)


def test_cloud_b0_roundtrip():
    sigma0 = MediumModel().sigma0
    for b0 in (0.5, 5.0, 20.0, 137.0):
        cloud = GaussianCloud.from_optical_depth(b0, 1.3e-3, sigma0)
        assert cloud.peak_optical_depth(sigma0) == pytest.approx(b0, rel=1e-12)


def test_diametral_ray_gives_b0():
    cloud = GaussianCloud.from_optical_depth(20.0, 1e-3, OFF.sigma0)
    tau = optical_depth_along_ray([0, 0, -0.02], [0, 0, 1], np.inf, 0.0, cloud, OFF)
    assert tau == pytest.approx(20.0, rel=1e-12)
    assert optical_depth_along_ray([0, 0, -0.02], [0, 0, 1], 0.0, 0.0, cloud, OFF) == 0.0


def test_impact_parameter_oracle():
    r0 = 1e-3
    cloud = GaussianCloud.from_optical_depth(20.0, r0, OFF.sigma0)
    rho = 1.7e-3
    tau = optical_depth_along_ray([rho, 0, -0.02], [0, 0, 1], np.inf, 0.0, cloud, OFF)
    # independent quadrature of the density along the ray
    q, _ = integrate.quad(lambda z: cloud.density([rho, 0.0, z]), -0.02, 0.02, epsabs=0, epsrel=1e-13,
                          points=[0.0], limit=200)
    assert tau == pytest.approx(OFF.sigma0 * q, rel=1e-10)
    assert tau == pytest.approx(20.0 * math.exp(-rho**2 / (2 * r0**2)), rel=1e-12)


def test_random_rays_match_quadrature():
    rng = np.random.default_rng(7)
    r0 = 1.0
    cloud = GaussianCloud(n0=1.0, r0=r0)
    worst = 0.0
    for _ in range(1000):
        o = rng.normal(0, 2.0, 3)
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        s = rng.uniform(0, 10)
        got = column_density(o, u, s, cloud)
        t_c = float(np.clip(-o @ u, 0, s))
        f = lambda t: math.exp(-float(np.sum((o + t * u) ** 2)) / 2)
        want = sum(integrate.quad(f, a, b, epsabs=0, epsrel=1e-13, limit=200)[0]
                   for a, b in ((0, t_c), (t_c, s)) if b > a)
        if want > 1e-280:
            worst = max(worst, abs(got - want) / want)
    assert worst < 1e-10


def test_non_unit_direction_rejected():
    cloud = GaussianCloud(1.0, 1.0)
    with pytest.raises(ValueError):
        optical_depth_along_ray([0, 0, 0], [0, 0, 1.001], 1.0, 0.0, cloud, OFF)


@given(s1=st.floats(0, 20), s2=st.floats(0, 20), x=st.floats(-3, 3), z=st.floats(-5, 5))
def test_optical_depth_monotone(s1, s2, x, z):
    cloud = GaussianCloud(1.0, 1.0)
    a, b = sorted((s1, s2))
    u = np.array([0.6, 0.0, 0.8])
    ta = column_density([x, 0.3, z], u, a, cloud)
    tb = column_density([x, 0.3, z], u, b, cloud)
    assert tb >= ta - 1e-15
    assert column_density([x, 0.3, z], u, np.inf, cloud) < np.inf


@given(rabi=st.floats(0, 10, allow_subnormal=False), gg=st.floats(0, 1, allow_subnormal=False),
       dr=st.floats(-5, 5), w=st.floats(0, 1))
def test_absorption_nonnegative(rabi, gg, dr, w):
    m = MediumModel(rabi_control=rabi, ground_decoherence=gg, control_detuning=dr, at_weight=w)
    d = np.linspace(-100, 100, 20001)
    assert np.all(susceptibility(d, m).imag >= -1e-15 * m.scale)


def test_kramers_kronig_spot_check():
    m = MediumModel(rabi_control=1.0, control_detuning=-2.5, ground_decoherence=0.05)
    step = 0.005
    d = np.arange(-4000, 4000, step)
    chi = susceptibility(d, m) / m.scale
    # causal response: Re chi = -H[Im chi] with H the Hilbert transform
    re_kk = -np.imag(hilbert(chi.imag))
    sel = np.abs(d) <= 10
    rms = np.sqrt(np.mean((re_kk[sel] - chi.real[sel]) ** 2)) / np.sqrt(np.mean(chi.real[sel] ** 2))
    assert rms < 0.02


@given(rabi=st.floats(0.1, 10), dr=st.floats(-5, 5))
def test_control_only_acts_near_two_photon_resonance(rabi, dr):
    m = MediumModel(rabi_control=rabi, control_detuning=dr)
    far = 20 * max(rabi, 1.0)
    d = np.concatenate([np.linspace(dr - 10 * far, dr - far * 1.0001, 500),
                        np.linspace(dr + far * 1.0001, dr + 10 * far, 500)])
    on, off = cross_section(d, m), cross_section(d, m.control_off())
    assert np.max(np.abs(on - off) / off) < 1e-3


def test_spectrum_table_at_columns():
    m = MediumModel()
    d = np.linspace(-10, 10, 2001)
    t = spectrum_table(d, m)
    on = susceptibility(d, m)
    off = susceptibility(d, m.control_off())
    np.testing.assert_allclose(t["im_chi_control_off"], (OFF.scale * lorentzian(d)).imag, rtol=1e-14)
    assert np.max(np.abs(t["im_chi_at"] - (on.imag - off.imag))) < 1e-12
    assert np.max(np.abs(t["re_chi_at"] - (on.real - off.real))) < 1e-12
