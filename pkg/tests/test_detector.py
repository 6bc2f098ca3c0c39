import math

import numpy as np
import pandas as pd
import pytest
from scipy import stats
from sklearn.base import clone

from bellmeson.analysis import ChshAnalysis, fit_correlation_scale
from bellmeson.detector import (
    DetectorParams, DetectorResponse, ObservedEvent, assign_samples, dt_from_dz, dz_from_dt,
    smear_and_tag,
)
from bellmeson.generator import GeneratorConfig, generate_dataset, sample_qm_pair
from bellmeson.physics import C_UM_PER_PS, PhysicsParams, expected_er_window

BGC = 0.425 * C_UM_PER_PS


def test_dz_conversion():
    p = DetectorParams()
    assert dt_from_dz(0.0, p) == 0.0
    assert dt_from_dz(127.412, p) == pytest.approx(1.0, abs=5e-5)
    assert dt_from_dz(-127.412, p) == pytest.approx(1.0, abs=5e-5)
    assert dz_from_dt(1.0, p) == pytest.approx(BGC)


def test_default_boost_from_beam_energies():
    # βγ = (E_high - E_low) / (2 sqrt(E_high E_low)) for 8 GeV on 3.5 GeV
    assert DetectorParams().beta_gamma == pytest.approx((8 - 3.5) / (2 * math.sqrt(28)), abs=5e-4)


def test_ideal_detector_is_transparent(params):
    ev = generate_dataset(GeneratorConfig(20_000, 2, params))
    out = smear_and_tag(ev, DetectorParams.ideal(), 7)
    assert len(out) == len(ev)
    assert (out["tag_a"] == ev["flavor_a"]).all() and (out["tag_b"] == ev["flavor_b"]).all()
    np.testing.assert_allclose(out["dt_reco_ps"], ev["dt_true_ps"], rtol=1e-12, atol=1e-12)


def test_single_event_smearing(params):
    rec = sample_qm_pair(params, np.random.default_rng(0), event_id=4)
    obs = smear_and_tag(rec, DetectorParams.ideal(), 1)
    assert isinstance(obs, ObservedEvent)
    assert obs.dz_true == pytest.approx((rec.t_a - rec.t_b) * BGC)
    assert obs.dt_reco == pytest.approx(rec.dt_true)


def test_vertex_resolution(params):
    ev = generate_dataset(GeneratorConfig(100_000, 3, params))
    out = smear_and_tag(ev, DetectorParams(dz_sigma=100.0, omega_a=0, omega_b=0), 3)
    resid = out["dz_reco_um"] / BGC - (out["t_a_ps"] - out["t_b_ps"])
    assert np.std(resid) == pytest.approx(100 / 127.412, rel=0.02)


def test_mistag_rates(params):
    ev = generate_dataset(GeneratorConfig(200_000, 4, params))
    out = smear_and_tag(ev, DetectorParams(omega_a=0.05, omega_b=0.2), 4)
    n = len(out)
    for side, w in (("a", 0.05), ("b", 0.2)):
        flips = (out[f"tag_{side}"] != out[f"flavor_{side}"]).sum()
        assert abs(flips - n * w) < 5 * math.sqrt(n * w * (1 - w))


def test_dilution_per_bin(params, ideal_events):
    det = DetectorResponse(dz_sigma=0.0, omega_a=0.05, omega_b=0.05, random_state=5)
    obs = det.fit_transform(ideal_events)
    edges = np.round(np.arange(0, 6.0001, 0.25), 10)
    a = ChshAnalysis(bin_edges=edges, dt_center=1.0, dt_halfwidth=0.1, dt_max=6).fit(obs)
    for e in a.correlations_:
        expected = 0.81 * expected_er_window(e.lo, e.hi, params)
        assert abs(e.e_r - expected) < 5 * e.sigma_stat
    k, sk = fit_correlation_scale(a.correlations_, [expected_er_window(e.lo, e.hi, params)
                                                    for e in a.correlations_])
    assert abs(k - 0.81) < 3 * sk


def test_dilution_property():
    assert DetectorParams(omega_a=0.05, omega_b=0.05).dilution == pytest.approx(0.81)
    assert DetectorParams.ideal().dilution == 1.0


def test_efficiency_thins_without_shape_change(params):
    ev = generate_dataset(GeneratorConfig(100_000, 6, params))
    full = smear_and_tag(ev, DetectorParams(efficiency=1.0), 6)
    thin = smear_and_tag(ev, DetectorParams(efficiency=0.3), 6)
    assert abs(len(thin) - 30_000) < 5 * math.sqrt(100_000 * 0.3 * 0.7)
    assert stats.ks_2samp(full["dt_reco_ps"], thin["dt_reco_ps"]).pvalue > 0.01


def test_sideband_even_split(params):
    ev = generate_dataset(GeneratorConfig(10_000, 7, params, {"fake_dstar": 1.0}))
    out = assign_samples(ev, DetectorParams(sideband_scale=1.0), 7)
    n_side = (out["sample"] == "sideband").sum()
    assert abs(n_side - 5000) < 5 * math.sqrt(10_000 * 0.25)
    assert set(out["sample"].astype(str)) == {"sideband", "signal_region"}


def test_control_split_follows_scale(params):
    ev = generate_dataset(GeneratorConfig(30_000, 8, params, {"uncorrelated_dsl": 1.0}))
    out = assign_samples(ev, DetectorParams(control_scale=2.0), 8)
    n_ctrl = (out["sample"] == "reversed_lepton_control").sum()
    assert abs(n_ctrl - 20_000) < 5 * math.sqrt(30_000 * (2 / 9))


def test_no_background_stays_in_signal_region(params):
    ev = generate_dataset(GeneratorConfig(5000, 9, params, {"signal": 0.9, "bpm_background": 0.1}))
    out = assign_samples(ev, DetectorParams(sideband_scale=3.0, control_scale=3.0), 9)
    assert (out["sample"] == "signal_region").all()


def test_keyed_draws_independent_of_subset(params):
    ev = generate_dataset(GeneratorConfig(70_000, 10, params))
    det = DetectorResponse(random_state=10)
    full = det.fit_transform(ev).set_index("event_id")
    part = det.fit_transform(ev.iloc[::7]).set_index("event_id")
    pd.testing.assert_frame_equal(full.loc[part.index], part)


def test_generator_stream_consumed_sequentially(params):
    ev = generate_dataset(GeneratorConfig(1000, 11, params))
    a = smear_and_tag(ev, DetectorParams(), np.random.default_rng(3))
    b = smear_and_tag(ev, DetectorParams(), np.random.default_rng(3))
    pd.testing.assert_frame_equal(a, b)


def test_transformer_api():
    det = DetectorResponse(omega_a=0.1)
    assert det.get_params()["omega_a"] == 0.1
    c = clone(det).set_params(dz_sigma=50.0)
    assert c.dz_sigma == 50.0 and det.dz_sigma == 100.0
    with pytest.raises(Exception):
        det.transform(generate_dataset(GeneratorConfig(5, 1, PhysicsParams())))


@pytest.mark.parametrize("kwargs", [{"omega_a": 0.5}, {"omega_b": -0.1}, {"efficiency": 0.0},
                                    {"efficiency": 1.5}, {"dz_sigma": -1}, {"beta_gamma": 0},
                                    {"sideband_scale": 0}])
def test_detector_params_validation(kwargs):
    with pytest.raises(ValueError):
        DetectorParams(**kwargs)
    with pytest.raises(ValueError):
        DetectorResponse(**kwargs).fit()
