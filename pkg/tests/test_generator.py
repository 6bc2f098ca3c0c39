import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bellmeson.generator import (
    EventRecord, GeneratorConfig, LhvStrategy, frame_to_records, generate_dataset,
    generate_lhv_dataset, local_oscillation_strategy, random_local_strategy, records_to_frame,
    sample_lhv_pair, sample_lhv_pairs, sample_qm_pair, sample_qm_pairs, static_flavor_strategy,
)
from bellmeson.physics import PhysicsParams, correlation_renormalized
from bellmeson.streams import CHUNK_SIZE, substream
from bellmeson.validation import CATEGORIES, EVENT_COLUMNS, check_events


def er(df):
    of = (df["flavor_a"] != df["flavor_b"]).to_numpy()
    return 2 * of.mean() - 1, math.sqrt(max(1 - (2 * of.mean() - 1) ** 2, 1e-12) / len(df))


def test_no_mixing_means_always_opposite():
    df = sample_qm_pairs(10_000, PhysicsParams(delta_m=0.0), np.random.default_rng(1))
    assert (df["flavor_a"] == -df["flavor_b"]).all()


def test_same_flavor_dominates_at_half_period(params):
    df = generate_dataset(GeneratorConfig(1_000_000, 11, params))
    x = params.delta_m * df["dt_true_ps"].to_numpy()
    sel = df[np.abs(x - math.pi) <= 0.05]
    x_sel = params.delta_m * sel["dt_true_ps"].to_numpy()
    p_sf = np.mean((1 - np.cos(x_sel)) / 2)
    n = len(sel)
    sf = (sel["flavor_a"] == sel["flavor_b"]).sum()
    assert n > 1000
    assert p_sf > 0.999
    assert abs(sf - n * p_sf) < 5 * math.sqrt(n * p_sf * (1 - p_sf)) + 1


def test_decay_times_exponential(params):
    df = generate_dataset(GeneratorConfig(200_000, 3, params))
    for col in ("t_a_ps", "t_b_ps"):
        t = df[col].to_numpy()
        assert t.mean() == pytest.approx(params.tau_b, abs=5 * params.tau_b / math.sqrt(len(t)))
    np.testing.assert_array_equal(df["dt_true_ps"], np.abs(df["t_a_ps"] - df["t_b_ps"]))


def test_qm_correlation_follows_cosine(params):
    df = generate_dataset(GeneratorConfig(400_000, 5, params))
    dt = df["dt_true_ps"].to_numpy()
    for lo in np.arange(0.0, 5.0, 0.5):
        sel = df[(dt >= lo) & (dt < lo + 0.5)]
        e, s = er(sel)
        x = sel["dt_true_ps"].to_numpy()
        assert abs(e - np.mean(correlation_renormalized(x, params))) < 5 * s


def test_fixed_seed_reproducible_records(params):
    a = frame_to_records(generate_dataset(GeneratorConfig(10, 42, params)))
    b = frame_to_records(generate_dataset(GeneratorConfig(10, 42, params)))
    assert repr(a) == repr(b)
    assert [r.event_id for r in a] == list(range(10))


def test_independent_of_worker_count(params):
    cfg = GeneratorConfig(3 * CHUNK_SIZE + 17, 9, params)
    pd.testing.assert_frame_equal(generate_dataset(cfg, 1), generate_dataset(cfg, 4))


def test_full_chunks_unaffected_by_total_size(params):
    a = generate_dataset(GeneratorConfig(CHUNK_SIZE + 5, 9, params))
    b = generate_dataset(GeneratorConfig(CHUNK_SIZE + 50, 9, params))
    pd.testing.assert_frame_equal(a.iloc[:CHUNK_SIZE], b.iloc[:CHUNK_SIZE])


def test_empty_dataset(params):
    df = generate_dataset(GeneratorConfig(0, 1, params))
    assert len(df) == 0
    assert list(df.columns) == list(EVENT_COLUMNS)


def test_category_fractions(params):
    fractions = {"signal": 0.917, "dss_mixing": 0.045, "bpm_background": 0.038}
    n = 100_000
    df = generate_dataset(GeneratorConfig(n, 8, params, fractions))
    counts = df["category"].value_counts()
    for cat, f in fractions.items():
        assert abs(counts[cat] - n * f) < 5 * math.sqrt(n * f * (1 - f))
    assert counts[["fake_dstar", "uncorrelated_dsl"]].sum() == 0


def test_uncorrelated_background_has_zero_correlation(params):
    df = generate_dataset(GeneratorConfig(1_000_000, 12, params, {"uncorrelated_dsl": 1.0}))
    dt = df["dt_true_ps"].to_numpy()
    for lo in np.arange(0.0, 6.0, 0.5):
        e, s = er(df[(dt >= lo) & (dt < lo + 0.5)])
        assert abs(e) < 5 * s


def test_charged_background_never_mixes(params):
    df = generate_dataset(GeneratorConfig(20_000, 13, params, {"bpm_background": 1.0}))
    assert (df["flavor_a"] == -df["flavor_b"]).all()


def test_tags_equal_flavors_before_detector(params):
    df = generate_dataset(GeneratorConfig(1000, 1, params))
    assert (df["tag_a"] == df["flavor_a"]).all() and (df["tag_b"] == df["flavor_b"]).all()
    check_events(df)


@pytest.mark.parametrize("fractions", [{"signal": 0.5}, {"signal": 1.2, "fake_dstar": -0.2},
                                       {"bogus": 1.0}])
def test_bad_fractions_rejected(params, fractions):
    with pytest.raises(ValueError):
        GeneratorConfig(10, 1, params, fractions)


def test_bad_seed_rejected(params):
    with pytest.raises(ValueError):
        GeneratorConfig(10, -5, params)


def test_single_pair_sampler(params):
    r = sample_qm_pair(params, np.random.default_rng(0), event_id=7)
    assert isinstance(r, EventRecord) and r.event_id == 7
    assert r.dt_true == abs(r.t_a - r.t_b)


def test_event_record_validation():
    with pytest.raises(ValueError):
        EventRecord(0, 1.0, 0.5, 0.4, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        EventRecord(0, 1.0, 0.5, 0.5, 1, 1, 1, 1, category="nope")
    with pytest.raises(ValueError):
        EventRecord(0, -1.0, 0.5, 1.5, 1, 1, 1, 1)


@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0, 50), st.sampled_from([1, -1]),
                          st.sampled_from([1, -1]), st.sampled_from(CATEGORIES)), max_size=20))
def test_record_frame_round_trip(rows):
    recs = [EventRecord(i, a, b, abs(a - b), fa, fb, fa, fb, cat) for i, (a, b, fa, fb, cat) in enumerate(rows)]
    back = frame_to_records(records_to_frame(recs))
    assert repr(back) == repr(recs)


# --------------------------------------------------------------------------
# local strategies


def test_static_flavor_always_opposite(params):
    df = generate_lhv_dataset(static_flavor_strategy(), 50_000, params, 1)
    assert (df["flavor_a"] == -df["flavor_b"]).all()


def test_local_oscillation_triangle_wave(params):
    df = generate_lhv_dataset(local_oscillation_strategy(params.delta_m), 400_000, params, 2)
    x = params.delta_m * df["dt_true_ps"].to_numpy()
    for lo in np.arange(0.0, math.pi - 0.2, 0.2):
        sel = df[(x >= lo) & (x < lo + 0.2)]
        xs = params.delta_m * sel["dt_true_ps"].to_numpy()
        e, s = er(sel)
        # E_R = 1 - 2x/pi under the opposite-flavor-positive convention
        assert abs(e - np.mean(1 - 2 * xs / math.pi)) < 5 * s


def test_random_strategies_are_local_and_deterministic(params):
    strat = random_local_strategy(np.random.default_rng(5))
    t = np.linspace(0, 10, 50)
    lam = np.full(50, 0.3)
    np.testing.assert_array_equal(strat.outcome_a(t, lam), strat.outcome_a(t, lam))
    assert set(np.unique(strat.outcome_b(t, lam))) <= {1, -1}


def test_bad_outcome_rejected(params):
    bad = LhvStrategy("bad", lambda r, n: r.random(n), lambda t, lam: np.zeros_like(t),
                      lambda t, lam: np.ones_like(t))
    with pytest.raises(ValueError, match="bad"):
        sample_lhv_pairs(bad, 10, params, np.random.default_rng(0))


def test_single_lhv_pair(params):
    r = sample_lhv_pair(static_flavor_strategy(), params, substream(1, 3, 0), event_id=3)
    assert r.flavor_a == -r.flavor_b


def test_lhv_dataset_worker_independent(params):
    s = local_oscillation_strategy(params.delta_m)
    n = 2 * CHUNK_SIZE + 3
    pd.testing.assert_frame_equal(generate_lhv_dataset(s, n, params, 4, 1),
                                  generate_lhv_dataset(s, n, params, 4, 3))
