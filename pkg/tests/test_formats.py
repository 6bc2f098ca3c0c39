import json
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from jsonschema import ValidationError

from bellmeson.analysis import ChshAnalysis, combine_systematics
from bellmeson.config import RunMetadata, parse_config
from bellmeson.detector import DetectorParams, DetectorResponse
from bellmeson.formats import (
    EVENT_HEADER, FIGURE_FILES, RESULT_DOCUMENT_SCHEMA, EventFileError, emit_figures,
    events_from_csv, events_to_csv, read_events, result_document, validate_document,
    write_events, write_json,
)
from bellmeson.generator import EventRecord, GeneratorConfig, generate_dataset, records_to_frame
from bellmeson.physics import PhysicsParams
from bellmeson.validation import CATEGORIES, empty_events

HEADER = ("event_id,t_a_ps,t_b_ps,dt_true_ps,dz_reco_um,dt_reco_ps,flavor_a,flavor_b,"
          "tag_a,tag_b,category,sample,weight")


@pytest.fixture(scope="module")
def observed():
    p = PhysicsParams()
    ev = generate_dataset(GeneratorConfig(1000, 3, p, {"signal": 0.8, "fake_dstar": 0.1,
                                                        "uncorrelated_dsl": 0.1}))
    return DetectorResponse(random_state=3).fit_transform(ev)


def test_header_is_exact():
    assert EVENT_HEADER == HEADER


def test_empty_is_header_only(tmp_path):
    path = write_events(tmp_path / "e.csv", empty_events())
    assert path.read_bytes() == (HEADER + "\n").encode()
    assert len(read_events(path)) == 0


def test_rewrite_is_bit_identical(tmp_path, observed):
    a = write_events(tmp_path / "a.csv", observed)
    b = write_events(tmp_path / "b.csv", read_events(a))
    assert a.read_bytes() == b.read_bytes()


def test_round_trip_to_nine_digits(observed):
    back = events_from_csv(events_to_csv(observed))
    for c in ("t_a_ps", "dz_reco_um", "dt_reco_ps"):
        np.testing.assert_allclose(back[c], observed[c], rtol=1e-8)
    for c in ("event_id", "flavor_a", "tag_b", "category", "sample"):
        assert (back[c] == observed[c]).all()


def test_numbers_use_nine_significant_digits():
    rec = EventRecord(0, 1.0 / 3.0, 0.0, 1.0 / 3.0, 1, -1, 1, -1)
    line = events_to_csv(records_to_frame([rec])).splitlines()[1]
    assert line.startswith("0,0.333333333,0,0.333333333,")


@pytest.mark.parametrize("category", CATEGORIES)
def test_every_category_accepted(category):
    rec = EventRecord(0, 1.0, 0.5, 0.5, 1, 1, 1, 1, category=category)
    assert events_from_csv(events_to_csv(records_to_frame([rec])))["category"][0] == category


@given(st.text(min_size=1, max_size=12).filter(lambda s: s not in CATEGORIES and "," not in s
                                                 and "\n" not in s and "\r" not in s and '"' not in s))
@settings(max_examples=50)
def test_other_categories_rejected(name):
    text = HEADER + f"\n0,1,0.5,0.5,,,1,1,1,1,{name},signal_region,1\n"
    with pytest.raises(EventFileError, match="row 2"):
        events_from_csv(text)


@pytest.mark.parametrize("row, pattern", [
    ("0,1,0.5,0.5,,,1,1,1,1,signal,signal_region", "row 3: expected 13 fields"),
    ("x,1,0.5,0.5,,,1,1,1,1,signal,signal_region,1", "row 3: malformed number"),
    ("1,1,0.5,0.5,,,2,1,1,1,signal,signal_region,1", "row 3: flavor_a"),
    ("1,-1,0.5,0.5,,,1,1,1,1,signal,signal_region,1", "row 3: t_a_ps"),
    ("1,1,0.5,0.5,,,1,1,1,1,signal,elsewhere,1", "row 3: unknown sample"),
])
def test_malformed_rows_reported_with_row_number(row, pattern):
    text = HEADER + "\n0,1,0.5,0.5,,,1,1,1,1,signal,signal_region,1\n" + row + "\n"
    with pytest.raises(EventFileError, match=pattern):
        events_from_csv(text)


def test_header_mismatch():
    with pytest.raises(EventFileError, match="header"):
        events_from_csv(HEADER.replace("weight", "w") + "\n")


def test_result_document_schema(observed):
    a = ChshAnalysis(dt_max=12).fit(observed)
    meta = RunMetadata.for_config(parse_config(""), "t").as_dict()
    doc = result_document(a, meta, combine_systematics({"x": 0.1}))
    validate_document(doc, RESULT_DOCUMENT_SCHEMA)
    assert doc["result"]["s_value"] == a.result_.s_value
    assert len(doc["bins"]) == 24
    bad = dict(doc, extra=1)
    with pytest.raises(ValidationError):
        validate_document(bad, RESULT_DOCUMENT_SCHEMA)


def test_json_never_contains_nan(tmp_path):
    path = write_json(tmp_path / "d.json", {"a": math.nan, "b": [np.float64(1.5), np.int64(2)]})
    assert json.loads(path.read_text()) == {"a": None, "b": [1.5, 2]}


def test_prediction_figures(tmp_path):
    p = PhysicsParams(delta_m=0.507)
    paths = emit_figures(tmp_path, params=p)
    assert {x.stem for x in paths} == {FIGURE_FILES[k] for k in ("photon", "meson_renormalized", "meson_damped")}
    photon = pd.read_csv(tmp_path / "fig1a_photon_chsh.csv")
    assert list(photon.columns) == ["theta_rad", "value", "sigma", "bound"]
    row = photon.iloc[(photon.theta_rad - math.pi / 4).abs().argmin()]
    assert row.theta_rad == pytest.approx(math.pi / 4, abs=1e-9)
    assert row.value == pytest.approx(2.8284271, abs=1e-7)
    assert (photon.bound == 2).all()
    damped = pd.read_csv(tmp_path / "fig1b_meson_chsh_damped.csv")
    assert damped.value.max() <= 2.0 + 1e-12
    meson = pd.read_csv(tmp_path / "fig1a_meson_chsh_renormalized.csv")
    x = p.delta_m * meson.dt_ps
    np.testing.assert_allclose(meson.value, 3 * np.cos(x) - np.cos(3 * x), atol=1e-8)


def test_analysis_figures_json(tmp_path, observed):
    a = ChshAnalysis().fit(observed)
    paths = emit_figures(tmp_path, analysis=a, fmt_="json")
    assert sorted(x.name for x in paths) == ["fig3a_correlation.json", "fig3b_chsh.json"]
    rows = json.loads((tmp_path / "fig3a_correlation.json").read_text())
    assert set(rows[0]) == {"dt_ps", "value", "sigma", "bound"}


def test_atomic_write_leaves_no_temp_files(tmp_path, observed):
    write_events(tmp_path / "e.csv", observed)
    assert [p.name for p in tmp_path.iterdir()] == ["e.csv"]
