"""Event files, JSON result documents and figure-data tables.

All numeric text uses 9 significant digits and a "." decimal separator.
Every file is written to a temporary sibling and renamed into place.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd

from .analysis import ChshAnalysis, ChshResult, CorrelationEstimate, SystematicsBudget, s_panel
from .physics import (
    PhysicsParams, chsh_s_damped, chsh_s_meson, chsh_s_photon,
)
from .validation import CATEGORIES, EVENT_COLUMNS, SAMPLES, EventSchemaError, check_events, coerce_events

FLOAT_FORMAT = "%.9g"
EVENT_HEADER = ",".join(EVENT_COLUMNS)

_INT_COLUMNS = ("event_id", "flavor_a", "flavor_b", "tag_a", "tag_b")
_STR_COLUMNS = ("category", "sample")


class EventFileError(ValueError):
    pass


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def fmt(x) -> str:
    return FLOAT_FORMAT % x


# --------------------------------------------------------------------------
# events


def events_to_csv(events: pd.DataFrame) -> str:
    df = check_events(events)
    buf = io.StringIO()
    df.loc[:, list(EVENT_COLUMNS)].to_csv(buf, index=False, float_format=FLOAT_FORMAT,
                                          lineterminator="\n")
    return buf.getvalue()


def write_events(path, events: pd.DataFrame) -> Path:
    return atomic_write_text(path, events_to_csv(events))


def _locate_bad_row(text: str) -> str:
    for rowno, line in enumerate(text.splitlines()[1:], start=2):
        try:
            row = next(csv.reader([line]), [])
        except csv.Error as exc:
            return f"row {rowno}: {exc}"
        if len(row) != len(EVENT_COLUMNS):
            return f"row {rowno}: expected {len(EVENT_COLUMNS)} fields, got {len(row)}"
        rec = dict(zip(EVENT_COLUMNS, row))
        try:
            for c in _INT_COLUMNS:
                int(rec[c])
            for c in EVENT_COLUMNS:
                if c not in _INT_COLUMNS and c not in _STR_COLUMNS and rec[c] != "":
                    float(rec[c])
        except ValueError:
            return f"row {rowno}: malformed number in {row!r}"
        if rec["category"] not in CATEGORIES:
            return f"row {rowno}: unknown category {rec['category']!r}"
        if rec["sample"] not in SAMPLES:
            return f"row {rowno}: unknown sample {rec['sample']!r}"
        for c in ("flavor_a", "flavor_b", "tag_a", "tag_b"):
            if int(rec[c]) not in (1, -1):
                return f"row {rowno}: {c} must be +1 or -1"
        for c in ("t_a_ps", "t_b_ps", "weight"):
            if not float(rec[c]) >= 0:
                return f"row {rowno}: {c} must be >= 0"
    return "malformed event file"


def events_from_csv(text: str) -> pd.DataFrame:
    first = text.split("\n", 1)[0].rstrip("\r")
    if first != EVENT_HEADER:
        raise EventFileError(f"header mismatch: expected {EVENT_HEADER!r}, got {first!r}")
    dtypes = {c: (np.int64 if c in _INT_COLUMNS else str if c in _STR_COLUMNS else np.float64)
              for c in EVENT_COLUMNS}
    try:
        df = pd.read_csv(io.StringIO(text), dtype=dtypes, keep_default_na=False,
                         na_values={c: [""] for c in EVENT_COLUMNS if dtypes[c] is np.float64})
        if df.isna()[[*_INT_COLUMNS, "t_a_ps", "t_b_ps", "weight"]].any().any():
            raise ValueError("missing value")
        return check_events(coerce_events(df))
    except (ValueError, EventSchemaError, pd.errors.ParserError, csv.Error):
        raise EventFileError(_locate_bad_row(text)) from None


def read_events(path) -> pd.DataFrame:
    with open(path, encoding="utf-8", newline="") as f:
        return events_from_csv(f.read())


# --------------------------------------------------------------------------
# JSON documents

def _clean(obj):
    """Replace non-finite floats with None and numpy scalars with Python ones."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _obj(props: dict, required=None) -> dict:
    return {"type": "object", "properties": props,
            "required": list(props if required is None else required),
            "additionalProperties": False}


NUM = {"type": ["number", "null"]}
INT = {"type": "integer"}
STR = {"type": "string"}
FLAGS = {"type": "array", "items": STR}

METADATA_SCHEMA = _obj({
    "toolkit_version": STR, "config_hash": STR, "seed": INT,
    "generator_algorithm": STR, "timestamp": STR,
})

CHSH_RESULT_SCHEMA = _obj({
    "dt_center_ps": NUM, "dt_halfwidth_ps": NUM, "far_center_ps": NUM, "far_halfwidth_ps": NUM,
    "s_value": NUM, "sigma_stat": NUM, "sigma_syst": NUM, "significance": NUM, "flags": FLAGS,
})

ESTIMATE_SCHEMA = _obj({
    "dt_lo_ps": NUM, "dt_hi_ps": NUM, "dt_center_ps": NUM, "e_r": NUM, "sigma_stat": NUM,
    "n_eff": NUM, "flags": FLAGS,
})

BIN_SCHEMA = _obj({
    "dt_lo_ps": NUM, "dt_hi_ps": NUM, "dt_center_ps": NUM, "n_sf": NUM, "n_of": NUM,
    "e_r": NUM, "sigma_stat": NUM, "flags": FLAGS,
})

SYSTEMATICS_SCHEMA = _obj({
    "sources": {"type": "array", "items": _obj({"name": STR, "shift": NUM, "s_up": NUM, "s_down": NUM})},
    "total": NUM,
})

RESULT_DOCUMENT_SCHEMA = _obj({
    "metadata": METADATA_SCHEMA,
    "result": CHSH_RESULT_SCHEMA,
    "windows": _obj({"near": ESTIMATE_SCHEMA, "far": ESTIMATE_SCHEMA}),
    "bins": {"type": "array", "items": BIN_SCHEMA},
    "analysis": _obj({"window_choice": STR, "far_window_scale": NUM, "correct_dilution": {"type": "boolean"},
                      "dilution": NUM, "subtract_background": {"type": "boolean"}, "n_selected": INT}),
    "systematics": {"oneOf": [SYSTEMATICS_SCHEMA, {"type": "null"}]},
})

SYSTEMATICS_DOCUMENT_SCHEMA = _obj({
    "metadata": METADATA_SCHEMA, "baseline": CHSH_RESULT_SCHEMA, "systematics": SYSTEMATICS_SCHEMA,
})

ENSEMBLE_DOCUMENT_SCHEMA = _obj({
    "metadata": METADATA_SCHEMA,
    "summary": _obj({
        "n_experiments": INT, "n_failed": INT, "s_analytic": NUM, "s_mean": NUM, "s_std": NUM,
        "sigma_stat_mean": NUM, "pull_mean": NUM, "pull_std": NUM,
        "significance_threshold": NUM, "fraction_significant": NUM,
    }),
    "sigma_syst": NUM,
    "experiments": {"type": "array", "items": _obj({"s_value": NUM, "sigma_stat": NUM, "significance": NUM})},
})

LHV_DOCUMENT_SCHEMA = _obj({
    "metadata": METADATA_SCHEMA,
    "strategies": {"type": "array", "items": _obj({
        "name": STR, "local": {"type": "boolean"}, "max_s": NUM, "sigma_at_max": NUM,
        "dt_at_max_ps": NUM, "max_excess_sigma": NUM,
        "points": {"type": "array", "items": _obj({"dt_ps": NUM, "s_value": NUM, "sigma_stat": NUM})},
    })},
    "bound_respected": {"type": "boolean"},
})

EVENTS_METADATA_SCHEMA = _obj({
    "metadata": METADATA_SCHEMA, "n_generated": INT, "n_written": INT,
    "category_counts": {"type": "object", "additionalProperties": INT},
    "sample_counts": {"type": "object", "additionalProperties": INT},
})


def result_to_dict(r: ChshResult) -> dict:
    return {
        "dt_center_ps": r.dt_center, "dt_halfwidth_ps": r.dt_halfwidth,
        "far_center_ps": r.far_center, "far_halfwidth_ps": r.far_halfwidth,
        "s_value": r.s_value, "sigma_stat": r.sigma_stat, "sigma_syst": r.sigma_syst,
        "significance": r.significance, "flags": list(r.flags),
    }


def estimate_to_dict(e: CorrelationEstimate) -> dict:
    return {"dt_lo_ps": e.lo, "dt_hi_ps": e.hi, "dt_center_ps": e.dt_center, "e_r": e.e_r,
            "sigma_stat": e.sigma_stat, "n_eff": e.n_eff, "flags": list(e.flags)}


def budget_to_dict(b: SystematicsBudget) -> dict:
    return {"sources": [{"name": s.name, "shift": s.shift, "s_up": s.s_up, "s_down": s.s_down}
                        for s in b.sources],
            "total": b.total}


def result_document(analysis: ChshAnalysis, metadata: dict,
                    budget: SystematicsBudget | None = None) -> dict:
    table = analysis.correlation_table()
    bins = [
        {"dt_lo_ps": r.dt_lo_ps, "dt_hi_ps": r.dt_hi_ps, "dt_center_ps": r.dt_center_ps,
         "n_sf": r.n_sf, "n_of": r.n_of, "e_r": r.e_r, "sigma_stat": r.sigma_stat,
         "flags": [f for f in r.flags.split(";") if f]}
        for r in table.itertuples(index=False)
    ]
    return _clean({
        "metadata": metadata,
        "result": result_to_dict(analysis.result_),
        "windows": {"near": estimate_to_dict(analysis.near_), "far": estimate_to_dict(analysis.far_)},
        "bins": bins,
        "analysis": {
            "window_choice": "proportional: far window = 3*dt_center +/- far_window_scale*dt_halfwidth",
            "far_window_scale": analysis.far_window_scale,
            "correct_dilution": bool(analysis.correct_dilution),
            "dilution": analysis.dilution_,
            "subtract_background": bool(analysis.subtract_background),
            "n_selected": analysis.n_selected_,
        },
        "systematics": None if budget is None else budget_to_dict(budget),
    })


def validate_document(doc: dict, schema: dict) -> None:
    jsonschema.validate(doc, schema)


def write_json(path, doc: dict, schema: dict | None = None) -> Path:
    doc = _clean(doc)
    if schema is not None:
        validate_document(doc, schema)
    return atomic_write_text(path, json.dumps(doc, indent=2, allow_nan=False) + "\n")


# --------------------------------------------------------------------------
# figure data

FIGURE_FILES = {
    "photon": "fig1a_photon_chsh",
    "meson_renormalized": "fig1a_meson_chsh_renormalized",
    "meson_damped": "fig1b_meson_chsh_damped",
    "er": "fig3a_correlation",
    "s": "fig3b_chsh",
    "of": "fig5a_opposite_flavor",
    "sf": "fig5b_same_flavor",
    "e_r": "fig5c_correlation",
    "s_compare": "fig5d_chsh",
}


def write_table(path_base, df: pd.DataFrame, fmt_: str = "csv") -> Path:
    path_base = Path(path_base)
    if fmt_ == "json":
        records = _clean(df.to_dict(orient="records"))
        return atomic_write_text(path_base.with_suffix(".json"),
                                 json.dumps(records, indent=1, allow_nan=False) + "\n")
    text = df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path_base.with_suffix(".csv"), text)


def prediction_tables(params: PhysicsParams, n_points: int = 721) -> dict[str, pd.DataFrame]:
    theta = np.linspace(0.0, np.pi, n_points)
    dt = np.linspace(0.0, 8.0, n_points)
    zeros = np.zeros(n_points)
    bound = np.full(n_points, 2.0)
    return {
        "photon": pd.DataFrame({"theta_rad": theta, "value": chsh_s_photon(theta),
                                "sigma": zeros, "bound": bound}),
        "meson_renormalized": pd.DataFrame({"dt_ps": dt, "value": chsh_s_meson(dt, params),
                                            "sigma": zeros, "bound": bound}),
        "meson_damped": pd.DataFrame({"dt_ps": dt, "value": chsh_s_damped(0.0, dt, params),
                                      "sigma": zeros, "bound": bound}),
    }


def analysis_tables(analysis: ChshAnalysis) -> dict[str, pd.DataFrame]:
    t = analysis.correlation_table()
    s, s_sig = s_panel(analysis.signal_counts_, analysis.dilution_)
    bound = np.full(len(t), 2.0)
    return {
        "er": pd.DataFrame({"dt_ps": t.dt_center_ps, "value": t.e_r, "sigma": t.sigma_stat,
                            "bound": bound}),
        "s": pd.DataFrame({"dt_ps": t.dt_center_ps, "value": s, "sigma": s_sig, "bound": bound}),
    }


def comparison_tables(panels) -> dict[str, pd.DataFrame]:
    out = {}
    for key, panel in panels.items():
        t = panel.table
        out["s_compare" if key == "s" else key] = pd.DataFrame({
            "dt_ps": t.dt_center_ps, "value": t.value, "sigma": t.sigma,
            "bound": np.full(len(t), 2.0), "mc_value": t.mc_value, "mc_sigma": t.mc_sigma,
            "pull": t.pull,
        })
    return out


def emit_figures(out_dir, params: PhysicsParams | None = None, analysis: ChshAnalysis | None = None,
                 comparison=None, fmt_: str = "csv") -> list[Path]:
    """Write one table per figure panel; returns the written paths.

    File stems are fixed in :data:`FIGURE_FILES`.
    """
    tables = {}
    if params is not None:
        tables.update(prediction_tables(params))
    if analysis is not None:
        tables.update(analysis_tables(analysis))
    if comparison is not None:
        tables.update(comparison_tables(comparison))
    return [write_table(Path(out_dir) / FIGURE_FILES[k], df, fmt_) for k, df in tables.items()]
