"""Event-table schema and input validation helpers.

Event sets are carried as ``pandas.DataFrame`` objects whose columns follow
the event-file header. These helpers play the role of ``check_array`` for
the estimators in this package.
"""
from __future__ import annotations

import numpy as np
import pandas as pd

CATEGORIES = ("signal", "dss_mixing", "bpm_background", "fake_dstar", "uncorrelated_dsl")
SAMPLES = ("signal_region", "sideband", "reversed_lepton_control")

EVENT_COLUMNS = (
    "event_id", "t_a_ps", "t_b_ps", "dt_true_ps", "dz_reco_um", "dt_reco_ps",
    "flavor_a", "flavor_b", "tag_a", "tag_b", "category", "sample", "weight",
)

CATEGORY_DTYPE = pd.CategoricalDtype(CATEGORIES)
SAMPLE_DTYPE = pd.CategoricalDtype(SAMPLES)

_FLAVOR_COLUMNS = ("flavor_a", "flavor_b", "tag_a", "tag_b")


class EventSchemaError(ValueError):
    """Event table does not satisfy the event schema."""


def empty_events() -> pd.DataFrame:
    df = pd.DataFrame({c: pd.Series(dtype=float) for c in EVENT_COLUMNS})
    return coerce_events(df)


def coerce_events(df: pd.DataFrame) -> pd.DataFrame:
    df["event_id"] = df["event_id"].astype(np.int64)
    for c in _FLAVOR_COLUMNS:
        df[c] = df[c].astype(np.int8)
    df["category"] = df["category"].astype(CATEGORY_DTYPE)
    df["sample"] = df["sample"].astype(SAMPLE_DTYPE)
    return df


def check_events(X, *, observed: bool = False, copy: bool = False) -> pd.DataFrame:
    """Validate an event table and return it with canonical dtypes.

    With ``observed=True`` the reconstructed columns must be filled in.
    """
    if not isinstance(X, pd.DataFrame):
        raise EventSchemaError(f"expected a pandas DataFrame of events, got {type(X).__name__}")
    missing = [c for c in EVENT_COLUMNS if c not in X.columns]
    if missing:
        raise EventSchemaError(f"missing event columns: {', '.join(missing)}")
    df = X.copy() if copy else X

    cat = df["category"].astype(object)
    bad = ~cat.isin(CATEGORIES)
    if bad.any():
        raise EventSchemaError(f"unknown category {cat[bad].iloc[0]!r}")
    smp = df["sample"].astype(object)
    bad = ~smp.isin(SAMPLES)
    if bad.any():
        raise EventSchemaError(f"unknown sample {smp[bad].iloc[0]!r}")
    for c in _FLAVOR_COLUMNS:
        v = df[c].to_numpy()
        if not np.isin(v, (1, -1)).all():
            raise EventSchemaError(f"{c} values must be +1 or -1")
    t_a = df["t_a_ps"].to_numpy(dtype=float)
    t_b = df["t_b_ps"].to_numpy(dtype=float)
    if not ((t_a >= 0).all() and (t_b >= 0).all()):
        raise EventSchemaError("decay times must be >= 0")
    if not (df["weight"].to_numpy(dtype=float) >= 0).all():
        raise EventSchemaError("weights must be >= 0")
    if observed:
        dt = df["dt_reco_ps"].to_numpy(dtype=float)
        if not (dt >= 0).all():
            raise EventSchemaError("dt_reco_ps must be filled and >= 0 for observed events")
    if (
        df["category"].dtype != CATEGORY_DTYPE
        or df["sample"].dtype != SAMPLE_DTYPE
        or df["event_id"].dtype != np.int64
        or any(df[c].dtype != np.int8 for c in _FLAVOR_COLUMNS)
    ):
        if not copy:
            df = df.copy()
        df = coerce_events(df)
    return df
