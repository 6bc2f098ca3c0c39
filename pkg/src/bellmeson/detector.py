"""Parametric detector response.

Maps true-level events to observed ones: decay-time difference to vertex
separation along the boost, Gaussian vertex smearing, independent mistags
on each side, a flat selection efficiency, and the split of background
species into signal region and control samples.

Frame-level functions take either a ``numpy.random.Generator`` (draws are
consumed sequentially) or an integer seed. With a seed, every event's
randomness is keyed by its ``event_id``, so results do not depend on
which other events are present or how the work is partitioned.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .generator import EventRecord, records_to_frame
from .physics import C_UM_PER_PS, DEFAULT_BETA_GAMMA
from .streams import CHUNK_SIZE, DOMAIN_DETECTOR, substream
from .validation import SAMPLE_DTYPE, SAMPLES, check_events

DOMAIN_SAMPLES = 5


@dataclass(frozen=True)
class DetectorParams:
    beta_gamma: float = DEFAULT_BETA_GAMMA
    dz_sigma: float = 100.0
    omega_a: float = 0.03
    omega_b: float = 0.03
    efficiency: float = 1.0
    sideband_scale: float = 1.0
    control_scale: float = 1.0

    def __post_init__(self):
        if not self.beta_gamma > 0:
            raise ValueError(f"beta_gamma must be > 0, got {self.beta_gamma}")
        if not self.dz_sigma >= 0:
            raise ValueError(f"dz_sigma must be >= 0, got {self.dz_sigma}")
        for name in ("omega_a", "omega_b"):
            if not 0.0 <= getattr(self, name) < 0.5:
                raise ValueError(f"{name} must be in [0, 0.5), got {getattr(self, name)}")
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError(f"efficiency must be in (0, 1], got {self.efficiency}")
        for name in ("sideband_scale", "control_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")

    @classmethod
    def ideal(cls, beta_gamma: float = DEFAULT_BETA_GAMMA) -> DetectorParams:
        return cls(beta_gamma=beta_gamma, dz_sigma=0.0, omega_a=0.0, omega_b=0.0)

    @property
    def dilution(self) -> float:
        """Product of the per-side dilutions r = 1 - 2ω."""
        return (1.0 - 2.0 * self.omega_a) * (1.0 - 2.0 * self.omega_b)


@dataclass(frozen=True)
class ObservedEvent(EventRecord):
    dz_true: float = math.nan


def dt_from_dz(dz, params: DetectorParams):
    """|Δz| / (βγ c) in ps, for Δz in micrometers."""
    out = np.abs(np.asarray(dz, dtype=float)) / (params.beta_gamma * C_UM_PER_PS)
    return float(out) if out.ndim == 0 else out


def dz_from_dt(dt, params: DetectorParams):
    out = np.asarray(dt, dtype=float) * (params.beta_gamma * C_UM_PER_PS)
    return float(out) if out.ndim == 0 else out


def _keyed_uniforms(event_id: np.ndarray, seed: int, domain: int, n_normal: int, n_uniform: int):
    """Per-event draws keyed by event_id: (normals, uniforms) of shape (k, n)."""
    n = len(event_id)
    normals = np.empty((n_normal, n))
    uniforms = np.empty((n_uniform, n))
    chunk = event_id // CHUNK_SIZE
    offset = event_id % CHUNK_SIZE
    for k in np.unique(chunk):
        sel = chunk == k
        rng = substream(seed, domain, int(k))
        g = rng.standard_normal((n_normal, CHUNK_SIZE))
        u = rng.random((n_uniform, CHUNK_SIZE))
        normals[:, sel] = g[:, offset[sel]]
        uniforms[:, sel] = u[:, offset[sel]]
    return normals, uniforms


def _draws(df, stream, domain, n_normal, n_uniform):
    n = len(df)
    if isinstance(stream, np.random.Generator):
        return stream.standard_normal((n_normal, n)), stream.random((n_uniform, n))
    return _keyed_uniforms(df["event_id"].to_numpy(np.int64), int(stream), domain,
                           n_normal, n_uniform)


def _smear_frame(df: pd.DataFrame, params: DetectorParams, stream) -> pd.DataFrame:
    g, u = _draws(df, stream, DOMAIN_DETECTOR, 1, 3)
    bgc = params.beta_gamma * C_UM_PER_PS
    dz_true = (df["t_a_ps"].to_numpy() - df["t_b_ps"].to_numpy()) * bgc
    dz_reco = dz_true + params.dz_sigma * g[0]
    out = df.copy()
    out["dz_true_um"] = dz_true
    out["dz_reco_um"] = dz_reco
    out["dt_reco_ps"] = np.abs(dz_reco) / bgc
    fa = df["flavor_a"].to_numpy()
    fb = df["flavor_b"].to_numpy()
    out["tag_a"] = np.where(u[0] < params.omega_a, -fa, fa).astype(np.int8)
    out["tag_b"] = np.where(u[1] < params.omega_b, -fb, fb).astype(np.int8)
    keep = u[2] < params.efficiency
    return out.loc[keep].reset_index(drop=True)


def smear_and_tag(events, params: DetectorParams, stream):
    """Apply vertex smearing, mistagging and efficiency.

    Accepts a single :class:`EventRecord` (returns an :class:`ObservedEvent`,
    or ``None`` when the event fails selection) or an event table.
    """
    if isinstance(events, EventRecord):
        df = _smear_frame(_one_row(events), params, stream)
        if df.empty:
            return None
        row = df.iloc[0]
        return ObservedEvent(**{
            **asdict(events),
            "tag_a": int(row["tag_a"]), "tag_b": int(row["tag_b"]),
            "dz_reco": float(row["dz_reco_um"]), "dt_reco": float(row["dt_reco_ps"]),
            "dz_true": float(row["dz_true_um"]),
        })
    return _smear_frame(check_events(events), params, stream)


def _one_row(event: EventRecord) -> pd.DataFrame:
    return records_to_frame([event])


def assign_samples(events, params: DetectorParams, stream):
    """Split fake-D* into signal region / sideband and uncorrelated D*l into
    signal region / reversed-lepton control, with yields 1 : scale.
    """
    if isinstance(events, EventRecord):
        df = assign_samples(_one_row(events), params, stream)
        return replace(events, sample=str(df["sample"].iloc[0]))
    df = check_events(events)
    _, u = _draws(df, stream, DOMAIN_SAMPLES, 0, 1)
    cat = df["category"].to_numpy(dtype=object)
    codes = np.zeros(len(df), dtype=np.int8)
    p_side = params.sideband_scale / (1.0 + params.sideband_scale)
    p_ctrl = params.control_scale / (1.0 + params.control_scale)
    codes[(cat == "fake_dstar") & (u[0] < p_side)] = SAMPLES.index("sideband")
    codes[(cat == "uncorrelated_dsl") & (u[0] < p_ctrl)] = SAMPLES.index("reversed_lepton_control")
    out = df.copy()
    out["sample"] = pd.Categorical.from_codes(codes, dtype=SAMPLE_DTYPE)
    return out


class DetectorResponse(TransformerMixin, BaseEstimator):
    """Transformer turning true-level events into observed events.

    Parameters mirror :class:`DetectorParams`. ``random_state`` is an
    integer seed (per-event keyed draws) or a ``numpy.random.Generator``.
    """

    def __init__(self, beta_gamma=DEFAULT_BETA_GAMMA, dz_sigma=100.0, omega_a=0.03,
                 omega_b=0.03, efficiency=1.0, sideband_scale=1.0, control_scale=1.0,
                 random_state=0):
        self.beta_gamma = beta_gamma
        self.dz_sigma = dz_sigma
        self.omega_a = omega_a
        self.omega_b = omega_b
        self.efficiency = efficiency
        self.sideband_scale = sideband_scale
        self.control_scale = control_scale
        self.random_state = random_state

    @classmethod
    def from_params(cls, params: DetectorParams, random_state=0) -> DetectorResponse:
        return cls(**asdict(params), random_state=random_state)

    def fit(self, X=None, y=None):
        self.detector_params_ = DetectorParams(
            beta_gamma=self.beta_gamma, dz_sigma=self.dz_sigma, omega_a=self.omega_a,
            omega_b=self.omega_b, efficiency=self.efficiency,
            sideband_scale=self.sideband_scale, control_scale=self.control_scale,
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "detector_params_")
        X = check_events(X)
        out = smear_and_tag(X, self.detector_params_, self.random_state)
        return assign_samples(out, self.detector_params_, self.random_state)
