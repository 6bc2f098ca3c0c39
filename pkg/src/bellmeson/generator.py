"""Monte Carlo generation of entangled meson-pair decays.

Quantum events use a two-step exact sampler: both decay times are drawn
independently from an exponential of mean τ, then the flavor pair is
drawn conditionally with P(opposite | Δt) = (1 + cos Δm Δt) / 2. The
product reproduces the joint decay density of :func:`physics.rate_joint`.

Local-hidden-variable events draw one hidden variable per pair and let
each side's flavor depend only on its own decay time and that variable.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import pandas as pd

from .physics import PhysicsParams
from .streams import CHUNK_SIZE, DOMAIN_GENERATOR, DOMAIN_LHV, check_seed, substream
from .validation import (
    CATEGORIES, CATEGORY_DTYPE, EVENT_COLUMNS, SAMPLE_DTYPE, coerce_events, empty_events,
)

QM_CATEGORIES = ("signal", "dss_mixing")


@dataclass(frozen=True)
class EventRecord:
    event_id: int
    t_a: float
    t_b: float
    dt_true: float
    flavor_a: int
    flavor_b: int
    tag_a: int
    tag_b: int
    category: str = "signal"
    sample: str = "signal_region"
    weight: float = 1.0
    dt_reco: float = math.nan
    dz_reco: float = math.nan

    def __post_init__(self):
        if not (self.t_a >= 0 and self.t_b >= 0):
            raise ValueError("decay times must be >= 0")
        if self.dt_true != abs(self.t_a - self.t_b):
            raise ValueError("dt_true must equal |t_a - t_b|")
        for name in ("flavor_a", "flavor_b", "tag_a", "tag_b"):
            if getattr(self, name) not in (1, -1):
                raise ValueError(f"{name} must be +1 or -1")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if not self.weight >= 0:
            raise ValueError("weight must be >= 0")


def records_to_frame(records) -> pd.DataFrame:
    rows = [
        (r.event_id, r.t_a, r.t_b, r.dt_true, r.dz_reco, r.dt_reco, r.flavor_a, r.flavor_b,
         r.tag_a, r.tag_b, r.category, r.sample, r.weight)
        for r in records
    ]
    df = pd.DataFrame.from_records(rows, columns=list(EVENT_COLUMNS))
    return coerce_events(df)


def frame_to_records(df: pd.DataFrame) -> list[EventRecord]:
    out = []
    for row in df.itertuples(index=False):
        out.append(EventRecord(
            event_id=int(row.event_id), t_a=float(row.t_a_ps), t_b=float(row.t_b_ps),
            dt_true=float(row.dt_true_ps), flavor_a=int(row.flavor_a), flavor_b=int(row.flavor_b),
            tag_a=int(row.tag_a), tag_b=int(row.tag_b), category=str(row.category),
            sample=str(row.sample), weight=float(row.weight), dt_reco=float(row.dt_reco_ps),
            dz_reco=float(row.dz_reco_um),
        ))
    return out


@dataclass(frozen=True)
class GeneratorConfig:
    n_events: int = 100_000
    seed: int = 0
    params: PhysicsParams = field(default_factory=PhysicsParams)
    category_fractions: Mapping[str, float] = field(default_factory=lambda: {"signal": 1.0})

    def __post_init__(self):
        if self.n_events < 0:
            raise ValueError("n_events must be >= 0")
        check_seed(self.seed)
        for name, frac in self.category_fractions.items():
            if name not in CATEGORIES:
                raise ValueError(f"unknown category {name!r} in category_fractions")
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"fraction for {name} must be in [0, 1], got {frac}")
        total = math.fsum(self.category_fractions.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"category fractions must sum to 1, got {total!r}")

    def fraction_vector(self) -> np.ndarray:
        p = np.array([float(self.category_fractions.get(c, 0.0)) for c in CATEGORIES])
        return p / p.sum()


def _qm_flavors(dt, delta_m, u_first, u_pair):
    flavor_a = np.where(u_first < 0.5, 1, -1).astype(np.int8)
    opposite = u_pair < 0.5 * (1.0 + np.cos(delta_m * dt))
    flavor_b = np.where(opposite, -flavor_a, flavor_a).astype(np.int8)
    return flavor_a, flavor_b


def _frame(event_id, t_a, t_b, flavor_a, flavor_b, category_codes) -> pd.DataFrame:
    n = len(t_a)
    return pd.DataFrame({
        "event_id": np.asarray(event_id, dtype=np.int64),
        "t_a_ps": t_a,
        "t_b_ps": t_b,
        "dt_true_ps": np.abs(t_a - t_b),
        "dz_reco_um": np.full(n, np.nan),
        "dt_reco_ps": np.full(n, np.nan),
        "flavor_a": flavor_a,
        "flavor_b": flavor_b,
        "tag_a": flavor_a.copy(),
        "tag_b": flavor_b.copy(),
        "category": pd.Categorical.from_codes(category_codes, dtype=CATEGORY_DTYPE),
        "sample": pd.Categorical.from_codes(np.zeros(n, dtype=np.int8), dtype=SAMPLE_DTYPE),
        "weight": np.ones(n),
    })


def sample_qm_pairs(n: int, params: PhysicsParams, stream: np.random.Generator,
                    first_id: int = 0) -> pd.DataFrame:
    """Vectorized :func:`sample_qm_pair` returning an event table."""
    t_a = stream.exponential(params.tau_b, n)
    t_b = stream.exponential(params.tau_b, n)
    u = stream.random((2, n))
    fa, fb = _qm_flavors(np.abs(t_a - t_b), params.delta_m, u[0], u[1])
    return _frame(np.arange(first_id, first_id + n), t_a, t_b, fa, fb, np.zeros(n, dtype=np.int8))


def sample_qm_pair(params: PhysicsParams, stream: np.random.Generator,
                   event_id: int = 0) -> EventRecord:
    t_a, t_b = stream.exponential(params.tau_b, 2)
    u_first, u_pair = stream.random(2)
    fa, fb = _qm_flavors(abs(t_a - t_b), params.delta_m, u_first, u_pair)
    fa, fb = int(fa), int(fb)
    return EventRecord(event_id, float(t_a), float(t_b), abs(float(t_a) - float(t_b)),
                       fa, fb, fa, fb)


def _generate_chunk(config: GeneratorConfig, k: int) -> pd.DataFrame:
    start = k * CHUNK_SIZE
    m = min(CHUNK_SIZE, config.n_events - start)
    rng = substream(config.seed, DOMAIN_GENERATOR, k)
    p = config.fraction_vector()
    codes = rng.choice(len(CATEGORIES), size=m, p=p).astype(np.int8)
    t_a = rng.exponential(config.params.tau_b, m)
    t_b = rng.exponential(config.params.tau_b, m)
    u = rng.random((3, m))
    fa, fb = _qm_flavors(np.abs(t_a - t_b), config.params.delta_m, u[0], u[1])

    cat = np.asarray(CATEGORIES)[codes]
    # charged B pairs cannot oscillate: always opposite flavor
    bpm = cat == "bpm_background"
    fb[bpm] = -fa[bpm]
    # combinatorial backgrounds: second flavor independent of the first
    indep = (cat == "fake_dstar") | (cat == "uncorrelated_dsl")
    fb[indep] = np.where(u[2][indep] < 0.5, 1, -1)
    return _frame(np.arange(start, start + m), t_a, t_b, fa, fb, codes)


def _run_chunks(fn, n_events: int, n_workers: int) -> pd.DataFrame:
    n_chunks = -(-n_events // CHUNK_SIZE)
    if n_chunks == 0:
        return empty_events()
    if n_workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            parts = list(pool.map(fn, range(n_chunks)))
    else:
        parts = [fn(k) for k in range(n_chunks)]
    return pd.concat(parts, ignore_index=True)


def generate_dataset(config: GeneratorConfig, n_workers: int = 1) -> pd.DataFrame:
    """Generate ``config.n_events`` true-level events.

    Categories are drawn from ``config.category_fractions``. Output depends
    only on the config, never on ``n_workers``.
    """
    return _run_chunks(lambda k: _generate_chunk(config, k), config.n_events, n_workers)


# --------------------------------------------------------------------------
# local hidden variables

Sampler = Callable[[np.random.Generator, int], np.ndarray]
Outcome = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LhvStrategy:
    """A hidden-variable distribution and two local outcome functions.

    ``outcome_a`` receives side a's decay time and λ only, ``outcome_b``
    side b's; neither can see the other side's time.
    """

    name: str
    hidden_sampler: Sampler
    outcome_a: Outcome
    outcome_b: Outcome


def _checked_outcome(fn, t, lam, side, name):
    out = np.asarray(fn(t, lam))
    if out.shape != t.shape or not np.isin(out, (1, -1)).all():
        raise ValueError(f"strategy {name!r} side {side} must return +1/-1 per event")
    return out.astype(np.int8)


def sample_lhv_pairs(strategy: LhvStrategy, n: int, params: PhysicsParams,
                     stream: np.random.Generator, first_id: int = 0) -> pd.DataFrame:
    t_a = stream.exponential(params.tau_b, n)
    t_b = stream.exponential(params.tau_b, n)
    lam = strategy.hidden_sampler(stream, n)
    fa = _checked_outcome(strategy.outcome_a, t_a, lam, "a", strategy.name)
    fb = _checked_outcome(strategy.outcome_b, t_b, lam, "b", strategy.name)
    return _frame(np.arange(first_id, first_id + n), t_a, t_b, fa, fb, np.zeros(n, dtype=np.int8))


def sample_lhv_pair(strategy: LhvStrategy, params: PhysicsParams,
                    stream: np.random.Generator, event_id: int = 0) -> EventRecord:
    t_a, t_b = stream.exponential(params.tau_b, 2)
    lam = strategy.hidden_sampler(stream, 1)
    fa = int(_checked_outcome(strategy.outcome_a, np.array([t_a]), lam, "a", strategy.name)[0])
    fb = int(_checked_outcome(strategy.outcome_b, np.array([t_b]), lam, "b", strategy.name)[0])
    return EventRecord(event_id, float(t_a), float(t_b), abs(float(t_a) - float(t_b)),
                       fa, fb, fa, fb)


def generate_lhv_dataset(strategy: LhvStrategy, n_events: int, params: PhysicsParams,
                         seed: int, n_workers: int = 1) -> pd.DataFrame:
    def chunk(k):
        start = k * CHUNK_SIZE
        m = min(CHUNK_SIZE, n_events - start)
        return sample_lhv_pairs(strategy, m, params, substream(seed, DOMAIN_LHV, k), start)
    return _run_chunks(chunk, n_events, n_workers)


def _sgn(x):
    return np.where(x >= 0, 1, -1)


def static_flavor_strategy() -> LhvStrategy:
    """λ = ±1 fixes both flavors at creation; always opposite."""
    return LhvStrategy(
        name="static-flavor",
        hidden_sampler=lambda rng, n: np.where(rng.random(n) < 0.5, 1, -1),
        outcome_a=lambda t, lam: lam,
        outcome_b=lambda t, lam: -lam,
    )


def local_oscillation_strategy(delta_m: float) -> LhvStrategy:
    """Each side carries a classical clock with shared random phase φ.

    Side outputs sgn cos(Δm t + φ), with b's sign flipped. The resulting
    correlation is a triangle wave in Δm Δt, saturating S = 2 for
    Δm Δt <= π/3.
    """
    return LhvStrategy(
        name="local-oscillation",
        hidden_sampler=lambda rng, n: rng.uniform(0.0, 2.0 * np.pi, n),
        outcome_a=lambda t, phi: _sgn(np.cos(delta_m * t + phi)),
        outcome_b=lambda t, phi: -_sgn(np.cos(delta_m * t + phi)),
    )


def random_local_strategy(rng: np.random.Generator, name: str = "random") -> LhvStrategy:
    """A random periodic sign-pattern strategy with a shared uniform phase.

    Each side reads a random ±1 pattern of K cells at its own decay time,
    shifted by a common phase drawn uniformly from [0, 1).
    """
    omega = float(rng.uniform(0.2, 1.5))
    k = int(rng.integers(2, 9))
    pat_a = np.where(rng.random(k) < 0.5, 1, -1)
    pat_b = np.where(rng.random(k) < 0.5, 1, -1)

    def cell(t, u):
        x = omega * t / (2.0 * np.pi) + u
        return np.floor((x - np.floor(x)) * k).astype(np.int64) % k

    return LhvStrategy(
        name=name,
        hidden_sampler=lambda r, n: r.random(n),
        outcome_a=lambda t, u: pat_a[cell(t, u)],
        outcome_b=lambda t, u: pat_b[cell(t, u)],
    )


def builtin_strategies(params: PhysicsParams) -> list[LhvStrategy]:
    return [static_flavor_strategy(), local_oscillation_strategy(params.delta_m)]
