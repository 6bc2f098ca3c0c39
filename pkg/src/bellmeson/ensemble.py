"""Pseudo-experiment ensembles."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import clone

from .analysis import AnalysisError, ChshAnalysis, ChshResult, chsh_scan
from .detector import DetectorParams, DetectorResponse
from .generator import (
    GeneratorConfig, LhvStrategy, builtin_strategies, generate_dataset, generate_lhv_dataset,
    random_local_strategy,
)
from .physics import PhysicsParams, expected_s_window
from .streams import DOMAIN_ENSEMBLE, DOMAIN_LHV, derive_seed, substream

log = logging.getLogger(__name__)


@dataclass
class EnsembleSummary:
    n_experiments: int
    n_failed: int = 0
    s_analytic: float = math.nan
    s_mean: float = math.nan
    s_std: float = math.nan
    sigma_stat_mean: float = math.nan
    pull_mean: float = math.nan
    pull_std: float = math.nan
    significance_threshold: float = 3.0
    fraction_significant: float = math.nan
    results: list[ChshResult] = field(default_factory=list, repr=False)

    @property
    def pulls(self) -> np.ndarray:
        return np.array([(r.s_value - self.s_analytic) / r.sigma_stat for r in self.results])

    def as_dict(self) -> dict:
        return {
            "n_experiments": self.n_experiments,
            "n_failed": self.n_failed,
            "s_analytic": self.s_analytic,
            "s_mean": self.s_mean,
            "s_std": self.s_std,
            "sigma_stat_mean": self.sigma_stat_mean,
            "pull_mean": self.pull_mean,
            "pull_std": self.pull_std,
            "significance_threshold": self.significance_threshold,
            "fraction_significant": self.fraction_significant,
        }


def run_experiment(index: int, seed: int, generator: GeneratorConfig, detector: DetectorParams,
                   analysis: ChshAnalysis) -> ChshResult:
    """One pseudo-experiment on its own substream."""
    sub = derive_seed(seed, DOMAIN_ENSEMBLE, index)
    events = generate_dataset(replace(generator, seed=sub))
    observed = DetectorResponse.from_params(detector, random_state=sub).fit_transform(events)
    return clone(analysis).fit(observed).result_


def run_ensemble(generator: GeneratorConfig, detector: DetectorParams, analysis: ChshAnalysis,
                 n_experiments: int, seed: int | None = None, significance_threshold: float = 3.0,
                 n_workers: int = 1) -> EnsembleSummary:
    """Run ``n_experiments`` pseudo-experiments and summarize S.

    ``analysis.sigma_syst`` enters the significance of every experiment.
    Pulls are taken against the ideal-detector window expectation of S.
    Results depend on ``seed`` (default: ``generator.seed``) only.
    """
    seed = generator.seed if seed is None else seed
    s_analytic = expected_s_window(analysis.dt_center, analysis.dt_halfwidth,
                                   generator.params, analysis.far_window_scale)
    summary = EnsembleSummary(n_experiments, s_analytic=s_analytic,
                              significance_threshold=significance_threshold)
    if n_experiments <= 0:
        return summary

    def one(i):
        try:
            return run_experiment(i, seed, generator, detector, analysis)
        except AnalysisError as exc:
            log.warning("pseudo-experiment %d failed: %s", i, exc)
            return None

    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            outcomes = list(pool.map(one, range(n_experiments)))
    else:
        outcomes = [one(i) for i in range(n_experiments)]

    results = [r for r in outcomes if r is not None]
    summary.results = results
    summary.n_failed = n_experiments - len(results)
    if not results:
        return summary
    s = np.array([r.s_value for r in results])
    sig = np.array([r.sigma_stat for r in results])
    signif = np.array([r.significance for r in results])
    pulls = (s - s_analytic) / sig
    summary.s_mean = float(s.mean())
    summary.s_std = float(s.std(ddof=1)) if len(s) > 1 else 0.0
    summary.sigma_stat_mean = float(sig.mean())
    summary.pull_mean = float(pulls.mean())
    summary.pull_std = float(pulls.std(ddof=1)) if len(s) > 1 else 0.0
    summary.fraction_significant = float(np.mean(signif >= significance_threshold))
    return summary


@dataclass
class LhvTestResult:
    name: str
    dt_values: list[float]
    results: list[ChshResult]
    local: bool = True

    @property
    def excess_sigma(self) -> np.ndarray:
        return np.array([(r.s_value - 2.0) / r.sigma_stat for r in self.results])

    @property
    def argmax(self) -> int:
        return int(np.argmax([r.s_value for r in self.results]))

    def as_dict(self) -> dict:
        i = self.argmax
        return {
            "name": self.name,
            "local": self.local,
            "max_s": self.results[i].s_value,
            "sigma_at_max": self.results[i].sigma_stat,
            "dt_at_max_ps": self.dt_values[i],
            "max_excess_sigma": float(self.excess_sigma.max()),
            "points": [{"dt_ps": t, "s_value": r.s_value, "sigma_stat": r.sigma_stat}
                       for t, r in zip(self.dt_values, self.results)],
        }


def lhv_strategies(params: PhysicsParams, n_random: int, seed: int) -> list[LhvStrategy]:
    """Built-in strategies followed by ``n_random`` randomized local ones."""
    rng = substream(seed, DOMAIN_LHV, 1 << 20)
    return builtin_strategies(params) + [
        random_local_strategy(rng, f"random-{i:02d}") for i in range(n_random)
    ]


def run_lhv_test(params: PhysicsParams, n_events: int, dt_values, halfwidth: float,
                 n_random: int = 20, seed: int = 0, n_workers: int = 1,
                 include_qm: bool = False) -> list[LhvTestResult]:
    """Measure S for each strategy with an ideal detector.

    With ``include_qm`` a quantum sample is appended as a reference row
    (marked ``local=False``).
    """
    dt_values = [float(t) for t in dt_values]
    ideal = DetectorResponse.from_params(DetectorParams.ideal(params.beta_gamma), random_state=seed)
    out = []
    samples = [(s, True) for s in lhv_strategies(params, n_random, seed)]
    if include_qm:
        samples.append((None, False))
    for i, (strategy, local) in enumerate(samples):
        sub = derive_seed(seed, DOMAIN_LHV, i)
        if strategy is None:
            events = generate_dataset(GeneratorConfig(n_events, sub, params), n_workers)
            name = "quantum"
        else:
            events = generate_lhv_dataset(strategy, n_events, params, sub, n_workers)
            name = strategy.name
        observed = ideal.fit_transform(events)
        out.append(LhvTestResult(name, dt_values, chsh_scan(observed, dt_values, halfwidth), local))
    return out
