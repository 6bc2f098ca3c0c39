"""Measurement chain: binning, background subtraction, correlation and S.

The correlation estimator is normalized to the observed pairs,
E_R = (N_OF - N_SF) / (N_OF + N_SF), with opposite flavor counted positive
so that E_R(0) = +1. S is formed from two non-overlapping Δt windows,
S = 3 E_R(Δt) - E_R(3Δt).

:class:`ChshAnalysis` wraps the chain as a scikit-learn style estimator so
systematic variations are plain ``clone(...).set_params(...)`` refits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from .detector import DetectorParams
from .validation import SAMPLES, check_events

DEFAULT_BIN_EDGES = tuple(np.round(np.arange(0.0, 12.0 + 1e-9, 0.5), 10))

FLAG_EMPTY = "empty"
FLAG_DEGENERATE = "degenerate"
FLAG_CLAMPED = "clamped"
FLAG_UNPHYSICAL = "unphysical"
FLAG_DILUTION = "dilution_corrected"


class AnalysisError(ValueError):
    """The analysis chain cannot produce a result for this input."""


class SystematicsError(AnalysisError):
    pass


# --------------------------------------------------------------------------
# counts


@dataclass(frozen=True)
class BinCount:
    lo: float
    hi: float
    n_sf: float
    n_of: float
    w2_sf: float
    w2_of: float

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass
class BinnedCounts:
    """Weighted SF/OF counts per Δt bin for each sample.

    ``n_sf[sample]`` etc. are arrays with one entry per bin; ``w2_*`` hold
    the sums of squared weights.
    """

    bin_edges: np.ndarray
    n_sf: dict[str, np.ndarray]
    n_of: dict[str, np.ndarray]
    w2_sf: dict[str, np.ndarray]
    w2_of: dict[str, np.ndarray]
    flags: list[tuple[str, ...]] = field(default_factory=list)

    def __post_init__(self):
        self.bin_edges = _check_edges(self.bin_edges)
        if not self.flags:
            self.flags = [()] * self.n_bins
        for d in (self.n_sf, self.n_of):
            for arr in d.values():
                if np.any(np.asarray(arr) < 0):
                    raise AnalysisError("counts must be >= 0")

    @property
    def n_bins(self) -> int:
        return len(self.bin_edges) - 1

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def samples(self) -> tuple[str, ...]:
        return tuple(self.n_sf)

    def bin(self, i: int, sample: str = "signal_region") -> BinCount:
        return BinCount(
            float(self.bin_edges[i]), float(self.bin_edges[i + 1]),
            float(self.n_sf[sample][i]), float(self.n_of[sample][i]),
            float(self.w2_sf[sample][i]), float(self.w2_of[sample][i]),
        )

    def total(self, sample: str = "signal_region") -> float:
        return float(self.n_sf[sample].sum() + self.n_of[sample].sum())

    def merged(self, lo: float, hi: float, sample: str = "signal_region") -> BinCount | None:
        """Sum of the bins exactly tiling [lo, hi], or None if they do not."""
        e = self.bin_edges
        i = int(np.argmin(np.abs(e - lo)))
        j = int(np.argmin(np.abs(e - hi)))
        if not (abs(e[i] - lo) < 1e-9 and abs(e[j] - hi) < 1e-9 and j > i):
            return None
        sl = slice(i, j)
        return BinCount(lo, hi, float(self.n_sf[sample][sl].sum()), float(self.n_of[sample][sl].sum()),
                        float(self.w2_sf[sample][sl].sum()), float(self.w2_of[sample][sl].sum()))


def _check_edges(edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2:
        raise AnalysisError("need at least one bin (two edges)")
    if not np.all(np.isfinite(edges)) or np.any(np.diff(edges) <= 0):
        raise AnalysisError("bin edges must be finite and strictly increasing")
    return edges


def bin_events(events: pd.DataFrame, bin_edges, window=(0.0, math.inf)) -> BinnedCounts:
    """Tally observed events by reconstructed Δt, tag agreement and sample.

    Events outside ``window`` or outside the binning range are not counted.
    Bins are half-open except the last, as in ``numpy.histogram``.
    """
    edges = _check_edges(bin_edges)
    df = check_events(events, observed=True)
    dt = df["dt_reco_ps"].to_numpy(dtype=float)
    w = df["weight"].to_numpy(dtype=float)
    sf = df["tag_a"].to_numpy() == df["tag_b"].to_numpy()
    lo, hi = window
    sel = (dt >= lo) & (dt <= hi)
    sample = df["sample"].to_numpy(dtype=object)

    out = {k: {} for k in ("n_sf", "n_of", "w2_sf", "w2_of")}
    for s in SAMPLES:
        m = sel & (sample == s)
        for mask, key in ((m & sf, "sf"), (m & ~sf, "of")):
            out[f"n_{key}"][s] = np.histogram(dt[mask], edges, weights=w[mask])[0]
            out[f"w2_{key}"][s] = np.histogram(dt[mask], edges, weights=w[mask] ** 2)[0]
    return BinnedCounts(edges, **out)


def subtract_backgrounds(counts: BinnedCounts, det: DetectorParams,
                         sideband_norm: float = 1.0, control_norm: float = 1.0) -> BinnedCounts:
    """Signal-region counts minus scaled sideband and reversed-lepton control.

    The sideband is scaled by ``sideband_norm / sideband_scale`` and the
    control by ``control_norm / control_scale``. Negative results are
    clamped to zero and flagged. Only the ``signal_region`` sample is kept.
    """
    sr = "signal_region"
    terms = []
    for sample, norm, scale in (
        ("sideband", sideband_norm, det.sideband_scale),
        ("reversed_lepton_control", control_norm, det.control_scale),
    ):
        if norm == 0:
            continue
        if sample not in counts.n_sf:
            raise AnalysisError(f"missing control sample {sample!r} required for subtraction")
        terms.append((sample, norm / scale))

    res = {}
    for key in ("sf", "of"):
        n = getattr(counts, f"n_{key}")[sr].astype(float).copy()
        w2 = getattr(counts, f"w2_{key}")[sr].astype(float).copy()
        for sample, k in terms:
            n -= k * getattr(counts, f"n_{key}")[sample]
            w2 += k * k * getattr(counts, f"w2_{key}")[sample]
        res[key] = (n, w2)

    flags = [list(f) for f in counts.flags]
    for key in ("sf", "of"):
        n = res[key][0]
        for i in np.flatnonzero(n < 0):
            if FLAG_CLAMPED not in flags[i]:
                flags[i].append(FLAG_CLAMPED)
        np.maximum(n, 0.0, out=n)
    return BinnedCounts(
        counts.bin_edges,
        n_sf={sr: res["sf"][0]}, n_of={sr: res["of"][0]},
        w2_sf={sr: res["sf"][1]}, w2_of={sr: res["of"][1]},
        flags=[tuple(f) for f in flags],
    )


# --------------------------------------------------------------------------
# estimators


@dataclass(frozen=True)
class CorrelationEstimate:
    dt_center: float
    e_r: float
    sigma_stat: float
    lo: float = math.nan
    hi: float = math.nan
    n_eff: float = 0.0
    flags: tuple[str, ...] = ()

    @property
    def defined(self) -> bool:
        return FLAG_EMPTY not in self.flags


def estimate_er(b: BinCount, dilution: float = 1.0, flags: Sequence[str] = ()) -> CorrelationEstimate:
    """E_R = (N_OF - N_SF) / N with N = N_OF + N_SF.

    σ propagates the variances V of the two counts (their sums of squared
    weights): σ² = 4 (N_SF² V_OF + N_OF² V_SF) / N⁴. For unit weights this
    is sqrt((1 - E_R²) / N); after background subtraction it also carries
    the control-sample fluctuations. σ is floored at 1 / N_eff, with
    N_eff = N² / (V_OF + V_SF), so fully polarized bins never report zero
    error. A ``dilution`` below one divides out mistag dilution from both.
    """
    flags = list(flags)
    n = b.n_of + b.n_sf
    if not n > 0:
        return CorrelationEstimate(b.center, math.nan, math.nan, b.lo, b.hi, 0.0,
                                   tuple(flags) + (FLAG_EMPTY,))
    e = (b.n_of - b.n_sf) / n
    var = b.w2_sf + b.w2_of
    n_eff = n * n / var if var > 0 else n
    sigma = 2.0 * math.sqrt(b.n_sf ** 2 * b.w2_of + b.n_of ** 2 * b.w2_sf) / (n * n)
    sigma = max(sigma, 1.0 / n_eff)
    if b.n_sf == 0 or b.n_of == 0:
        flags.append(FLAG_DEGENERATE)
    if dilution != 1.0:
        if not 0 < dilution <= 1:
            raise AnalysisError(f"dilution must be in (0, 1], got {dilution}")
        e /= dilution
        sigma /= dilution
        flags.append(FLAG_DILUTION)
        if abs(e) > 1:
            flags.append(FLAG_UNPHYSICAL)
    return CorrelationEstimate(b.center, e, sigma, b.lo, b.hi, n_eff, tuple(flags))


@dataclass(frozen=True)
class ChshResult:
    dt_center: float
    dt_halfwidth: float
    s_value: float
    sigma_stat: float
    sigma_syst: float = 0.0
    far_center: float = math.nan
    far_halfwidth: float = math.nan
    flags: tuple[str, ...] = ()

    @property
    def significance(self) -> float:
        try:
            return significance(self)
        except AnalysisError:
            return math.nan

    def with_systematics(self, sigma_syst: float) -> ChshResult:
        if not sigma_syst >= 0:
            raise AnalysisError("sigma_syst must be >= 0")
        return ChshResult(self.dt_center, self.dt_halfwidth, self.s_value, self.sigma_stat,
                          float(sigma_syst), self.far_center, self.far_halfwidth, self.flags)


def compute_s(near: CorrelationEstimate, far: CorrelationEstimate) -> ChshResult:
    """S = 3 E(Δt) - E(3Δt) from two independent window estimates."""
    if not (near.defined and far.defined):
        raise AnalysisError("both correlation estimates must be defined")
    if max(near.lo, far.lo) < min(near.hi, far.hi):
        raise AnalysisError(
            f"windows [{near.lo}, {near.hi}] and [{far.lo}, {far.hi}] overlap; "
            "correlated estimates are not supported"
        )
    s = 3.0 * near.e_r - far.e_r
    sigma = math.sqrt(9.0 * near.sigma_stat ** 2 + far.sigma_stat ** 2)
    flags = tuple(dict.fromkeys(near.flags + far.flags))
    return ChshResult(
        dt_center=near.dt_center, dt_halfwidth=0.5 * (near.hi - near.lo),
        s_value=s, sigma_stat=sigma, far_center=far.dt_center,
        far_halfwidth=0.5 * (far.hi - far.lo), flags=flags,
    )


def significance(result: ChshResult) -> float:
    """(S - 2) / sqrt(σ_stat² + σ_syst²)."""
    total = math.hypot(result.sigma_stat, result.sigma_syst)
    if not total > 0:
        raise AnalysisError("total uncertainty is zero; significance undefined")
    return (result.s_value - 2.0) / total


# --------------------------------------------------------------------------
# systematics


@dataclass(frozen=True)
class SystematicSource:
    name: str
    shift: float
    s_up: float = math.nan
    s_down: float = math.nan


@dataclass(frozen=True)
class SystematicsBudget:
    sources: tuple[SystematicSource, ...] = ()

    @property
    def total(self) -> float:
        return math.sqrt(math.fsum(s.shift ** 2 for s in self.sources))

    def as_dict(self) -> dict[str, float]:
        return {s.name: s.shift for s in self.sources}


def combine_systematics(shifts) -> SystematicsBudget:
    """Quadrature budget from ``{name: shift}`` or ``[(name, shift), ...]``."""
    items = shifts.items() if isinstance(shifts, Mapping) else shifts
    sources = []
    for name, shift in items:
        shift = abs(float(shift))
        if not math.isfinite(shift):
            raise SystematicsError(f"non-finite shift for {name!r}")
        sources.append(SystematicSource(str(name), shift))
    return SystematicsBudget(tuple(sources))


@dataclass(frozen=True)
class Variation:
    """One systematic source: which analysis parameters move, and how.

    ``mode="relative"`` moves each parameter by ±``amount`` times its
    nominal value. ``mode="norm_2sigma"`` moves a normalization parameter
    by ±2/sqrt(N) where N is the number of ``control_sample`` events used
    in the S windows.
    """

    name: str
    params: tuple[str, ...]
    mode: str = "relative"
    amount: float = 0.2
    control_sample: str | None = None

    def __post_init__(self):
        if self.mode not in ("relative", "norm_2sigma"):
            raise ValueError(f"unknown variation mode {self.mode!r}")


DEFAULT_VARIATIONS = {
    "fake_dstar": Variation("fake_dstar", ("sideband_norm",), "norm_2sigma", control_sample="sideband"),
    "uncorrelated_dsl": Variation("uncorrelated_dsl", ("control_norm",), "norm_2sigma",
                                  control_sample="reversed_lepton_control"),
    "mistag": Variation("mistag", ("omega_a", "omega_b")),
    "dt_window": Variation("dt_window", ("dt_halfwidth",)),
    "far_window": Variation("far_window", ("far_window_scale",)),
    "dt_range": Variation("dt_range", ("dt_max",)),
    "sideband_scale": Variation("sideband_scale", ("sideband_scale",)),
    "control_scale": Variation("control_scale", ("control_scale",)),
}


def _varied_params(analysis: ChshAnalysis, v: Variation, sign: int) -> dict:
    nominal = analysis.get_params()
    if v.mode == "relative":
        return {p: nominal[p] * (1.0 + sign * v.amount) for p in v.params}
    n = analysis.window_control_count_(v.control_sample)
    rel = 2.0 / math.sqrt(n) if n > 0 else 0.0
    return {p: nominal[p] * (1.0 + sign * rel) for p in v.params}


def scan_systematics(analysis: ChshAnalysis, events: pd.DataFrame,
                     variations: Sequence[Variation | str]) -> SystematicsBudget:
    """Refit ``analysis`` on the same events for each variation.

    Each source's shift is the larger of |S_up - S| and |S_down - S|.
    """
    base = clone(analysis).fit(events)
    s0 = base.result_.s_value
    sources = []
    for v in variations:
        if isinstance(v, str):
            try:
                v = DEFAULT_VARIATIONS[v]
            except KeyError:
                raise SystematicsError(f"unknown systematic variation {v!r}") from None
        s_dir = []
        for sign in (+1, -1):
            try:
                est = clone(analysis).set_params(**_varied_params(base, v, sign)).fit(events)
                s_dir.append(est.result_.s_value)
            except Exception as exc:
                raise SystematicsError(f"variation {v.name!r} failed: {exc}") from exc
        shift = max(abs(s_dir[0] - s0), abs(s_dir[1] - s0))
        sources.append(SystematicSource(v.name, shift, s_dir[0], s_dir[1]))
    return SystematicsBudget(tuple(sources))


# --------------------------------------------------------------------------
# estimator


class ChshAnalysis(BaseEstimator):
    """Fit the CHSH measurement to an observed event table.

    Parameters
    ----------
    bin_edges : sequence of float, optional
        Δt binning (ps) for the per-bin correlation curve.
    dt_center, dt_halfwidth : float
        The near window is dt_center ± dt_halfwidth; the far window is
        3·dt_center ± far_window_scale·dt_halfwidth.
    dt_min, dt_max : float
        Selection range on reconstructed Δt.
    sideband_scale, control_scale : float
        Expected control-to-signal-region background yield ratios.
    sideband_norm, control_norm : float
        Multipliers on the subtracted control yields (0 disables one).
    subtract_background : bool
    correct_dilution : bool
        Divide correlations by (1 - 2 omega_a)(1 - 2 omega_b).
    omega_a, omega_b : float
        Mistag probabilities assumed by the dilution correction.
    sigma_syst : float
        Systematic error attached to the result.

    Attributes
    ----------
    counts_ : BinnedCounts
        Raw counts per sample.
    signal_counts_ : BinnedCounts
        Signal-region counts after subtraction.
    correlations_ : list of CorrelationEstimate
    near_, far_ : CorrelationEstimate
    result_ : ChshResult
    """

    def __init__(self, bin_edges=None, dt_center=2.0, dt_halfwidth=0.5, far_window_scale=3.0,
                 dt_min=0.0, dt_max=12.0, sideband_scale=1.0, control_scale=1.0,
                 sideband_norm=1.0, control_norm=1.0, subtract_background=True,
                 correct_dilution=False, omega_a=0.0, omega_b=0.0, sigma_syst=0.0):
        self.bin_edges = bin_edges
        self.dt_center = dt_center
        self.dt_halfwidth = dt_halfwidth
        self.far_window_scale = far_window_scale
        self.dt_min = dt_min
        self.dt_max = dt_max
        self.sideband_scale = sideband_scale
        self.control_scale = control_scale
        self.sideband_norm = sideband_norm
        self.control_norm = control_norm
        self.subtract_background = subtract_background
        self.correct_dilution = correct_dilution
        self.omega_a = omega_a
        self.omega_b = omega_b
        self.sigma_syst = sigma_syst

    @property
    def near_window(self) -> tuple[float, float]:
        return (self.dt_center - self.dt_halfwidth, self.dt_center + self.dt_halfwidth)

    @property
    def far_window(self) -> tuple[float, float]:
        w = self.far_window_scale * self.dt_halfwidth
        return (3.0 * self.dt_center - w, 3.0 * self.dt_center + w)

    def _validate_params(self):
        lo, hi = self.near_window
        flo, fhi = self.far_window
        if not (self.dt_halfwidth > 0 and self.far_window_scale > 0 and lo >= 0):
            raise AnalysisError("windows must have positive width and start at dt >= 0")
        if hi > flo:
            raise AnalysisError(f"near window [{lo}, {hi}] overlaps far window [{flo}, {fhi}]")
        if not 0 <= self.dt_min < self.dt_max:
            raise AnalysisError("need 0 <= dt_min < dt_max")
        if not self.sigma_syst >= 0:
            raise AnalysisError("sigma_syst must be >= 0")
        return DetectorParams(omega_a=self.omega_a, omega_b=self.omega_b,
                              sideband_scale=self.sideband_scale,
                              control_scale=self.control_scale)

    def _prepare(self, counts: BinnedCounts, det: DetectorParams) -> BinnedCounts:
        if self.subtract_background:
            return subtract_backgrounds(counts, det, self.sideband_norm, self.control_norm)
        return BinnedCounts(
            counts.bin_edges,
            *({"signal_region": d["signal_region"]}
              for d in (counts.n_sf, counts.n_of, counts.w2_sf, counts.w2_of)),
            flags=counts.flags,
        )

    def fit(self, X, y=None):
        det = self._validate_params()
        X = check_events(X, observed=True)
        dilution = det.dilution if self.correct_dilution else 1.0
        sel = (self.dt_min, self.dt_max)
        edges = DEFAULT_BIN_EDGES if self.bin_edges is None else self.bin_edges

        self.counts_ = bin_events(X, edges, sel)
        self.signal_counts_ = self._prepare(self.counts_, det)
        self.correlations_ = [
            estimate_er(self.signal_counts_.bin(i), dilution, self.signal_counts_.flags[i])
            for i in range(self.signal_counts_.n_bins)
        ]

        self.window_counts_ = {}
        for name, (lo, hi) in (("near", self.near_window), ("far", self.far_window)):
            raw = bin_events(X, [lo, hi], sel)
            self.window_counts_[name] = raw
            prepared = self._prepare(raw, det)
            est = estimate_er(prepared.bin(0), dilution, prepared.flags[0])
            setattr(self, f"{name}_", est)
        try:
            res = compute_s(self.near_, self.far_)
        except AnalysisError as exc:
            raise AnalysisError(f"cannot form S at dt={self.dt_center}: {exc}") from exc
        self.result_ = res.with_systematics(self.sigma_syst)
        self.n_selected_ = int(self.counts_.total("signal_region"))
        self.dilution_ = dilution
        return self

    def window_control_count_(self, sample: str) -> float:
        check_is_fitted(self, "result_")
        return sum(c.total(sample) for c in self.window_counts_.values())

    def correlation_table(self) -> pd.DataFrame:
        check_is_fitted(self, "result_")
        c = self.signal_counts_
        return pd.DataFrame({
            "dt_lo_ps": c.bin_edges[:-1],
            "dt_hi_ps": c.bin_edges[1:],
            "dt_center_ps": c.centers,
            "n_sf": c.n_sf["signal_region"],
            "n_of": c.n_of["signal_region"],
            "e_r": [e.e_r for e in self.correlations_],
            "sigma_stat": [e.sigma_stat for e in self.correlations_],
            "flags": [";".join(e.flags) for e in self.correlations_],
        })

    def score(self, X, y=None) -> float:
        """S measured on ``X`` with this estimator's settings."""
        return clone(self).fit(X).result_.s_value


# --------------------------------------------------------------------------
# data vs prediction


@dataclass
class PanelComparison:
    name: str
    table: pd.DataFrame
    chi2: float
    dof: int

    @property
    def p_value(self) -> float:
        return float(stats.chi2.sf(self.chi2, self.dof)) if self.dof > 0 else math.nan

    @property
    def flagged(self) -> bool:
        return self.dof > 0 and self.p_value < 1e-3


def _panel(name, centers, d, sd, m, sm, dof_offset=0) -> PanelComparison:
    d, sd, m, sm = (np.asarray(a, dtype=float) for a in (d, sd, m, sm))
    den = np.sqrt(sd ** 2 + sm ** 2)
    ok = np.isfinite(d) & np.isfinite(m) & np.isfinite(den)
    pull = np.full(len(d), np.nan)
    both_zero = ok & (den == 0)
    pull[both_zero] = np.where(d[both_zero] == m[both_zero], 0.0, np.nan)
    nz = ok & (den > 0)
    pull[nz] = (d[nz] - m[nz]) / den[nz]
    used = np.isfinite(pull)
    table = pd.DataFrame({"dt_center_ps": centers, "value": d, "sigma": sd,
                          "mc_value": m, "mc_sigma": sm, "pull": pull})
    chi2 = float(np.sum(pull[used] ** 2))
    return PanelComparison(name, table, chi2, max(int(used.sum()) - dof_offset, 0))


def s_panel(counts: BinnedCounts, dilution: float = 1.0):
    """Per-bin S using the bins tiling [3·lo, 3·hi] as the far window."""
    n = counts.n_bins
    s = np.full(n, np.nan)
    sig = np.full(n, np.nan)
    for i in range(n):
        b = counts.bin(i)
        far = counts.merged(3.0 * b.lo, 3.0 * b.hi)
        if far is None or far.lo < b.hi:
            continue
        e1 = estimate_er(b, dilution)
        e3 = estimate_er(far, dilution)
        if e1.defined and e3.defined:
            r = compute_s(e1, e3)
            s[i], sig[i] = r.s_value, r.sigma_stat
    return s, sig


def compare_to_qm(data: BinnedCounts, mc: BinnedCounts, dilution: float = 1.0) -> dict[str, PanelComparison]:
    """Per-bin pulls and χ² of data against a QM prediction sample.

    Panels: ``of`` and ``sf`` (MC normalized to the data total), ``e_r``
    and ``s``. Uses the ``signal_region`` sample of both inputs.
    """
    if len(data.bin_edges) != len(mc.bin_edges) or not np.allclose(data.bin_edges, mc.bin_edges):
        raise AnalysisError("data and MC binnings differ")
    sr = "signal_region"
    centers = data.centers
    nd, nm = data.total(sr), mc.total(sr)
    scale = nd / nm if nm > 0 else 0.0
    out = {}
    for key in ("of", "sf"):
        d = getattr(data, f"n_{key}")[sr]
        m = getattr(mc, f"n_{key}")[sr] * scale
        sd = np.sqrt(getattr(data, f"w2_{key}")[sr])
        sm = np.sqrt(getattr(mc, f"w2_{key}")[sr]) * scale
        out[key] = _panel(key, centers, d, sd, m, sm, dof_offset=1 if key == "of" else 0)

    ed = [estimate_er(data.bin(i), dilution) for i in range(data.n_bins)]
    em = [estimate_er(mc.bin(i), dilution) for i in range(mc.n_bins)]
    out["e_r"] = _panel("e_r", centers, [e.e_r for e in ed], [e.sigma_stat for e in ed],
                        [e.e_r for e in em], [e.sigma_stat for e in em])
    sd_, ssd = s_panel(data, dilution)
    sm_, ssm = s_panel(mc, dilution)
    out["s"] = _panel("s", centers, sd_, ssd, sm_, ssm)
    return out


def chsh_scan(events: pd.DataFrame, dt_values: Sequence[float], halfwidth: float,
              far_scale: float = 3.0, dilution: float = 1.0) -> list[ChshResult]:
    """S at several Δt from one signal-region event table, without subtraction.

    Windows are dt ± halfwidth and 3·dt ± far_scale·halfwidth.
    """
    df = check_events(events, observed=True)
    keep = (df["sample"] == "signal_region").to_numpy()
    dt = df["dt_reco_ps"].to_numpy(dtype=float)[keep]
    w = df["weight"].to_numpy(dtype=float)[keep]
    sf = (df["tag_a"].to_numpy() == df["tag_b"].to_numpy())[keep]

    def window(lo, hi):
        m = (dt >= lo) & (dt <= hi)
        ms, mo = m & sf, m & ~sf
        return BinCount(lo, hi, float(w[ms].sum()), float(w[mo].sum()),
                        float((w[ms] ** 2).sum()), float((w[mo] ** 2).sum()))

    out = []
    for c in dt_values:
        near = estimate_er(window(c - halfwidth, c + halfwidth), dilution)
        far = estimate_er(window(3 * c - far_scale * halfwidth, 3 * c + far_scale * halfwidth), dilution)
        out.append(compute_s(near, far))
    return out


def fit_correlation_scale(estimates: Sequence[CorrelationEstimate], expected) -> tuple[float, float]:
    """Weighted least-squares scale k in E_meas = k * expected.

    Returns (k, σ_k). Undefined estimates and bins with zero expected
    correlation carry no information and are skipped.
    """
    e = np.array([x.e_r for x in estimates], dtype=float)
    s = np.array([x.sigma_stat for x in estimates], dtype=float)
    x = np.asarray(expected, dtype=float)
    if x.shape != e.shape:
        raise AnalysisError("one expected value per estimate is required")
    ok = np.isfinite(e) & np.isfinite(s) & (s > 0) & (x != 0)
    if not ok.any():
        raise AnalysisError("no usable bins for the scale fit")
    w = 1.0 / s[ok] ** 2
    sxx = float(np.sum(w * x[ok] ** 2))
    return float(np.sum(w * x[ok] * e[ok]) / sxx), 1.0 / math.sqrt(sxx)
