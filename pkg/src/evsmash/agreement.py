"""Method-agreement statistics for paired measurements.

Bland-Altman bias and 95% limits of agreement, with confidence intervals
that respect repeated measurements per participant: the variance of the
differences is rebuilt from a one-way ANOVA (between- / within-participant
mean squares), its confidence limits come from the modified large-sample
(MLS) approach, and interval limits for bias +- z*sd are combined with the
MOVER method.  With one measurement per participant this collapses to the
classic chi-square/t formulas; with a single participant, or when the
between-participant mean square does not exceed the within one, the classic
independent-observations intervals are used directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

Z_95 = float(stats.norm.ppf(0.975))


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_json_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper}


@dataclass(frozen=True)
class PairedMeasurements:
    """Event-camera estimate and reference value per trial, tagged by
    participant."""

    ev: np.ndarray
    ref: np.ndarray
    participant: np.ndarray

    def __post_init__(self) -> None:
        ev = np.asarray(self.ev, dtype=np.float64)
        ref = np.asarray(self.ref, dtype=np.float64)
        part = np.asarray(self.participant)
        if not (ev.ndim == ref.ndim == part.ndim == 1):
            raise ValueError("paired measurements must be 1-D")
        if not len(ev) == len(ref) == len(part):
            raise ValueError("paired arrays must have equal length")
        if len(ev) < 2:
            raise ValueError("need at least two pairs")
        if not (np.isfinite(ev).all() and np.isfinite(ref).all()):
            raise ValueError("measurements must be finite")
        object.__setattr__(self, "ev", ev)
        object.__setattr__(self, "ref", ref)
        object.__setattr__(self, "participant", part)

    @property
    def diffs(self) -> np.ndarray:
        return self.ev - self.ref

    @property
    def means(self) -> np.ndarray:
        return (self.ev + self.ref) / 2.0


@dataclass(frozen=True)
class AgreementResult:
    n: int
    n_participants: int
    bias: float
    sd_diff: float
    loa_lower: float
    loa_upper: float
    bias_ci: ConfidenceInterval
    loa_lower_ci: ConfidenceInterval
    loa_upper_ci: ConfidenceInterval
    method: str

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "n_participants": self.n_participants,
            "bias": self.bias,
            "sd_diff": self.sd_diff,
            "loa_lower": self.loa_lower,
            "loa_upper": self.loa_upper,
            "bias_ci": self.bias_ci.to_json_dict(),
            "loa_lower_ci": self.loa_lower_ci.to_json_dict(),
            "loa_upper_ci": self.loa_upper_ci.to_json_dict(),
            "method": self.method,
        }


def _classic(diffs: np.ndarray, n_participants: int, alpha: float) -> AgreementResult:
    """Independent-observations Bland-Altman intervals."""
    n = len(diffs)
    bias = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    t = float(stats.t.ppf(1 - alpha / 2, n - 1))
    se_bias = sd / math.sqrt(n)
    # Var(bias +- z*sd) ~= sd^2 * (1/n + z^2/(2(n-1)))
    se_loa = sd * math.sqrt(1.0 / n + Z_95**2 / (2 * (n - 1)))
    lo = bias - Z_95 * sd
    hi = bias + Z_95 * sd
    return AgreementResult(
        n=n,
        n_participants=n_participants,
        bias=bias,
        sd_diff=sd,
        loa_lower=lo,
        loa_upper=hi,
        bias_ci=ConfidenceInterval(bias - t * se_bias, bias + t * se_bias),
        loa_lower_ci=ConfidenceInterval(lo - t * se_loa, lo + t * se_loa),
        loa_upper_ci=ConfidenceInterval(hi - t * se_loa, hi + t * se_loa),
        method="classic",
    )


def _mls_variance_limits(
    components: list[tuple[float, float, float]], alpha: float
) -> tuple[float, float]:
    """Two-sided MLS limits for a positive linear combination of mean
    squares.  ``components`` holds (coefficient, mean_square, df)."""
    est = sum(c * s for c, s, _ in components)
    up = 0.0
    dn = 0.0
    for c, s, df in components:
        if c == 0.0 or df <= 0:
            continue
        g = df / stats.chi2.ppf(alpha / 2, df) - 1.0
        h = 1.0 - df / stats.chi2.ppf(1 - alpha / 2, df)
        up += (c * s * g) ** 2
        dn += (c * s * h) ** 2
    return max(est - math.sqrt(dn), 0.0), est + math.sqrt(up)


def bland_altman(pairs: PairedMeasurements, alpha: float = 0.05) -> AgreementResult:
    """Bias, limits of agreement, and their confidence intervals."""
    diffs = pairs.diffs
    labels, inverse = np.unique(pairs.participant, return_inverse=True)
    n_sub = len(labels)
    n = len(diffs)
    if n_sub == 1 or n_sub == n:
        return _classic(diffs, n_sub, alpha)

    counts = np.bincount(inverse).astype(np.float64)
    sums = np.bincount(inverse, weights=diffs)
    sub_means = sums / counts
    grand = float(diffs.mean())
    msb = float(np.sum(counts * (sub_means - grand) ** 2) / (n_sub - 1))
    msw = float(np.sum((diffs - sub_means[inverse]) ** 2) / (n - n_sub))
    if msb <= msw:
        # No detectable participant effect; the clustered variance estimate
        # would be anti-conservative noise, so fall back to independence.
        return _classic(diffs, n_sub, alpha)

    m0 = (n - float(np.sum(counts**2)) / n) / (n_sub - 1)
    c_b = 1.0 / m0
    c_w = 1.0 - 1.0 / m0
    var_d = c_b * msb + c_w * msw
    sd = math.sqrt(var_d)
    lo = grand - Z_95 * sd
    hi = grand + Z_95 * sd

    t = float(stats.t.ppf(1 - alpha / 2, n_sub - 1))
    se_bias = math.sqrt(msb / n)
    bias_ci = ConfidenceInterval(grand - t * se_bias, grand + t * se_bias)

    var_lo, var_hi = _mls_variance_limits(
        [(c_b, msb, n_sub - 1), (c_w, msw, n - n_sub)], alpha
    )
    half = Z_95 * sd
    half_lo = Z_95 * math.sqrt(var_lo)
    half_hi = Z_95 * math.sqrt(var_hi)

    # MOVER: bias + half (upper limit) and bias - half (lower limit).
    du = t * se_bias
    upper_ci = ConfidenceInterval(
        hi - math.sqrt(du**2 + (half - half_lo) ** 2),
        hi + math.sqrt(du**2 + (half_hi - half) ** 2),
    )
    lower_ci = ConfidenceInterval(
        lo - math.sqrt(du**2 + (half_hi - half) ** 2),
        lo + math.sqrt(du**2 + (half - half_lo) ** 2),
    )
    return AgreementResult(
        n=n,
        n_participants=n_sub,
        bias=grand,
        sd_diff=sd,
        loa_lower=lo,
        loa_upper=hi,
        bias_ci=bias_ci,
        loa_lower_ci=lower_ci,
        loa_upper_ci=upper_ci,
        method="clustered-mover",
    )


@dataclass(frozen=True)
class TrendResult:
    slope: float
    intercept: float
    r: float
    p_value: float


def proportional_bias(pairs: PairedMeasurements) -> TrendResult:
    """Regression of difference on pair mean; the correlation p-value says
    whether the disagreement scales with magnitude."""
    res = stats.linregress(pairs.means, pairs.diffs)
    return TrendResult(
        slope=float(res.slope),
        intercept=float(res.intercept),
        r=float(res.rvalue),
        p_value=float(res.pvalue),
    )


def correlation_pvalue(r: float, n: int) -> float:
    """Two-sided p-value of a Pearson r from a sample of size n."""
    if n < 3:
        raise ValueError("need at least 3 samples")
    if abs(r) >= 1.0:
        return 0.0
    t = abs(r) * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * stats.t.sf(t, n - 2))
