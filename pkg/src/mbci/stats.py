"""Statistical toolkit: paired and Welch t tests with Cohen's d, BH-FDR,
Pearson correlation, fully within-subjects two-way repeated-measures ANOVA,
and the cluster-level sign-flip permutation test for paired spectra.

Effect-size conventions are explicit in every result: paired tests report
mean(diff)/sd(diff) (= t/sqrt(n)); independent comparisons report the
pooled-standard-deviation d. Tail probabilities come from scipy's
incomplete-beta / incomplete-F machinery (>= 10 significant digits).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import stats as sstats

from .errors import DegenerateDataError

_ZERO_VAR = 1e-24


@dataclass(frozen=True)
class TestResult:
    test: str
    statistic: float
    df: float | tuple[float, float]
    p_value: float
    effect_size: float | None = None
    effect_convention: str | None = None
    corrected: bool = False
    correction_method: str | None = None
    extras: dict = field(default_factory=dict)


def paired_t(x, y) -> TestResult:
    """Two-tailed paired t test with Cohen's d = mean(d)/sd(d) = t/sqrt(n)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("paired_t needs two equal-length 1-D arrays")
    n = len(x)
    if n < 2:
        raise ValueError("paired_t needs n >= 2 pairs")
    d = x - y
    sd = d.std(ddof=1)
    if sd * sd < _ZERO_VAR:
        raise DegenerateDataError("difference scores have zero variance")
    t = d.mean() / (sd / np.sqrt(n))
    df = n - 1
    p = 2.0 * sstats.t.sf(abs(t), df)
    return TestResult(test="paired_t", statistic=float(t), df=float(df),
                      p_value=float(p), effect_size=float(d.mean() / sd),
                      effect_convention="paired: mean(diff)/sd(diff)")


def welch_t(group1, group2) -> TestResult:
    """Welch's unequal-variance t test; Cohen's d uses the pooled sd."""
    a = np.asarray(group1, dtype=np.float64)
    b = np.asarray(group2, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or len(a) < 2 or len(b) < 2:
        raise ValueError("welch_t needs two 1-D groups with n >= 2 each")
    n1, n2 = len(a), len(b)
    v1, v2 = a.var(ddof=1), b.var(ddof=1)
    if v1 < _ZERO_VAR and v2 < _ZERO_VAR:
        raise DegenerateDataError("both groups have zero variance")
    se2 = v1 / n1 + v2 / n2
    t = (a.mean() - b.mean()) / np.sqrt(se2)
    df = se2 ** 2 / ((v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1))
    p = 2.0 * sstats.t.sf(abs(t), df)
    pooled_sd = np.sqrt(((n1 - 1) * v1 + (n2 - 1) * v2) / (n1 + n2 - 2))
    return TestResult(test="welch_t", statistic=float(t), df=float(df),
                      p_value=float(p),
                      effect_size=float((a.mean() - b.mean()) / pooled_sd),
                      effect_convention="independent: pooled-sd d")


def bh_fdr(p_values, alpha: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Benjamini-Hochberg step-up: (rejected mask, adjusted p-values).

    Rejects hypotheses ranked 1..k where k is the largest rank with
    p(k) <= k * alpha / m. Adjusted p-values are the monotone step-up
    quantities min_{j>=rank} m*p(j)/j, capped at 1.
    """
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("p_values must be 1-D")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    if m == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    ranks = np.arange(1, m + 1)
    passing = ranked <= ranks * alpha / m
    reject = np.zeros(m, dtype=bool)
    if np.any(passing):
        k = int(np.max(np.nonzero(passing)[0]))
        reject[order[: k + 1]] = True
    adjusted_sorted = np.minimum.accumulate((m * ranked / ranks)[::-1])[::-1]
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(adjusted_sorted, 1.0)
    return reject, adjusted


def pearson_r(x, y) -> TestResult:
    """Sample Pearson correlation; p via the t transformation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise ValueError("pearson_r needs equal-length 1-D arrays, n >= 3")
    if x.var() < _ZERO_VAR or y.var() < _ZERO_VAR:
        raise DegenerateDataError("zero variance input to correlation")
    n = len(x)
    xc, yc = x - x.mean(), y - y.mean()
    r = float(np.dot(xc, yc) / np.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))
    r = max(-1.0, min(1.0, r))
    if abs(r) >= 1.0:
        p = 0.0
    else:
        t = r * np.sqrt((n - 2) / (1.0 - r * r))
        p = 2.0 * sstats.t.sf(abs(t), n - 2)
    return TestResult(test="pearson_r", statistic=r, df=float(n - 2), p_value=float(p))


# ---------------------------------------------------------------------------
# Repeated-measures ANOVA (two-way, fully within subjects)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RmAnovaResult:
    state: TestResult
    time: TestResult
    interaction: TestResult


def _gg_epsilon(scores: np.ndarray, contrast: np.ndarray) -> float:
    # Greenhouse-Geisser epsilon from the contrast-space covariance
    cov = np.cov(scores, rowvar=False)
    m = contrast @ np.atleast_2d(cov) @ contrast.T
    d = contrast.shape[0]
    tr = np.trace(m)
    denom = d * np.trace(m @ m)
    if denom <= 0:
        return 1.0
    return float(min(1.0, tr * tr / denom))


def rm_anova(data) -> RmAnovaResult:
    """Two-way fully within-subjects ANOVA on a (subject, state, time) table.

    Each effect is tested against its own subject-interaction error term;
    degrees of freedom are uncorrected (sphericity assumed), with the
    Greenhouse-Geisser epsilon reported as a supplementary value in extras.
    """
    y = np.asarray(data, dtype=np.float64)
    if y.ndim != 3:
        raise ValueError("data must be (subjects, states, times)")
    if np.any(~np.isfinite(y)):
        raise ValueError("table has missing cells; a balanced complete table is required")
    s, a, b = y.shape
    if s < 2 or a < 2 or b < 2:
        raise ValueError("need at least 2 subjects and 2 levels per factor")

    grand = y.mean()
    m_s = y.mean(axis=(1, 2))
    m_a = y.mean(axis=(0, 2))
    m_b = y.mean(axis=(0, 1))
    m_sa = y.mean(axis=2)
    m_sb = y.mean(axis=1)
    m_ab = y.mean(axis=0)

    ss_a = s * b * np.sum((m_a - grand) ** 2)
    ss_b = s * a * np.sum((m_b - grand) ** 2)
    ss_ab = s * np.sum((m_ab - m_a[:, None] - m_b[None, :] + grand) ** 2)
    ss_as = b * np.sum((m_sa - m_s[:, None] - m_a[None, :] + grand) ** 2)
    ss_bs = a * np.sum((m_sb - m_s[:, None] - m_b[None, :] + grand) ** 2)
    resid = (y - m_ab[None, :, :] - m_sa[:, :, None] - m_sb[:, None, :]
             + m_a[None, :, None] + m_b[None, None, :] + m_s[:, None, None] - grand)
    ss_abs = np.sum(resid ** 2)

    scale = max(np.sum((y - grand) ** 2), 1.0)
    tiny = 1e-12 * scale

    helmert_a = sla.helmert(a)
    helmert_b = sla.helmert(b)

    def effect(name, ss_eff, df_eff, ss_err, df_err, scores, contrast) -> TestResult:
        extras = {"ss_effect": float(ss_eff), "ss_error": float(ss_err),
                  "gg_epsilon": _gg_epsilon(scores, contrast)}
        if ss_eff <= tiny:
            return TestResult(test=f"rm_anova:{name}", statistic=0.0,
                              df=(float(df_eff), float(df_err)), p_value=1.0,
                              extras=extras)
        ms_err = ss_err / df_err
        if ms_err <= tiny / max(df_err, 1):
            extras["degenerate_error_term"] = True
            return TestResult(test=f"rm_anova:{name}", statistic=float("inf"),
                              df=(float(df_eff), float(df_err)), p_value=0.0,
                              extras=extras)
        f = (ss_eff / df_eff) / ms_err
        p = sstats.f.sf(f, df_eff, df_err)
        return TestResult(test=f"rm_anova:{name}", statistic=float(f),
                          df=(float(df_eff), float(df_err)), p_value=float(p),
                          extras=extras)

    return RmAnovaResult(
        state=effect("state", ss_a, a - 1, ss_as, (a - 1) * (s - 1),
                     m_sa, helmert_a),
        time=effect("time", ss_b, b - 1, ss_bs, (b - 1) * (s - 1),
                    m_sb, helmert_b),
        interaction=effect("interaction", ss_ab, (a - 1) * (b - 1),
                           ss_abs, (a - 1) * (b - 1) * (s - 1),
                           y.reshape(s, a * b), np.kron(helmert_a, helmert_b)),
    )


# ---------------------------------------------------------------------------
# Cluster-level permutation test for paired spectra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralCluster:
    start_bin: int
    end_bin: int  # inclusive
    mass: float
    p_value: float


@dataclass(frozen=True)
class ClusterPermutationResult:
    clusters: list[SpectralCluster]
    bin_t: np.ndarray
    t_threshold: float
    n_permutations: int

    @property
    def significant(self) -> list[SpectralCluster]:
        return [c for c in self.clusters if c.p_value < 0.05]


def _cluster_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    runs, start = [], None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def cluster_permutation(spectra_a, spectra_b, n_permutations: int = 1024,
                        cluster_alpha: float = 0.05, seed: int = 0) -> ClusterPermutationResult:
    """Cluster-level sign-flip permutation test on paired per-subject spectra.

    Per-bin paired t values above the two-tailed cluster_alpha threshold form
    contiguous clusters scored by summed |t|; the null distribution is the
    maximum cluster mass over random sign flips of the subject difference
    spectra. Cluster p = fraction of permutation maxima >= observed mass.
    """
    a = np.asarray(spectra_a, dtype=np.float64)
    b = np.asarray(spectra_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("spectra must be matching (subjects, bins) arrays")
    n, bins = a.shape
    if n < 6:
        raise ValueError(f"need >= 6 subjects for the permutation test, got {n}")
    diffs = a - b
    t_threshold = float(sstats.t.ppf(1.0 - cluster_alpha / 2.0, n - 1))

    def bin_t(d: np.ndarray) -> np.ndarray:
        sd = d.std(axis=-2, ddof=1)
        sd = np.where(sd <= 0, np.inf, sd)
        return d.mean(axis=-2) / (sd / np.sqrt(n))

    observed_t = bin_t(diffs)
    runs = _cluster_runs(np.abs(observed_t) > t_threshold)
    masses = [float(np.sum(np.abs(observed_t[s:e + 1]))) for s, e in runs]

    rng = np.random.default_rng(seed)
    signs = rng.choice((-1.0, 1.0), size=(n_permutations, n, 1))
    perm_t = bin_t(signs * diffs[None, :, :])
    exceed = np.abs(perm_t) > t_threshold
    null_max = np.zeros(n_permutations)
    for i in range(n_permutations):
        best = 0.0
        for s0, e0 in _cluster_runs(exceed[i]):
            best = max(best, float(np.sum(np.abs(perm_t[i, s0:e0 + 1]))))
        null_max[i] = best

    clusters = [SpectralCluster(start_bin=s0, end_bin=e0, mass=m,
                                p_value=float(np.mean(null_max >= m)))
                for (s0, e0), m in zip(runs, masses)]
    clusters.sort(key=lambda c: c.p_value)
    return ClusterPermutationResult(clusters=clusters, bin_t=observed_t,
                                    t_threshold=t_threshold,
                                    n_permutations=n_permutations)


# ---------------------------------------------------------------------------
# Behavioral processing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReliefScore:
    value: float
    convention: str = "rest_minus_state (positive = relief)"


def relative_misc(misc_in_state: float, misc_in_rs: float) -> ReliefScore:
    """Relief relative to rest: rest-state MISC minus feedback-state MISC."""
    if misc_in_state is None or misc_in_rs is None:
        raise ValueError("both state and rest MISC averages are required")
    return ReliefScore(value=float(misc_in_rs) - float(misc_in_state))
