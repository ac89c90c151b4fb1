"""Paired statistics: t-tests, step-down multiple-comparison correction,
Pearson correlation, and the speaking-mode comparison report."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError

# ---------------------------------------------------------------------------
# Special functions

_BETACF_MAX_ITER = 400
_BETACF_EPS = 1e-14
_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise NumericalError(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc requires a > 0 and b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """Two-tailed p-value of Student's t: I_{df/(df+t^2)}(df/2, 1/2)."""
    if not math.isfinite(t):
        raise ValueError(f"t statistic must be finite, got {t}")
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return min(1.0, max(0.0, betainc(df / 2.0, 0.5, x)))


# ---------------------------------------------------------------------------
# Tests and correlations


@dataclass
class PairedSeries:
    """Two matched measurement series keyed by utterance or speaker ids."""

    keys: list[str]
    values_a: np.ndarray
    values_b: np.ndarray
    label_a: str = "a"
    label_b: str = "b"

    def __post_init__(self) -> None:
        self.values_a = np.asarray(self.values_a, dtype=np.float64)
        self.values_b = np.asarray(self.values_b, dtype=np.float64)
        if len(self.keys) != len(set(self.keys)):
            raise DataError("paired series keys must be unique")
        if not (len(self.keys) == self.values_a.size == self.values_b.size):
            raise DataError("paired series lengths differ")
        if self.values_a.size < 2:
            raise DataError("paired series needs at least 2 pairs")


@dataclass
class TestResult:
    t: float
    df: int
    p: float
    mean_a: float
    std_a: float
    mean_b: float
    std_b: float
    mean_diff: float
    std_diff: float
    degenerate: bool = False


def paired_ttest(series: PairedSeries) -> TestResult:
    """Two-tailed paired t-test on values_a - values_b.

    Zero-variance differences: all-zero -> t=0, p=1; nonzero mean ->
    p=0 with the degenerate flag set.
    """
    a, b = series.values_a, series.values_b
    d = a - b
    n = d.size
    mean_d = float(d.mean())
    sd = float(d.std(ddof=1))
    common = dict(df=n - 1, mean_a=float(a.mean()), std_a=float(a.std(ddof=1)),
                  mean_b=float(b.mean()), std_b=float(b.std(ddof=1)),
                  mean_diff=mean_d, std_diff=sd)
    if sd == 0.0:
        if mean_d == 0.0:
            return TestResult(t=0.0, p=1.0, **common)
        return TestResult(t=math.copysign(math.inf, mean_d), p=0.0,
                          degenerate=True, **common)
    t = mean_d / (sd / math.sqrt(n))
    return TestResult(t=t, p=student_t_sf(t, n - 1), **common)


@dataclass
class HolmOutcome:
    p_values: list[float]
    alpha: float
    reject: list[bool]

    @property
    def n_rejected(self) -> int:
        return sum(self.reject)


def holm_bonferroni(p_values: list[float], alpha: float) -> HolmOutcome:
    """Step-down correction: reject the k-th smallest p while
    p_(k) <= alpha / (m - k + 1); stop at the first failure."""
    if not p_values:
        raise ValueError("holm_bonferroni needs at least one p-value")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if any(not 0.0 <= p <= 1.0 for p in p_values):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p_values)
    order = sorted(range(m), key=lambda i: p_values[i])
    reject = [False] * m
    for k, i in enumerate(order):
        if p_values[i] <= alpha / (m - k):
            reject[i] = True
        else:
            break
    return HolmOutcome(p_values=list(p_values), alpha=alpha, reject=reject)


def pearson_r(x: np.ndarray, y: np.ndarray) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise DataError("pearson_r needs two equal-length series of >= 2 values")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise NumericalError("pearson_r undefined for a constant series")
    r = float(dx @ dy) / (sx * sy)
    return min(1.0, max(-1.0, r))


def linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares line y = slope * x + intercept."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    den = float(dx @ dx)
    if den == 0.0:
        raise NumericalError("linear_fit undefined for constant x")
    slope = float(dx @ (y - y.mean())) / den
    return slope, float(y.mean() - slope * x.mean())


def syllable_rate(syllable_count: int, duration_s: float) -> float:
    """Syllables per second for one utterance."""
    if duration_s <= 0:
        raise DataError(f"duration must be positive, got {duration_s}")
    if syllable_count < 1:
        raise DataError(f"syllable count must be >= 1, got {syllable_count}")
    return syllable_count / duration_s


# ---------------------------------------------------------------------------
# Mode comparison report

#: metric name -> mode -> key -> value. Keys pair observations across modes:
#: utterance pairing keys at the utterance level, speaker ids at the speaker
#: level.
MetricTable = dict[str, dict[str, dict[str, float]]]


@dataclass
class SummaryRow:
    metric: str
    level: str  # "utterance" | "speaker"
    mode: str
    n: int
    mean: float
    std: float


@dataclass
class TestRow:
    metric: str
    level: str
    mode_a: str
    mode_b: str
    n: int
    t: float
    df: int
    p: float
    reject: bool  # Holm-corrected decision at the report's alpha


@dataclass
class PairedData:
    """Raw paired values backing one test row, for scatter/histogram output."""

    metric: str
    level: str
    mode_a: str
    mode_b: str
    keys: list[str]
    values_a: np.ndarray
    values_b: np.ndarray

    @property
    def diffs(self) -> np.ndarray:
        return self.values_a - self.values_b


@dataclass
class DifferenceTable:
    """Per-speaker mode_a-minus-mode_b differences with pairwise structure."""

    mode_a: str
    mode_b: str
    speakers: list[str]
    columns: dict[str, np.ndarray]
    correlations: dict[tuple[str, str], float] = field(default_factory=dict)
    fits: dict[tuple[str, str], tuple[float, float]] = field(default_factory=dict)


@dataclass
class ModeReport:
    alpha: float
    summaries: list[SummaryRow]
    tests: list[TestRow]
    paired: list[PairedData]
    differences: DifferenceTable | None
    excluded_keys: list[str]


def _paired_values(per_mode: dict[str, dict[str, float]],
                   mode_a: str, mode_b: str) -> tuple[list[str], np.ndarray, np.ndarray]:
    keys = sorted(set(per_mode[mode_a]) & set(per_mode[mode_b]))
    a = np.array([per_mode[mode_a][k] for k in keys])
    b = np.array([per_mode[mode_b][k] for k in keys])
    return keys, a, b


def build_mode_report(utterance_metrics: MetricTable,
                      speaker_metrics: MetricTable,
                      alpha: float = 0.05,
                      primary_pair: tuple[str, str] = ("modal", "silent")) -> ModeReport:
    """Assemble per-mode summaries, Holm-corrected pairwise paired t-tests,
    and the per-speaker difference table for ``primary_pair``.

    Each metric's mode pairs form one Holm family. Observations present in
    only one mode of a pair are excluded (reported in ``excluded_keys``).
    """
    summaries: list[SummaryRow] = []
    tests: list[TestRow] = []
    paired: list[PairedData] = []
    excluded: set[str] = set()

    for level, metrics in (("utterance", utterance_metrics),
                           ("speaker", speaker_metrics)):
        for metric, per_mode in metrics.items():
            modes = sorted(per_mode)
            for mode in modes:
                vals = np.array(list(per_mode[mode].values()), dtype=np.float64)
                if vals.size == 0:
                    continue
                summaries.append(SummaryRow(
                    metric, level, mode, vals.size, float(vals.mean()),
                    float(vals.std(ddof=1)) if vals.size > 1 else 0.0))
            family: list[TestRow] = []
            for i, mode_a in enumerate(modes):
                for mode_b in modes[i + 1:]:
                    keys, a, b = _paired_values(per_mode, mode_a, mode_b)
                    excluded.update((set(per_mode[mode_a]) | set(per_mode[mode_b]))
                                    - set(keys))
                    if len(keys) < 2:
                        continue
                    res = paired_ttest(PairedSeries(keys, a, b, mode_a, mode_b))
                    family.append(TestRow(metric, level, mode_a, mode_b,
                                          len(keys), res.t, res.df, res.p,
                                          reject=False))
                    paired.append(PairedData(metric, level, mode_a, mode_b,
                                             keys, a, b))
            if family:
                outcome = holm_bonferroni([row.p for row in family], alpha)
                for row, rej in zip(family, outcome.reject):
                    row.reject = rej
                tests.extend(family)

    differences = _difference_table(speaker_metrics, primary_pair)
    return ModeReport(alpha=alpha, summaries=summaries, tests=tests,
                      paired=paired, differences=differences,
                      excluded_keys=sorted(excluded))


def _difference_table(speaker_metrics: MetricTable,
                      pair: tuple[str, str]) -> DifferenceTable | None:
    mode_a, mode_b = pair
    columns: dict[str, dict[str, float]] = {}
    for metric, per_mode in speaker_metrics.items():
        if mode_a not in per_mode or mode_b not in per_mode:
            continue
        keys, a, b = _paired_values(per_mode, mode_a, mode_b)
        if keys:
            columns[metric] = dict(zip(keys, a - b))
    if not columns:
        return None
    shared = sorted(set.intersection(*[set(c) for c in columns.values()]))
    if len(shared) < 2:
        return None
    table = DifferenceTable(
        mode_a=mode_a, mode_b=mode_b, speakers=shared,
        columns={m: np.array([c[k] for k in shared]) for m, c in columns.items()},
    )
    names = sorted(table.columns)
    for i, ma in enumerate(names):
        for mb in names[i + 1:]:
            x, y = table.columns[ma], table.columns[mb]
            try:
                table.correlations[(ma, mb)] = pearson_r(x, y)
                table.fits[(ma, mb)] = linear_fit(x, y)
            except NumericalError:
                continue
    return table


# ---------------------------------------------------------------------------
# CSV serialization


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def write_report_csv(report: ModeReport, outdir: str | Path) -> list[Path]:
    """Write summary.csv, tests.csv, and differences.csv under ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    p = outdir / "summary.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "level", "mode", "n", "mean", "std"])
        for row in report.summaries:
            w.writerow([row.metric, row.level, row.mode, row.n,
                        _fmt(row.mean), _fmt(row.std)])
    written.append(p)

    p = outdir / "tests.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "level", "mode_a", "mode_b", "n", "t", "df", "p",
                    "reject_holm"])
        for row in report.tests:
            w.writerow([row.metric, row.level, row.mode_a, row.mode_b, row.n,
                        _fmt(row.t), row.df, _fmt(row.p), int(row.reject)])
    written.append(p)

    p = outdir / "differences.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        if report.differences is None:
            w.writerow(["speaker"])
        else:
            cols = sorted(report.differences.columns)
            w.writerow(["speaker"] + [f"d_{c}" for c in cols])
            for i, spk in enumerate(report.differences.speakers):
                w.writerow([spk] + [_fmt(report.differences.columns[c][i])
                                    for c in cols])
    written.append(p)
    return written


def read_report_csv(outdir: str | Path) -> dict[str, list[dict[str, str]]]:
    """Read the three report tables back as lists of row dicts."""
    out = {}
    for name in ("summary", "tests", "differences"):
        with open(Path(outdir) / f"{name}.csv", newline="") as fh:
            out[name] = list(csv.DictReader(fh))
    return out
