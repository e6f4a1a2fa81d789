"""Evaluation statistics: confusion-matrix metrics, study-level bootstrap
confidence intervals with physical subsampling, Pearson chi-squared,
Cramer's V, the survey sample-size model, and DICOM-tag agreement.

The bootstrap draws studies with replacement; each drawn study contributes
one uniformly chosen series, subsampled at the configured physical step
with an iteration-derived seed, so resamples are independent of execution
order and bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import NormalDist
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import (DegenerateTable, EmptyCohort, EmptyMatrix, InvalidParams,
                     UnknownFactor)
from .geometry import first_window_size, greedy_sample_indices
from .records import StudyRecord
from .taxonomy import BodyRegion

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Confusion matrix metrics


@dataclass
class ConfusionMatrix:
    counts: np.ndarray            # K x K, rows = truth, cols = prediction
    class_names: Tuple[str, ...]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.class_names)
        if self.counts.shape != (k, k):
            raise ValueError("counts must be square and match class_names")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @classmethod
    def from_labels(cls, truth: Sequence[int], pred: Sequence[int],
                    class_names: Sequence[str]) -> "ConfusionMatrix":
        k = len(class_names)
        truth = np.asarray(truth, dtype=np.int64)
        pred = np.asarray(pred, dtype=np.int64)
        flat = np.bincount(truth * k + pred, minlength=k * k)
        return cls(flat.reshape(k, k), tuple(class_names))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def weighted_sensitivity(cm: ConfusionMatrix) -> float:
    """Support-weighted mean of per-class recall.

    Computed in exact rational arithmetic; algebraically this equals
    trace/total whenever zero-support classes are skipped.
    """
    return float(weighted_sensitivity_exact(cm))


def weighted_sensitivity_exact(cm: ConfusionMatrix) -> Fraction:
    """Rational-valued variant used by exactness checks."""
    total_support = 0
    acc = Fraction(0)
    for k in range(len(cm.class_names)):
        support = int(cm.counts[k].sum())
        if support == 0:
            continue
        acc += support * Fraction(int(cm.counts[k, k]), support)
        total_support += support
    if total_support == 0:
        raise EmptyMatrix("confusion matrix has no counts")
    return acc / total_support


def weighted_specificity(cm: ConfusionMatrix) -> float:
    """Support-weighted one-vs-rest true-negative rate.

    Classes with zero support or an undefined TNR (no true negatives and
    no false positives) are skipped with a warning; if nothing remains the
    result is NaN.
    """
    total = cm.total
    if total == 0:
        raise EmptyMatrix("confusion matrix has no counts")
    acc = Fraction(0)
    total_support = 0
    for k in range(len(cm.class_names)):
        support = int(cm.counts[k].sum())
        if support == 0:
            continue
        col = int(cm.counts[:, k].sum())
        fp = col - int(cm.counts[k, k])
        tn = total - support - fp
        if tn + fp == 0:
            log.warning("class %s: TNR undefined, skipped", cm.class_names[k])
            continue
        acc += support * Fraction(tn, tn + fp)
        total_support += support
    if total_support == 0:
        return float("nan")
    return float(acc / total_support)


# ---------------------------------------------------------------------------
# Chi-squared / Cramer's V

_GAMMA_EPS = 1e-15
_GAMMA_ITMAX = 1000


def _gammainc_p_series(a: float, x: float) -> float:
    """Lower regularized incomplete gamma via its power series (x < a+1)."""
    ap = a
    summ = 1.0 / a
    delta = summ
    for _ in range(_GAMMA_ITMAX):
        ap += 1.0
        delta *= x / ap
        summ += delta
        if abs(delta) < abs(summ) * _GAMMA_EPS:
            break
    return summ * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gammainc_q_contfrac(a: float, x: float) -> float:
    """Upper regularized incomplete gamma via Lentz continued fraction."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_ITMAX + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def chi2_sf(x: float, df: int) -> float:
    """Chi-squared upper tail probability (survival function)."""
    if x < 0 or df <= 0:
        raise InvalidParams("chi2_sf needs x >= 0 and df > 0")
    if x == 0:
        return 1.0
    a = df / 2.0
    half = x / 2.0
    if half < a + 1.0:
        return 1.0 - _gammainc_p_series(a, half)
    return _gammainc_q_contfrac(a, half)


@dataclass
class FactorTable:
    """Per-category correct/incorrect contingency table for one factor."""

    factor: str
    categories: List[str]
    correct: np.ndarray     # per category
    incorrect: np.ndarray

    def contingency(self) -> np.ndarray:
        return np.stack([np.asarray(self.correct, dtype=np.int64),
                         np.asarray(self.incorrect, dtype=np.int64)])


def chi_square(table) -> Tuple[float, float]:
    """Pearson chi-squared test of independence on an r x c table.

    Accepts a FactorTable or a 2-D count array. Any zero expected count is
    degenerate rather than silently corrected.
    """
    observed = table.contingency() if isinstance(table, FactorTable) else \
        np.asarray(table, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim != 2 or min(observed.shape) < 2:
        raise DegenerateTable("need at least a 2x2 table")
    n = observed.sum()
    if n <= 0:
        raise DegenerateTable("empty table")
    row = observed.sum(axis=1, keepdims=True)
    col = observed.sum(axis=0, keepdims=True)
    expected = row @ col / n
    if np.any(expected == 0):
        raise DegenerateTable("zero expected count")
    stat = float(((observed - expected) ** 2 / expected).sum())
    df = (observed.shape[0] - 1) * (observed.shape[1] - 1)
    return stat, chi2_sf(stat, df)


# Qualitative association strength buckets, anchored on "negligible < 0.05".
_V_BUCKETS = ((0.05, "negligible"), (0.10, "weak"), (0.30, "moderate"))


def association_bucket(v: float) -> str:
    for bound, name in _V_BUCKETS:
        if v < bound:
            return name
    return "strong"


def cramers_v(table) -> Tuple[float, str]:
    """Cramer's V in [0, 1] plus its qualitative bucket."""
    observed = table.contingency() if isinstance(table, FactorTable) else \
        np.asarray(table, dtype=np.float64)
    stat, _ = chi_square(observed)
    n = float(np.asarray(observed, dtype=np.float64).sum())
    k = min(observed.shape[0] - 1, observed.shape[1] - 1)
    v = math.sqrt(stat / (n * k))
    v = min(1.0, v)
    return v, association_bucket(v)


# ---------------------------------------------------------------------------
# Sample size model


def sample_size(p: float, confidence: float = 0.95,
                relative_error: float = 0.10, deff: float = 1.0) -> int:
    """Survey sampling-unit count for estimating accuracy p.

    ceil(deff * z^2 * (1-p) / (relative_error^2 * p)) with z the two-sided
    normal quantile for the confidence level. deff is the design effect
    for clustered sampling units.
    """
    if not (0.0 < p < 1.0) or relative_error <= 0 or deff <= 0 \
            or not (0.0 < confidence < 1.0):
        raise InvalidParams("need 0<p<1, 0<confidence<1, relative_error>0, deff>0")
    z = NormalDist().inv_cdf((1.0 + confidence) / 2.0)
    return math.ceil(deff * z * z * (1.0 - p) / (relative_error ** 2 * p))


# ---------------------------------------------------------------------------
# Bootstrap over studies


@dataclass
class CIResult:
    point: float
    lo: float
    hi: float
    level: float
    resamples: int
    seed: int


@dataclass
class EvalSeries:
    """One series' evaluation arrays: positions plus truth/pred codes."""

    positions: np.ndarray  # mm along the slice normal, sorted ascending
    truth: np.ndarray      # int class codes
    pred: np.ndarray
    series_uid: str = ""

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=np.int64)
        self.pred = np.asarray(self.pred, dtype=np.int64)
        if not (len(self.positions) == len(self.truth) == len(self.pred)):
            raise ValueError("positions/truth/pred lengths differ")


@dataclass
class EvalStudy:
    study_uid: str
    series: List[EvalSeries] = field(default_factory=list)


def _series_start_counts(series: EvalSeries, k: int, step: float) -> np.ndarray:
    """Count vectors (flattened K x K) for every possible sampling start."""
    window = first_window_size(series.positions, step)
    out = np.zeros((window, k * k), dtype=np.int64)
    for start in range(window):
        idx = greedy_sample_indices(series.positions, step, start)
        flat = series.truth[idx] * k + series.pred[idx]
        out[start] = np.bincount(flat, minlength=k * k)
    return out


def full_confusion(studies: Sequence[EvalStudy], k: int,
                   class_names: Sequence[str]) -> ConfusionMatrix:
    """Confusion matrix over every image of every series (no subsampling)."""
    flat = np.zeros(k * k, dtype=np.int64)
    for study in studies:
        for s in study.series:
            flat += np.bincount(s.truth * k + s.pred, minlength=k * k)
    return ConfusionMatrix(flat.reshape(k, k), tuple(class_names))


def bootstrap_ci(studies: Sequence[EvalStudy],
                 metric: Callable[[ConfusionMatrix], float],
                 k: int,
                 class_names: Optional[Sequence[str]] = None,
                 resamples: int = 1000,
                 level: float = 0.95,
                 seed: int = 0,
                 step_mm: float = 10.0) -> CIResult:
    """Percentile bootstrap CI with per-iteration physical subsampling.

    Each resample draws studies with replacement, keeps one random series
    per drawn study, subsamples it at step_mm, and evaluates the metric on
    the pooled confusion matrix. The point estimate is the bootstrap
    median, so lo <= point <= hi by construction.
    """
    studies = list(studies)
    if not studies:
        raise EmptyCohort("no studies to bootstrap")
    if class_names is None:
        class_names = [str(i) for i in range(k)]

    # Precompute every (study, series, start) count vector once.
    combo_counts = []        # rows of the combo matrix
    study_series_offsets = []  # per study: array of first-combo ids per series
    study_windows = []         # per study: window size per series
    for study in studies:
        if not study.series:
            raise EmptyCohort(f"study {study.study_uid} has no series")
        offsets = []
        windows = []
        for s in study.series:
            offsets.append(len(combo_counts))
            counts = _series_start_counts(s, k, step_mm)
            windows.append(counts.shape[0])
            combo_counts.extend(counts)
        study_series_offsets.append(np.asarray(offsets, dtype=np.int64))
        study_windows.append(np.asarray(windows, dtype=np.int64))
    combo_matrix = np.asarray(combo_counts, dtype=np.int64)
    n = len(studies)
    n_series = np.array([len(s.series) for s in studies], dtype=np.int64)
    offsets_arr = [study_series_offsets[j] for j in range(n)]
    windows_arr = [study_windows[j] for j in range(n)]

    values = np.empty(resamples, dtype=np.float64)
    for i in range(resamples):
        rng = np.random.default_rng([seed, i])
        drawn = rng.integers(0, n, size=n)
        series_pick = (rng.random(n) * n_series[drawn]).astype(np.int64)
        combo_ids = np.empty(n, dtype=np.int64)
        starts = rng.random(n)
        for j in range(n):
            sj = drawn[j]
            pick = series_pick[j]
            window = windows_arr[sj][pick]
            combo_ids[j] = offsets_arr[sj][pick] + int(starts[j] * window)
        flat = combo_matrix[combo_ids].sum(axis=0)
        values[i] = metric(ConfusionMatrix(flat.reshape(k, k),
                                           tuple(class_names)))

    alpha = (1.0 - level) / 2.0
    # A resample can miss a class entirely, making a per-class metric
    # undefined there; compute the percentiles over the defined resamples.
    defined = values[np.isfinite(values)]
    if defined.size == 0:
        nan = float("nan")
        return CIResult(point=nan, lo=nan, hi=nan, level=level,
                        resamples=resamples, seed=seed)
    lo, point, hi = np.percentile(defined, [100 * alpha, 50, 100 * (1 - alpha)])
    return CIResult(point=float(point), lo=float(lo), hi=float(hi),
                    level=level, resamples=resamples, seed=seed)


def jackknife_variance(studies: Sequence[EvalStudy],
                       metric: Callable[[ConfusionMatrix], float],
                       k: int,
                       class_names: Optional[Sequence[str]] = None) -> float:
    """Leave-one-study-out jackknife variance of the metric (no subsampling)."""
    studies = list(studies)
    if len(studies) < 2:
        raise EmptyCohort("jackknife needs at least two studies")
    if class_names is None:
        class_names = [str(i) for i in range(k)]
    per_study = np.stack([
        np.sum([np.bincount(s.truth * k + s.pred, minlength=k * k)
                for s in study.series], axis=0)
        for study in studies])
    total = per_study.sum(axis=0)
    thetas = np.array([
        metric(ConfusionMatrix((total - per_study[j]).reshape(k, k),
                               tuple(class_names)))
        for j in range(len(studies))])
    n = len(studies)
    return float((n - 1) / n * np.sum((thetas - thetas.mean()) ** 2))


# ---------------------------------------------------------------------------
# DICOM tag agreement


def normalize_tag_value(value: Optional[str]) -> str:
    return (value or "").strip().upper().replace(" ", "_")


def tag_agreement(studies: Sequence[StudyRecord],
                  predicted_regions: Dict[str, Set[BodyRegion]],
                  tag: str = "body_part",
                  synonym_map: Optional[Dict[str, Sequence[str]]] = None) -> float:
    """Fraction of studies whose tag value maps into the predicted regions.

    Missing tags and unmapped values count as disagreement; absence is
    non-informative labeling, not a match.
    """
    if tag not in ("body_part", "procedure"):
        raise UnknownFactor(tag)
    if not studies:
        raise EmptyCohort("no studies")
    synonym_map = {normalize_tag_value(k): v
                   for k, v in (synonym_map or {}).items()}
    matched = 0
    for study in studies:
        raw = study.body_part_examined if tag == "body_part" \
            else study.procedure_description
        value = normalize_tag_value(raw)
        if not value:
            continue
        names = synonym_map.get(value)
        if names is None:
            continue
        mapped = {BodyRegion(n) for n in names}
        if mapped & predicted_regions.get(study.study_uid, set()):
            matched += 1
    return matched / len(studies)


# ---------------------------------------------------------------------------
# Factor reports


def _age_bucket(age: Optional[float]) -> str:
    if age is None:
        return "Unknown"
    if age < 45:
        return "18-44 years"
    if age < 65:
        return "45-64 years"
    return ">=65 years"


def _thickness_bucket(mm: Optional[float]) -> str:
    if mm is None:
        return "Unknown"
    if mm <= 2:
        return "<=2 mm"
    if mm < 5:
        return ">2 mm and <5 mm"
    return ">=5 mm"


def _kernel_bucket(series) -> str:
    kernel = (series.convolution_kernel or "") + " " + series.series_description
    return "Bone" if "BONE" in kernel.upper() else "Soft tissue"


def _sequence_bucket(series) -> str:
    from .cohort import mri_sequence_type
    return mri_sequence_type(series.series_description) or "Unknown"


# factor -> (level, extractor); study-level extractors take a StudyRecord,
# series-level ones a SeriesRecord.
FACTORS = {
    "institution": ("study", lambda s: s.institution or "Unknown"),
    "age": ("study", lambda s: _age_bucket(s.patient_age)),
    "gender": ("study", lambda s: {"F": "Female", "M": "Male"}.get(
        s.patient_sex, "Unknown")),
    "manufacturer": ("study", lambda s: s.manufacturer or "Unknown"),
    "contrast": ("series", lambda s: "With contrast" if s.contrast_agent
                 else "Without contrast"),
    "slice_thickness": ("series", lambda s: _thickness_bucket(s.slice_thickness)),
    "kernel": ("series", _kernel_bucket),
    "sequence": ("series", _sequence_bucket),
}

MIN_CATEGORY_COUNT = 5


@dataclass
class FactorRow:
    category: str
    n_units: int
    n_images: int
    sensitivity: Optional[float]
    sensitivity_ci: Optional[CIResult]
    specificity: Optional[float]
    specificity_ci: Optional[CIResult]


@dataclass
class FactorReport:
    factor: str
    rows: List[FactorRow]
    table: FactorTable
    chi2: Optional[float]
    p_value: Optional[float]


def factor_report(studies: Sequence[StudyRecord],
                  evals: Dict[str, EvalStudy],
                  factor: str,
                  k: int,
                  class_names: Sequence[str],
                  min_count: int = MIN_CATEGORY_COUNT,
                  resamples: int = 1000,
                  level: float = 0.95,
                  seed: int = 0,
                  step_mm: float = 10.0) -> FactorReport:
    """Stratified performance table for one confounding factor.

    Categories with fewer units than min_count get NA metrics. The
    chi-squared test runs on the correct/incorrect contingency across
    categories when at least two categories have images.
    """
    if factor not in FACTORS:
        raise UnknownFactor(factor)
    level_kind, extract = FACTORS[factor]

    # Units per category: whole studies for study-level factors, otherwise
    # per-study pseudo-units restricted to matching series.
    units: Dict[str, List[EvalStudy]] = {}
    for study in studies:
        ev = evals.get(study.study_uid)
        if ev is None or not ev.series:
            continue
        if level_kind == "study":
            units.setdefault(extract(study), []).append(ev)
        else:
            by_uid = {s.series_uid: s for s in study.series}
            by_cat: Dict[str, List[EvalSeries]] = {}
            for pos, ev_series in enumerate(ev.series):
                rec_series = by_uid.get(ev_series.series_uid)
                if rec_series is None:
                    rec_series = study.series[pos]
                by_cat.setdefault(extract(rec_series), []).append(ev_series)
            for cat, series_list in by_cat.items():
                units.setdefault(cat, []).append(
                    EvalStudy(study.study_uid, series_list))

    rows = []
    correct = []
    incorrect = []
    categories = sorted(units)
    for cat in categories:
        cat_units = units[cat]
        cm = full_confusion(cat_units, k, class_names)
        n_images = cm.total
        n_correct = int(np.trace(cm.counts))
        correct.append(n_correct)
        incorrect.append(n_images - n_correct)
        if len(cat_units) < min_count:
            rows.append(FactorRow(cat, len(cat_units), n_images,
                                  None, None, None, None))
            continue
        sens_ci = bootstrap_ci(cat_units, weighted_sensitivity, k, class_names,
                               resamples=resamples, level=level, seed=seed,
                               step_mm=step_mm)
        spec_ci = bootstrap_ci(cat_units, weighted_specificity, k, class_names,
                               resamples=resamples, level=level, seed=seed,
                               step_mm=step_mm)
        rows.append(FactorRow(cat, len(cat_units), n_images,
                              weighted_sensitivity(cm), sens_ci,
                              weighted_specificity(cm), spec_ci))

    table = FactorTable(factor, categories,
                        np.asarray(correct, dtype=np.int64),
                        np.asarray(incorrect, dtype=np.int64))
    stat = p = None
    if len(categories) >= 2:
        try:
            stat, p = chi_square(table)
        except DegenerateTable:
            pass
    return FactorReport(factor, rows, table, stat, p)
