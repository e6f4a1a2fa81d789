"""Pluggable per-image classifier backends.

A backend maps preprocessed images to probability vectors over its class
set. Two implementations ship here: a score-file lookup (the evaluation
oracle when network outputs are computed elsewhere) and a desk-scale
centroid baseline so the full pipeline runs end to end without a trained
network. Prediction invariants are enforced at this boundary, never
trusted from backends.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BackendFailure, EmptyClass, NotNormalized, SchemaError
from .preprocess import NormalizedImage
from .taxonomy import CANONICAL_ORDER, BodyRegion

_SUM_TOL = 1e-9
_CSV_SUM_TOL = 1e-6


@dataclass
class Prediction:
    sop_uid: str
    classes: Tuple[BodyRegion, ...]
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 1 or p.shape[0] != len(self.classes):
            raise BackendFailure(
                f"{self.sop_uid}: probability vector has wrong length")
        if np.any(p < 0) or not np.isfinite(p).all():
            raise BackendFailure(f"{self.sop_uid}: invalid probabilities")
        total = float(p.sum())
        if abs(total - 1.0) > _SUM_TOL:
            raise BackendFailure(
                f"{self.sop_uid}: probabilities sum to {total}")
        self.probabilities = p / total

    @property
    def label(self) -> BodyRegion:
        return self.classes[int(np.argmax(self.probabilities))]

    @property
    def margin(self) -> float:
        """Difference between the top two class probabilities."""
        if len(self.probabilities) < 2:
            return 1.0
        top2 = np.partition(self.probabilities, -2)[-2:]
        return float(top2[1] - top2[0])

    @property
    def entropy(self) -> float:
        """Shannon entropy normalized to [0, 1] by ln(K)."""
        p = self.probabilities
        k = len(p)
        if k < 2:
            return 0.0
        nz = p[p > 0]
        return float(-(nz * np.log(nz)).sum() / np.log(k))


class Backend:
    """Classifier backend interface: prepare once, then classify batches."""

    classes: Tuple[BodyRegion, ...] = ()
    thread_safe: bool = True

    def prepare(self) -> None:
        pass

    def classify_batch(self, images: Sequence[NormalizedImage]) -> List[Prediction]:
        raise NotImplementedError


def classify_image(image: NormalizedImage, backend: Backend) -> Prediction:
    preds = backend.classify_batch([image])
    if len(preds) != 1:
        raise BackendFailure("backend returned wrong batch size")
    return preds[0]


# ---------------------------------------------------------------------------
# Score-file backend


def load_scores(path, classes: Optional[Sequence[BodyRegion]] = None
                ) -> Tuple[Dict[str, np.ndarray], Tuple[BodyRegion, ...]]:
    """Read a score CSV: header `sop_uid,<class names>`, one row per image.

    Vectors within 1e-6 of summing to 1 are renormalized; anything further
    off raises NotNormalized. Duplicate sop_uids are data corruption.
    """
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("score file is empty")
        if not header or header[0] != "sop_uid":
            raise SchemaError("first column must be sop_uid")
        try:
            file_classes = tuple(BodyRegion(name) for name in header[1:])
        except ValueError as exc:
            raise SchemaError(f"unknown class in header: {exc}")
        if classes is not None and tuple(classes) != file_classes:
            raise SchemaError("score file classes do not match expected set")

        scores: Dict[str, np.ndarray] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError("wrong column count", line=lineno)
            uid = row[0]
            if uid in scores:
                raise SchemaError(f"duplicate sop_uid {uid}", line=lineno)
            try:
                vec = np.array([float(x) for x in row[1:]], dtype=np.float64)
            except ValueError:
                raise SchemaError("non-numeric probability", line=lineno)
            total = float(vec.sum())
            if abs(total - 1.0) > _CSV_SUM_TOL:
                raise NotNormalized(
                    f"line {lineno}: probabilities sum to {total}")
            scores[uid] = vec / total
    return scores, file_classes


def save_scores(scores: Dict[str, np.ndarray],
                classes: Sequence[BodyRegion], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sop_uid"] + [c.value for c in classes])
        for uid in scores:
            writer.writerow([uid] + [f"{p:.10g}" for p in scores[uid]])


class ScoreFileBackend(Backend):
    """Looks predictions up from a score CSV produced elsewhere."""

    def __init__(self, path):
        self._path = path
        self._scores: Dict[str, np.ndarray] = {}
        self.classes = ()

    def prepare(self) -> None:
        self._scores, self.classes = load_scores(self._path)

    def classify_batch(self, images):
        if not self._scores:
            self.prepare()
        preds = []
        for image in images:
            vec = self._scores.get(image.source_sop_uid)
            if vec is None:
                raise BackendFailure(f"no scores for {image.source_sop_uid}")
            preds.append(Prediction(image.source_sop_uid, self.classes, vec))
        return preds


# ---------------------------------------------------------------------------
# Centroid baseline

_THUMB = 16


def _thumbnail(values: np.ndarray, size: int = _THUMB) -> np.ndarray:
    """Block-mean downsample to size x size (cropping any remainder)."""
    h, w = values.shape
    bh, bw = max(1, h // size), max(1, w // size)
    cropped = values[:bh * size, :bw * size]
    return cropped.reshape(size, bh, size, bw).mean(axis=(1, 3))


class CentroidBackend(Backend):
    """Nearest-centroid classifier over down-averaged images.

    Softmax over negative Euclidean distances to the per-class mean
    thumbnail, temperature 1. Immutable after training; safe to share.
    """

    def __init__(self, classes: Tuple[BodyRegion, ...], centroids: np.ndarray):
        self.classes = classes
        self._centroids = centroids  # (K, size*size)

    def classify_batch(self, images):
        preds = []
        for image in images:
            feat = _thumbnail(image.values).ravel()
            dists = np.linalg.norm(self._centroids - feat, axis=1)
            logits = -dists
            logits -= logits.max()
            p = np.exp(logits)
            p /= p.sum()
            preds.append(Prediction(image.source_sop_uid, self.classes, p))
        return preds


def train_centroid_baseline(
        labeled: Iterable[Tuple[NormalizedImage, BodyRegion]],
        classes: Optional[Sequence[BodyRegion]] = None) -> CentroidBackend:
    """Fit per-class mean thumbnails.

    `classes` defaults to the regions observed in the training set, in
    canonical order. Any advertised class without an example is an error.
    """
    sums: Dict[BodyRegion, np.ndarray] = {}
    counts: Dict[BodyRegion, int] = {}
    for image, region in labeled:
        feat = _thumbnail(image.values).ravel()
        if region in sums:
            sums[region] += feat
            counts[region] += 1
        else:
            sums[region] = feat.copy()
            counts[region] = 1
    if not sums:
        raise EmptyClass("empty training set")
    if classes is None:
        classes = tuple(r for r in CANONICAL_ORDER if r in sums)
    else:
        classes = tuple(classes)
        missing = [c for c in classes if c not in sums]
        if missing:
            raise EmptyClass(f"no training examples for {missing}")
    centroids = np.stack([sums[c] / counts[c] for c in classes])
    return CentroidBackend(classes, centroids)
