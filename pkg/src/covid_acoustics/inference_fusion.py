"""File scoring, fold ensembles, category fusion and submission pooling.

Score files are UTF-8 CSV with LF endings, header ``file_id,score`` and one
row per file; scores are written with 10 significant digits.
"""
from __future__ import annotations

import csv
import io
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import model as nn
from .dataset import CATEGORIES
from .errors import CoverageMismatch, IncompleteEnsemble, IncompleteFusion
from .features import FeatureMatrix
from .training import CHUNK_FRAMES, CHUNK_STRIDE, chunk_array

N_FOLDS = 5
SCORE_HEADER = ["file_id", "score"]


@dataclass(frozen=True)
class ScoreRecord:
    file_id: str
    probability: float

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"{self.file_id}: probability {self.probability} outside [0, 1]")


def chunk_probabilities(params: nn.NetworkParams, feat: FeatureMatrix,
                        T: int = CHUNK_FRAMES, stride: int = CHUNK_STRIDE) -> np.ndarray:
    chunks = chunk_array(feat.values, T, stride).astype(params.dtype, copy=False)
    return nn.predict(params, chunks)


def score_file(params: nn.NetworkParams, feat: FeatureMatrix) -> ScoreRecord:
    """Mean of the per-chunk probabilities."""
    return ScoreRecord(feat.source_id, float(np.mean(chunk_probabilities(params, feat))))


def ensemble_score(models: Sequence[nn.NetworkParams], feat: FeatureMatrix, n_folds: int = N_FOLDS) -> ScoreRecord:
    """Mean of the fold models' file scores."""
    models = list(models)
    if len(models) != n_folds or any(m is None for m in models):
        raise IncompleteEnsemble(f"expected {n_folds} fold models, got {sum(m is not None for m in models)}")
    return ScoreRecord(feat.source_id, exact_mean(score_file(m, feat).probability for m in models))


def exact_mean(values) -> float:
    """Arithmetic mean rounded once from the exact rational sum.

    Independent of input order, and e.g. (0.9, 0.6, 0.6) gives 0.7 where
    float accumulation gives 0.7000000000000001.
    """
    values = [float(v) for v in values]
    if not values:
        raise ValueError("mean of no values")
    return float(sum(map(Fraction, values)) / len(values))


def _prob(x) -> float:
    return x.probability if isinstance(x, ScoreRecord) else float(x)


def fuse_categories(scores: Mapping[str, ScoreRecord | float], subject_id: str = "",
                    categories: Sequence[str] = CATEGORIES) -> ScoreRecord:
    """Unweighted mean of one subject's per-category probabilities."""
    missing = [c for c in categories if c not in scores]
    if missing:
        raise IncompleteFusion(f"subject {subject_id or '?'} lacks {missing}")
    return ScoreRecord(subject_id, exact_mean(_prob(scores[c]) for c in categories))


def fuse_subjects(per_category: Mapping[str, Mapping[str, float]],
                  categories: Sequence[str] = CATEGORIES) -> dict[str, float]:
    """``{category: {subject: p}}`` -> ``{subject: fused p}``."""
    subjects = sorted(set().union(*(per_category[c].keys() for c in categories)))
    return {
        s: fuse_categories({c: per_category[c][s] for c in categories if s in per_category[c]}, s,
                           categories).probability
        for s in subjects
    }


def minmax_normalize(scores: Mapping[str, float]) -> dict[str, float]:
    """Rescale to [0, 1]; a constant score set maps to 0.5 everywhere."""
    values = np.array(list(scores.values()), dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return {k: 0.5 for k in scores}
    return {k: float((v - lo) / (hi - lo)) for k, v in scores.items()}


def pool_submissions(submissions: Sequence[Mapping[str, float]]) -> dict[str, float]:
    """Per-file mean of min-max normalized submissions over the same file list."""
    if len(submissions) < 1:
        raise ValueError("need at least one submission")
    ids = set(submissions[0])
    for k, sub in enumerate(submissions[1:], start=1):
        if set(sub) != ids:
            raise CoverageMismatch(f"submission {k} covers a different file list")
    normed = [minmax_normalize(s) for s in submissions]
    return {f: exact_mean(n[f] for n in normed) for f in sorted(ids)}


# ---------------------------------------------------------------- score CSV

def format_scores(scores: Mapping[str, float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_HEADER)
    for fid, s in scores.items():
        w.writerow([fid, f"{float(s):.10g}"])
    return buf.getvalue()


def write_scores(scores: Mapping[str, float], path) -> None:
    Path(path).write_bytes(format_scores(scores).encode("utf-8"))


def parse_scores(text: str) -> dict[str, float]:
    """Strict parse of score CSV text; raises ValueError on any malformation."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != SCORE_HEADER:
        raise ValueError(f"expected header {','.join(SCORE_HEADER)}")
    out: dict[str, float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ValueError(f"line {lineno}: expected 2 fields, got {len(row)}")
        fid = row[0].strip()
        if not fid:
            raise ValueError(f"line {lineno}: empty file_id")
        if fid in out:
            raise ValueError(f"line {lineno}: duplicate file_id {fid}")
        try:
            out[fid] = float(row[1])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad score {row[1]!r}") from exc
    return out


def read_scores(path) -> dict[str, float]:
    return parse_scores(Path(path).read_text(encoding="utf-8"))
