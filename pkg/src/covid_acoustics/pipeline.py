"""End-to-end experiment on a synthetic development/blind corpus pair.

For each sound category: five fold models are trained on the development
corpus, their scores are averaged on the blind corpus, and categories are
fused per subject. The returned metrics dict is JSON-ready and, for a
fixed seed in deterministic mode, byte-for-byte reproducible.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dataset
from .audio_io import load_and_preprocess
from .features import FeatureMatrix, extract_features
from .inference_fusion import ensemble_score, fuse_subjects
from .metrics import evaluate
from .training import TrainConfig, train_fold

log = logging.getLogger(__name__)

# Short schedule that fits 15 fold models per run on one CPU core; the
# paper-scale schedule is TrainConfig().
DESK_TRAIN = TrainConfig(batch_size=64, max_epochs=4, batches_per_epoch=6)


@dataclass(frozen=True)
class ExperimentConfig:
    n_subjects: int = 200
    n_blind: int = 200
    positive_fraction: float = 0.2
    separation: float = dataset.DEFAULT_SEPARATION
    seed: int = 0
    train: TrainConfig = field(default=DESK_TRAIN)
    categories: tuple[str, ...] = dataset.CATEGORIES
    n_folds: int = 5


def extract_all(manifest) -> dict[str, FeatureMatrix]:
    return {e.file_id: extract_features(load_and_preprocess(e.path, e.file_id)) for e in manifest}


def fold_seed(seed: int, category_index: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, category_index, fold]).generate_state(1)[0])


def run_experiment(workdir, cfg: ExperimentConfig = ExperimentConfig()) -> dict:
    workdir = Path(workdir)
    t0 = time.perf_counter()
    dev = dataset.synth_corpus(cfg.n_subjects, cfg.positive_fraction, cfg.seed, workdir / "dev",
                               cfg.separation, prefix="dev")
    blind = dataset.synth_corpus(cfg.n_blind, cfg.positive_fraction, cfg.seed + 1, workdir / "blind",
                                 cfg.separation, prefix="blind")
    feats = extract_all(dev)
    blind_feats = extract_all(blind)
    folds = dataset.make_folds(dev.entries, cfg.seed, cfg.n_folds)
    subject_labels = {e.subject_id: e.label for e in blind}

    per_category: dict[str, dict[str, float]] = {}
    validation: dict[str, list[float]] = {}
    for ci, cat in enumerate(cfg.categories):
        entries = dev.by_category(cat)
        models, val_aucs = [], []
        for k in range(cfg.n_folds):
            res = train_fold(entries, folds, k, feats, cfg.train, fold_seed(cfg.seed, ci, k))
            models.append(res.params)
            val_aucs.append(res.log[res.best_epoch].val_auc)
            log.info("%s fold %d: best epoch %d, val AUC %.4f", cat, k, res.best_epoch, val_aucs[-1])
        validation[cat] = val_aucs
        per_category[cat] = {
            e.subject_id: ensemble_score(models, blind_feats[e.file_id], cfg.n_folds).probability
            for e in blind.by_category(cat)
        }

    results = {cat: evaluate(per_category[cat], subject_labels).to_dict() for cat in cfg.categories}
    results["fusion"] = evaluate(fuse_subjects(per_category, cfg.categories), subject_labels).to_dict()
    for cat, aucs in validation.items():
        results[cat]["val_auc_folds"] = aucs
        results[cat]["val_auc_mean"] = float(np.mean(aucs))
    return {
        "config": {**asdict(replace(cfg, train=None)), "train": asdict(cfg.train)},
        "blind": results,
        "runtime_s": time.perf_counter() - t0,
    }


def metrics_json(report: dict) -> str:
    """Canonical serialization of the metrics part of a report (runtime excluded)."""
    return json.dumps({"config": report["config"], "blind": report["blind"]}, sort_keys=True, indent=2) + "\n"
