"""From raw recordings to a fused subject score, on a small synthetic corpus.

Run: python demos/walkthrough.py [workdir]
Takes about a minute on one core.
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from covid_acoustics import dataset
from covid_acoustics.audio_io import load_and_preprocess
from covid_acoustics.features import extract_features
from covid_acoustics.inference_fusion import ensemble_score, fuse_subjects
from covid_acoustics.metrics import evaluate
from covid_acoustics.training import TrainConfig, train_fold

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())

# 40 subjects, 30% positive, each with a breathing, cough and speech FLAC
dev = dataset.synth_corpus(40, 0.3, seed=1, out_dir=work / "dev", prefix="dev")
blind = dataset.synth_corpus(20, 0.3, seed=2, out_dir=work / "blind", prefix="blind")
print(dataset.class_stats(dev.entries)["subjects"])

# mono 44.1 kHz, peak 1, low-activity edges trimmed; then 192 x N log-mel + deltas
feats = {e.file_id: extract_features(load_and_preprocess(e.path, e.file_id)) for e in dev}
blind_feats = {e.file_id: extract_features(load_and_preprocess(e.path, e.file_id)) for e in blind}
first = next(iter(feats.values()))
print("feature matrix", first.values.shape)

# five stratified folds over subjects, one model per fold and category
folds = dataset.make_folds(dev.entries, seed=0)
cfg = TrainConfig(batch_size=32, max_epochs=3, batches_per_epoch=4, hidden=16, fc_dim=16)
per_category = {}
for cat in dataset.CATEGORIES:
    models = [train_fold(dev.by_category(cat), folds, k, feats, cfg, seed=k).params for k in range(5)]
    per_category[cat] = {e.subject_id: ensemble_score(models, blind_feats[e.file_id]).probability
                         for e in blind.by_category(cat)}

labels = {e.subject_id: e.label for e in blind}
for cat, scores in per_category.items():
    print(cat, evaluate(scores, labels).to_dict())

# fusion is the plain mean of the three category probabilities per subject
fused = fuse_subjects(per_category)
print("fusion", evaluate(fused, labels).to_dict())
print("score range", np.min(list(fused.values())), np.max(list(fused.values())))
