"""Manifests, curation filters, subject-level stratified folds and a synthetic corpus.

Manifest CSV columns: ``file_id,subject_id,category,path,label,duration``.
``label`` is ``COVID``, ``NonCOVID`` (``1``/``0`` also accepted) or empty for
blind-test files. Relative paths resolve against the manifest's directory.
"""
from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import InsufficientData, ManifestError

CATEGORIES = ("breathing", "cough", "speech")
MIN_DURATION_S = 0.5
N_FOLDS = 5
MANIFEST_HEADER = ["file_id", "subject_id", "category", "path", "label", "duration"]

_LABELS = {"covid": 1, "1": 1, "positive": 1, "noncovid": 0, "non-covid": 0, "0": 0, "negative": 0, "": None}


@dataclass(frozen=True)
class ManifestEntry:
    file_id: str
    subject_id: str
    category: str
    path: Path
    label: int | None
    duration: float


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    rejected: list[tuple[str, str]] = field(default_factory=list)  # (file_id, reason)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def by_category(self, category: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.category == category]

    def subject_labels(self) -> dict[str, int | None]:
        return {e.subject_id: e.label for e in self.entries}


def _label_text(label: int | None) -> str:
    return {1: "COVID", 0: "NonCOVID", None: ""}[label]


def parse_manifest(path) -> Manifest:
    """Read and validate a manifest; short recordings go to ``rejected``."""
    path = Path(path)
    root = path.parent
    out = Manifest()
    seen: set[tuple[str, str]] = set()
    ids: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return out
        missing = set(MANIFEST_HEADER) - set(reader.fieldnames)
        if missing:
            raise ManifestError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                file_id = row["file_id"].strip()
                subject = row["subject_id"].strip()
                category = row["category"].strip().lower()
                duration = float(row["duration"])
                label_key = (row["label"] or "").strip().lower()
            except (AttributeError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: malformed row ({exc})") from exc
            if not file_id or not subject:
                raise ManifestError(f"{path}:{lineno}: empty file_id or subject_id")
            if category not in CATEGORIES:
                raise ManifestError(f"{path}:{lineno}: unknown category {category!r}")
            if label_key not in _LABELS:
                raise ManifestError(f"{path}:{lineno}: unknown label {row['label']!r}")
            if (subject, category) in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate entry for subject {subject}, {category}")
            if file_id in ids:
                raise ManifestError(f"{path}:{lineno}: duplicate file_id {file_id}")
            seen.add((subject, category))
            ids.add(file_id)
            if duration < MIN_DURATION_S:
                out.rejected.append((file_id, f"duration {duration:.3f} s < {MIN_DURATION_S} s"))
                continue
            p = Path(row["path"])
            out.entries.append(ManifestEntry(file_id, subject, category, p if p.is_absolute() else root / p,
                                             _LABELS[label_key], duration))
    return out


def write_manifest(entries, path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in entries:
            try:
                rel = Path(e.path).relative_to(path.parent)
            except ValueError:
                rel = e.path
            w.writerow([e.file_id, e.subject_id, e.category, rel.as_posix(), _label_text(e.label),
                        f"{e.duration:.4f}"])


# -------------------------------------------------------------------- folds

def make_folds(entries, seed: int, n_folds: int = N_FOLDS) -> dict[str, int]:
    """Subject-level stratified assignment of subjects to validation folds.

    Each class is shuffled and dealt round-robin, continuing the deal across
    classes, so fold sizes differ by at most one subject and per-class
    counts per fold differ by at most one.
    """
    labels = {}
    for e in entries:
        if e.label is None:
            raise InsufficientData(f"subject {e.subject_id} has no label")
        labels[e.subject_id] = e.label
    pos = sorted(s for s, y in labels.items() if y == 1)
    neg = sorted(s for s, y in labels.items() if y == 0)
    if len(pos) < n_folds or len(neg) < n_folds:
        raise InsufficientData(f"need >= {n_folds} subjects per class, got {len(pos)} positive / {len(neg)} negative")
    rng = np.random.default_rng(seed)
    folds = {}
    k = 0
    for group in (pos, neg):
        for s in rng.permutation(group):
            folds[str(s)] = k % n_folds
            k += 1
    return dict(sorted(folds.items()))


def split(entries, folds: dict[str, int], fold_id: int):
    """(train, validation) entry lists for one fold."""
    train = [e for e in entries if folds[e.subject_id] != fold_id]
    val = [e for e in entries if folds[e.subject_id] == fold_id]
    return train, val


def write_folds(folds: dict[str, int], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "fold"])
        for s, k in folds.items():
            w.writerow([s, k])


def read_folds(path) -> dict[str, int]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["subject_id"]: int(row["fold"]) for row in csv.DictReader(fh)}


# -------------------------------------------------------------------- stats

def class_stats(entries) -> dict:
    """Subject- and file-level class counts, overall and per category."""
    entries = list(entries)
    subjects = {e.subject_id: e.label for e in entries}

    def summarize(labels):
        c = Counter(labels)
        n = len(labels)
        known = c[1] + c[0]
        return {
            "n": n,
            "covid": c[1],
            "non_covid": c[0],
            "unknown": c[None],
            "covid_fraction": c[1] / known if known else 0.0,
        }

    return {
        "subjects": summarize(list(subjects.values())),
        "categories": {cat: summarize([e.label for e in entries if e.category == cat]) for cat in CATEGORIES},
    }


# ------------------------------------------------------------ synthetic data

SYNTH_RATE = 44100
DEFAULT_SEPARATION = 0.5


def _band_noise(rng, n, lo, hi, sr=SYNTH_RATE):
    sos = signal.butter(4, [lo, min(hi, sr / 2 - 100)], btype="bandpass", fs=sr, output="sos")
    return signal.sosfilt(sos, rng.standard_normal(n))


def _burst_envelope(rng, n, sr, mean_len, mean_gap, attack):
    """Sequence of on/off bursts with a fast attack and exponential-ish decay."""
    env = np.zeros(n)
    t = int(rng.uniform(0.05, 0.3) * sr)
    while t < n:
        length = int(max(0.08, rng.normal(mean_len, mean_len / 4)) * sr)
        seg = np.arange(min(length, n - t)) / sr
        a = np.minimum(1.0, seg / attack) * np.exp(-seg / (mean_len * 0.8))
        env[t:t + len(seg)] = np.maximum(env[t:t + len(seg)], a * rng.uniform(0.6, 1.0))
        t += length + int(max(0.05, rng.normal(mean_gap, mean_gap / 3)) * sr)
    return env


def _source(rng, category, n, sr):
    """Class-independent base recording for one category."""
    if category == "cough":
        env = _burst_envelope(rng, n, sr, mean_len=0.25, mean_gap=0.35, attack=0.005)
        x = env * _band_noise(rng, n, 150, 3000)
    elif category == "breathing":
        env = _burst_envelope(rng, n, sr, mean_len=0.8, mean_gap=0.3, attack=0.15)
        x = env * _band_noise(rng, n, 100, 2000)
    else:
        t = np.arange(n) / sr
        f0 = rng.uniform(100, 220) * (1 + 0.05 * np.sin(2 * np.pi * rng.uniform(0.3, 1.0) * t))
        phase = 2 * np.pi * np.cumsum(f0) / sr
        harmonics = sum(np.sin(k * phase) / k for k in range(1, 16))
        env = _burst_envelope(rng, n, sr, mean_len=0.3, mean_gap=0.12, attack=0.03)
        sos = signal.butter(2, [300, 2500], btype="bandpass", fs=sr, output="sos")
        x = env * signal.sosfilt(sos, harmonics)
    return x / (np.max(np.abs(x)) + 1e-12)


def synth_recording(rng, category: str, label: int, duration: float, separation: float = DEFAULT_SEPARATION,
                    sr: int = SYNTH_RATE) -> np.ndarray:
    """One synthetic recording in [-1, 1].

    Positive recordings carry an extra high-band component (3-7 kHz) that
    follows the source's own amplitude envelope; ``separation`` scales its
    level (0 makes both classes identically distributed). A low broadband
    background keeps every band populated so the cue is a dynamic one.
    """
    n = int(round(duration * sr))
    x = _source(rng, category, n, sr)
    # shared per-recording random colouring so the cue is not a fixed offset
    tilt = _band_noise(rng, n, 3000, 7000) * np.abs(x) * rng.uniform(0.02, 0.12)
    x = x + tilt
    if label == 1 and separation > 0:
        lift = _band_noise(rng, n, 3000, 7000)
        lift *= np.abs(x)
        x = x + separation * rng.uniform(0.25, 0.45) * lift
    x = x + 0.003 * rng.standard_normal(n)
    return 0.9 * x / np.max(np.abs(x))


def synth_corpus(n_subjects: int, positive_fraction: float, seed: int, out_dir,
                 separation: float = DEFAULT_SEPARATION, fmt: str = "flac",
                 durations: tuple[float, float] = (2.0, 6.0), prefix: str = "subj") -> Manifest:
    """Generate ``n_subjects`` x 3 recordings plus ``manifest.csv`` in ``out_dir``."""
    import soundfile as sf

    if n_subjects < 10:
        raise ValueError("n_subjects must be at least 10")
    if not 0.0 < positive_fraction < 1.0:
        raise ValueError("positive_fraction must lie in (0, 1)")
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_pos = int(round(n_subjects * positive_fraction))
    labels = np.zeros(n_subjects, dtype=int)
    labels[rng.choice(n_subjects, n_pos, replace=False)] = 1
    entries = []
    for i in range(n_subjects):
        subject = f"{prefix}{i:04d}"
        for category in CATEGORIES:
            duration = float(rng.uniform(*durations))
            x = synth_recording(rng, category, int(labels[i]), duration, separation)
            file_id = f"{subject}_{category}"
            path = out_dir / "audio" / f"{file_id}.{fmt}"
            sf.write(str(path), x, SYNTH_RATE, subtype="PCM_16")
            entries.append(ManifestEntry(file_id, subject, category, path, int(labels[i]),
                                         round(len(x) / SYNTH_RATE, 4)))
    write_manifest(entries, out_dir / "manifest.csv")
    return parse_manifest(out_dir / "manifest.csv")


def hidden_labels(manifest: Manifest) -> tuple[Manifest, dict[str, int]]:
    """Strip labels from a manifest (blind-test view) and return them separately."""
    labels = {e.file_id: e.label for e in manifest}
    blind = Manifest([ManifestEntry(e.file_id, e.subject_id, e.category, e.path, None, e.duration)
                      for e in manifest], list(manifest.rejected))
    return blind, labels


def group_by_subject(entries) -> dict[str, dict[str, ManifestEntry]]:
    out: dict[str, dict[str, ManifestEntry]] = defaultdict(dict)
    for e in entries:
        out[e.subject_id][e.category] = e
    return dict(out)
