"""Command-line entry point: ``covid-acoustics <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataset
from .errors import ManifestError, PipelineError, SubmissionRejected


def _cmd_audio_inspect(args):
    from .audio_io import load_audio

    clip = load_audio(args.path)
    print(json.dumps({"path": str(args.path), "duration_s": round(clip.duration, 6),
                      "sample_rate": clip.sample_rate, "peak": clip.peak}))


def _cmd_features_extract(args):
    from .audio_io import load_and_preprocess
    from .features import extract_features, save_features

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = dataset.parse_manifest(args.manifest)
    for fid, reason in manifest.rejected:
        logging.warning("skipped %s: %s", fid, reason)
    for e in manifest:
        feat = extract_features(load_and_preprocess(e.path, e.file_id))
        save_features(feat, out / f"{e.file_id}.feat")
    print(f"wrote {len(manifest)} feature files to {out}")


def _load_feature_dir(directory, entries):
    from .features import load_features

    return {e.file_id: load_features(Path(directory) / f"{e.file_id}.feat", e.file_id) for e in entries}


def _cmd_train(args):
    from dataclasses import replace

    from .model import save_checkpoint
    from .training import TrainConfig, load_config, train_fold, write_epoch_log

    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.max_epochs is not None:
        cfg = replace(cfg, max_epochs=args.max_epochs)
    manifest = dataset.parse_manifest(args.manifest)
    category = args.category
    if category is None:
        present = sorted({e.category for e in manifest})
        if len(present) != 1:
            raise ManifestError(f"manifest holds {present}; pick one with --category")
        category = present[0]
    entries = [e for e in manifest if e.category == category]
    folds = dataset.read_folds(args.folds) if args.folds else dataset.make_folds(entries, args.fold_seed)
    feats = _load_feature_dir(args.features, entries)
    result = train_fold(entries, folds, args.fold, feats, cfg, args.seed)
    save_checkpoint(result.params, args.out)
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".log.csv")
    write_epoch_log(result.log, log_path)
    best = result.log[result.best_epoch]
    print(f"best epoch {best.epoch}: val AUC {best.val_auc:.4f}; checkpoint {args.out}, log {log_path}")


def _cmd_infer(args):
    from .inference_fusion import ensemble_score, score_file, write_scores
    from .model import load_checkpoint

    models = [load_checkpoint(p) for p in args.models]
    manifest = dataset.parse_manifest(args.manifest)
    entries = [e for e in manifest if args.category is None or e.category == args.category]
    feats = _load_feature_dir(args.features, entries)
    scores = {}
    for e in entries:
        rec = score_file(models[0], feats[e.file_id]) if len(models) == 1 else \
            ensemble_score(models, feats[e.file_id], n_folds=len(models) if args.any_count else 5)
        scores[e.file_id] = rec.probability
    write_scores(scores, args.out)


def _cmd_fuse(args):
    from .inference_fusion import fuse_subjects, read_scores, write_scores

    manifest = dataset.parse_manifest(args.manifest)
    subject_of = {e.file_id: e.subject_id for e in manifest}
    per_cat = {}
    for item in args.scores:
        cat, _, path = item.partition("=")
        per_cat[cat] = {subject_of[f]: s for f, s in read_scores(path).items()}
    write_scores(fuse_subjects(per_cat, tuple(per_cat)), args.out)


def _cmd_pool(args):
    from .inference_fusion import pool_submissions, read_scores, write_scores

    write_scores(pool_submissions([read_scores(p) for p in args.scores]), args.out)


def _cmd_evaluate(args):
    from .inference_fusion import read_scores
    from .metrics import evaluate
    from .portal import read_labels

    result = evaluate(read_scores(args.scores), read_labels(args.labels))
    print(json.dumps(result.to_dict()))


def _cmd_dataset_synth(args):
    m = dataset.synth_corpus(args.n, args.fraction, args.seed, args.out, args.separation, fmt=args.format)
    print(f"wrote {len(m)} recordings and {Path(args.out) / 'manifest.csv'}")


def _cmd_dataset_folds(args):
    manifest = dataset.parse_manifest(args.manifest)
    dataset.write_folds(dataset.make_folds(manifest.entries, args.seed), args.out)


def _cmd_dataset_stats(args):
    manifest = dataset.parse_manifest(args.manifest)
    stats = dataset.class_stats(manifest)
    stats["rejected"] = [{"file_id": f, "reason": r} for f, r in manifest.rejected]
    print(json.dumps(stats, indent=2))


def _portal(args):
    from .portal import Portal, PortalConfig

    return Portal(PortalConfig.from_file(args.config))


def _cmd_portal_submit(args):
    res = _portal(args).submit(args.team, args.track, Path(args.scores).read_text(encoding="utf-8"))
    print(json.dumps(res.to_dict()))


def _cmd_portal_board(args):
    from dataclasses import asdict

    print(json.dumps([asdict(r) for r in _portal(args).leaderboard(args.track)], indent=2))


def _cmd_portal_history(args):
    from dataclasses import asdict

    print(json.dumps([asdict(r) for r in _portal(args).history(args.team)], indent=2))


def _cmd_portal_serve(args):
    from .portal import serve

    server = serve(_portal(args), args.host, args.port)
    print(f"serving on http://{args.host}:{server.server_address[1]}")
    server.serve_forever()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="covid-acoustics", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    audio = sub.add_parser("audio", help="inspect recordings").add_subparsers(dest="action", required=True)
    a = audio.add_parser("inspect", help="print duration, rate and peak of a recording")
    a.add_argument("path")
    a.set_defaults(func=_cmd_audio_inspect)

    feats = sub.add_parser("features", help="log-mel feature extraction").add_subparsers(dest="action", required=True)
    a = feats.add_parser("extract", help="pre-process and featurize every manifest entry")
    a.add_argument("--manifest", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=_cmd_features_extract)

    a = sub.add_parser("train", help="train one fold model for one category")
    a.add_argument("--manifest", required=True)
    a.add_argument("--features", required=True)
    a.add_argument("--category", choices=dataset.CATEGORIES, help="required if the manifest mixes categories")
    a.add_argument("--fold", type=int, required=True, choices=range(5))
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.add_argument("--config", help="key = value hyperparameter file")
    a.add_argument("--folds", help="fold CSV (subject_id,fold); generated from --fold-seed if absent")
    a.add_argument("--fold-seed", type=int, default=0)
    a.add_argument("--max-epochs", type=int)
    a.add_argument("--log", help="per-epoch CSV log path")
    a.set_defaults(func=_cmd_train)

    a = sub.add_parser("infer", help="score files with one model or a 5-fold ensemble")
    a.add_argument("--manifest", required=True)
    a.add_argument("--features", required=True)
    a.add_argument("--models", nargs="+", required=True)
    a.add_argument("--category", choices=dataset.CATEGORIES)
    a.add_argument("--any-count", action="store_true", help="allow ensembles of other than 5 models")
    a.add_argument("--out", required=True)
    a.set_defaults(func=_cmd_infer)

    a = sub.add_parser("fuse", help="average per-category scores per subject")
    a.add_argument("--manifest", required=True)
    a.add_argument("--scores", nargs="+", required=True, metavar="CATEGORY=CSV")
    a.add_argument("--out", required=True)
    a.set_defaults(func=_cmd_fuse)

    a = sub.add_parser("pool", help="average min-max normalized submissions")
    a.add_argument("--scores", nargs="+", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=_cmd_pool)

    a = sub.add_parser("evaluate", help="AUC and sensitivity at 95%% specificity")
    a.add_argument("--scores", required=True)
    a.add_argument("--labels", required=True)
    a.set_defaults(func=_cmd_evaluate)

    ds = sub.add_parser("dataset", help="manifests, folds and synthetic corpora").add_subparsers(dest="action", required=True)
    a = ds.add_parser("synth", help="generate a synthetic corpus")
    a.add_argument("--n", type=int, required=True)
    a.add_argument("--fraction", type=float, default=0.2)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--separation", type=float, default=dataset.DEFAULT_SEPARATION)
    a.add_argument("--format", choices=("flac", "wav"), default="flac")
    a.add_argument("--out", required=True)
    a.set_defaults(func=_cmd_dataset_synth)
    a = ds.add_parser("folds", help="write a stratified subject_id,fold CSV")
    a.add_argument("--manifest", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.set_defaults(func=_cmd_dataset_folds)
    a = ds.add_parser("stats", help="class counts per category")
    a.add_argument("--manifest", required=True)
    a.set_defaults(func=_cmd_dataset_stats)

    portal = sub.add_parser("portal", help="challenge scoring service").add_subparsers(dest="action", required=True)
    for name, func, extra, text in (
        ("submit", _cmd_portal_submit, ("team", "track", "scores"), "score a submission and spend one ticket"),
        ("board", _cmd_portal_board, ("track",), "print the leaderboard of a track"),
        ("history", _cmd_portal_history, ("team",), "print a team's accepted submissions"),
        ("serve", _cmd_portal_serve, (), "run the HTTP scoring service"),
    ):
        a = portal.add_parser(name, help=text)
        a.add_argument("--config", required=True, help="portal JSON config")
        for opt in extra:
            a.add_argument(f"--{opt}", required=True)
        if name == "serve":
            a.add_argument("--host", default="127.0.0.1")
            a.add_argument("--port", type=int, default=8080)
        a.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except SubmissionRejected as exc:
        print(json.dumps({"error": exc.code, "detail": str(exc)}), file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
