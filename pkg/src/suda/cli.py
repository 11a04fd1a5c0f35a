"""Command-line entry point: ``suda [--config PATH] [--seed N] COMMAND ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import pipeline, protocol, scoring
from .errors import SudaError
from .pipeline import Layout, variant_name
from .protocol import NONTARGET_CONDITIONS


def _load_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _manifest(args, layout: Layout):
    return protocol.read_manifest(pipeline.require_file(args.manifest or layout.manifest, "manifest"))


def cmd_synth(args, cfg, layout):
    rows = pipeline.synthesize_corpus(cfg)
    print(f"wrote {len(rows)} utterances to {layout.corpus}")


def cmd_extract(args, cfg, layout):
    out = Path(args.out or layout.features)
    rows = pipeline.extract_corpus(args.manifest or layout.manifest, out)
    print(f"wrote {len(rows)} feature files to {out}")


def cmd_train(args, cfg, layout):
    masks = not args.no_masks
    variant = variant_name(masks)
    rows = _manifest(args, layout)
    feats = pipeline.load_features(rows, args.features or layout.features)
    est = pipeline.fit_model(cfg, rows, feats, masks_enabled=masks)
    layout.work.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.out or layout.checkpoint(variant))
    pipeline.save_model(ckpt, cfg, est)
    pipeline.write_trainlog(ckpt.with_suffix(".trainlog.tsv"), cfg, est)
    print(f"wrote {ckpt}")


def cmd_embed(args, cfg, layout):
    ckpt = Path(args.checkpoint or layout.checkpoint("suda"))
    model = pipeline.load_model(ckpt)
    rows = _manifest(args, layout)
    feats = pipeline.load_features(rows, args.features or layout.features)
    out = Path(args.out or ckpt.with_suffix(".emb"))
    pipeline.write_embeddings(out, pipeline.embed_utterances(model, rows, feats))
    print(f"wrote {out}")


def cmd_trials(args, cfg, layout):
    split = args.split or cfg.eval_split
    rows = pipeline.select_split(_manifest(args, layout), split)
    out = Path(args.out or layout.trials(split, args.condition))
    out.parent.mkdir(parents=True, exist_ok=True)
    trials = pipeline.make_trials(rows, args.condition)
    out.write_text(protocol.format_trials(trials), encoding="utf-8")
    print(f"wrote {len(trials)} trials to {out}")


def cmd_score(args, cfg, layout):
    alpha = cfg.alpha if args.alpha is None else args.alpha
    scoring.fuse(0.0, 0.0, alpha)  # validates alpha before any heavy work
    rows = _manifest(args, layout)
    trial_path = pipeline.require_file(args.trials, "trial list")
    trials = protocol.parse_trials(trial_path.read_text(encoding="utf-8"), rows, str(trial_path))
    if args.embeddings:
        embs = pipeline.read_embeddings(args.embeddings)
    else:
        model = pipeline.load_model(args.checkpoint or layout.checkpoint("suda"))
        needed = {t.test.utt_id for t in trials} | {
            r.utt_id for r in rows if (r.speaker, r.phrase) in {t.model for t in trials}}
        used = [r for r in rows if r.utt_id in needed]
        embs = pipeline.embed_utterances(model, used, pipeline.load_features(used, args.features or layout.features))
    records = pipeline.score(trials, rows, embs, alpha)
    out = Path(args.out or trial_path.with_name("scores_" + trial_path.name))
    out.write_text(scoring.format_scores(records), encoding="utf-8")
    print(f"wrote {len(records)} scores to {out}")


def cmd_eval(args, cfg, layout):
    records = []
    for path in args.scores:
        records += scoring.read_scores(pipeline.require_file(path, "score file"))
    report = scoring.format_report(pipeline.report_from_scores(records))
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
    sys.stdout.write(report)


def cmd_ablate(args, cfg, layout):
    rows = _manifest(args, layout)
    feats = pipeline.load_features(rows, args.features or layout.features)
    table = pipeline.ablate(cfg, rows, feats)
    text = pipeline.format_ablation(table, cfg.alpha)
    out = Path(args.out or layout.ablation)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="suda", description="Dual-branch text-dependent speaker verification.")
    parser.add_argument("--config", metavar="PATH", help="key = value run configuration")
    parser.add_argument("--seed", type=int, metavar="N", help="override the configured seed")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, *, manifest=False, features=False, out=True):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        if manifest:
            p.add_argument("--manifest", metavar="PATH", help="defaults to <corpus_dir>/manifest.tsv")
        if features:
            p.add_argument("--features", metavar="DIR", help="defaults to <work_dir>/feat")
        if out:
            p.add_argument("--out", metavar="PATH")
        return p

    add("synth", cmd_synth, "generate the synthetic corpus", out=False)
    add("extract", cmd_extract, "waveforms -> FEAT1 feature files", manifest=True)
    p = add("train", cmd_train, "train on the background split", manifest=True, features=True)
    p.add_argument("--no-masks", action="store_true", help="train the mod-SUV ablation (no masking block)")
    p = add("embed", cmd_embed, "embed every manifest utterance", manifest=True, features=True)
    p.add_argument("--checkpoint", metavar="PATH")
    p = add("trials", cmd_trials, "write a trial list for one condition", manifest=True)
    p.add_argument("--condition", required=True, choices=NONTARGET_CONDITIONS)
    p.add_argument("--split", choices=("development", "evaluation"))
    p = add("score", cmd_score, "score a trial list", manifest=True, features=True)
    p.add_argument("--trials", required=True, metavar="PATH")
    p.add_argument("--alpha", type=float, metavar="F", help="fusion weight on the speaker score")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--embeddings", metavar="PATH")
    src.add_argument("--checkpoint", metavar="PATH")
    p = add("eval", cmd_eval, "EER report from score files")
    p.add_argument("scores", nargs="+", metavar="SCORES")
    add("ablate", cmd_ablate, "SUDA vs mod-SUV over the configured seeds", manifest=True, features=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        args.func(args, cfg, Layout.from_config(cfg))
    except (SudaError, ValueError, OSError, KeyError) as exc:
        print(f"suda {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
