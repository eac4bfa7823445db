"""Command-line entry point: extraction, synthesis, splitting, training,
evaluation, agreement analysis, the label-efficiency experiment grid, and the
annotation service."""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import features as features_mod
from . import metrics as metrics_mod
from . import scorer as scorer_mod
from . import synthetic as synth_mod
from . import training as training_mod
from .corpus import Corpus, Svd


def _resolve_svd(svd_id: str, manifest_path: Path, scope: str | None) -> Svd:
    """Descriptor scope comes from svds.json next to the manifest when present,
    else from --scope, else unrestricted."""
    if scope is not None:
        return Svd(id=svd_id, gender_scope=scope)
    registry = manifest_path.parent / "svds.json"
    if registry.exists():
        with open(registry, encoding="utf-8") as fh:
            for entry in json.load(fh):
                if entry["id"] == svd_id:
                    return Svd(id=svd_id, description=entry.get("description", ""),
                               gender_scope=entry.get("gender_scope", "any"))
    return Svd(id=svd_id, gender_scope="any")


def load_feature_map(corpus: Corpus, base_dir: Path) -> dict[str, np.ndarray]:
    """Read every utterance's feature file, resolving paths against the manifest."""
    feature_map = {}
    for utt in corpus.utterances:
        if utt.feature_path is None:
            raise features_mod.FormatError(
                f"utterance {utt.id!r} has no feature file; run 'extract' first")
        path = Path(utt.feature_path)
        if not path.is_absolute():
            path = base_dir / path
        feature_map[utt.id] = features_mod.read_model_input(path)
    return feature_map


def _cmd_extract(args) -> int:
    manifest = Path(args.manifest)
    corpus = corpus_mod.load_corpus(manifest)
    out_dir = Path(args.out_dir)
    (out_dir / "spectrograms").mkdir(parents=True, exist_ok=True)
    converted = []
    for utt in corpus.utterances:
        if utt.audio_path is None:
            converted.append(utt)
            continue
        wav_path = Path(utt.audio_path)
        if not wav_path.is_absolute():
            wav_path = manifest.parent / wav_path
        wave = features_mod.read_wav(wav_path)
        if not args.no_normalize:
            wave = features_mod.level_normalize(wave, args.target_db)
        frames = features_mod.stft_magnitude(wave)
        rel = f"spectrograms/{utt.id}.svds"
        features_mod.write_spectrogram_file(out_dir / rel, frames)
        converted.append(corpus_mod.Utterance(
            id=utt.id, speaker_id=utt.speaker_id, gender=utt.gender,
            sentence_id=utt.sentence_id, duration_s=utt.duration_s,
            feature_path=rel))
    out_manifest = Path(args.out_manifest) if args.out_manifest \
        else out_dir / "manifest_spectrograms.jsonl"
    corpus_mod.save_corpus(Corpus(converted), out_manifest)
    print(f"extracted {sum(1 for u in converted if u.feature_path)} spectrograms "
          f"-> {out_manifest}")
    return 0


def _cmd_synth(args) -> int:
    corpus, world = synth_mod.generate_corpus(
        n_speakers=args.speakers, utts_per_speaker=args.utts,
        feature_dim=args.dim, seed=args.seed, sigma_jitter=args.sigma_jitter,
        sigma_label=args.sigma_label, sigma_feature=args.sigma_feature, tau=args.tau)
    svd = synth_mod.DEFAULT_SVD
    labels: list = []
    if args.acr > 0:
        labels += synth_mod.generate_acr(world, corpus.utterances, args.acr,
                                         seed=args.seed + 1, svd_id=svd.id)
    if args.ccr > 0:
        pairs = corpus.eligible_pairs(svd)
        labels += synth_mod.generate_ccr(world, pairs, args.ccr,
                                         seed=args.seed + 2, svd_id=svd.id)
    panel_labels = None
    if args.panel_questions > 0:
        questions = synth_mod.sample_questions(corpus, svd, args.panel_questions,
                                               seed=args.seed + 3)
        panel_labels = _panel_labels(world, questions, args.panel_annotators,
                                     seed=args.seed + 4, svd_id=svd.id)
    paths = synth_mod.write_synthetic_dataset(
        args.out, corpus, world, labels, svd=svd, panel_labels=panel_labels,
        with_audio=args.audio)
    print(f"wrote synthetic corpus of {len(corpus)} utterances, "
          f"{len(labels)} labels -> {Path(args.out).resolve()}")
    for key, path in sorted(paths.items()):
        print(f"  {key}: {path}")
    return 0


def _panel_labels(world, questions, n_annotators, seed, svd_id):
    """Per-annotator panel answers as plain label records (one per question)."""
    rng = np.random.default_rng(seed)
    labels = []
    for a in range(n_annotators):
        for utt_i, utt_j in questions:
            d = (world.utterance_z[utt_j] + rng.normal(0.0, world.sigma_label)) \
                - (world.utterance_z[utt_i] + rng.normal(0.0, world.sigma_label))
            labels.append(corpus_mod.CcrLabel(
                svd_id=svd_id, annotator_id=f"panel{a:02d}", utt_i=utt_i, utt_j=utt_j,
                choice=synth_mod._choice_from_diff(d, world.tau)))
    return labels


def _cmd_split(args) -> int:
    manifest = Path(args.manifest)
    corpus = corpus_mod.load_corpus(manifest)
    acr, ccr = corpus_mod.load_labels(args.labels, corpus)
    svd = _resolve_svd(args.svd, manifest, args.scope)
    plan = corpus_mod.make_split(corpus, acr, ccr, svd, args.train_speakers, args.seed)
    corpus_mod.save_split_plan(plan, args.out)
    print(f"split {args.svd}: {len(plan.train_speakers)} train speakers, "
          f"{len(plan.train_acr)} train ACR, {len(plan.train_ccr)} train CCR, "
          f"{len(plan.test_ccr)} test CCR -> {args.out}")
    return 0


def _hyperparams(args, seeds: tuple[int, ...] = (0,)) -> training_mod.Hyperparams:
    return training_mod.Hyperparams(
        learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs,
        dropout=args.dropout, seeds=seeds)


def _cmd_train(args) -> int:
    manifest = Path(args.manifest)
    corpus = corpus_mod.load_corpus(manifest)
    acr, ccr = corpus_mod.load_labels(args.labels, corpus)
    svd = _resolve_svd(args.svd, manifest, args.scope)
    if args.split:
        plan = corpus_mod.load_split_plan(args.split, acr, ccr)
    elif args.train_speakers:
        plan = corpus_mod.make_split(corpus, acr, ccr, svd, args.train_speakers,
                                     args.seed)
    else:
        print("error: provide --split or --train-speakers", file=sys.stderr)
        return 2
    features = load_feature_map(corpus, manifest.parent)
    hp = _hyperparams(args)

    hook = None
    test = list(plan.test_ccr)
    has_strong = any(l.choice in training_mod.STRONG_CHOICES for l in test)
    has_weak = any(l.choice not in training_mod.STRONG_CHOICES for l in test)
    if test and has_strong and has_weak:
        hook = training_mod.make_eval_hook(test, features)

    if args.mode == "acr":
        model = scorer_mod.init_pooled_fc(
            input_dim=_input_dim(features), rng_seed=args.seed) \
            if args.arch == "pooled_fc" else scorer_mod.init_conv_pool(rng_seed=args.seed)
        model, reports = training_mod.train_acr(model, plan.train_acr, features, hp,
                                                eval_hook=hook, seed=args.seed)
    else:
        model = scorer_mod.init_pooled_fc(
            input_dim=_input_dim(features), rng_seed=args.seed) \
            if args.arch == "pooled_fc" else scorer_mod.init_conv_pool(rng_seed=args.seed)
        model, reports = training_mod.train_ccr(model, plan.train_ccr, features, hp,
                                                eval_hook=hook, seed=args.seed)
    scorer_mod.save_checkpoint(args.out, model)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_loss,ppref_strong,ppref_weak\n")
            for r in reports:
                strong = "" if r.ppref_strong is None else f"{r.ppref_strong:.6f}"
                weak = "" if r.ppref_weak is None else f"{r.ppref_weak:.6f}"
                fh.write(f"{r.epoch},{r.train_loss:.6f},{strong},{weak}\n")
    last = reports[-1]
    print(f"trained {args.mode}/{args.arch} for {hp.epochs} epochs, "
          f"final loss {last.train_loss:.4f} -> {args.out}")
    return 0


def _input_dim(features: dict[str, np.ndarray]) -> int:
    any_feature = next(iter(features.values()))
    return int(np.shape(any_feature)[-1])


def _cmd_eval(args) -> int:
    manifest = Path(args.manifest)
    corpus = corpus_mod.load_corpus(manifest)
    _, ccr = corpus_mod.load_labels(args.labels, corpus)
    if args.svd:
        ccr = [l for l in ccr if l.svd_id == args.svd]
    if not ccr:
        print("error: no comparison labels to evaluate", file=sys.stderr)
        return 1
    features = load_feature_map(corpus, manifest.parent)
    params = scorer_mod.load_checkpoint(args.checkpoint)
    inputs = [features[u] for l in ccr for u in (l.utt_i, l.utt_j)]
    scores = scorer_mod.score_inputs(params, inputs)
    preds = [metrics_mod.PrefPrediction(l.utt_i, l.utt_j, scores[2 * k], scores[2 * k + 1],
                                        l.choice) for k, l in enumerate(ccr)]
    ub_strong = ub_weak = None
    if args.agreement:
        _, panel = corpus_mod.load_labels(args.agreement)
        tallies = metrics_mod.tally_from_labels(panel)
        ub_strong, ub_weak = metrics_mod.upper_bound_estimate(tallies)
    svd_id = args.svd or (ccr[0].svd_id if ccr else "all")
    report = metrics_mod.metric_report(svd_id, preds, ub_strong, ub_weak)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_agreement(args) -> int:
    _, ccr = corpus_mod.load_labels(args.labels)
    if args.svd:
        ccr = [l for l in ccr if l.svd_id == args.svd]
    if not ccr:
        print("error: no comparison labels found", file=sys.stderr)
        return 1
    tallies = metrics_mod.tally_from_labels(ccr)
    ub_strong, ub_weak = metrics_mod.upper_bound_estimate(tallies)
    report = {"svd": args.svd or ccr[0].svd_id, "n_questions": len(tallies),
              "ub_strong": ub_strong, "ub_weak": ub_weak}
    print(json.dumps(report, indent=2))
    return 0


def _cmd_pseudo_f(args) -> int:
    manifest = Path(args.manifest)
    corpus = corpus_mod.load_corpus(manifest)
    acr, _ = corpus_mod.load_labels(args.labels, corpus)
    if args.svd:
        acr = [l for l in acr if l.svd_id == args.svd]
    if not acr:
        print("error: no absolute ratings found", file=sys.stderr)
        return 1
    groups: dict[str, list[float]] = {}
    for label in acr:
        speaker = corpus.by_id[label.utterance_id].speaker_id
        groups.setdefault(speaker, []).append(float(label.rating))
    value = metrics_mod.pseudo_f(groups)
    report = {"svd": args.svd or acr[0].svd_id, "pseudo_f": value,
              "n_speakers": len(groups), "n_ratings": len(acr)}
    print(json.dumps(report, indent=2))
    return 0


def _cmd_experiment(args) -> int:
    manifest = Path(args.manifest)
    corpus = corpus_mod.load_corpus(manifest)
    acr, ccr = corpus_mod.load_labels(args.labels, corpus)
    svd = _resolve_svd(args.svd, manifest, args.scope)
    features = load_feature_map(corpus, manifest.parent)
    sizes = [int(s) for s in args.sizes.split(",") if s]
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    hp = _hyperparams(args, seeds=tuple(range(args.seeds)))
    result = training_mod.run_experiment(
        corpus, acr, ccr, svd, sizes, modes, args.arch, hp, features,
        train_speaker_count=args.train_speakers, split_seed=args.seed,
        test_count_per_variant=args.test_count,
        progress=(None if args.quiet else lambda msg: print(msg, file=sys.stderr)))
    timestamp = None if args.no_timestamp \
        else datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    text = training_mod.results_to_csv(result, timestamp=timestamp)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(result.rows)} runs -> {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    data_dir = args.data_dir or os.environ.get("SVDRANK_DATA_DIR")
    labels = args.labels or os.environ.get("SVDRANK_LABELS")
    port = args.port or int(os.environ.get("SVDRANK_PORT", "8000"))
    if not data_dir or not labels:
        print("error: provide --data-dir/--labels or set SVDRANK_DATA_DIR/SVDRANK_LABELS",
              file=sys.stderr)
        return 2
    app = create_app(data_dir, labels, rng_seed=args.seed)
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svdrank",
        description="Train and evaluate subjective voice descriptor scorers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="compute spectrogram caches from audio")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--out-manifest")
    p.add_argument("--target-db", type=float, default=features_mod.DEFAULT_TARGET_DB)
    p.add_argument("--no-normalize", action="store_true")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=synth_mod.DEFAULTS["n_speakers"])
    p.add_argument("--utts", type=int, default=synth_mod.DEFAULTS["utts_per_speaker"])
    p.add_argument("--dim", type=int, default=synth_mod.DEFAULTS["feature_dim"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--acr", type=int, default=5000)
    p.add_argument("--ccr", type=int, default=5000)
    p.add_argument("--panel-questions", type=int, default=0)
    p.add_argument("--panel-annotators", type=int, default=50)
    p.add_argument("--audio", action="store_true")
    p.add_argument("--sigma-jitter", type=float, default=synth_mod.DEFAULTS["sigma_jitter"])
    p.add_argument("--sigma-label", type=float, default=synth_mod.DEFAULTS["sigma_label"])
    p.add_argument("--sigma-feature", type=float, default=synth_mod.DEFAULTS["sigma_feature"])
    p.add_argument("--tau", type=float, default=synth_mod.DEFAULTS["tau"])
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("split", help="build a speaker-disjoint split plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--svd", required=True)
    p.add_argument("--scope", choices=corpus_mod.GENDER_SCOPES)
    p.add_argument("--train-speakers", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train one scorer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--svd", required=True)
    p.add_argument("--scope", choices=corpus_mod.GENDER_SCOPES)
    p.add_argument("--mode", choices=("acr", "ccr"), required=True)
    p.add_argument("--arch", choices=("pooled_fc", "conv_pool"), default="pooled_fc")
    p.add_argument("--split")
    p.add_argument("--train-speakers", type=int)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=6)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score held-out comparisons with a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--svd")
    p.add_argument("--agreement", help="panel label file for upper bounds")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("agreement", help="agreement-based upper bounds from a panel")
    p.add_argument("--labels", required=True)
    p.add_argument("--svd")
    p.set_defaults(func=_cmd_agreement)

    p = sub.add_parser("pseudo-f", help="between/within speaker variance ratio")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--svd")
    p.set_defaults(func=_cmd_pseudo_f)

    p = sub.add_parser("experiment", help="label-efficiency sweep over sizes and modes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--svd", required=True)
    p.add_argument("--scope", choices=corpus_mod.GENDER_SCOPES)
    p.add_argument("--arch", choices=("pooled_fc", "conv_pool"), default="pooled_fc")
    p.add_argument("--modes", default="acr,ccr")
    p.add_argument("--sizes", default="125,250,500,1000,2000,4000,5000")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--train-speakers", type=int, required=True)
    p.add_argument("--test-count", type=int)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=6)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--no-timestamp", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--data-dir")
    p.add_argument("--labels")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (corpus_mod.ManifestError, corpus_mod.LabelError, corpus_mod.SplitConfigError,
            features_mod.AudioError, features_mod.FormatError,
            scorer_mod.CheckpointError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
