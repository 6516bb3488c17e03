"""Command-line entry point for the whole pipeline.

Subcommands: synth, train, finetune, protos, classify, eval, loso,
export-emb. Every option can also come from a JSON file passed with
--config; explicit flags win over the file, the file wins over built-in
defaults. Outputs are written to a temp file and renamed, so a failed run
never leaves a partial artifact. Exit codes: 0 success, 2 validation,
3 I/O, 4 unexpected internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import encoder, evaluate, prototype, synthgen, trainer
from .datastore import atomic_write_text, load_corpus, write_corpus
from .errors import ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_INTERNAL = 4

_SYNTH_DEFAULTS = {
    "seed": 0,
    "words": 20,
    "speakers": 6,
    "reps": 2,
    "min_frames": 3,
    "max_frames": 8,
    "dim": 16,
    "noise_std": 0.1,
    "severities": None,
}

_TRAIN_DEFAULTS = {
    "scl": False,
    "tau": 0.07,
    "lr": 1e-3,
    "batch_size": 16,
    "epochs": 50,
    "patience": 10,
    "seed": 0,
    "dims": None,
}

_LOSO_DEFAULTS = {
    "seed": 0,
    "lr": 2e-3,
    "batch_size": 6,
    "epochs": 150,
    "patience": 150,
    "tau": 0.07,
    "ft_epochs": 30,
    "ft_lr": 3e-3,
    "support_channel": 1,
    "jobs": 1,
    "dims": None,
}


def _merged(args: argparse.Namespace, defaults: dict) -> dict:
    """Resolve option values: flag > --config file > built-in default."""
    file_cfg = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path}: invalid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ValidationError(f"config {path}: top level must be a JSON object")
        unknown = sorted(set(file_cfg) - set(defaults))
        if unknown:
            raise ValidationError(f"config {path}: unknown keys {unknown}")
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key)
        out[key] = flag if flag is not None else file_cfg.get(key, default)
    return out


def _parse_int_list(value, flag: str) -> tuple[int, ...] | None:
    if value is None:
        return None
    if isinstance(value, str):
        value = value.split(",")
    try:
        return tuple(int(v) for v in value)
    except (TypeError, ValueError):
        raise ValidationError(f"{flag} must be a comma-separated list of integers") from None


def _parse_float_list(value, flag: str) -> tuple[float, ...] | None:
    if value is None:
        return None
    if isinstance(value, str):
        value = value.split(",")
    try:
        return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ValidationError(f"{flag} must be a comma-separated list of numbers") from None


def _load_manifest(path: str):
    try:
        return load_corpus(path)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _load_checkpoint(path: str) -> encoder.EncoderParams:
    try:
        return encoder.load_params(path)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _load_protos(path: str) -> prototype.PrototypeSet:
    try:
        return prototype.load_prototypes_csv(path)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _filtered_utterances(corpus, args):
    utts = list(corpus.utterances)
    if args.only_speakers:
        keep = set(args.only_speakers.split(","))
        unknown = sorted(keep - set(corpus.speakers))
        if unknown:
            raise ValidationError(f"unknown speakers in filter: {unknown}")
        utts = [u for u in utts if u.speaker_id in keep]
    if args.blocks:
        blocks = set(_parse_int_list(args.blocks, "--blocks"))
        utts = [u for u in utts if u.block in blocks]
    if args.channel is not None:
        utts = [u for u in utts if u.channel == args.channel]
    if not utts:
        raise ValidationError("no utterances left after filtering")
    return utts


def _add_filter_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--only-speakers", help="comma-separated speaker ids to keep (default: all)")
    p.add_argument("--blocks", help="comma-separated blocks to keep (default: all)")
    p.add_argument("--channel", type=int, help="keep only this channel (default: all)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with option defaults")
    p.add_argument("--scl", action=argparse.BooleanOptionalAction, default=None,
                   help="add the contrastive term to the objective (default: off)")
    p.add_argument("--tau", type=float, help="contrastive temperature (default: 0.07)")
    p.add_argument("--lr", type=float, help="learning rate (default: 0.001)")
    p.add_argument("--batch-size", type=int, help="utterances per batch (default: 16)")
    p.add_argument("--epochs", type=int, help="maximum epochs (default: 50)")
    p.add_argument("--patience", type=int,
                   help="epochs without improvement before stopping (default: 10)")
    p.add_argument("--seed", type=int, help="random seed (default: 0)")
    p.add_argument("--dims", help="layer sizes, input first, e.g. 16,32,16 (default: input,32,32,16)")


def _train_config(vals: dict) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        use_scl=bool(vals["scl"]),
        tau=vals["tau"],
        learning_rate=vals["lr"],
        batch_size=vals["batch_size"],
        max_epochs=vals["epochs"],
        patience=vals["patience"],
        seed=vals["seed"],
        dims=_parse_int_list(vals["dims"], "--dims"),
    )


def _cmd_synth(args) -> int:
    vals = _merged(args, _SYNTH_DEFAULTS)
    config = synthgen.SynthConfig(
        num_words=vals["words"],
        num_speakers=vals["speakers"],
        reps_per_block=vals["reps"],
        min_frames=vals["min_frames"],
        max_frames=vals["max_frames"],
        input_dim=vals["dim"],
        severities=_parse_float_list(vals["severities"], "--severities"),
        noise_std=vals["noise_std"],
        seed=vals["seed"],
    )
    corpus = synthgen.generate(config)
    manifest = write_corpus(corpus, args.out)
    print(manifest)
    return EXIT_OK


def _run_training(args, fine_tune_from: str | None) -> int:
    vals = _merged(args, _TRAIN_DEFAULTS)
    corpus = _load_manifest(args.manifest)
    utts = _filtered_utterances(corpus, args)
    config = _train_config(vals)
    if fine_tune_from is None:
        params, history = trainer.train(utts, corpus.vocabulary, config)
    else:
        init = _load_checkpoint(fine_tune_from)
        params, history = trainer.fine_tune(init, utts, corpus.vocabulary, config)
    encoder.save_params(params, args.out)
    history_path = args.history if args.history else args.out + ".history.csv"
    atomic_write_text(history_path, history.to_csv_text())
    print(f"{args.out} epochs={history.epochs} best_epoch={history.best_epoch} "
          f"stop={history.stop_reason}")
    return EXIT_OK


def _cmd_train(args) -> int:
    return _run_training(args, None)


def _cmd_finetune(args) -> int:
    return _run_training(args, args.init)


def _cmd_protos(args) -> int:
    corpus = _load_manifest(args.manifest)
    params = _load_checkpoint(args.checkpoint)
    utts = _filtered_utterances(corpus, args)
    protos = evaluate.support_prototypes(params, utts)
    prototype.save_prototypes_csv(protos, args.out)
    print(args.out)
    return EXIT_OK


def _cmd_classify(args) -> int:
    corpus = _load_manifest(args.manifest)
    params = _load_checkpoint(args.checkpoint)
    protos = _load_protos(args.protos)
    utts = _filtered_utterances(corpus, args)
    emb = evaluate.first_frame_embeddings(params, utts)
    preds = prototype.batch_classify(emb, protos)
    lines = ["utterance_id,word,distance,margin"]
    for u, p in zip(utts, preds):
        word = corpus.vocabulary.word_of(p.word_id)
        lines.append(f"{u.utterance_id},{word},{p.distance!r},{p.runner_up_margin!r}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(args.out)
    return EXIT_OK


def _cmd_eval(args) -> int:
    corpus = _load_manifest(args.manifest)
    params = _load_checkpoint(args.checkpoint)
    utts = _filtered_utterances(corpus, args)
    vocab = corpus.vocabulary
    if args.mode == "proto":
        if not args.protos:
            raise ValidationError("--protos is required with --mode proto")
        protos = _load_protos(args.protos)
    by_speaker: dict[str, list] = {}
    for u in utts:
        by_speaker.setdefault(u.speaker_id, []).append(u)
    counts = {}
    for s in sorted(by_speaker):
        if args.mode == "proto":
            counts[s] = evaluate.prototype_counts(params, protos, by_speaker[s], vocab)
        else:
            counts[s] = evaluate.greedy_counts(params, by_speaker[s], vocab)
    report = evaluate.aggregate_report(counts, corpus.speakers, len(utts))
    atomic_write_text(args.out, json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")
    print(args.out)
    return EXIT_OK


def _cmd_loso(args) -> int:
    vals = _merged(args, _LOSO_DEFAULTS)
    corpus = _load_manifest(args.manifest)
    config = evaluate.HarnessConfig(
        seed=vals["seed"],
        dims=_parse_int_list(vals["dims"], "--dims"),
        learning_rate=vals["lr"],
        batch_size=vals["batch_size"],
        max_epochs=vals["epochs"],
        patience=vals["patience"],
        tau=vals["tau"],
        ft_learning_rate=vals["ft_lr"],
        ft_max_epochs=vals["ft_epochs"],
        support_channel=vals["support_channel"],
        jobs=vals["jobs"],
    )
    result = evaluate.run_loso(corpus, config)
    atomic_write_text(args.out_csv, result.to_csv_text())
    atomic_write_text(args.out_json, result.to_json_text())
    print(f"{args.out_csv} {args.out_json}")
    return EXIT_OK


def _cmd_export_emb(args) -> int:
    corpus = _load_manifest(args.manifest)
    params = _load_checkpoint(args.checkpoint)
    utts = _filtered_utterances(corpus, args)
    atomic_write_text(args.out, evaluate.embeddings_csv_text(params, utts, corpus.vocabulary))
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protoword",
        description="Few-shot word recognition with prototype classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="output directory for manifest + features")
    p.add_argument("--config", help="JSON file with option defaults")
    p.add_argument("--seed", type=int, help="random seed (default: 0)")
    p.add_argument("--words", type=int, help="vocabulary size (default: 20)")
    p.add_argument("--speakers", type=int, help="speaker count (default: 6)")
    p.add_argument("--reps", type=int, help="repetitions per word per block (default: 2)")
    p.add_argument("--min-frames", type=int, help="shortest utterance (default: 3)")
    p.add_argument("--max-frames", type=int, help="longest utterance (default: 8)")
    p.add_argument("--dim", type=int, help="feature dimension (default: 16)")
    p.add_argument("--noise-std", type=float, help="per-frame noise (default: 0.1)")
    p.add_argument("--severities", help="per-speaker shift magnitudes, comma-separated "
                                        "(default: evenly spaced 0.05..0.85)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train an encoder on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--history", help="training-history CSV path (default: <out>.history.csv)")
    _add_train_flags(p)
    _add_filter_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("finetune", help="adapt an existing checkpoint on a support split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--init", required=True, help="checkpoint to start from")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--history", help="training-history CSV path (default: <out>.history.csv)")
    _add_train_flags(p)
    _add_filter_flags(p)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("protos", help="build per-word prototypes from a support manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="prototype CSV path to write")
    _add_filter_flags(p)
    p.set_defaults(func=_cmd_protos)

    p = sub.add_parser("classify", help="nearest-prototype predictions for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protos", required=True, help="prototype CSV from the protos subcommand")
    p.add_argument("--out", required=True, help="predictions CSV path to write")
    _add_filter_flags(p)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("eval", help="word error rate report for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("greedy", "proto"), default="greedy",
                   help="decode with the CTC head or classify against prototypes")
    p.add_argument("--protos", help="prototype CSV, required with --mode proto")
    p.add_argument("--out", required=True, help="report JSON path to write")
    _add_filter_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("loso", help="hold out each dysarthric speaker and fill the matrix")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-json", required=True)
    p.add_argument("--config", help="JSON file with option defaults")
    p.add_argument("--seed", type=int, help="random seed (default: 0)")
    p.add_argument("--lr", type=float, help="learning rate (default: 0.002)")
    p.add_argument("--batch-size", type=int, help="utterances per batch (default: 6)")
    p.add_argument("--epochs", type=int, help="maximum epochs per model (default: 150)")
    p.add_argument("--patience", type=int,
                   help="epochs without improvement before stopping (default: 150)")
    p.add_argument("--tau", type=float, help="contrastive temperature (default: 0.07)")
    p.add_argument("--ft-epochs", type=int, help="fine-tuning epochs (default: 30)")
    p.add_argument("--ft-lr", type=float, help="fine-tuning learning rate (default: 0.003)")
    p.add_argument("--support-channel", type=int, help="channel used for support sets (default: 1)")
    p.add_argument("--jobs", type=int, help="parallel workers over held-out speakers (default: 1)")
    p.add_argument("--dims", help="layer sizes, input first (default: input,32,32,16)")
    p.set_defaults(func=_cmd_loso)

    p = sub.add_parser("export-emb", help="write first-frame embeddings as CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    _add_filter_flags(p)
    p.set_defaults(func=_cmd_export_emb)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
