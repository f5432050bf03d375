"""Command-line entry point: ingest | train | eval | generate | export-latents.

Exit codes: 0 success, 1 data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

from . import __version__
from . import pipeline as pl
from .config import ConfigError, load_configs, parse_kv_file
from .midi_io import encode_smf, load_notes
from .models import load_model
from .optim import RngStream
from .tokenizer import Vocab, build_vocab, decode_track, encode_track
from .training import evaluate, split_corpus, train

DEFAULT_DIVISION = 480
DEFAULT_TEMPO_US = 500000  # 120 BPM
DEFAULT_MEDIAN_PAUSE_MS = 250.0


class DataError(Exception):
    pass


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out_dir, command, config_snapshot, seed,
                       corpus_fingerprint=""):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "config": config_snapshot,
        "corpus_fingerprint": corpus_fingerprint,
        "seed": seed,
        "tool_version": __version__,
        "wall_clock": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _median_pause_ticks(median_pause_ms, division=DEFAULT_DIVISION,
                        tempo_us=DEFAULT_TEMPO_US):
    return max(1, round(median_pause_ms * 1000.0 * division / tempo_us))


def cmd_ingest(args):
    pipe_config, train_config = load_configs(args.config)
    manifest = parse_kv_file(args.manifest) if args.manifest else {}
    os.makedirs(args.out, exist_ok=True)
    write_run_manifest(args.out, "ingest", vars(pipe_config).copy(),
                       args.seed)
    records, report, skipped = pl.build_corpus(
        args.input_dir, manifest, pipe_config,
        log=lambda msg: print(msg, file=sys.stderr))
    corpus_path = os.path.join(args.out, "corpus.jsonl")
    pl.write_corpus(records, corpus_path)
    pl.write_report_csv(report, os.path.join(args.out, "filter_report.csv"))
    print(f"kept {report.kept} of {report.total()} candidate tracks "
          f"({skipped} unreadable files skipped)")
    return 0


def _model_heading(model):
    return f"{model.kind}/{model.config.cell}"


def cmd_train(args):
    _, train_config = load_configs(args.config)
    if args.seed is not None:
        train_config.seed = args.seed
    records = pl.read_corpus(args.corpus)
    if not records:
        raise DataError("corpus is empty")
    vocab = build_vocab(records)
    os.makedirs(args.out, exist_ok=True)
    write_run_manifest(args.out, "train", vars(train_config).copy(),
                       train_config.seed, _sha256_file(args.corpus))
    vocab.save(os.path.join(args.out, "vocab.txt"))

    results = []
    for kind in args.models.split(","):
        kind = kind.strip()
        run_config = type(train_config)(**vars(train_config))
        run_config.model_kind = kind
        run_dir = os.path.join(args.out, kind)
        result = train(records, vocab, run_config, run_dir,
                       log=lambda m, k=kind: print(f"[{k}] {m}", file=sys.stderr))
        result.write_metrics(os.path.join(run_dir, "metrics.csv"))
        results.append((kind, run_config.cell_kind, result.best_valid_ce))

    print("model,cell,valid_ce")
    for kind, cell, ce in results:
        print(f"{kind},{cell},{ce!r}")
    return 0


def _load_model_with_vocab(checkpoint, vocab_path):
    if vocab_path is None:
        for candidate in (os.path.join(os.path.dirname(checkpoint), "vocab.txt"),
                          os.path.join(os.path.dirname(checkpoint), "..", "vocab.txt")):
            if os.path.exists(candidate):
                vocab_path = candidate
                break
    if vocab_path is None:
        raise DataError("no vocab.txt found near checkpoint; pass --vocab")
    vocab = Vocab.load(vocab_path)
    model, seed = load_model(checkpoint, vocab)
    return model, vocab, seed


def cmd_eval(args):
    model, vocab, _ = _load_model_with_vocab(args.checkpoint, args.vocab)
    records = pl.read_corpus(args.corpus)
    if args.split != "all":
        train_recs, valid_recs = split_corpus(records, args.split_fraction)
        records = valid_recs if args.split == "valid" else train_recs
    if not records:
        raise DataError("no tracks in the requested split")
    items = [encode_track(r, vocab) for r in records]
    metrics = evaluate(model, items)
    print("metric,value")
    for key in ("ce_total", "ce_pitch", "ce_octave", "ce_delay", "kl"):
        print(f"{key},{metrics[key]!r}")
    return 0


def cmd_generate(args):
    model, vocab, _ = _load_model_with_vocab(args.checkpoint, args.vocab)
    rng = RngStream(args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_run_manifest(args.out, "generate",
                       {"mode": args.mode, "count": args.count,
                        "temperature": args.temperature,
                        "median_pause_ms": args.median_pause_ms},
                       args.seed)
    median_ticks = _median_pause_ticks(args.median_pause_ms)
    greedy = args.mode == "greedy"
    written = 0
    for i in range(args.count):
        meta_idx = 0
        if model.kind == "lm":
            tokens = model.generate(meta_idx, rng, temperature=args.temperature,
                                    greedy=greedy)
        elif args.mode == "reconstruct":
            if not args.input:
                raise DataError("reconstruct mode needs --input MIDI file")
            tokens = _reconstruct_tokens(model, vocab, args)
        else:
            z = rng.normal(model.config.latent)
            tokens = model.generate(meta_idx, rng, z_values=z,
                                    temperature=args.temperature, greedy=greedy)
        if not tokens:
            continue
        notes = decode_track(tokens, vocab, median_ticks, DEFAULT_DIVISION)
        data = encode_smf(notes, DEFAULT_DIVISION, DEFAULT_TEMPO_US)
        path = os.path.join(args.out, f"generated_{i:03d}.mid")
        with open(path, "wb") as fh:
            fh.write(data)
        written += 1
    print(f"wrote {written} MIDI files to {args.out}")
    return 0


def _reconstruct_tokens(model, vocab, args):
    from .pipeline import PipelineConfig, filter_track
    with open(args.input, "rb") as fh:
        _, per_track = load_notes(fh.read())
    config = PipelineConfig(min_notes=2)
    label = vocab.meta_labels[0]
    for notes, _ in per_track:
        result = filter_track(notes, config, source=args.input, meta_label=label)
        if isinstance(result, pl.CorpusRecord):
            tokens, meta = encode_track(result, vocab)
            mu, _ = model.encode(tokens, meta)
            return model.generate(meta, RngStream(args.seed),
                                  z_values=mu.values, greedy=True)
    raise DataError(f"no usable track in {args.input}")


def cmd_export_latents(args):
    model, vocab, _ = _load_model_with_vocab(args.checkpoint, args.vocab)
    if model.kind == "lm":
        raise DataError("latent export needs a vae or vrash checkpoint; "
                        "this is an lm checkpoint")
    records = pl.read_corpus(args.corpus)
    if not records:
        raise DataError("corpus is empty")
    latent_dim = model.config.latent
    header = "track_id,meta_label," + ",".join(f"mu{i}" for i in range(latent_dim))
    lines = [header]
    for rec in records:
        tokens, meta = encode_track(rec, vocab)
        mu, _ = model.encode(tokens, meta)
        cols = ",".join(repr(float(v)) for v in mu.values)
        lines.append(f"{rec.source},{rec.meta_label},{cols}")
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {len(records)} latent rows to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="melodygen",
        description="Monophonic melody corpus building, model training, and generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a normalized corpus from MIDI files")
    p.add_argument("input_dir")
    p.add_argument("--manifest", help="key=value file mapping subdirs to meta labels")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one or more models on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--models", default="lm", help="comma list: lm,vae,vrash")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="teacher-forced cross-entropy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=["all", "train", "valid"], default="all")
    p.add_argument("--split-fraction", type=float, default=0.1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="generate MIDI from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab")
    p.add_argument("--mode", choices=["prior", "reconstruct", "greedy"],
                   default="prior")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--median-pause-ms", type=float,
                   default=DEFAULT_MEDIAN_PAUSE_MS)
    p.add_argument("--input", help="source MIDI for reconstruct mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("export-latents", help="CSV of per-track latent means")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_latents)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    from .midi_io import MidiError
    from .models import ModelError
    from .optim import OptimError
    from .pipeline import PipelineError
    from .tokenizer import TokenizerError
    from .training import TrainingError
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DataError, MidiError, PipelineError, TokenizerError, ModelError,
            OptimError, TrainingError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
