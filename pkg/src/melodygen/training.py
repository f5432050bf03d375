"""Deterministic training: per-sequence graphs with gradient accumulation,
linear KL annealing, periodic evaluation, and plateau early stopping."""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field

from . import autodiff as ad
from .models import ModelConfig, build_model, save_model
from .optim import RngStream, adam_step
from .tokenizer import encode_track

MIN_IMPROVEMENT = 0.005  # nats; smaller gains do not reset patience


class TrainingError(Exception):
    pass


class EmptyCorpus(TrainingError):
    pass


class NonFiniteLoss(TrainingError):
    def __init__(self, step):
        super().__init__(f"non-finite loss at optimizer step {step}")
        self.step = step


@dataclass
class TrainConfig:
    model_kind: str = "lm"
    cell_kind: str = "lstm"
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 16
    kl_anneal_steps: int = 2000
    history_dropout_p: float = 0.3
    seed: int = 0
    eval_split_fraction: float = 0.1
    patience: int = 5
    eval_every: int = 200
    hidden: int = 128
    rhn_depth: int = 2
    max_steps: int = 0  # 0 = bounded by epochs only
    target_train_ce: float = 0.0  # >0: stop once train CE drops below

    def validate(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise TrainingError("learning_rate must be in (0, 1]")
        if self.kl_anneal_steps < 1:
            raise TrainingError("kl_anneal_steps must be >= 1")
        if not 0.0 <= self.eval_split_fraction < 1.0:
            raise TrainingError("eval_split_fraction must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise TrainingError("batch_size and epochs must be positive")


@dataclass
class MetricRow:
    step: int
    split: str
    ce_total: float
    ce_pitch: float
    ce_octave: float
    ce_delay: float
    kl: float
    beta: float

    def format(self):
        return (f"{self.step},{self.split},{self.ce_total!r},{self.ce_pitch!r},"
                f"{self.ce_octave!r},{self.ce_delay!r},{self.kl!r},{self.beta!r}")


METRIC_HEADER = "step,split,ce_total,ce_pitch,ce_octave,ce_delay,kl,beta"


@dataclass
class TrainResult:
    best_checkpoint: str
    final_checkpoint: str
    rows: list
    best_valid_ce: float
    steps: int

    def write_metrics(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(METRIC_HEADER + "\n")
            for row in self.rows:
                fh.write(row.format() + "\n")


def kl_weight(step, kl_anneal_steps):
    """Linear annealing from 0 to 1 over kl_anneal_steps optimizer steps."""
    return min(1.0, step / kl_anneal_steps)


def split_corpus(records, fraction):
    """Stable hash split by track source id; immune to corpus reordering."""
    train, valid = [], []
    for rec in records:
        digest = hashlib.md5(rec.source.encode()).hexdigest()
        bucket = int(digest[:8], 16) % 10000
        (valid if bucket < fraction * 10000 else train).append(rec)
    return train, valid


def evaluate(model, items):
    """Noise-free teacher-forced CE (z = mu), mean of per-track means.

    Returns per-head nats/note plus the mean KL for variational models.
    """
    if not items:
        raise EmptyCorpus("nothing to evaluate")
    sums = {"ce_total": 0.0, "ce_pitch": 0.0, "ce_octave": 0.0,
            "ce_delay": 0.0, "kl": 0.0}
    for tokens, meta in items:
        parts = model.loss(tokens, meta, beta=1.0, rng=None, sample=False)
        n = parts.n_notes
        sums["ce_total"] += parts.recon_sum / n
        sums["ce_pitch"] += parts.ce_pitch / n
        sums["ce_octave"] += parts.ce_octave / n
        sums["ce_delay"] += parts.ce_delay / n
        sums["kl"] += parts.kl
    return {k: v / len(items) for k, v in sums.items()}


def train(records, vocab, config, out_dir, log=None):
    """Train one model over a corpus; returns checkpoints and the metric log."""
    config.validate()
    if not records:
        raise EmptyCorpus("empty corpus")
    os.makedirs(out_dir, exist_ok=True)

    train_recs, valid_recs = split_corpus(records, config.eval_split_fraction)
    if not train_recs:
        raise EmptyCorpus("no training tracks after split")
    if not valid_recs:
        valid_recs = train_recs  # overfit runs evaluate on the training set

    train_items = [encode_track(r, vocab) for r in train_recs]
    valid_items = [encode_track(r, vocab) for r in valid_recs]

    model_config = ModelConfig(kind=config.model_kind, cell=config.cell_kind,
                               hidden=config.hidden, rhn_depth=config.rhn_depth,
                               history_dropout_p=config.history_dropout_p)
    model = build_model(vocab, model_config, seed=config.seed)
    rng = RngStream(config.seed + 1)
    variational = config.model_kind != "lm"

    rows = []
    best_ce = math.inf
    best_path = None
    plateau_ref = math.inf
    stale_evals = 0
    step = 0
    stop = False
    # running train-side accumulators between evals
    acc = {"ce_total": 0.0, "ce_pitch": 0.0, "ce_octave": 0.0,
           "ce_delay": 0.0, "kl": 0.0, "seqs": 0}

    def run_eval():
        nonlocal best_ce, best_path, plateau_ref, stale_evals, stop
        beta = kl_weight(step, config.kl_anneal_steps) if variational else 0.0
        n = max(acc["seqs"], 1)
        rows.append(MetricRow(step, "train", acc["ce_total"] / n,
                              acc["ce_pitch"] / n, acc["ce_octave"] / n,
                              acc["ce_delay"] / n, acc["kl"] / n, beta))
        train_ce = acc["ce_total"] / n
        for key in acc:
            acc[key] = 0.0 if key != "seqs" else 0
        metrics = evaluate(model, valid_items)
        rows.append(MetricRow(step, "valid", metrics["ce_total"],
                              metrics["ce_pitch"], metrics["ce_octave"],
                              metrics["ce_delay"], metrics["kl"], beta))
        if log is not None:
            log(f"step {step}: train {train_ce:.4f} valid "
                f"{metrics['ce_total']:.4f} kl {metrics['kl']:.4f} beta {beta:.3f}")
        if metrics["ce_total"] < best_ce:
            best_ce = metrics["ce_total"]
            path = os.path.join(out_dir, f"step{step}.ckpt")
            save_model(path, model, config.seed)
            best_path = path
        if metrics["ce_total"] < plateau_ref - MIN_IMPROVEMENT:
            plateau_ref = metrics["ce_total"]
            stale_evals = 0
        else:
            stale_evals += 1
            if stale_evals >= config.patience:
                stop = True
        if config.target_train_ce > 0 and train_ce < config.target_train_ce:
            stop = True

    for _epoch in range(config.epochs):
        order = list(range(len(train_items)))
        rng.shuffle(order)
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            model.store.zero_grads()
            beta = kl_weight(step, config.kl_anneal_steps) if variational else 0.0
            for idx in batch:
                tokens, meta = train_items[idx]
                parts = model.loss(tokens, meta, beta=beta, rng=rng,
                                   sample=variational)
                if not math.isfinite(float(parts.loss.values)):
                    raise NonFiniteLoss(step)
                ad.backward(parts.loss)
                acc["ce_total"] += parts.nats_per_note
                acc["ce_pitch"] += parts.ce_pitch / parts.n_notes
                acc["ce_octave"] += parts.ce_octave / parts.n_notes
                acc["ce_delay"] += parts.ce_delay / parts.n_notes
                acc["kl"] += parts.kl
                acc["seqs"] += 1
            adam_step(model.store, lr=config.learning_rate,
                      grad_scale=1.0 / len(batch))
            step += 1
            if step % config.eval_every == 0:
                run_eval()
            if stop or (config.max_steps and step >= config.max_steps):
                stop = True
                break
        if stop:
            break

    if not rows or rows[-1].step != step:
        run_eval()
    final_path = os.path.join(out_dir, f"step{step}.ckpt")
    save_model(final_path, model, config.seed)
    if best_path is None:
        best_path = final_path
        best_ce = rows[-1].ce_total
    return TrainResult(best_path, final_path, rows, best_ce, step)
