"""The three generators: note-level LM, variational recurrent autoencoder,
and its history-conditioned variant (VRASH).

All three share the concatenated note input (pitch-class + octave + delay +
meta embeddings) and a three-head softmax output. EOS lives on the pitch
head only; BOS is a dedicated embedding row per input table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .cells import make_cell
from .optim import ParameterStore, RngStream, glorot, load_checkpoint, \
    save_checkpoint
from .tokenizer import TokenizedNote, Vocab

PITCH_HEAD = 13  # 12 pitch classes + EOS
EOS_PITCH = 12
PITCH_CLASS_ROWS = 13  # 12 pitch classes + BOS row

PC_EMB, OCT_EMB, DELAY_EMB, META_EMB = 16, 8, 16, 8
NOTE_VEC_DIM = PC_EMB + OCT_EMB + DELAY_EMB + META_EMB  # 48

MAX_GENERATED_NOTES = 512


class ModelError(Exception):
    pass


class FingerprintMismatch(ModelError):
    pass


@dataclass
class ModelConfig:
    kind: str = "lm"  # lm | vae | vrash
    cell: str = "lstm"  # lstm | rhn
    hidden: int = 128
    latent: int = 16
    rhn_depth: int = 2
    history_dropout_p: float = 0.3


@dataclass
class LossParts:
    loss: object  # scalar Tensor: recon sum + beta * KL
    ce_pitch: float
    ce_octave: float
    ce_delay: float
    kl: float
    n_notes: int

    @property
    def recon_sum(self):
        return self.ce_pitch + self.ce_octave + self.ce_delay

    @property
    def nats_per_note(self):
        return self.recon_sum / self.n_notes


def reparameterize(mu, logvar, rng):
    """z = mu + exp(0.5 * logvar) * eps, eps ~ N(0, I); eps carries no grad."""
    eps = rng.normal(mu.values.shape)
    z = ad.add(mu, ad.mul(ad.exp(ad.scale(logvar, 0.5)), ad.constant(eps)))
    return z, eps


def kl_divergence(mu, logvar):
    """KL(N(mu, diag exp(logvar)) || N(0, I)) as a scalar graph node."""
    inner = ad.add(ad.add_const(logvar, 1.0),
                   ad.scale(ad.add(ad.mul(mu, mu), ad.exp(logvar)), -1.0))
    return ad.scale(ad.vsum(inner), -0.5)


@dataclass
class ThreeHeadLogits:
    pitch: object
    octave: object
    delay: object

    def raw(self):
        return (self.pitch.values, self.octave.values, self.delay.values)


def sample_note(logits, vocab, temperature, rng, greedy=False):
    """Sample one token per head; EOS from the pitch head returns None."""
    pitch_v, oct_v, delay_v = (logits.raw() if isinstance(logits, ThreeHeadLogits)
                               else logits)
    if greedy:
        p_idx, o_idx, d_idx = (int(np.argmax(pitch_v)), int(np.argmax(oct_v)),
                               int(np.argmax(delay_v)))
    else:
        def draw(values):
            probs = ad.softmax_probs(values, temperature)
            return int(np.searchsorted(np.cumsum(probs), rng.random()))
        p_idx, o_idx, d_idx = draw(pitch_v), draw(oct_v), draw(delay_v)
    if p_idx == EOS_PITCH:
        return None
    return TokenizedNote(p_idx, vocab.octave_range[0] + o_idx, d_idx)


class _SharedLayers:
    """Embedding tables and output heads shared by every model kind."""

    def __init__(self, store, vocab, rng, hidden):
        self.vocab = vocab
        # input tables carry one extra BOS row
        self.emb_pc = store.create("emb.pc", glorot(rng, (PITCH_CLASS_ROWS, PC_EMB)))
        self.emb_oct = store.create("emb.oct", glorot(rng, (vocab.n_octaves + 1, OCT_EMB)))
        self.emb_delay = store.create("emb.delay", glorot(rng, (vocab.n_delays + 1, DELAY_EMB)))
        self.emb_meta = store.create("emb.meta", glorot(rng, (max(vocab.n_meta, 1), META_EMB)))
        self.W_pitch = store.create("head.pitch.W", glorot(rng, (hidden, PITCH_HEAD)))
        self.b_pitch = store.create("head.pitch.b", np.zeros(PITCH_HEAD))
        self.W_oct = store.create("head.oct.W", glorot(rng, (hidden, vocab.n_octaves)))
        self.b_oct = store.create("head.oct.b", np.zeros(vocab.n_octaves))
        self.W_delay = store.create("head.delay.W", glorot(rng, (hidden, vocab.n_delays)))
        self.b_delay = store.create("head.delay.b", np.zeros(vocab.n_delays))

    def note_vec(self, token, meta_idx):
        """Concatenated input embedding; token=None means BOS."""
        if token is None:
            pc_row = 12
            oct_row = self.vocab.n_octaves
            delay_row = self.vocab.n_delays
        else:
            pc_row = token.pitch_class
            oct_row = token.octave_index - self.vocab.octave_range[0]
            delay_row = token.delay_index
        v = ad.concat(ad.embed(self.emb_pc, pc_row),
                      ad.embed(self.emb_oct, oct_row))
        v = ad.concat(v, ad.embed(self.emb_delay, delay_row))
        return ad.concat(v, ad.embed(self.emb_meta, meta_idx))

    def heads(self, h):
        return ThreeHeadLogits(
            ad.add(ad.matmul(h, self.W_pitch), self.b_pitch),
            ad.add(ad.matmul(h, self.W_oct), self.b_oct),
            ad.add(ad.matmul(h, self.W_delay), self.b_delay))

    def targets(self, token):
        return (token.pitch_class,
                token.octave_index - self.vocab.octave_range[0],
                token.delay_index)


class _LossAccumulator:
    def __init__(self):
        self.node = None
        self.pitch = 0.0
        self.octave = 0.0
        self.delay = 0.0

    def _add(self, node):
        self.node = node if self.node is None else ad.add(self.node, node)

    def step(self, shared, logits, token):
        tp, to, td = shared.targets(token)
        ce_p = ad.softmax_cross_entropy(logits.pitch, tp)
        ce_o = ad.softmax_cross_entropy(logits.octave, to)
        ce_d = ad.softmax_cross_entropy(logits.delay, td)
        self.pitch += float(ce_p.values)
        self.octave += float(ce_o.values)
        self.delay += float(ce_d.values)
        self._add(ad.add(ad.add(ce_p, ce_o), ce_d))

    def eos(self, logits):
        ce = ad.softmax_cross_entropy(logits.pitch, EOS_PITCH)
        self.pitch += float(ce.values)
        self._add(ce)


class LMModel:
    kind = "lm"

    def __init__(self, vocab, config, store=None, rng=None):
        self.config = config
        self.vocab = vocab
        self.store = store or ParameterStore()
        rng = rng or RngStream(0)
        self.shared = _SharedLayers(self.store, vocab, rng, config.hidden)
        self.cell = make_cell(config.cell, self.store, "lm.cell", NOTE_VEC_DIM,
                              config.hidden, rng, config.rhn_depth)

    def loss(self, tokens, meta_idx, beta=0.0, rng=None, sample=True):
        acc = _LossAccumulator()
        state = self.cell.zero_state()
        inp = self.shared.note_vec(None, meta_idx)
        for token in tokens:
            h, state = self.cell.step(inp, state)
            acc.step(self.shared, self.shared.heads(h), token)
            inp = self.shared.note_vec(token, meta_idx)
        h, state = self.cell.step(inp, state)
        acc.eos(self.shared.heads(h))
        return LossParts(acc.node, acc.pitch, acc.octave, acc.delay, 0.0,
                         len(tokens))

    def generate(self, meta_idx, rng, temperature=1.0, greedy=False,
                 max_notes=MAX_GENERATED_NOTES):
        tokens = []
        state = self.cell.zero_state()
        inp = self.shared.note_vec(None, meta_idx)
        while len(tokens) < max_notes:
            h, state = self.cell.step(inp, state)
            token = sample_note(self.shared.heads(h), self.vocab, temperature,
                                rng, greedy)
            if token is None:
                break
            tokens.append(token)
            inp = self.shared.note_vec(token, meta_idx)
        return tokens


class _VariationalBase:
    """Encoder + latent plumbing shared by VAE and VRASH."""

    def __init__(self, vocab, config, store=None, rng=None, decoder_in=None):
        self.config = config
        self.vocab = vocab
        self.store = store or ParameterStore()
        rng = rng or RngStream(0)
        self.shared = _SharedLayers(self.store, vocab, rng, config.hidden)
        self.encoder = make_cell(config.cell, self.store, "enc.cell",
                                 NOTE_VEC_DIM, config.hidden, rng,
                                 config.rhn_depth)
        L, H = config.latent, config.hidden
        self.W_mu = self.store.create("enc.mu.W", glorot(rng, (H, L)))
        self.b_mu = self.store.create("enc.mu.b", np.zeros(L))
        self.W_lv = self.store.create("enc.lv.W", glorot(rng, (H, L)))
        self.b_lv = self.store.create("enc.lv.b", np.zeros(L))
        self.decoder = make_cell(config.cell, self.store, "dec.cell",
                                 decoder_in, H, rng, config.rhn_depth)
        self.W_init = self.store.create("dec.init.W", glorot(rng, (L, H)))
        self.b_init = self.store.create("dec.init.b", np.zeros(H))
        if config.cell == "lstm":
            self.W_initc = self.store.create("dec.initc.W", glorot(rng, (L, H)))
            self.b_initc = self.store.create("dec.initc.b", np.zeros(H))

    def encode(self, tokens, meta_idx):
        """Deterministic read of the full track into (mu, logvar)."""
        state = self.encoder.zero_state()
        h = None
        for token in tokens:
            h, state = self.encoder.step(self.shared.note_vec(token, meta_idx),
                                         state)
        if h is None:
            raise ModelError("cannot encode an empty track")
        mu = ad.add(ad.matmul(h, self.W_mu), self.b_mu)
        logvar = ad.add(ad.matmul(h, self.W_lv), self.b_lv)
        return mu, logvar

    def init_decoder_state(self, z):
        h0 = ad.tanh(ad.add(ad.matmul(z, self.W_init), self.b_init))
        if self.config.cell == "lstm":
            c0 = ad.tanh(ad.add(ad.matmul(z, self.W_initc), self.b_initc))
            return self.decoder.make_state(h0, c0)
        return self.decoder.make_state(h0)

    def loss(self, tokens, meta_idx, beta=1.0, rng=None, sample=True):
        mu, logvar = self.encode(tokens, meta_idx)
        if sample:
            if rng is None:
                raise ModelError("sampling requires an RngStream")
            z, _ = reparameterize(mu, logvar, rng)
        else:
            z = mu
        acc = _LossAccumulator()
        logits_seq = self.teacher_forced_logits(z, tokens, meta_idx, rng=rng)
        for logits, token in zip(logits_seq, tokens):
            acc.step(self.shared, logits, token)
        acc.eos(logits_seq[-1])
        kl = kl_divergence(mu, logvar)
        total = acc.node if beta == 0.0 else ad.add(acc.node, ad.scale(kl, beta))
        return LossParts(total, acc.pitch, acc.octave, acc.delay,
                         float(kl.values), len(tokens))

    def generate(self, meta_idx, rng, z_values=None, temperature=1.0,
                 greedy=False, max_notes=MAX_GENERATED_NOTES):
        if z_values is None:
            z_values = rng.normal(self.config.latent)
        z = ad.constant(np.asarray(z_values, dtype=np.float64))
        tokens = []
        state = self.init_decoder_state(z)
        prev = None
        while len(tokens) < max_notes:
            h, state = self.decoder.step(self.step_input(z, prev, meta_idx),
                                         state)
            token = sample_note(self.shared.heads(h), self.vocab, temperature,
                                rng, greedy)
            if token is None:
                break
            tokens.append(token)
            prev = token
        return tokens


class VAEModel(_VariationalBase):
    """Decoder sees only z and a learned constant step token - no history."""

    kind = "vae"
    STEP_TOKEN_DIM = NOTE_VEC_DIM - META_EMB  # 40

    def __init__(self, vocab, config, store=None, rng=None):
        decoder_in = config.latent + self.STEP_TOKEN_DIM + META_EMB
        super().__init__(vocab, config, store, rng, decoder_in=decoder_in)
        self.step_token = self.store.create(
            "dec.step_token", np.zeros(self.STEP_TOKEN_DIM))

    def step_input(self, z, prev_token, meta_idx):
        v = ad.concat(z, self.step_token)
        return ad.concat(v, ad.embed(self.shared.emb_meta, meta_idx))

    def teacher_forced_logits(self, z, tokens, meta_idx, rng=None):
        out = []
        state = self.init_decoder_state(z)
        for _ in range(len(tokens) + 1):
            h, state = self.decoder.step(self.step_input(z, None, meta_idx),
                                         state)
            out.append(self.shared.heads(h))
        return out


class VRASHModel(_VariationalBase):
    """VAE decoder that also hears its own previous output."""

    kind = "vrash"

    def __init__(self, vocab, config, store=None, rng=None):
        decoder_in = config.latent + NOTE_VEC_DIM
        super().__init__(vocab, config, store, rng, decoder_in=decoder_in)

    def step_input(self, z, prev_token, meta_idx):
        return ad.concat(z, self.shared.note_vec(prev_token, meta_idx))

    def teacher_forced_logits(self, z, tokens, meta_idx, rng=None):
        """Teacher forcing with history dropout: a dropped position sees the
        BOS vector instead of the true previous note."""
        p = self.config.history_dropout_p
        out = []
        state = self.init_decoder_state(z)
        prev = None
        for token in list(tokens) + [None]:  # final slot predicts EOS
            use_prev = prev
            if prev is not None and p > 0.0:
                if p >= 1.0 or (rng is not None and rng.random() < p):
                    use_prev = None
            h, state = self.decoder.step(self.step_input(z, use_prev, meta_idx),
                                         state)
            out.append(self.shared.heads(h))
            prev = token
        return out


MODEL_KINDS = {"lm": LMModel, "vae": VAEModel, "vrash": VRASHModel}


def build_model(vocab, config, seed=0):
    rng = RngStream(seed)
    cls = MODEL_KINDS.get(config.kind)
    if cls is None:
        raise ModelError(f"unknown model kind: {config.kind}")
    return cls(vocab, config, rng=rng)


def save_model(path, model, seed):
    extras = {
        "model_kind": model.kind,
        "cell": model.config.cell,
        "hidden": model.config.hidden,
        "latent": model.config.latent,
        "rhn_depth": model.config.rhn_depth,
        "history_dropout_p": model.config.history_dropout_p,
        "vocab_fingerprint": model.vocab.fingerprint(),
    }
    save_checkpoint(path, model.store, seed, extras)


def load_model(path, vocab):
    params, seed, extras = load_checkpoint(path)
    if extras.get("vocab_fingerprint") != vocab.fingerprint():
        raise FingerprintMismatch(
            f"checkpoint was trained against vocab {extras.get('vocab_fingerprint')}, "
            f"got {vocab.fingerprint()}")
    config = ModelConfig(
        kind=extras["model_kind"],
        cell=extras["cell"],
        hidden=int(extras["hidden"]),
        latent=int(extras["latent"]),
        rhn_depth=int(extras["rhn_depth"]),
        history_dropout_p=float(extras["history_dropout_p"]),
    )
    cls = MODEL_KINDS[config.kind]
    model = cls(vocab, config, rng=RngStream(seed))
    if set(params) != set(model.store.params):
        raise ModelError("checkpoint parameter names do not match model")
    for name, tensor in model.store.params.items():
        if tensor.values.shape != params[name].shape:
            raise ModelError(f"shape mismatch for {name}")
        tensor.values[...] = params[name]
    return model, seed
