"""Desk-scale encoder-decoder with soft cross-attention.

The architecture is a stacked-GRU sequence-to-sequence model with a single
bilinear-energy cross-attention in the decoder:

    h_j   = Encoder(x_1..x_j[, x_j..x_|x|])      stacked GRU, one or two directions
    e_ij  = (Wq s_{i-1} + bq) . (Wk h_j + bk) / sqrt(d)
    a_i   = softmax over the visible prefix of e_i
    c_i   = sum_j a_ij h_j
    s_i   = DecoderStack([Emb(y_{i-1}); c_i], s_{i-1})
    logit = Wo [s_i; c_i] + bo

The encoder runs "full" (forward plus backward GRU per layer, summed) or
"causal" (forward only).  Causal states at position j are a function of
x_1..x_j alone, so incremental encoding reproduces batch encoding
bit-exactly.  The attention energy is computed over the visible prefix
only; states beyond the prefix never enter the computation.

Training is teacher-forced cross-entropy with manually derived gradients,
batched over sentences, Adam with warmup + inverse-sqrt schedule.  All
production math is float32; the gradient checker reruns the same code in
float64 against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import BOS_ID, Corpus, EOS_ID, PAD_ID, ParallelPair
from .errors import (ConfigurationError, ContractError, GradientCheckError,
                     ModelStateError, TrainingDivergedError)
from .nn import Adam, glorot, gru_step, gru_step_backward, log_softmax, sigmoid

FULL = "full"
CAUSAL = "causal"


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    encoder_mode: str = CAUSAL
    source_vocab_size: int = 0
    target_vocab_size: int = 0
    max_len: int = 64

    def validate(self):
        if self.d_model < 8 or self.d_model % 2 != 0:
            raise ConfigurationError(f"d_model must be even and >= 8, got {self.d_model}")
        if self.n_enc_layers < 1 or self.n_dec_layers < 1:
            raise ConfigurationError("layer counts must be >= 1")
        if self.encoder_mode not in (FULL, CAUSAL):
            raise ConfigurationError(f"encoder_mode must be full|causal, got "
                                     f"{self.encoder_mode!r}")
        if self.source_vocab_size < 5 or self.target_vocab_size < 5:
            raise ConfigurationError("vocab sizes must cover the reserved ids")
        if self.max_len < 4:
            raise ConfigurationError(f"max_len too small: {self.max_len}")

    def to_dict(self):
        return {
            "d_model": self.d_model,
            "n_enc_layers": self.n_enc_layers,
            "n_dec_layers": self.n_dec_layers,
            "encoder_mode": self.encoder_mode,
            "source_vocab_size": self.source_vocab_size,
            "target_vocab_size": self.target_vocab_size,
            "max_len": self.max_len,
        }


def param_names(config: ModelConfig) -> list[str]:
    """Canonical tensor order; checkpoint manifests use this order."""
    names = ["emb_src", "emb_tgt"]
    for l in range(config.n_enc_layers):
        for part in ("W", "U", "b"):
            names.append(f"enc{l}_fwd_{part}")
        if config.encoder_mode == FULL:
            for part in ("W", "U", "b"):
                names.append(f"enc{l}_bwd_{part}")
    for l in range(config.n_dec_layers):
        for part in ("W", "U", "b"):
            names.append(f"dec{l}_{part}")
    names += ["att_Wq", "att_bq", "att_Wk", "att_bk", "out_W", "out_b"]
    return names


@dataclass
class Seq2SeqModel:
    config: ModelConfig
    params: dict[str, np.ndarray]

    def check_finite(self):
        for name, t in self.params.items():
            if not np.all(np.isfinite(t)):
                raise ModelStateError(f"parameter {name} contains non-finite values")

    def initial_decoder_state(self, dtype=np.float32):
        d = self.config.d_model
        return tuple(np.zeros(d, dtype=dtype) for _ in range(self.config.n_dec_layers))


@dataclass(frozen=True)
class EncoderStates:
    """Top-layer encoder states, one row per source position."""
    states: np.ndarray          # (|x|, d)
    mode: str


@dataclass(frozen=True)
class AttentionMatrix:
    """Row-stochastic |y| x |x| cross-attention weights."""
    weights: np.ndarray
    source_len: int
    target_len: int

    def validate(self, tol=1e-5):
        if self.weights.shape != (self.target_len, self.source_len):
            raise ContractError("attention shape disagrees with recorded lengths")
        if np.any(self.weights < 0):
            raise ContractError("attention weights must be non-negative")
        if np.max(np.abs(self.weights.sum(axis=1) - 1.0)) > tol:
            raise ContractError("attention rows must sum to 1")


def init_model(config: ModelConfig, seed: int) -> Seq2SeqModel:
    config.validate()
    rng = np.random.default_rng(seed)
    d = config.d_model
    p: dict[str, np.ndarray] = {}
    a = np.sqrt(3.0 / d)
    p["emb_src"] = rng.uniform(-a, a, (config.source_vocab_size, d)).astype(np.float32)
    p["emb_tgt"] = rng.uniform(-a, a, (config.target_vocab_size, d)).astype(np.float32)
    for l in range(config.n_enc_layers):
        directions = ("fwd", "bwd") if config.encoder_mode == FULL else ("fwd",)
        for direction in directions:
            p[f"enc{l}_{direction}_W"] = glorot(rng, (d, 3 * d))
            p[f"enc{l}_{direction}_U"] = glorot(rng, (d, 3 * d))
            p[f"enc{l}_{direction}_b"] = np.zeros(3 * d, dtype=np.float32)
    for l in range(config.n_dec_layers):
        d_in = 2 * d if l == 0 else d
        p[f"dec{l}_W"] = glorot(rng, (d_in, 3 * d))
        p[f"dec{l}_U"] = glorot(rng, (d, 3 * d))
        p[f"dec{l}_b"] = np.zeros(3 * d, dtype=np.float32)
    p["att_Wq"] = glorot(rng, (d, d))
    p["att_bq"] = np.zeros(d, dtype=np.float32)
    p["att_Wk"] = glorot(rng, (d, d))
    p["att_bk"] = np.zeros(d, dtype=np.float32)
    p["out_W"] = glorot(rng, (2 * d, config.target_vocab_size))
    p["out_b"] = np.zeros(config.target_vocab_size, dtype=np.float32)
    return Seq2SeqModel(config, p)


# ----------------------------------------------------------------------
# Encoding
# ----------------------------------------------------------------------

def encode(model: Seq2SeqModel, source_ids, mode: str | None = None) -> EncoderStates:
    """Run the encoder over a full source sentence.

    In causal mode the states are produced strictly left to right, so the
    first j rows equal encode() of the length-j prefix bit-for-bit.
    """
    mode = model.config.encoder_mode if mode is None else mode
    if mode not in (FULL, CAUSAL):
        raise ContractError(f"unknown encoder mode {mode!r}")
    if mode == FULL and model.config.encoder_mode != FULL:
        raise ContractError("model has no backward encoder weights; "
                            "it was built for causal mode")
    n = len(source_ids)
    if n < 1:
        raise ContractError("cannot encode an empty source")
    if n > model.config.max_len:
        raise ContractError(f"source length {n} exceeds max_len "
                            f"{model.config.max_len}")
    p = model.params
    seq = [p["emb_src"][t] for t in source_ids]
    for l in range(model.config.n_enc_layers):
        fwd = _run_direction(seq, p, f"enc{l}_fwd")
        if mode == FULL:
            bwd = _run_direction(seq[::-1], p, f"enc{l}_bwd")[::-1]
            seq = [f + b for f, b in zip(fwd, bwd)]
        else:
            seq = fwd
    return EncoderStates(np.stack(seq), mode)


def _run_direction(seq, params, prefix):
    W, U, b = params[f"{prefix}_W"], params[f"{prefix}_U"], params[f"{prefix}_b"]
    h = np.zeros(U.shape[0], dtype=seq[0].dtype)
    out = []
    for x in seq:
        h, _ = gru_step(x, h, W, U, b)
        out.append(h)
    return out


class IncrementalEncoder:
    """Streaming causal encoder: push one source token at a time.

    Produces exactly the rows encode(..., mode=causal) would, because the
    per-step cell operations are identical.
    """

    def __init__(self, model: Seq2SeqModel):
        self.model = model
        d = model.config.d_model
        self._carry = [np.zeros(d, dtype=np.float32)
                       for _ in range(model.config.n_enc_layers)]
        self._rows: list[np.ndarray] = []

    def push(self, token_id: int) -> np.ndarray:
        if len(self._rows) >= self.model.config.max_len:
            raise ContractError("source length exceeds max_len")
        p = self.model.params
        x = p["emb_src"][token_id]
        for l in range(self.model.config.n_enc_layers):
            x, _ = gru_step(x, self._carry[l], p[f"enc{l}_fwd_W"],
                            p[f"enc{l}_fwd_U"], p[f"enc{l}_fwd_b"])
            self._carry[l] = x
        self._rows.append(x)
        return x

    def states(self) -> EncoderStates:
        return EncoderStates(np.stack(self._rows), CAUSAL)

    def __len__(self):
        return len(self._rows)


# ----------------------------------------------------------------------
# Single-step decoding
# ----------------------------------------------------------------------

def decode_step(model: Seq2SeqModel, y_prev_id: int, dec_state,
                encoder_states: EncoderStates, visible_len: int):
    """One teacher-forced/inference decoder step over a visible prefix.

    Returns (new_dec_state, attention_row, logits).  The attention row has
    exactly visible_len entries; encoder states beyond the prefix are never
    touched, so the result is invariant to their contents.
    """
    n = encoder_states.states.shape[0]
    if not 1 <= visible_len <= n:
        raise ContractError(f"visible_len {visible_len} out of range 1..{n}")
    p = model.params
    d = model.config.d_model
    s_prev = dec_state[-1]
    vis = encoder_states.states[:visible_len]
    q = s_prev @ p["att_Wq"] + p["att_bq"]
    keys = vis @ p["att_Wk"] + p["att_bk"]
    e = (keys @ q) / np.sqrt(np.asarray(d, dtype=vis.dtype))
    e = e - np.max(e)
    w = np.exp(e)
    alpha = w / np.sum(w)
    c = alpha @ vis

    x = np.concatenate([p["emb_tgt"][y_prev_id], c])
    new_state = []
    for l in range(model.config.n_dec_layers):
        h, _ = gru_step(x, dec_state[l], p[f"dec{l}_W"], p[f"dec{l}_U"],
                        p[f"dec{l}_b"])
        new_state.append(h)
        x = h
    s = new_state[-1]
    logits = np.concatenate([s, c]) @ p["out_W"] + p["out_b"]
    return tuple(new_state), alpha, logits


def extract_attention(model: Seq2SeqModel, pair: ParallelPair,
                      encoder_mode: str | None = None) -> AttentionMatrix:
    """Teacher-forced cross-attention rows for predicting y_1..y_|y|."""
    model.check_finite()
    enc = encode(model, pair.source, encoder_mode)
    n = len(pair.source)
    state = model.initial_decoder_state()
    rows = []
    prev = BOS_ID
    for y in pair.target:
        state, alpha, _ = decode_step(model, prev, state, enc, n)
        rows.append(alpha)
        prev = y
    return AttentionMatrix(np.stack(rows), source_len=n,
                           target_len=len(pair.target))


# ----------------------------------------------------------------------
# Batched teacher-forced loss and gradients
# ----------------------------------------------------------------------

def _encoder_forward_batch(p, config, src, src_dtype):
    """src: (B, Tx) int ids.  Returns (H, caches) with H (B, Tx, d)."""
    B, Tx = src.shape
    seq = p["emb_src"][src]                      # (B, Tx, d)
    layer_caches = []
    mode = config.encoder_mode
    for l in range(config.n_enc_layers):
        fwd_states, fwd_caches = _direction_forward(seq, p, f"enc{l}_fwd", False)
        if mode == FULL:
            bwd_states, bwd_caches = _direction_forward(seq, p, f"enc{l}_bwd", True)
            out = fwd_states + bwd_states
        else:
            bwd_caches = None
            out = fwd_states
        layer_caches.append((seq, fwd_caches, bwd_caches))
        seq = out
    return seq, layer_caches


def _direction_forward(seq, p, prefix, reverse):
    B, Tx, d = seq.shape
    W, U, b = p[f"{prefix}_W"], p[f"{prefix}_U"], p[f"{prefix}_b"]
    h = np.zeros((B, U.shape[0]), dtype=seq.dtype)
    states = np.zeros((B, Tx, U.shape[0]), dtype=seq.dtype)
    caches = [None] * Tx
    order = range(Tx - 1, -1, -1) if reverse else range(Tx)
    for t in order:
        h, caches[t] = gru_step(seq[:, t], h, W, U, b)
        states[:, t] = h
    return states, caches


def _direction_backward(dstates, caches, p, grads, prefix, reverse):
    Tx = len(caches)
    W, U = p[f"{prefix}_W"], p[f"{prefix}_U"]
    dseq = np.zeros_like(dstates)
    dh = np.zeros_like(dstates[:, 0])
    order = range(Tx) if reverse else range(Tx - 1, -1, -1)
    for t in order:
        dh = dh + dstates[:, t]
        dx, dh = gru_step_backward(dh, caches[t], W, U, grads,
                                   f"{prefix}_W", f"{prefix}_U", f"{prefix}_b")
        dseq[:, t] = dx
    return dseq


def loss_and_grads(params, config: ModelConfig, batch, want_grads=True):
    """Teacher-forced mean cross-entropy (nats per target token) and grads.

    batch: dict with src (B,Tx), src_len (B,), tgt_in (B,Ty), tgt_out (B,Ty),
    tgt_len (B,).  Padded positions are excluded from the loss and from the
    attention support; their gradients are exactly zero.
    """
    p = params
    d = config.d_model
    src, src_len = batch["src"], batch["src_len"]
    tgt_in, tgt_out, tgt_len = batch["tgt_in"], batch["tgt_out"], batch["tgt_len"]
    B, Tx = src.shape
    Ty = tgt_in.shape[1]
    dtype = p["emb_src"].dtype
    scale = dtype.type(1.0) / np.sqrt(np.asarray(d, dtype=dtype))

    H, enc_caches = _encoder_forward_batch(p, config, src, dtype)
    K = H @ p["att_Wk"] + p["att_bk"]
    src_mask = (np.arange(Tx)[None, :] < src_len[:, None])
    neg_inf = np.array(-np.inf, dtype=dtype)

    tgt_mask = (np.arange(Ty)[None, :] < tgt_len[:, None])
    n_tokens = int(tgt_mask.sum())

    emb_t = p["emb_tgt"][tgt_in]                 # (B, Ty, d)
    s_layers = [np.zeros((B, d), dtype=dtype) for _ in range(config.n_dec_layers)]
    step_caches = []
    loss = 0.0
    dlogits_steps = []
    for i in range(Ty):
        s_prev = s_layers[-1]
        q = s_prev @ p["att_Wq"] + p["att_bq"]
        e = np.einsum("btd,bd->bt", K, q) * scale
        e = np.where(src_mask, e, neg_inf)
        e = e - np.max(e, axis=1, keepdims=True)
        w = np.exp(e)
        alpha = w / np.sum(w, axis=1, keepdims=True)
        c = np.einsum("bt,btd->bd", alpha, H)
        x = np.concatenate([emb_t[:, i], c], axis=1)
        gru_caches = []
        new_layers = []
        for l in range(config.n_dec_layers):
            h, cache = gru_step(x, s_layers[l], p[f"dec{l}_W"], p[f"dec{l}_U"],
                                p[f"dec{l}_b"])
            gru_caches.append(cache)
            new_layers.append(h)
            x = h
        s = new_layers[-1]
        sc = np.concatenate([s, c], axis=1)
        logits = sc @ p["out_W"] + p["out_b"]
        logp = log_softmax(logits, axis=1)
        rows = np.arange(B)
        mask_i = tgt_mask[:, i]
        loss -= float(np.sum(logp[rows, tgt_out[:, i]] * mask_i))
        if want_grads:
            soft = np.exp(logp)
            dlog = soft
            dlog[rows, tgt_out[:, i]] -= 1.0
            dlog *= (mask_i[:, None] / n_tokens)
            dlogits_steps.append(dlog.astype(dtype))
            step_caches.append((s_prev, q, alpha, c, sc, gru_caches))
        s_layers = new_layers

    mean_loss = loss / max(n_tokens, 1)
    if not want_grads:
        return mean_loss, n_tokens, None

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dH = np.zeros_like(H)
    dK = np.zeros_like(K)
    demb_t = np.zeros_like(emb_t)
    ds_layers = [np.zeros((B, d), dtype=dtype) for _ in range(config.n_dec_layers)]
    for i in range(Ty - 1, -1, -1):
        s_prev, q, alpha, c, sc, gru_caches = step_caches[i]
        dlog = dlogits_steps[i]
        grads["out_W"] += sc.T @ dlog
        grads["out_b"] += dlog.sum(axis=0)
        dsc = dlog @ p["out_W"].T
        ds = dsc[:, :d]
        dc = dsc[:, d:]

        ds_layers[-1] = ds_layers[-1] + ds
        dx = None
        for l in range(config.n_dec_layers - 1, -1, -1):
            dh = ds_layers[l] if dx is None else ds_layers[l] + dx
            dx, dh_prev = gru_step_backward(dh, gru_caches[l], p[f"dec{l}_W"],
                                            p[f"dec{l}_U"], grads,
                                            f"dec{l}_W", f"dec{l}_U", f"dec{l}_b")
            ds_layers[l] = dh_prev
        demb_t[:, i] = dx[:, :d]
        dc = dc + dx[:, d:]

        # attention backward: c = alpha . H, alpha = softmax(K q * scale)
        dalpha = np.einsum("bd,btd->bt", dc, H)
        dH += alpha[:, :, None] * dc[:, None, :]
        de = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
        de = de * scale
        dq = np.einsum("bt,btd->bd", de, K)
        dK += de[:, :, None] * q[:, None, :]
        grads["att_Wq"] += s_prev.T @ dq
        grads["att_bq"] += dq.sum(axis=0)
        ds_layers[-1] = ds_layers[-1] + dq @ p["att_Wq"].T

    np.add.at(grads["emb_tgt"], tgt_in, demb_t)

    # keys: K = H Wk + bk
    H2 = H.reshape(-1, d)
    dK2 = dK.reshape(-1, d)
    grads["att_Wk"] += H2.T @ dK2
    grads["att_bk"] += dK2.sum(axis=0)
    dH += dK @ p["att_Wk"].T

    # encoder stack backward
    dseq = dH
    for l in range(config.n_enc_layers - 1, -1, -1):
        seq_in, fwd_caches, bwd_caches = enc_caches[l]
        dseq_fwd = _direction_backward(dseq, fwd_caches, p, grads,
                                       f"enc{l}_fwd", False)
        if bwd_caches is not None:
            dseq_bwd = _direction_backward(dseq, bwd_caches, p, grads,
                                           f"enc{l}_bwd", True)
            dseq = dseq_fwd + dseq_bwd
        else:
            dseq = dseq_fwd
    np.add.at(grads["emb_src"], src, dseq)

    return mean_loss, n_tokens, grads


# ----------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr_peak: float = 3e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    warmup_steps: int = 200
    batch_tokens: int = 2000
    epochs: int = 10
    seed: int = 0

    def validate(self):
        for name in ("lr_peak", "warmup_steps", "batch_tokens", "epochs"):
            if getattr(self, name) < 0 or (name != "lr_peak" and getattr(self, name) < 1):
                raise ConfigurationError(f"{name} must be positive")


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    steps: int = 0


def _make_batch(pairs, dtype=np.float32):
    B = len(pairs)
    Tx = max(len(p.source) for p in pairs)
    Ty = max(len(p.target) for p in pairs) + 1          # +1 for the EOS step
    src = np.full((B, Tx), PAD_ID, dtype=np.int64)
    tgt_in = np.full((B, Ty), PAD_ID, dtype=np.int64)
    tgt_out = np.full((B, Ty), PAD_ID, dtype=np.int64)
    src_len = np.zeros(B, dtype=np.int64)
    tgt_len = np.zeros(B, dtype=np.int64)
    for k, pair in enumerate(pairs):
        src[k, : len(pair.source)] = pair.source
        src_len[k] = len(pair.source)
        tgt_in[k, 0] = BOS_ID
        tgt_in[k, 1 : len(pair.target) + 1] = pair.target
        tgt_out[k, : len(pair.target)] = pair.target
        tgt_out[k, len(pair.target)] = EOS_ID
        tgt_len[k] = len(pair.target) + 1
    return {"src": src, "src_len": src_len, "tgt_in": tgt_in,
            "tgt_out": tgt_out, "tgt_len": tgt_len}


def train(model: Seq2SeqModel, corpus: Corpus, hyper: TrainConfig) -> TrainReport:
    """Teacher-forced training.  Deterministic for a fixed (corpus, seed)."""
    hyper.validate()
    if len(corpus.pairs) == 0:
        raise ConfigurationError("cannot train on an empty corpus")
    longest = max(max(len(p.source), len(p.target) + 2) for p in corpus.pairs)
    if longest > model.config.max_len:
        raise ConfigurationError(f"corpus contains a sentence of length {longest} "
                                 f"> max_len {model.config.max_len}")
    opt = Adam(model.params, hyper.lr_peak, hyper.adam_betas, hyper.warmup_steps)
    rng = np.random.default_rng(hyper.seed)
    report = TrainReport()
    for _epoch in range(hyper.epochs):
        order = rng.permutation(len(corpus.pairs))
        batches = []
        current: list[ParallelPair] = []
        max_ty = 0
        for idx in order:
            pair = corpus.pairs[idx]
            ty = len(pair.target) + 1
            if current and (len(current) + 1) * max(max_ty, ty) > hyper.batch_tokens:
                batches.append(current)
                current, max_ty = [], 0
            current.append(pair)
            max_ty = max(max_ty, ty)
        if current:
            batches.append(current)

        total_loss = 0.0
        total_tokens = 0
        for pairs in batches:
            batch = _make_batch(pairs)
            loss, n_tok, grads = loss_and_grads(model.params, model.config, batch)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at step {report.steps + 1}")
            opt.step(grads)
            report.steps += 1
            total_loss += loss * n_tok
            total_tokens += n_tok
        report.epoch_losses.append(total_loss / max(total_tokens, 1))
    return report


# ----------------------------------------------------------------------
# Gradient checking
# ----------------------------------------------------------------------

@dataclass
class GradCheckReport:
    n_checked: int
    max_rel_error: float
    worst_param: str
    failures: list


def gradient_check(model: Seq2SeqModel, pair: ParallelPair, epsilon: float = 1e-4,
                   tolerance: float = 1e-3, n_samples: int = 200,
                   seed: int = 0) -> GradCheckReport:
    """Analytic gradients vs central finite differences on one small pair.

    The check runs in float64 (same code path, wider dtype) so that the
    finite differences are not drowned by float32 rounding; it validates
    the backward-pass math that the float32 trainer executes.
    """
    if not 1e-5 <= epsilon <= 1e-3:
        raise ContractError(f"epsilon must be in [1e-5, 1e-3], got {epsilon}")
    if len(pair.source) > 6 or len(pair.target) > 6:
        raise ContractError("gradient_check wants a small pair (lengths <= 6)")
    params64 = {k: v.astype(np.float64) for k, v in model.params.items()}
    batch = _make_batch([pair])
    _, _, grads = loss_and_grads(params64, model.config, batch)

    names = sorted(params64)
    sizes = np.array([params64[n].size for n in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    failures = []
    max_err, worst = 0.0, ""
    for g in np.sort(picks):
        t = int(np.searchsorted(offsets, g, side="right")) - 1
        name, flat_idx = names[t], int(g - offsets[t])
        tensor = params64[name]
        orig = tensor.flat[flat_idx]
        tensor.flat[flat_idx] = orig + epsilon
        lp, _, _ = loss_and_grads(params64, model.config, batch, want_grads=False)
        tensor.flat[flat_idx] = orig - epsilon
        lm, _, _ = loss_and_grads(params64, model.config, batch, want_grads=False)
        tensor.flat[flat_idx] = orig
        numeric = (lp - lm) / (2.0 * epsilon)
        analytic = grads[name].flat[flat_idx]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        if rel > max_err:
            max_err, worst = rel, f"{name}[{flat_idx}]"
        if rel > tolerance:
            failures.append((f"{name}[{flat_idx}]", float(analytic),
                             float(numeric), float(rel)))
    report = GradCheckReport(len(picks), max_err, worst, failures)
    if failures:
        raise GradientCheckError(
            f"{len(failures)} coordinate(s) exceed tolerance {tolerance}; "
            f"worst {worst} rel_err={max_err:.3e}")
    return report
