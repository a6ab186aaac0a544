"""The read/write binary classifier.

The policy scores the *current* decoder state against the latest visible
encoder state with a scaled bilinear energy,

    e = (U's) . (V'h) / sqrt(d_p) + b,     p_write = sigmoid(e),

and is trained supervised on the pseudo-labels, with the base translation
model frozen.  Training examples come from walking each sentence's label
staircase exactly the way inference walks it: for target step i the
decoder state is recomputed at every visible length j from the previous
committed state, so the classifier only ever sees states it will meet at
decode time.

The bias starts at -2 so an untrained policy prefers READ.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import BOS_ID, Corpus
from .errors import (ConfigurationError, ContractError, DataError,
                     GradientCheckError, TrainingDivergedError)
from .model import CAUSAL, Seq2SeqModel, decode_step, encode
from .nn import Adam, sigmoid
from .policy_labels import PolicyLabelMatrix, read_offsets

READ = "READ"
WRITE = "WRITE"


@dataclass
class PolicyParams:
    U: np.ndarray               # (d_model, d_p)
    V: np.ndarray               # (d_model, d_p)
    b: float
    d_p: int

    def check(self):
        if self.d_p < 4:
            raise ConfigurationError(f"d_p must be >= 4, got {self.d_p}")
        if not (np.all(np.isfinite(self.U)) and np.all(np.isfinite(self.V))
                and np.isfinite(self.b)):
            raise ContractError("policy parameters must be finite")


@dataclass(frozen=True)
class Decision:
    p_write: float
    action: str
    delta: float


@dataclass
class PolicyTrainingSet:
    """Flat arrays of (decoder state, encoder state, label) examples plus
    their (pair, i, j) coordinates, ordered by (pair id, i, j)."""
    dec_states: np.ndarray      # (N, d_model)
    enc_states: np.ndarray      # (N, d_model)
    labels: np.ndarray          # (N,) uint8
    pair_ids: np.ndarray        # (N,)
    target_steps: np.ndarray    # (N,) 1-based i
    source_steps: np.ndarray    # (N,) 1-based j
    positive_weight: float = 1.0

    def __len__(self):
        return len(self.labels)


def init_policy(d_model: int, d_p: int = 16, seed: int = 0,
                bias: float = -2.0) -> PolicyParams:
    if d_p < 4:
        raise ConfigurationError(f"d_p must be >= 4, got {d_p}")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_model)
    return PolicyParams(
        U=(rng.standard_normal((d_model, d_p)) * scale).astype(np.float32),
        V=(rng.standard_normal((d_model, d_p)) * scale).astype(np.float32),
        b=bias, d_p=d_p)


def energy(params: PolicyParams, s_i: np.ndarray, h_j: np.ndarray) -> float:
    if s_i.shape[-1] != params.U.shape[0] or h_j.shape[-1] != params.V.shape[0]:
        raise ContractError("state width does not match the policy projections")
    u = s_i @ params.U
    v = h_j @ params.V
    return float(u @ v / np.sqrt(params.d_p) + params.b)


def write_probability(params: PolicyParams, s_i, h_j) -> float:
    return float(sigmoid(np.asarray(energy(params, s_i, h_j))))


def decide(params: PolicyParams, s_i, h_j, delta: float) -> Decision:
    """Deterministic thresholding of the write probability.

    Ties go to WRITE: p == delta emits.
    """
    if not 0.0 < delta < 1.0:
        raise ConfigurationError(f"delta must be in (0, 1), got {delta}")
    p = write_probability(params, s_i, h_j)
    return Decision(p_write=p, action=WRITE if p >= delta else READ, delta=delta)


# ----------------------------------------------------------------------
# Training set construction
# ----------------------------------------------------------------------

def build_training_set(model: Seq2SeqModel, corpus: Corpus,
                       labels) -> PolicyTrainingSet:
    """Walk each pair's label staircase under teacher forcing.

    For target step i, visible length runs from the previous read offset
    j_{i-1} (j_0 = 1) to this row's offset j_i; each visit contributes one
    example (s_i at visible j, h_j, l[i, j]).  The committed decoder state
    advances only at j_i.  The base model is read-only throughout.
    """
    if model.config.encoder_mode != CAUSAL:
        raise ContractError("policy features come from the causal deployment "
                            "model; got a full-encoder model")
    labels = list(labels)
    if len(labels) != len(corpus.pairs):
        raise DataError(f"have {len(labels)} label matrices for "
                        f"{len(corpus.pairs)} pairs")
    d = model.config.d_model
    S, H, Y, P, I, J = [], [], [], [], [], []
    for k, pair in enumerate(corpus.pairs):
        lab = labels[k]
        if lab is None:
            raise DataError(f"missing labels for pair {k}")
        if not isinstance(lab, PolicyLabelMatrix) or \
                lab.source_len != len(pair.source) or \
                lab.target_len != len(pair.target):
            raise DataError(f"labels for pair {k} do not match its lengths")
        offsets = read_offsets(lab).offsets
        enc = encode(model, pair.source, CAUSAL)
        state = model.initial_decoder_state()
        prev = BOS_ID
        prev_j = 1
        for i1, j_i in enumerate(offsets, start=1):
            for j in range(prev_j, int(j_i) + 1):
                new_state, _, _ = decode_step(model, prev, state, enc, j)
                S.append(new_state[-1])
                H.append(enc.states[j - 1])
                Y.append(int(lab.labels[i1 - 1, j - 1]))
                P.append(k)
                I.append(i1)
                J.append(j)
                if j == j_i:
                    state = new_state
            prev = pair.target[i1 - 1]
            prev_j = int(j_i)
    if not Y:
        return PolicyTrainingSet(
            np.zeros((0, d), np.float32), np.zeros((0, d), np.float32),
            np.zeros(0, np.uint8), np.zeros(0, np.int64),
            np.zeros(0, np.int64), np.zeros(0, np.int64), positive_weight=1.0)
    y = np.array(Y, dtype=np.uint8)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    w = n_neg / n_pos if n_pos > 0 and n_neg > 0 else 1.0
    return PolicyTrainingSet(
        np.stack(S).astype(np.float32), np.stack(H).astype(np.float32), y,
        np.array(P, dtype=np.int64), np.array(I, dtype=np.int64),
        np.array(J, dtype=np.int64), positive_weight=float(w))


# ----------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyTrainConfig:
    lr: float = 1e-2
    epochs: int = 30
    seed: int = 0
    d_p: int = 16
    batch_size: int = 256

    def validate(self):
        if self.lr < 0:
            raise ConfigurationError("lr must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")


@dataclass
class PolicyTrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    accuracy: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    gradcheck_max_rel_error: float = 0.0


def _policy_loss_grads(U, V, b, S, H, y, w, want_grads=True):
    """Class-weighted binary cross-entropy, normalized by total weight."""
    dp = U.shape[1]
    u = S @ U
    v = H @ V
    e = np.sum(u * v, axis=1) / np.sqrt(dp) + b[0]
    weights = np.where(y == 1, w, 1.0)
    total_w = weights.sum()
    # softplus(e) - y*e is -log sigma for y=1 and -log(1-sigma) for y=0
    softplus = np.logaddexp(0.0, e)
    loss = float(np.sum(weights * (softplus - y * e)) / total_w)
    if not want_grads:
        return loss, None
    de = weights * (sigmoid(e) - y) / total_w
    du = de[:, None] * v / np.sqrt(dp)
    dv = de[:, None] * u / np.sqrt(dp)
    return loss, {"U": S.T @ du, "V": H.T @ dv,
                  "b": np.array([de.sum()], dtype=U.dtype)}


def policy_gradient_check(params: PolicyParams, training_set: PolicyTrainingSet,
                          epsilon: float = 1e-5, tolerance: float = 1e-3,
                          n_samples: int = 200, seed: int = 0) -> float:
    """Finite-difference check of the classifier gradient in float64.
    Returns the max relative error; raises if it exceeds tolerance."""
    n = min(len(training_set), 512)
    if n == 0:
        raise ContractError("cannot gradient-check on an empty training set")
    S = training_set.dec_states[:n].astype(np.float64)
    H = training_set.enc_states[:n].astype(np.float64)
    y = training_set.labels[:n].astype(np.float64)
    w = training_set.positive_weight
    U = params.U.astype(np.float64)
    V = params.V.astype(np.float64)
    b = np.array([params.b], dtype=np.float64)
    _, grads = _policy_loss_grads(U, V, b, S, H, y, w)

    tensors = {"U": U, "V": V, "b": b}
    sizes = {k: v.size for k, v in tensors.items()}
    total = sum(sizes.values())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    names = sorted(tensors)
    offsets = np.cumsum([0] + [sizes[k] for k in names])
    max_err = 0.0
    for g in picks:
        t = int(np.searchsorted(offsets, g, side="right")) - 1
        name, idx = names[t], int(g - offsets[t])
        tensor = tensors[name]
        orig = tensor.flat[idx]
        tensor.flat[idx] = orig + epsilon
        lp, _ = _policy_loss_grads(U, V, b, S, H, y, w, want_grads=False)
        tensor.flat[idx] = orig - epsilon
        lm, _ = _policy_loss_grads(U, V, b, S, H, y, w, want_grads=False)
        tensor.flat[idx] = orig
        numeric = (lp - lm) / (2 * epsilon)
        analytic = grads[name].flat[idx]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_err = max(max_err, rel)
    if max_err > tolerance:
        raise GradientCheckError(f"policy gradient check failed: max rel error "
                                 f"{max_err:.3e} > {tolerance}")
    return max_err


def train_policy(training_set: PolicyTrainingSet,
                 hyper: PolicyTrainConfig) -> tuple[PolicyParams, PolicyTrainReport]:
    """Adam on the weighted BCE; deterministic for a fixed seed.

    The gradient is finite-difference checked at initialization before any
    update is applied.
    """
    hyper.validate()
    if len(training_set) == 0:
        raise ContractError("cannot train a policy on an empty set")
    d = training_set.dec_states.shape[1]
    params = init_policy(d, hyper.d_p, seed=hyper.seed)
    report = PolicyTrainReport()
    report.gradcheck_max_rel_error = policy_gradient_check(
        params, training_set, n_samples=48, seed=hyper.seed)

    tensors = {"U": params.U, "V": params.V,
               "b": np.array([params.b], dtype=np.float32)}
    opt = Adam(tensors, hyper.lr, warmup_steps=1)
    rng = np.random.default_rng(hyper.seed)
    S, H = training_set.dec_states, training_set.enc_states
    y = training_set.labels.astype(np.float32)
    w = training_set.positive_weight
    n = len(y)
    for _epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for lo in range(0, n, hyper.batch_size):
            sel = order[lo : lo + hyper.batch_size]
            loss, grads = _policy_loss_grads(tensors["U"], tensors["V"],
                                             tensors["b"], S[sel], H[sel],
                                             y[sel], w)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"policy loss non-finite in epoch {_epoch + 1}")
            opt.step(grads)
            total += loss
            batches += 1
        report.epoch_losses.append(total / max(batches, 1))

    params = PolicyParams(U=tensors["U"], V=tensors["V"],
                          b=float(tensors["b"][0]), d_p=hyper.d_p)
    report.accuracy, report.precision, report.recall = evaluate_policy(
        params, training_set)
    return params, report


def evaluate_policy(params: PolicyParams, ts: PolicyTrainingSet,
                    threshold: float = 0.5):
    """(accuracy, precision, recall) of thresholded write probabilities."""
    if len(ts) == 0:
        raise ContractError("cannot evaluate on an empty set")
    u = ts.dec_states @ params.U
    v = ts.enc_states @ params.V
    p = sigmoid(np.sum(u * v, axis=1) / np.sqrt(params.d_p) + params.b)
    pred = (p >= threshold).astype(np.uint8)
    truth = ts.labels
    acc = float((pred == truth).mean())
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return acc, precision, recall
