"""Incremental inference.

A policy decides READ (consume one more source token) or WRITE (emit one
target token) at each step.  The greedy decoder computes a prospective
decoder state at the current visible length, asks the policy, and either
commits it (WRITE) or discards it and reads (READ); at end of stream every
remaining step is a forced WRITE.  This costs at most |x| + |y| - 1
decoder calls per sentence, counting every emission step.

The beam decoder keeps all hypotheses synchronized on the number of source
tokens read: at each read level, WRITE-classified hypotheses expand into
their top-k continuations while READ-classified ones pass through
unchanged, the top k by raw cumulative log-probability survive, and the
loop repeats until every survivor wants to READ; then one source token is
read for all.  At end of stream a final expansion loop runs until k
hypotheses have emitted EOS or hit the length cap.  Final ranking is by
length-normalized score.

EOS is excluded from the output distribution while unread source remains,
so a translation can never terminate before the stream does.  Committed
output is append-only: a streaming session defers any decision that sits
exactly at the end of the tokens pushed so far until the next push (or
finish) shows whether the stream continues, which makes the session's
decision sequence identical to the batch decoder's.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import BOS_ID, EOS_ID, PAD_ID
from .errors import ConfigurationError, ContractError, SessionStateError
from .model import (CAUSAL, EncoderStates, IncrementalEncoder, Seq2SeqModel,
                    decode_step, encode)
from .nn import log_softmax
from .policy_net import Decision, PolicyParams, READ, WRITE, write_probability


# ----------------------------------------------------------------------
# Policies
# ----------------------------------------------------------------------

class LearnedPolicy:
    """Thresholds the trained classifier's write probability at delta.

    sample=True replaces the deterministic threshold with a Bernoulli draw
    (study mode only; needs an rng).
    """

    def __init__(self, params: PolicyParams, sample: bool = False, rng=None):
        params.check()
        self.params = params
        self.sample = sample
        if sample and rng is None:
            raise ConfigurationError("sampling mode needs an rng")
        self.rng = rng

    def decide(self, s_top, h_j, i, j, source_exhausted, delta) -> Decision:
        p = write_probability(self.params, s_top, h_j)
        if source_exhausted:
            action = WRITE
        elif self.sample:
            action = WRITE if self.rng.random() < p else READ
        else:
            action = WRITE if p >= delta else READ
        return Decision(p_write=p, action=action, delta=delta)


class WaitKPolicy:
    """Fixed schedule: read k tokens, then alternate; g(i) = min(i+k-1, |x|)."""

    def __init__(self, k: int):
        if k < 1:
            raise ConfigurationError(f"wait-k needs k >= 1, got {k}")
        self.k = k

    def decide(self, s_top, h_j, i, j, source_exhausted, delta) -> Decision:
        write = source_exhausted or j >= i + self.k - 1
        return Decision(p_write=1.0 if write else 0.0,
                        action=WRITE if write else READ, delta=delta)


class ForcedReadPolicy:
    """Never writes until the stream ends: non-streaming behavior."""

    def decide(self, s_top, h_j, i, j, source_exhausted, delta) -> Decision:
        return Decision(p_write=0.0,
                        action=WRITE if source_exhausted else READ, delta=delta)


class AllWritePolicy:
    """Always writes; reads only when nothing can be written."""

    def decide(self, s_top, h_j, i, j, source_exhausted, delta) -> Decision:
        return Decision(p_write=1.0, action=WRITE, delta=delta)


# ----------------------------------------------------------------------
# Results
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class DecodeResult:
    tokens: tuple[int, ...]          # emitted target ids, EOS excluded
    delays: tuple[int, ...]          # g(i): source tokens read at emission
    decisions: tuple                 # (i, j, p_write, action) per step
    source_len: int
    reads_total: int                 # source tokens consumed
    write_steps: int                 # emission steps, EOS step included
    decoder_calls: int
    logprob: float                   # cumulative log P, EOS step included
    truncated: bool = False

    def check(self):
        if len(self.delays) != len(self.tokens):
            raise ContractError("one delay per emitted token")
        if any(b < a for a, b in zip(self.delays, self.delays[1:])):
            raise ContractError("delays must be non-decreasing")
        if any(not 1 <= g <= self.source_len for g in self.delays):
            raise ContractError("delays must lie in 1..|x|")


@dataclass
class BeamTrace:
    sync_checks: int = 0
    sync_violations: int = 0
    iterations: int = 0
    decoder_calls: int = 0
    decisions: list = field(default_factory=list)


def _masked_log_probs(logits, allow_eos: bool):
    x = np.array(logits, dtype=np.float32, copy=True)
    x[PAD_ID] = -np.inf
    x[BOS_ID] = -np.inf
    if not allow_eos:
        x[EOS_ID] = -np.inf
    return log_softmax(x)


def _stable_topk(logp, k):
    return np.argsort(-logp, kind="stable")[:k]


def _cap_at(j, max_len_factor):
    """Emission cap while j source tokens are visible.  Depends only on j
    (not on the eventual source length), so batch decoding and incremental
    sessions apply the same rule; at end of stream it is the documented
    max_len_factor * |x| + 10."""
    return int(max_len_factor * j) + 10


# ----------------------------------------------------------------------
# Greedy streaming
# ----------------------------------------------------------------------

def greedy_stream(model: Seq2SeqModel, policy, source_ids, delta: float,
                  max_len_factor: float = 2.0) -> DecodeResult:
    """Streaming greedy decode of one sentence."""
    if len(source_ids) == 0:
        raise ContractError("cannot decode an empty source")
    enc = encode(model, source_ids)
    n = len(source_ids)
    state = model.initial_decoder_state()
    prev = BOS_ID
    j = 1
    tokens: list[int] = []
    delays: list[int] = []
    decisions = []
    calls = reads = writes = 0
    logprob = 0.0
    truncated = False

    while True:
        exhausted = j == n
        new_state, _, logits = decode_step(model, prev, state, enc, j)
        calls += 1
        logp = _masked_log_probs(logits, allow_eos=exhausted)
        i = len(tokens) + 1
        d = policy.decide(new_state[-1], enc.states[j - 1], i, j, exhausted, delta)
        decisions.append((i, j, d.p_write, d.action))
        if d.action == READ:
            if exhausted:
                raise ContractError("policy returned READ on an exhausted stream")
            reads += 1
            j += 1
            continue
        tok = int(np.argmax(logp))
        writes += 1
        logprob += float(logp[tok])
        if tok == EOS_ID:
            break
        tokens.append(tok)
        delays.append(j)
        state = new_state
        prev = tok
        if len(tokens) >= _cap_at(j, max_len_factor):
            truncated = True
            break

    assert calls == reads + writes
    assert calls <= n + writes - 1
    result = DecodeResult(tuple(tokens), tuple(delays), tuple(decisions),
                          source_len=n, reads_total=j, write_steps=writes,
                          decoder_calls=calls, logprob=logprob,
                          truncated=truncated)
    result.check()
    return result


# ----------------------------------------------------------------------
# Beam streaming
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    delays: tuple[int, ...]
    logprob: float
    dec_state: tuple
    prev: int
    writes: int
    reads: int
    finished: bool = False
    truncated: bool = False
    pending: tuple | None = None    # (Decision, prospective state, logp)

    def score(self) -> float:
        return self.logprob / max(self.writes, 1)


def _initial_hyp(model):
    return Hypothesis(tokens=(), delays=(), logprob=0.0,
                      dec_state=model.initial_decoder_state(), prev=BOS_ID,
                      writes=0, reads=1)


def _sync_check(hyps, j, trace):
    trace.sync_checks += 1
    if any(h.reads != j for h in hyps):
        trace.sync_violations += 1
        raise ContractError("beam hypotheses diverged in read counts")


def _select(candidates, k):
    order = sorted(range(len(candidates)),
                   key=lambda idx: -candidates[idx].logprob)
    return [candidates[idx] for idx in order[:k]]


def _expand(h, logp, state, j, k, cap):
    children = []
    for tok in _stable_topk(logp, k):
        tok = int(tok)
        lp = h.logprob + float(logp[tok])
        if tok == EOS_ID:
            children.append(replace(h, logprob=lp, dec_state=state, prev=tok,
                                    writes=h.writes + 1, finished=True,
                                    pending=None))
        else:
            child = replace(h, tokens=h.tokens + (tok,),
                            delays=h.delays + (j,), logprob=lp,
                            dec_state=state, prev=tok, writes=h.writes + 1,
                            pending=None)
            if len(child.tokens) >= cap:
                child = replace(child, finished=True, truncated=True)
            children.append(child)
    return children


def _beam_level(model, policy, enc, hyps, j, delta, k, cap, trace):
    """Expansion loop at one read level (unread source remains).

    Returns the surviving hypotheses, all of which want to READ (or are
    finished).  EOS stays masked here.
    """
    while True:
        _sync_check(hyps, j, trace)
        trace.iterations += 1
        classified = []
        for h in hyps:
            if h.finished or h.pending is not None:
                classified.append(h)
                continue
            state, _, logits = decode_step(model, h.prev, h.dec_state, enc, j)
            trace.decoder_calls += 1
            logp = _masked_log_probs(logits, allow_eos=False)
            d = policy.decide(state[-1], enc.states[j - 1], h.writes + 1, j,
                              False, delta)
            trace.decisions.append((h.writes + 1, j, d.p_write, d.action))
            classified.append(replace(h, pending=(d, state, logp)))
        hyps = classified
        writers = [h for h in hyps
                   if not h.finished and h.pending[0].action == WRITE]
        if not writers:
            return hyps
        candidates = []
        for h in hyps:
            if h.finished or h.pending[0].action == READ:
                candidates.append(h)
            else:
                _, state, logp = h.pending
                candidates.extend(_expand(h, logp, state, j, k, cap))
        hyps = _select(candidates, k)


def _beam_final(model, policy, enc, hyps, n, delta, k, cap, trace):
    """Forced-write expansion at end of stream until k hypotheses finish."""
    while not all(h.finished for h in hyps):
        _sync_check(hyps, n, trace)
        trace.iterations += 1
        candidates = []
        for h in hyps:
            if h.finished:
                candidates.append(h)
                continue
            state, _, logits = decode_step(model, h.prev, h.dec_state, enc, n)
            trace.decoder_calls += 1
            logp = _masked_log_probs(logits, allow_eos=True)
            d = policy.decide(state[-1], enc.states[n - 1], h.writes + 1, n,
                              True, delta)
            if d.action != WRITE:
                raise ContractError("policy must WRITE when the source is "
                                    "exhausted")
            trace.decisions.append((h.writes + 1, n, d.p_write, d.action))
            candidates.extend(_expand(h, logp, state, n, k, cap))
        hyps = _select(candidates, k)
    return hyps


def _rank(hyps):
    order = sorted(range(len(hyps)), key=lambda idx: -hyps[idx].score())
    return hyps[order[0]]


def _advance_reads(hyps, j):
    return [replace(h, reads=j, pending=None) for h in hyps]


def beam_stream(model: Seq2SeqModel, policy, source_ids, delta: float,
                beam_size: int, max_len_factor: float = 2.0
                ) -> tuple[DecodeResult, BeamTrace]:
    """Streaming beam search; returns the best hypothesis plus the trace."""
    if beam_size < 1:
        raise ConfigurationError(f"beam_size must be >= 1, got {beam_size}")
    if len(source_ids) == 0:
        raise ContractError("cannot decode an empty source")
    enc = encode(model, source_ids)
    n = len(source_ids)
    trace = BeamTrace()
    hyps = [_initial_hyp(model)]
    for j in range(1, n):
        hyps = _beam_level(model, policy, enc, hyps, j, delta, beam_size,
                           _cap_at(j, max_len_factor), trace)
        if all(h.finished for h in hyps):
            break
        hyps = _advance_reads(hyps, j + 1)
    if not all(h.finished for h in hyps):
        hyps = _beam_final(model, policy, enc, hyps, n, delta, beam_size,
                           _cap_at(n, max_len_factor), trace)
    best = _rank(hyps)
    result = DecodeResult(best.tokens, best.delays, tuple(trace.decisions),
                          source_len=n, reads_total=best.reads,
                          write_steps=best.writes,
                          decoder_calls=trace.decoder_calls,
                          logprob=best.logprob, truncated=best.truncated)
    result.check()
    return result, trace


# ----------------------------------------------------------------------
# Non-streaming baselines
# ----------------------------------------------------------------------

def non_streaming_greedy(model: Seq2SeqModel, source_ids,
                         max_len_factor: float = 2.0,
                         mode: str | None = None) -> DecodeResult:
    """Greedy decode with the whole source visible from the first step."""
    if len(source_ids) == 0:
        raise ContractError("cannot decode an empty source")
    enc = encode(model, source_ids, mode)
    n = len(source_ids)
    cap = _cap_at(n, max_len_factor)
    state = model.initial_decoder_state()
    prev = BOS_ID
    tokens, delays = [], []
    logprob = 0.0
    calls = writes = 0
    truncated = False
    while True:
        new_state, _, logits = decode_step(model, prev, state, enc, n)
        calls += 1
        logp = _masked_log_probs(logits, allow_eos=True)
        tok = int(np.argmax(logp))
        writes += 1
        logprob += float(logp[tok])
        if tok == EOS_ID:
            break
        tokens.append(tok)
        delays.append(n)
        state, prev = new_state, tok
        if len(tokens) >= cap:
            truncated = True
            break
    return DecodeResult(tuple(tokens), tuple(delays), (), source_len=n,
                        reads_total=n, write_steps=writes, decoder_calls=calls,
                        logprob=logprob, truncated=truncated)


def non_streaming_beam(model: Seq2SeqModel, source_ids, beam_size: int,
                       max_len_factor: float = 2.0,
                       mode: str | None = None) -> DecodeResult:
    """Standard beam search over the fully visible source."""
    if beam_size < 1:
        raise ConfigurationError(f"beam_size must be >= 1, got {beam_size}")
    enc = encode(model, source_ids, mode)
    n = len(source_ids)
    cap = _cap_at(n, max_len_factor)
    trace = BeamTrace()
    hyps = [_initial_hyp(model)]
    hyps = _advance_reads(hyps, n)
    hyps = _beam_final(model, ForcedReadPolicy(), enc, hyps, n, 0.5,
                       beam_size, cap, trace)
    best = _rank(hyps)
    return DecodeResult(best.tokens, best.delays, (), source_len=n,
                        reads_total=n, write_steps=best.writes,
                        decoder_calls=0, logprob=best.logprob,
                        truncated=best.truncated)


# ----------------------------------------------------------------------
# Teacher-forced policy walk
# ----------------------------------------------------------------------

def teacher_forced_offsets(model: Seq2SeqModel, policy, pair, delta: float
                           ) -> np.ndarray:
    """Replay the greedy policy walk with reference targets; returns the
    1-based read offset chosen for each target token."""
    enc = encode(model, pair.source)
    n = len(pair.source)
    state = model.initial_decoder_state()
    prev = BOS_ID
    j = 1
    offsets = np.zeros(len(pair.target), dtype=np.int64)
    for i1, y in enumerate(pair.target, start=1):
        while True:
            new_state, _, _ = decode_step(model, prev, state, enc, j)
            d = policy.decide(new_state[-1], enc.states[j - 1], i1, j,
                              j == n, delta)
            if d.action == WRITE:
                break
            j += 1
        offsets[i1 - 1] = j
        state = new_state
        prev = y
    return offsets


# ----------------------------------------------------------------------
# Streaming session
# ----------------------------------------------------------------------

class StreamSession:
    """Token-by-token driver around the greedy or beam core.

    Decisions are taken only once the stream is known to continue past the
    current visible length (or once finish() declares it over), so the
    committed output is append-only and the final result reproduces the
    batch decoder bit-for-bit.
    """

    def __init__(self, model: Seq2SeqModel, policy, delta: float,
                 mode: str = "greedy", beam_size: int = 3,
                 max_len_factor: float = 2.0):
        if mode not in ("greedy", "beam"):
            raise ConfigurationError(f"mode must be greedy|beam, got {mode!r}")
        if model.config.encoder_mode != CAUSAL:
            raise ContractError("streaming sessions need a causal-encoder model")
        self.model = model
        self.policy = policy
        self.delta = delta
        self.mode = mode
        self.beam_size = beam_size
        self.max_len_factor = max_len_factor
        self._encoder = IncrementalEncoder(model)
        self._pushed = 0
        self._input_done = False
        self._done = False
        self._result: DecodeResult | None = None
        # greedy state
        self._state = model.initial_decoder_state()
        self._prev = BOS_ID
        self._j = 1
        self._tokens: list[int] = []
        self._delays: list[int] = []
        self._decisions: list = []
        self._calls = self._reads = self._writes = 0
        self._logprob = 0.0
        self._truncated = False
        # beam state
        self._hyps = [_initial_hyp(model)]
        self._trace = BeamTrace()

    # -- lifecycle ------------------------------------------------------

    def push_token(self, token_id: int):
        if self._input_done:
            raise SessionStateError("push_token after finish")
        self._encoder.push(token_id)
        self._pushed += 1
        self._advance()

    def finish(self) -> DecodeResult:
        if self._input_done:
            raise SessionStateError("finish called twice")
        if self._pushed == 0:
            raise SessionStateError("finish with no source tokens pushed")
        self._input_done = True
        self._advance()
        return self.result()

    def pull_outputs(self) -> list[int]:
        """Committed target tokens so far; never shrinks or rewrites."""
        if self.mode == "greedy":
            return list(self._tokens)
        live = self._hyps
        if not live:
            return []
        prefix = live[0].tokens
        for h in live[1:]:
            k = 0
            while k < len(prefix) and k < len(h.tokens) and prefix[k] == h.tokens[k]:
                k += 1
            prefix = prefix[:k]
        return list(prefix)

    def result(self) -> DecodeResult:
        if not self._done:
            raise SessionStateError("result is available after finish")
        return self._result

    # -- core -----------------------------------------------------------

    def _advance(self):
        if self._done:
            return
        if self.mode == "greedy":
            self._advance_greedy()
        else:
            self._advance_beam()

    def _advance_greedy(self):
        enc = self._encoder.states()
        n = self._pushed
        while True:
            if not self._input_done and self._j >= n:
                return                      # defer the boundary decision
            exhausted = self._input_done and self._j == n
            new_state, _, logits = decode_step(self.model, self._prev,
                                               self._state, enc, self._j)
            self._calls += 1
            logp = _masked_log_probs(logits, allow_eos=exhausted)
            i = len(self._tokens) + 1
            d = self.policy.decide(new_state[-1], enc.states[self._j - 1], i,
                                   self._j, exhausted, self.delta)
            self._decisions.append((i, self._j, d.p_write, d.action))
            if d.action == READ:
                self._reads += 1
                self._j += 1
                continue
            tok = int(np.argmax(logp))
            self._writes += 1
            self._logprob += float(logp[tok])
            if tok == EOS_ID:
                self._finalize_greedy()
                return
            self._tokens.append(tok)
            self._delays.append(self._j)
            self._state, self._prev = new_state, tok
            if len(self._tokens) >= _cap_at(self._j, self.max_len_factor):
                self._truncated = True
                self._finalize_greedy()
                return

    def _finalize_greedy(self):
        self._done = True
        self._result = DecodeResult(
            tuple(self._tokens), tuple(self._delays), tuple(self._decisions),
            source_len=self._pushed, reads_total=self._j,
            write_steps=self._writes, decoder_calls=self._calls,
            logprob=self._logprob, truncated=self._truncated)
        self._result.check()

    def _advance_beam(self):
        n = self._pushed
        while self._j < n or (self._input_done and self._j <= n):
            enc = self._encoder.states()
            if self._j < n:
                self._hyps = _beam_level(self.model, self.policy, enc,
                                         self._hyps, self._j, self.delta,
                                         self.beam_size,
                                         _cap_at(self._j, self.max_len_factor),
                                         self._trace)
                if all(h.finished for h in self._hyps):
                    self._finalize_beam()
                    return
                self._j += 1
                self._hyps = _advance_reads(self._hyps, self._j)
            else:
                self._hyps = _beam_final(self.model, self.policy, enc,
                                         self._hyps, n, self.delta,
                                         self.beam_size,
                                         _cap_at(n, self.max_len_factor),
                                         self._trace)
                self._finalize_beam()
                return

    def _finalize_beam(self):
        best = _rank(self._hyps)
        self._done = True
        self._result = DecodeResult(
            best.tokens, best.delays, tuple(self._trace.decisions),
            source_len=self._pushed, reads_total=best.reads,
            write_steps=best.writes, decoder_calls=self._trace.decoder_calls,
            logprob=best.logprob, truncated=best.truncated)
        self._result.check()


def trace_lines(pair_id, result: DecodeResult) -> list[str]:
    """Decision trace as text: "pair_id i j p_write action" per step."""
    return [f"{pair_id} {i} {j} {p:.6f} {action}"
            for (i, j, p, action) in result.decisions]
