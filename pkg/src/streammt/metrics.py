"""Quality and latency measurement.

BLEU is corpus-level BLEU-4: modified n-gram precision with clipped counts
against a single reference, add-one smoothing on the n >= 2 precisions
(short synthetic corpora would otherwise zero out routinely), and brevity
penalty exp(1 - r/c) when the hypothesis corpus is shorter than the
reference corpus.  Scores are reported on [0, 1].

Average Lagging measures how far the system trails an ideal fully
simultaneous translator.  With per-token delays g(i) = source tokens read
when target token i was emitted,

    AL = (1 /tau) * sum_{i<=tau} [ g(i) - (i-1) / (|y|/|x|) ]

where tau is the first index whose delay equals the source length (the
whole stream consumed), or the number of target tokens if no delay reaches
it.  Sentences shorter than a minimum source length are excluded from
corpus averages so short sentences do not convolute the statistics.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, MetricError

BLEU_ORDER = 4


@dataclass(frozen=True)
class BleuReport:
    score: float
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    hyp_tokens: int
    ref_tokens: int


def _ngrams(seq, n):
    return Counter(tuple(seq[k : k + n]) for k in range(len(seq) - n + 1))


def bleu(hypotheses, references) -> BleuReport:
    """Corpus BLEU-4 over token sequences (one reference per hypothesis)."""
    hypotheses = list(hypotheses)
    references = list(references)
    if not hypotheses:
        raise MetricError("empty hypothesis set")
    if len(hypotheses) != len(references):
        raise MetricError(f"{len(hypotheses)} hypotheses vs "
                          f"{len(references)} references")
    matched = [0] * BLEU_ORDER
    total = [0] * BLEU_ORDER
    c = r = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        c += len(hyp)
        r += len(ref)
        for n in range(1, BLEU_ORDER + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            matched[n - 1] += sum((hyp_counts & ref_counts).values())
            total[n - 1] += max(len(hyp) - n + 1, 0)

    precisions = []
    for n in range(1, BLEU_ORDER + 1):
        m, t = matched[n - 1], total[n - 1]
        if n >= 2:                      # add-one smoothing
            m, t = m + 1, t + 1
        precisions.append(m / t if t > 0 else 0.0)

    if c == 0 or precisions[0] == 0.0:
        return BleuReport(0.0, tuple(precisions), 0.0 if c == 0 else 1.0, c, r)
    bp = 1.0 if c >= r else float(np.exp(1.0 - r / c))
    if min(precisions) == 0.0:
        score = 0.0
    else:
        score = bp * float(np.exp(sum(np.log(p) for p in precisions) / BLEU_ORDER))
    return BleuReport(score, tuple(precisions), bp, c, r)


# ----------------------------------------------------------------------
# Average Lagging
# ----------------------------------------------------------------------

def average_lag(delays, source_len: int, target_len: int) -> float:
    """Per-sentence AL; delays are 1-based source read counts per token."""
    if source_len <= 0:
        raise ContractError("source_len must be positive")
    delays = list(delays)
    if target_len != len(delays):
        raise ContractError("target_len must match the delay vector")
    if not delays:
        return float(source_len)   # nothing emitted before EOS: full lag
    if any(not 1 <= g <= source_len for g in delays):
        raise ContractError("delays must lie in 1..source_len")
    if any(b < a for a, b in zip(delays, delays[1:])):
        raise ContractError("delays must be non-decreasing")
    rate = target_len / source_len
    tau = target_len
    for idx, g in enumerate(delays, start=1):
        if g == source_len:
            tau = idx
            break
    total = 0.0
    for idx in range(1, tau + 1):
        total += delays[idx - 1] - (idx - 1) / rate
    return total / tau


@dataclass(frozen=True)
class LatencyReport:
    mean_al: float
    per_sentence: tuple[float, ...]
    included: int
    excluded: int


def corpus_latency(delay_rows, min_source_len: int = 8) -> LatencyReport:
    """Aggregate AL over (delays, source_len, target_len) rows, excluding
    sentences with source_len below the filter."""
    per = []
    excluded = 0
    for delays, source_len, target_len in delay_rows:
        if source_len < min_source_len:
            excluded += 1
            continue
        per.append(average_lag(delays, source_len, target_len))
    if not per:
        raise MetricError("no sentences pass the min-source-length filter")
    return LatencyReport(float(np.mean(per)), tuple(per), len(per), excluded)


# ----------------------------------------------------------------------
# Delta sweep
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    delta: float
    bleu: float
    al: float
    mean_reads: float
    sentences: int
    error: str | None = None


CSV_HEADER = "delta,bleu,al,mean_reads,sentences"


def sweep_rows_to_csv(rows) -> str:
    lines = [CSV_HEADER]
    for row in rows:
        if row.error is not None:
            lines.append(f"{row.delta:.4f},nan,nan,nan,{row.sentences}")
        else:
            lines.append(f"{row.delta:.4f},{row.bleu:.4f},{row.al:.4f},"
                         f"{row.mean_reads:.4f},{row.sentences}")
    return "\n".join(lines) + "\n"


def sweep_delta(model, policy, corpus, deltas, beam_size: int = 1,
                min_source_len: int = 8, max_len_factor: float = 2.0):
    """Decode the corpus once per delta with the same trained policy.

    Returns a list of SweepRow.  A decode failure flags the row and the
    sweep continues.
    """
    from .decoding import beam_stream, greedy_stream

    deltas = list(deltas)
    if any(not 0.0 < d < 1.0 for d in deltas):
        raise ContractError("deltas must lie in (0, 1)")
    if sorted(deltas) != deltas:
        raise ContractError("deltas must be sorted ascending")
    rows = []
    for delta in deltas:
        try:
            hyps, refs, lat_rows, reads = [], [], [], []
            for pair in corpus.pairs:
                if beam_size == 1:
                    res = greedy_stream(model, policy, pair.source, delta,
                                        max_len_factor)
                else:
                    res, _ = beam_stream(model, policy, pair.source, delta,
                                         beam_size, max_len_factor)
                hyps.append(res.tokens)
                refs.append(pair.target)
                lat_rows.append((res.delays, len(pair.source), len(res.tokens)))
                reads.append(res.reads_total)
            b = bleu(hyps, refs)
            lat = corpus_latency(lat_rows, min_source_len)
            rows.append(SweepRow(delta=delta, bleu=b.score, al=lat.mean_al,
                                 mean_reads=float(np.mean(reads)),
                                 sentences=len(corpus.pairs)))
        except Exception as exc:   # flag the row, keep sweeping
            rows.append(SweepRow(delta=delta, bleu=float("nan"),
                                 al=float("nan"), mean_reads=float("nan"),
                                 sentences=len(corpus.pairs), error=str(exc)))
    return rows


# ----------------------------------------------------------------------
# Minimal SVG chart for the sweep
# ----------------------------------------------------------------------

def sweep_svg(rows, width: int = 480, height: int = 320) -> str:
    """Tiny dependency-free line chart: AL and BLEU against delta."""
    rows = [r for r in rows if r.error is None]
    if not rows:
        return "<svg xmlns='http://www.w3.org/2000/svg'/>"
    pad = 40
    xs = [r.delta for r in rows]
    x0, x1 = min(xs), max(xs)
    span_x = (x1 - x0) or 1.0

    def x_px(x):
        return pad + (x - x0) / span_x * (width - 2 * pad)

    def scale(vals):
        lo, hi = min(vals), max(vals)
        span = (hi - lo) or 1.0
        return lambda v: height - pad - (v - lo) / span * (height - 2 * pad)

    al_y = scale([r.al for r in rows])
    bl_y = scale([r.bleu for r in rows])
    al_pts = " ".join(f"{x_px(r.delta):.1f},{al_y(r.al):.1f}" for r in rows)
    bl_pts = " ".join(f"{x_px(r.delta):.1f},{bl_y(r.bleu):.1f}" for r in rows)
    labels = "".join(
        f"<text x='{x_px(r.delta):.1f}' y='{height - pad + 16}' "
        f"font-size='10' text-anchor='middle'>{r.delta:.2f}</text>"
        for r in rows)
    return (
        f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' "
        f"height='{height}'>"
        f"<rect width='{width}' height='{height}' fill='white'/>"
        f"<polyline points='{al_pts}' fill='none' stroke='#c33' "
        f"stroke-width='2'/>"
        f"<polyline points='{bl_pts}' fill='none' stroke='#36c' "
        f"stroke-width='2'/>"
        f"<text x='{pad}' y='20' font-size='12' fill='#c33'>AL</text>"
        f"<text x='{pad + 40}' y='20' font-size='12' fill='#36c'>BLEU</text>"
        f"<text x='{width / 2:.0f}' y='{height - 8}' font-size='12' "
        f"text-anchor='middle'>delta</text>"
        f"{labels}</svg>")
