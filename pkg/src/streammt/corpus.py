"""Parallel corpora: synthetic generation with known alignments, TSV ingest,
tokenization and vocabularies.

The synthetic language is built so that the true word alignment of every
pair is known, and so that the translation is a deterministic function of
the source text (otherwise no model could approach perfect quality).  Each
source word translates to a fixed target word; a configurable fraction of
the vocabulary has fertility two (one source word, two target words); a
set of designated source bigrams merges into a single target word; and a
seeded table of designated word pairs swaps the two target words whenever
the pair appears adjacently, which creates alignment crossings that force
a streaming policy to wait.  swap_probability is the density of that
table: 1.0 makes every adjacent fertility-one pair swap.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

from .errors import ConfigurationError, DataError
from .rng import SplitMix64

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocab:
    """Token/id mapping with fixed reserved entries at ids 0..3."""

    def __init__(self, tokens=()):
        self._tokens = list(RESERVED)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token in RESERVED:
            raise ConfigurationError(f"token {token!r} collides with a reserved symbol")
        if token not in self._ids:
            self._ids[token] = len(self._tokens)
            self._tokens.append(token)
        return self._ids[token]

    def id(self, token: str) -> int:
        """Id of a token, UNK for out-of-vocabulary."""
        return self._ids.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self._tokens[i] for i in ids]

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._tokens == other._tokens


@dataclass(frozen=True)
class ParallelPair:
    """One sentence pair as token ids, without BOS/EOS.

    gold_alignment is a frozenset of (i, j) links, 1-based, target index i
    to source index j.  It exists for diagnostics and tests only; the
    pipeline aligns with attention.
    """

    source: tuple[int, ...]
    target: tuple[int, ...]
    gold_alignment: frozenset | None = None


@dataclass(frozen=True)
class GeneratorParams:
    size: int = 1000
    vocab_size: int = 24
    fertility_rate: float = 0.2
    merge_rate: float = 0.1
    swap_probability: float = 0.3
    length_range: tuple[int, int] = (4, 12)

    def validate(self):
        if self.size < 0:
            raise ConfigurationError(f"size must be >= 0, got {self.size}")
        if self.vocab_size < 8:
            raise ConfigurationError(f"vocab_size must be >= 8, got {self.vocab_size}")
        for name in ("fertility_rate", "merge_rate", "swap_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {v}")
        lo, hi = self.length_range
        if lo < 2 or hi < lo:
            raise ConfigurationError(
                f"length_range must satisfy 2 <= min <= max, got {self.length_range}"
            )


@dataclass(frozen=True)
class Corpus:
    pairs: tuple[ParallelPair, ...]
    source_vocab: Vocab
    target_vocab: Vocab
    seed: int = 0
    generator_params: GeneratorParams | None = None

    def __len__(self) -> int:
        return len(self.pairs)


def _build_synthetic_vocabs(params: GeneratorParams):
    """Deterministic vocabulary layout for the synthetic language.

    The source vocabulary is partitioned into plain words and words reserved
    as members of designated merge bigrams.  Plain words map 1:1 onto target
    words except for the fertility-two subset, which maps onto two.  Merge
    bigrams map onto a single dedicated target word.  The layout is a pure
    function of the params, so ids are stable across runs.
    """
    v = params.vocab_size
    n_bigrams = int(round(params.merge_rate * v / 2)) if params.merge_rate > 0 else 0
    n_bigrams = min(n_bigrams, (v - 2) // 2)
    if params.merge_rate > 0 and n_bigrams == 0:
        n_bigrams = 1
    n_members = 2 * n_bigrams
    n_singles = v - n_members
    n_fertile = int(round(params.fertility_rate * n_singles))

    src_singles = [f"s{k}" for k in range(n_singles)]
    src_members = [f"b{k}" for k in range(n_members)]
    source_vocab = Vocab(src_singles + src_members)

    target_vocab = Vocab()
    one_tok = {}   # source token -> first target token
    two_tok = {}   # fertility-2 source token -> second target token
    for k, s in enumerate(src_singles):
        one_tok[s] = target_vocab.token(target_vocab.add(f"t{k}"))
        if k < n_fertile:
            two_tok[s] = target_vocab.token(target_vocab.add(f"u{k}"))
    bigrams = []
    for k in range(n_bigrams):
        a, b = src_members[2 * k], src_members[2 * k + 1]
        m = target_vocab.token(target_vocab.add(f"m{k}"))
        bigrams.append((a, b, m))
    return source_vocab, target_vocab, src_singles, one_tok, two_tok, bigrams


def generate_synthetic(params: GeneratorParams, seed: int) -> Corpus:
    """Generate a seeded corpus with gold alignments.

    Deterministic for fixed (params, seed): all draws come from one
    SplitMix64 stream (see rng module) in a fixed order -- first the swap
    table, then the sentences.
    """
    params.validate()
    (source_vocab, target_vocab, singles, one_tok, two_tok,
     bigrams) = _build_synthetic_vocabs(params)
    rng = SplitMix64(seed)
    lo, hi = params.length_range

    # Ordered pairs of fertility-1 words that always swap their targets when
    # adjacent.  Drawn once per corpus so the translation stays a function
    # of the source text.
    fert1 = [s for s in singles if s not in two_tok]
    swap_pair = {
        (a, b)
        for a in fert1 for b in fert1
        if rng.next_float() < params.swap_probability
    }

    pairs = []
    for _ in range(params.size):
        n = rng.next_int(lo, hi)
        src_tokens: list[str] = []
        tgt_tokens: list[str] = []
        links: list[tuple[int, int]] = []   # (target 1-based, source 1-based)
        origin: list[str | None] = []       # source word behind a fert-1 target

        while len(src_tokens) < n:
            room_for_bigram = len(src_tokens) <= n - 2
            if bigrams and room_for_bigram and rng.next_float() < params.merge_rate:
                a, b, m = bigrams[rng.next_below(len(bigrams))]
                j = len(src_tokens) + 1
                src_tokens += [a, b]
                tgt_tokens.append(m)
                origin.append(None)
                links += [(len(tgt_tokens), j), (len(tgt_tokens), j + 1)]
            else:
                s = singles[rng.next_below(len(singles))]
                j = len(src_tokens) + 1
                src_tokens.append(s)
                tgt_tokens.append(one_tok[s])
                origin.append(None if s in two_tok else s)
                links.append((len(tgt_tokens), j))
                if s in two_tok:
                    tgt_tokens.append(two_tok[s])
                    origin.append(None)
                    links.append((len(tgt_tokens), j))

        # Deterministic swaps of adjacent fertility-1 targets; positions are
        # consumed pairwise left to right so a token swaps at most once.
        p = 0
        while p < len(tgt_tokens) - 1:
            a, b = origin[p], origin[p + 1]
            if a is not None and b is not None and (a, b) in swap_pair:
                tgt_tokens[p], tgt_tokens[p + 1] = tgt_tokens[p + 1], tgt_tokens[p]
                links = [
                    (p + 2, j) if i == p + 1 else (p + 1, j) if i == p + 2 else (i, j)
                    for (i, j) in links
                ]
                p += 2
            else:
                p += 1

        pairs.append(ParallelPair(
            source=tuple(source_vocab.id(t) for t in src_tokens),
            target=tuple(target_vocab.id(t) for t in tgt_tokens),
            gold_alignment=frozenset(links),
        ))

    return Corpus(tuple(pairs), source_vocab, target_vocab, seed=seed,
                  generator_params=params)


def _tokenize(text: str) -> list[str]:
    """Split on ASCII spaces; runs of spaces do not produce empty tokens."""
    return [t for t in text.split(" ") if t]


def load_tsv(path, max_pairs: int | None = None,
             source_vocab: Vocab | None = None,
             target_vocab: Vocab | None = None) -> Corpus:
    """Load "source<TAB>target" lines.

    Vocabularies are built from observed tokens in reading order unless
    given explicitly (then unknown tokens map to UNK).  Lines with an empty
    side are skipped with a warning; lines without exactly two fields are a
    parse error naming the line.
    """
    build_src = source_vocab is None
    build_tgt = target_vocab is None
    source_vocab = source_vocab or Vocab()
    target_vocab = target_vocab or Vocab()
    pairs = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise DataError(f"{path}: line {lineno}: expected 2 tab-separated "
                                f"fields, got {len(fields)}")
            src, tgt = _tokenize(fields[0]), _tokenize(fields[1])
            if not src or not tgt:
                skipped += 1
                continue
            if build_src:
                for t in src:
                    source_vocab.add(t)
            if build_tgt:
                for t in tgt:
                    target_vocab.add(t)
            pairs.append(ParallelPair(tuple(source_vocab.encode(src)),
                                      tuple(target_vocab.encode(tgt))))
            if max_pairs is not None and len(pairs) >= max_pairs:
                break
    if skipped:
        warnings.warn(f"{path}: skipped {skipped} pair(s) with an empty side")
    return Corpus(tuple(pairs), source_vocab, target_vocab)


def save_tsv(corpus: Corpus, path, alignment_path=None):
    """Write the corpus as TSV; optionally a sidecar alignment file with one
    line per pair of space-separated "i-j" links (1-based, target-source)."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in corpus.pairs:
            src = " ".join(corpus.source_vocab.decode(p.source))
            tgt = " ".join(corpus.target_vocab.decode(p.target))
            fh.write(f"{src}\t{tgt}\n")
    if alignment_path is not None:
        with open(alignment_path, "w", encoding="utf-8") as fh:
            for p in corpus.pairs:
                links = sorted(p.gold_alignment or ())
                fh.write(" ".join(f"{i}-{j}" for i, j in links) + "\n")


def load_alignments(path) -> list[frozenset]:
    """Read a sidecar alignment file written by save_tsv."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            links = set()
            for item in line.split():
                try:
                    i, j = item.split("-")
                    links.add((int(i), int(j)))
                except ValueError as exc:
                    raise DataError(f"{path}: line {lineno}: bad link {item!r}") from exc
            out.append(frozenset(links))
    return out


def split(corpus: Corpus, fractions: tuple[float, float, float],
          seed: int) -> tuple[Corpus, Corpus, Corpus]:
    """Deterministic seeded shuffle, then partition by cumulative rounding.

    The three parts are disjoint and exhaustive.
    """
    if min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(
            f"fractions must be non-negative and sum to 1, got {fractions}")
    n = len(corpus.pairs)
    order = list(range(n))
    rng = SplitMix64(seed)
    for k in range(n - 1, 0, -1):   # Fisher-Yates with the documented stream
        r = rng.next_below(k + 1)
        order[k], order[r] = order[r], order[k]
    shuffled = [corpus.pairs[k] for k in order]
    b1 = int(round(fractions[0] * n))
    b2 = int(round((fractions[0] + fractions[1]) * n))
    parts = (shuffled[:b1], shuffled[b1:b2], shuffled[b2:])
    return tuple(
        replace(corpus, pairs=tuple(part)) for part in parts
    )
