"""Pipeline driver.

Every stage is a subcommand reading and writing the documented file
formats, so stages can be re-run independently:

    gen-data      synthetic corpus -> train/dev/test TSV + alignment sidecars
    train-base    TSV -> seq2seq checkpoint (vocab embedded)
    export-align  checkpoint + TSV -> attention dump (ATTN)
    gen-labels    attention dump + gamma -> label dump (PLBL)
    train-policy  causal checkpoint + TSV + labels -> policy checkpoint
    decode        checkpoints + TSV -> hypotheses (+ decision trace)
    eval          checkpoints + TSV -> BLEU / Average Lagging report
    sweep         checkpoints + TSV + delta list -> CSV (+ SVG chart)
    gradcheck     finite-difference check of both gradient stacks
    selftest      embedded invariant suite

Exit codes: 0 success, 1 usage/configuration error, 2 data/format error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import checkpoint as ckpt
from . import corpus as corpus_mod
from . import decoding, metrics
from . import policy_labels as pl
from . import policy_net as pn
from .config import RunConfig
from .errors import (ConfigurationError, ContractError, DataError,
                     GradientCheckError, MetricError, ModelStateError,
                     SessionStateError, ToolkitError, TrainingDivergedError)
from .model import (CAUSAL, FULL, ModelConfig, TrainConfig, extract_attention,
                    gradient_check, init_model, train)

USAGE_EXIT, DATA_EXIT, NUMERIC_EXIT = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _add_common(p):
    p.add_argument("--config", help="plain-text config file (key = value)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--run-dir", help="directory receiving the resolved config echo")


def _resolve(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg.load_file(args.config)
    cfg.apply_overrides(args.set)
    if args.run_dir:
        cfg.echo(args.run_dir)
    return cfg


def _load_corpus_with_vocab(path, src_vocab, tgt_vocab):
    return corpus_mod.load_tsv(path, source_vocab=src_vocab,
                               target_vocab=tgt_vocab)


def _map_ordered(fn, items, threads):
    """Map preserving input order; thread count never changes the output."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _make_policy(args, d_model=None):
    if args.policy == "learned":
        if not args.policy_ckpt:
            raise ConfigurationError("--policy learned needs --policy-ckpt")
        return decoding.LearnedPolicy(ckpt.load_policy(args.policy_ckpt))
    if args.policy == "wait-k":
        return decoding.WaitKPolicy(args.k)
    if args.policy == "read-all":
        return decoding.ForcedReadPolicy()
    raise ConfigurationError(f"unknown policy {args.policy!r}")


def _policy_flags(p):
    p.add_argument("--policy", default="learned",
                   choices=["learned", "wait-k", "read-all"],
                   help="read/write policy driving the streaming decoder")
    p.add_argument("--policy-ckpt", help="policy checkpoint (ABSM, kind=policy)")
    p.add_argument("--k", type=int, default=4, help="k for --policy wait-k")


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------

def cmd_gen_data(args):
    cfg = _resolve(args)
    params = corpus_mod.GeneratorParams(
        size=cfg["corpus.size"], vocab_size=cfg["corpus.vocab_size"],
        fertility_rate=cfg["corpus.fertility_rate"],
        merge_rate=cfg["corpus.merge_rate"],
        swap_probability=cfg["corpus.swap_probability"],
        length_range=(cfg["corpus.len_min"], cfg["corpus.len_max"]))
    full = corpus_mod.generate_synthetic(params, cfg.stage_seed("gen-data"))
    fractions = (cfg["split.train"], cfg["split.dev"], cfg["split.test"])
    parts = corpus_mod.split(full, fractions, cfg.stage_seed("split"))
    os.makedirs(os.path.dirname(os.path.abspath(args.out_prefix)), exist_ok=True)
    for name, part in zip(("train", "dev", "test"), parts):
        corpus_mod.save_tsv(part, f"{args.out_prefix}.{name}.tsv",
                            f"{args.out_prefix}.{name}.align")
        print(f"{name}: {len(part.pairs)} pairs")
    return 0


def cmd_train_base(args):
    cfg = _resolve(args)
    mode = args.encoder_mode or cfg["train_base.encoder_mode"]
    data = corpus_mod.load_tsv(args.data)
    model_cfg = ModelConfig(
        d_model=cfg["model.d_model"], n_enc_layers=cfg["model.enc_layers"],
        n_dec_layers=cfg["model.dec_layers"], encoder_mode=mode,
        source_vocab_size=len(data.source_vocab),
        target_vocab_size=len(data.target_vocab),
        max_len=cfg["model.max_len"])
    seed = cfg.stage_seed(f"train-base:{mode}")
    model = init_model(model_cfg, seed)
    hyper = TrainConfig(
        lr_peak=cfg["train_base.lr"],
        adam_betas=(cfg["train_base.beta1"], cfg["train_base.beta2"]),
        warmup_steps=cfg["train_base.warmup"],
        batch_tokens=cfg["train_base.batch_tokens"],
        epochs=cfg["train_base.epochs"], seed=seed)
    report = train(model, data, hyper)
    for e, loss in enumerate(report.epoch_losses, start=1):
        print(f"epoch {e}: loss {loss:.4f} nats/token")
    ckpt.save_model(model, args.out, data.source_vocab, data.target_vocab)
    print(f"saved {args.out}")
    return 0


def cmd_export_align(args):
    model, src_vocab, tgt_vocab = ckpt.load_model(args.model)
    data = _load_corpus_with_vocab(args.data, src_vocab, tgt_vocab)
    matrices = [extract_attention(model, pair) for pair in data.pairs]
    ckpt.save_attention(matrices, args.out)
    print(f"wrote {len(matrices)} attention matrices to {args.out}")
    return 0


def cmd_gen_labels(args):
    cfg = _resolve(args)
    gamma = args.gamma if args.gamma is not None else cfg["labels.gamma"]
    matrices = ckpt.load_attention(args.attn)
    labels = [pl.gen_policy_labels(m, gamma) for m in matrices]
    ckpt.save_labels(labels, args.out)
    density = float(np.mean([pl.label_density(l) for l in labels])) if labels else 0.0
    offsets_at_end = float(np.mean(
        [np.mean(pl.read_offsets(l).offsets == l.source_len) for l in labels])) \
        if labels else 0.0
    print(f"gamma={gamma}: {len(labels)} label matrices, "
          f"mean write-cell density {density:.3f}, "
          f"fraction of offsets at |x| {offsets_at_end:.3f}")
    return 0


def cmd_train_policy(args):
    cfg = _resolve(args)
    model, src_vocab, tgt_vocab = ckpt.load_model(args.model)
    if model.config.encoder_mode != CAUSAL:
        raise DataError("train-policy needs the causal deployment checkpoint")
    data = _load_corpus_with_vocab(args.data, src_vocab, tgt_vocab)
    labels = ckpt.load_labels(args.labels)
    ts = pn.build_training_set(model, data, labels)
    hyper = pn.PolicyTrainConfig(
        lr=cfg["policy.lr"], epochs=cfg["policy.epochs"],
        seed=cfg.stage_seed("train-policy"), d_p=cfg["policy.d_p"],
        batch_size=cfg["policy.batch_size"])
    params, report = pn.train_policy(ts, hyper)
    ckpt.save_policy(params, args.out)
    print(f"examples={len(ts)} positive_weight={ts.positive_weight:.3f}")
    print(f"train accuracy {report.accuracy:.4f} precision {report.precision:.4f} "
          f"recall {report.recall:.4f}")
    print(f"saved {args.out}")
    return 0


def cmd_decode(args):
    cfg = _resolve(args)
    model, src_vocab, tgt_vocab = ckpt.load_model(args.model)
    data = _load_corpus_with_vocab(args.data, src_vocab, tgt_vocab)
    policy = _make_policy(args)
    delta = args.delta if args.delta is not None else cfg["decode.delta"]
    beam = args.beam_size if args.beam_size is not None else cfg["decode.beam_size"]
    factor = cfg["decode.max_len_factor"]

    def one(item):
        k, pair = item
        if beam == 1:
            res = decoding.greedy_stream(model, policy, pair.source, delta, factor)
        else:
            res, _ = decoding.beam_stream(model, policy, pair.source, delta,
                                          beam, factor)
        return k, res

    results = _map_ordered(one, list(enumerate(data.pairs)), cfg["eval.threads"])
    with open(args.out, "w", encoding="utf-8") as fh:
        for _, res in results:
            fh.write(" ".join(tgt_vocab.decode(res.tokens)) + "\n")
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for k, res in results:
                for line in decoding.trace_lines(k, res):
                    fh.write(line + "\n")
    print(f"decoded {len(results)} sentences to {args.out}")
    return 0


def cmd_eval(args):
    cfg = _resolve(args)
    model, src_vocab, tgt_vocab = ckpt.load_model(args.model)
    data = _load_corpus_with_vocab(args.data, src_vocab, tgt_vocab)
    policy = _make_policy(args)
    delta = args.delta if args.delta is not None else cfg["decode.delta"]
    beam = args.beam_size if args.beam_size is not None else cfg["decode.beam_size"]
    factor = cfg["decode.max_len_factor"]

    def one(pair):
        if beam == 1:
            return decoding.greedy_stream(model, policy, pair.source, delta, factor)
        return decoding.beam_stream(model, policy, pair.source, delta, beam,
                                    factor)[0]

    results = _map_ordered(one, data.pairs, cfg["eval.threads"])
    b = metrics.bleu([r.tokens for r in results],
                     [p.target for p in data.pairs])
    lat = metrics.corpus_latency(
        [(r.delays, len(p.source), len(r.tokens))
         for r, p in zip(results, data.pairs)],
        cfg["eval.min_source_len"])
    report = {
        "sentences": len(results),
        "bleu": b.score,
        "precisions": list(b.precisions),
        "brevity_penalty": b.brevity_penalty,
        "al": lat.mean_al,
        "al_included": lat.included,
        "al_excluded": lat.excluded,
        "delta": delta,
        "beam_size": beam,
    }
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_sweep(args):
    cfg = _resolve(args)
    model, src_vocab, tgt_vocab = ckpt.load_model(args.model)
    data = _load_corpus_with_vocab(args.data, src_vocab, tgt_vocab)
    policy = _make_policy(args)
    deltas = ([float(x) for x in args.deltas.split(",")] if args.deltas
              else list(cfg["sweep.deltas"]))
    beam = args.beam_size if args.beam_size is not None else cfg["sweep.beam_size"]
    rows = metrics.sweep_delta(model, policy, data, deltas, beam,
                               cfg["eval.min_source_len"],
                               cfg["decode.max_len_factor"])
    csv = metrics.sweep_rows_to_csv(rows)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv)
    if args.svg:
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(metrics.sweep_svg(rows))
    print(csv, end="")
    failed = [r for r in rows if r.error is not None]
    if failed:
        print(f"{len(failed)} row(s) flagged with decode failures", file=sys.stderr)
    return 0


def cmd_gradcheck(args):
    cfg = _resolve(args)
    seed = cfg.stage_seed("gradcheck")
    params = corpus_mod.GeneratorParams(size=4, vocab_size=12,
                                        fertility_rate=0.0, merge_rate=0.0,
                                        swap_probability=0.0, length_range=(3, 5))
    data = corpus_mod.generate_synthetic(params, seed)
    model_cfg = ModelConfig(d_model=16, n_enc_layers=2, n_dec_layers=2,
                            encoder_mode=args.encoder_mode,
                            source_vocab_size=len(data.source_vocab),
                            target_vocab_size=len(data.target_vocab), max_len=16)
    model = init_model(model_cfg, seed)
    report = gradient_check(model, data.pairs[0], seed=seed)
    print(f"seq2seq gradcheck: {report.n_checked} coords, "
          f"max rel error {report.max_rel_error:.2e} at {report.worst_param}")

    labels = [pl.gen_policy_labels(extract_attention(model, pair), 0.5)
              for pair in data.pairs] if args.encoder_mode == CAUSAL else None
    if args.encoder_mode == CAUSAL:
        ts = pn.build_training_set(model, data, labels)
        policy = pn.init_policy(model_cfg.d_model, d_p=8, seed=seed)
        err = pn.policy_gradient_check(policy, ts, seed=seed)
        print(f"policy gradcheck: max rel error {err:.2e}")
    return 0


def cmd_selftest(args):
    rng = np.random.default_rng(0)
    checks = 0

    # label generator vs brute-force oracle on random matrices
    from .model import AttentionMatrix
    for _ in range(200):
        ty, tx = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        w = rng.random((ty, tx)).astype(np.float32)
        w /= w.sum(axis=1, keepdims=True)
        att = AttentionMatrix(w.astype(np.float32), tx, ty)
        for gamma in (0.3, 0.5, 1.0):
            fast = pl.gen_policy_labels(att, gamma).labels
            slow = pl.brute_force_labels(att, gamma).labels
            if not np.array_equal(fast, slow):
                print(f"FAIL label oracle mismatch shape=({ty},{tx}) gamma={gamma}")
                return NUMERIC_EXIT
            checks += 1
    print(f"label oracle: {checks} matrices agree")

    # Average Lagging hand cases
    cases = [
        (metrics.average_lag([10] * 10, 10, 10), 10.0, "non-streaming"),
        (metrics.average_lag([min(i + 2, 10) for i in range(1, 11)], 10, 10),
         3.0, "wait-3"),
        (metrics.average_lag(list(range(1, 11)), 10, 10), 1.0, "simultaneous"),
    ]
    for got, want, name in cases:
        if abs(got - want) > 1e-6:
            print(f"FAIL AL {name}: got {got}, want {want}")
            return NUMERIC_EXIT
    print("average lagging hand cases hold")

    # beam(1) == greedy on a fresh random model
    params = corpus_mod.GeneratorParams(size=12, vocab_size=12,
                                        length_range=(3, 7))
    data = corpus_mod.generate_synthetic(params, 5)
    model_cfg = ModelConfig(d_model=16, encoder_mode=CAUSAL,
                            source_vocab_size=len(data.source_vocab),
                            target_vocab_size=len(data.target_vocab), max_len=16)
    model = init_model(model_cfg, 5)
    policy = decoding.WaitKPolicy(2)
    for pair in data.pairs:
        g = decoding.greedy_stream(model, policy, pair.source, 0.5)
        b, trace = decoding.beam_stream(model, policy, pair.source, 0.5, 1)
        if g.tokens != b.tokens or g.delays != b.delays:
            print("FAIL beam(1) != greedy")
            return NUMERIC_EXIT
        if trace.sync_violations or g.decoder_calls > len(pair.source) + g.write_steps - 1:
            print("FAIL decoder invariants")
            return NUMERIC_EXIT
    print("beam(1) == greedy; call bound and read synchrony hold")
    print("selftest OK")
    return 0


# ----------------------------------------------------------------------
# Dispatch
# ----------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="streammt", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus splits")
    _add_common(p)
    p.add_argument("--out-prefix", required=True,
                   help="writes PREFIX.{train,dev,test}.{tsv,align}")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-base", help="train a seq2seq model on a TSV corpus")
    _add_common(p)
    p.add_argument("--data", required=True, help="training TSV")
    p.add_argument("--encoder-mode", choices=[FULL, CAUSAL],
                   help="overrides config key train_base.encoder_mode")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(fn=cmd_train_base)

    p = sub.add_parser("export-align",
                       help="teacher-forced attention matrices for a corpus")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="ATTN dump path")
    p.set_defaults(fn=cmd_export_align)

    p = sub.add_parser("gen-labels",
                       help="attention dump -> read/write label dump")
    _add_common(p)
    p.add_argument("--attn", required=True)
    p.add_argument("--gamma", type=float,
                   help="cumulative threshold; config key labels.gamma")
    p.add_argument("--out", required=True, help="PLBL dump path")
    p.set_defaults(fn=cmd_gen_labels)

    p = sub.add_parser("train-policy",
                       help="train the read/write classifier on pseudo-labels")
    _add_common(p)
    p.add_argument("--model", required=True, help="causal seq2seq checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="policy checkpoint path")
    p.set_defaults(fn=cmd_train_policy)

    p = sub.add_parser("decode", help="streaming decode of a TSV corpus")
    _add_common(p)
    p.add_argument("--model", required=True)
    _policy_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--delta", type=float, help="config key decode.delta")
    p.add_argument("--beam-size", type=int, help="config key decode.beam_size")
    p.add_argument("--out", required=True, help="hypotheses, one per line")
    p.add_argument("--trace", help="decision trace: pair_id i j p_write action")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("eval", help="BLEU and Average Lagging for one setting")
    _add_common(p)
    p.add_argument("--model", required=True)
    _policy_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--delta", type=float, help="config key decode.delta")
    p.add_argument("--beam-size", type=int, help="config key decode.beam_size")
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="quality/latency curve across deltas")
    _add_common(p)
    p.add_argument("--model", required=True)
    _policy_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--deltas", help="comma list; config key sweep.deltas")
    p.add_argument("--beam-size", type=int, help="config key sweep.beam_size")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--svg", help="optional SVG line chart path")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gradcheck",
                       help="finite-difference gradient verification")
    _add_common(p)
    p.add_argument("--encoder-mode", choices=[FULL, CAUSAL], default=CAUSAL)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("selftest", help="run the embedded invariant suite")
    _add_common(p)
    p.set_defaults(fn=cmd_selftest)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (ConfigurationError, ContractError, SessionStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (DataError, MetricError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except (TrainingDivergedError, GradientCheckError, ModelStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERIC_EXIT
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
