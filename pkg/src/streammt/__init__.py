"""streammt: convert a non-streaming seq2seq translation model into a
streaming one by learning a read/write policy from its attention."""

from .corpus import (Corpus, GeneratorParams, ParallelPair, Vocab,
                     generate_synthetic, load_tsv, save_tsv, split)
from .decoding import (AllWritePolicy, DecodeResult, ForcedReadPolicy,
                       LearnedPolicy, StreamSession, WaitKPolicy, beam_stream,
                       greedy_stream, non_streaming_beam, non_streaming_greedy,
                       teacher_forced_offsets)
from .metrics import (BleuReport, LatencyReport, SweepRow, average_lag, bleu,
                      corpus_latency, sweep_delta)
from .model import (AttentionMatrix, EncoderStates, ModelConfig, Seq2SeqModel,
                    TrainConfig, decode_step, encode, extract_attention,
                    gradient_check, init_model, train)
from .policy_labels import (PolicyLabelMatrix, ReadOffsets, brute_force_labels,
                            cumulative, gen_policy_labels, read_offsets)
from .policy_net import (Decision, PolicyParams, PolicyTrainConfig,
                         build_training_set, decide, energy, evaluate_policy,
                         init_policy, train_policy, write_probability)

__version__ = "0.1.0"
