"""Desk-scale LVCSR decoding kernel: one-pass beam search over a
pronunciation prefix tree with recurrent-LM histories, batched LM
evaluation, lattice rescoring, full-sum decoding, and confusion networks.
"""

from .batching import (BatchCostModel, BatchOverflow, BatchRecord, LmRequest,
                       ThroughputReport, schedule, simulate_cost,
                       throughput_report)
from .decoder import (DecodeConfig, DecodeResult, SearchCollapsed, WordEnd,
                      decode, fullsum_step, merge_pronunciation_variants,
                      recombine)
from .formats import (CorpusManifest, EmissionMatrix, FormatError, Lexicon,
                      LexiconVariant, ManifestEntry, arpa_to_text,
                      emissions_to_text, lexicon_to_text, manifest_to_text,
                      parse_arpa, parse_emissions, parse_lexicon,
                      parse_manifest, parse_rnn_weights, rnn_weights_to_text)
from .lattice import (Lattice, LatticeArc, LatticeNode, read_lattice,
                      write_lattice)
from .lattice_ops import (EPSILON, BestPath, ConfusionNetwork, ConfusionSlot,
                          PosteriorResult, RescoreResult, cn_decode,
                          confusion_network, forward_backward,
                          lattice_best_path, push_forward_rescore)
from .lm import (SENTENCE_BEGIN, SENTENCE_END, UNKNOWN_WORD, BackoffLm,
                 InterpolatedLm, InterpolationConfig, LmHistory, RecurrentLm,
                 RnnWeights, interp_score, perplexity, recombination_key,
                 rnn_step)
from .metrics import (RtfReport, WerCounts, corpus_error_counts, wer,
                      word_error_counts)
from .oracle import (OracleEntry, OracleResult, align_chain,
                     brute_force_oracle, enumerate_alignment_scores)
from .search_net import (HmmTopology, LookaheadCache, PrefixTree,
                         normalize_topology, transition_score)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
