"""Corpus-level decoding pipelines: strategies, WER/RTF aggregation, scale
grid search, and the strategy comparison table.

A strategy names a complete pipeline:

    backoff-1pass     one-pass search with the backoff LM (n = order - 1)
    lstm-1pass        one-pass search with the recurrent LM (n from config)
    backoff+rescore   backoff search, then push-forward rescoring with the
                      interpolated LM
    lstm-n2+rescore   recurrent search at n=2, then push-forward rescoring
                      with the same scorer
    fullsum           probability-summation search (forces n = inf and
                      normalized transition penalties)
    fullsum+cn        fullsum, then confusion network decoding

Per-utterance scorers are constructed fresh so batch traces stay separate
and hypothesis tie-breaking is independent of decoding order; weight
tables are shared.  Wallclock time covers search and rescoring only,
never model construction.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

from .batching import BatchCostModel, throughput_report
from .decoder import DecodeConfig, decode
from .lattice_ops import (cn_decode, confusion_network, forward_backward,
                          push_forward_rescore)
from .lm import BackoffLm, InterpolatedLm, InterpolationConfig, RecurrentLm
from .metrics import RtfReport, WerCounts, word_error_counts
from .search_net import PrefixTree, normalize_topology
from .synth import CorpusBundle

INF = math.inf

STRATEGIES = ("backoff-1pass", "lstm-1pass", "backoff+rescore",
              "lstm-n2+rescore", "fullsum", "fullsum+cn")


@dataclass
class PipelineConfig:
    strategy: str = "lstm-1pass"
    beam: float = INF
    max_hyps: int | None = None
    recombination_n: float = INF
    scale_am: float = 1.0
    scale_lm: float = 1.0
    lambda_backoff: float = 0.5
    lambda_recurrent: float = 0.5
    k: int = 16
    rescore_beam: float = INF
    posterior_scale: float = 1.0
    batch_capacity: int = 32
    lookahead: bool = True
    jobs: int = 1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, "
                             f"pick one of {', '.join(STRATEGIES)}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")


@dataclass
class UtteranceOutcome:
    utterance_id: str
    words: tuple[str, ...]
    reference: tuple[str, ...]
    score: float
    wall_seconds: float
    simulated_ms: float
    stats: dict = field(default_factory=dict)


@dataclass
class CorpusOutcome:
    config: PipelineConfig
    outcomes: list
    counts: WerCounts
    rtf: RtfReport


def _decode_config(cfg: PipelineConfig, mode: str, n) -> DecodeConfig:
    return DecodeConfig(beam=cfg.beam, max_hyps=cfg.max_hyps,
                        recombination_n=n, mode=mode, scale_am=cfg.scale_am,
                        scale_lm=cfg.scale_lm,
                        lookahead_enabled=cfg.lookahead)


def run_utterance(bundle: CorpusBundle, tree: PrefixTree, emissions,
                  cfg: PipelineConfig) -> UtteranceOutcome:
    """Run one utterance through the configured pipeline."""
    # Fresh scorers per utterance: deterministic history ids and a private
    # batch trace, while the weight tables stay shared.
    def fresh_backoff():
        return BackoffLm(bundle.backoff.order, bundle.backoff.entries,
                         bundle.backoff.vocab)

    def fresh_recurrent():
        return RecurrentLm(bundle.rnn, batch_capacity=cfg.batch_capacity)

    interp_cfg = InterpolationConfig(lambda_backoff=cfg.lambda_backoff,
                                     lambda_recurrent=cfg.lambda_recurrent)
    strategy = cfg.strategy
    topology = bundle.topology
    traces = []

    start = time.perf_counter()
    if strategy == "backoff-1pass":
        scorer = fresh_backoff()
        n = max(1, scorer.order - 1)
        result = decode(emissions, tree, scorer, topology,
                        _decode_config(cfg, "viterbi", n))
        words, score = result.words, result.score
    elif strategy == "lstm-1pass":
        scorer = fresh_recurrent()
        result = decode(emissions, tree, scorer, topology,
                        _decode_config(cfg, "viterbi", cfg.recombination_n))
        words, score = result.words, result.score
        traces.append(scorer.trace)
    elif strategy == "backoff+rescore":
        first = fresh_backoff()
        result = decode(emissions, tree, first, topology,
                        _decode_config(cfg, "viterbi", max(1, first.order - 1)))
        second = InterpolatedLm(fresh_backoff(), fresh_recurrent(), interp_cfg)
        rescored = push_forward_rescore(result.lattice, second, k=cfg.k,
                                        rescore_beam=cfg.rescore_beam,
                                        scale_am=1.0, scale_lm=cfg.scale_lm)
        words, score = rescored.words, rescored.score
        traces.append(second.recurrent.trace)
    elif strategy == "lstm-n2+rescore":
        scorer = fresh_recurrent()
        result = decode(emissions, tree, scorer, topology,
                        _decode_config(cfg, "viterbi", 2))
        rescored = push_forward_rescore(result.lattice, scorer, k=cfg.k,
                                        rescore_beam=cfg.rescore_beam,
                                        scale_am=1.0, scale_lm=cfg.scale_lm)
        words, score = rescored.words, rescored.score
        traces.append(scorer.trace)
    elif strategy in ("fullsum", "fullsum+cn"):
        scorer = fresh_recurrent()
        result = decode(emissions, tree, scorer, normalize_topology(topology),
                        _decode_config(cfg, "fullsum", INF))
        words, score = result.words, result.total
        if strategy == "fullsum+cn":
            post = forward_backward(result.lattice, scale_am=1.0,
                                    scale_lm=cfg.scale_lm,
                                    posterior_scale=cfg.posterior_scale)
            words = cn_decode(confusion_network(result.lattice, post,
                                                scale_am=1.0,
                                                scale_lm=cfg.scale_lm))
        traces.append(scorer.trace)
    else:  # pragma: no cover - guarded by PipelineConfig
        raise ValueError(f"unknown strategy {strategy!r}")
    wall = time.perf_counter() - start

    model = BatchCostModel()
    sim_ms = sum(throughput_report(tr, model).total_ms for tr in traces)
    return UtteranceOutcome(
        utterance_id=emissions.utterance_id, words=tuple(words),
        reference=(), score=score, wall_seconds=wall, simulated_ms=sim_ms)


def run_corpus(bundle: CorpusBundle, cfg: PipelineConfig) -> CorpusOutcome:
    """Decode every utterance (optionally in parallel) and aggregate."""
    tree = PrefixTree(bundle.lexicon)

    def job(item):
        uid, emissions, reference = item
        outcome = run_utterance(bundle, tree, emissions, cfg)
        outcome.reference = tuple(reference)
        return outcome

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(job, bundle.utterances))
    else:
        outcomes = [job(item) for item in bundle.utterances]
    outcomes.sort(key=lambda o: o.utterance_id)

    counts = WerCounts()
    for o in outcomes:
        counts = counts + word_error_counts(o.reference, o.words)
    rtf = RtfReport(audio_seconds=bundle.audio_seconds,
                    compute_seconds=sum(o.wall_seconds for o in outcomes),
                    simulated_seconds=sum(o.simulated_ms for o in outcomes)
                    / 1000.0)
    return CorpusOutcome(config=cfg, outcomes=outcomes, counts=counts,
                         rtf=rtf)


# ---------------------------------------------------------------------------
# Grid search and experiment tables
# ---------------------------------------------------------------------------


@dataclass
class GridPoint:
    scale_am: float
    scale_lm: float
    wer: float


@dataclass
class GridResult:
    best: tuple[float, float]
    points: list


def grid_search(bundle: CorpusBundle, cfg: PipelineConfig,
                pairs) -> GridResult:
    """Evaluate every (scale_am, scale_lm) pair and return the WER argmin;
    ties break toward the lower LM scale, then the lower acoustic scale."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("grid search needs at least one scale pair")
    points = []
    for am, lm in pairs:
        outcome = run_corpus(bundle, replace(cfg, scale_am=am, scale_lm=lm))
        points.append(GridPoint(scale_am=am, scale_lm=lm,
                                wer=outcome.counts.wer))
    best = min(points, key=lambda p: (p.wer, p.scale_lm, p.scale_am))
    return GridResult(best=(best.scale_am, best.scale_lm), points=points)


@dataclass
class ExperimentRow:
    strategy: str
    beam: float
    recombination_n: float
    wer: float
    rtf_wall: float
    rtf_simulated: float

    def tsv(self) -> str:
        n = "inf" if self.recombination_n == INF else int(self.recombination_n)
        beam = "inf" if self.beam == INF else f"{self.beam:g}"
        return (f"{self.strategy}\t{beam}\t{n}\t{self.wer:.4f}"
                f"\t{self.rtf_wall:.4f}\t{self.rtf_simulated:.4f}")


EXPERIMENT_HEADER = "strategy\tbeam\trecomb_n\twer\trtf_wall\trtf_simulated"


def run_experiment(bundle: CorpusBundle, configs) -> list:
    """One row per pipeline config, for WER/RTF curve plotting."""
    rows = []
    for cfg in configs:
        outcome = run_corpus(bundle, cfg)
        rows.append(ExperimentRow(
            strategy=cfg.strategy, beam=cfg.beam,
            recombination_n=cfg.recombination_n, wer=outcome.counts.wer,
            rtf_wall=outcome.rtf.rtf, rtf_simulated=outcome.rtf.simulated_rtf))
    return rows
