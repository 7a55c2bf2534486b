"""Corpus pipelines: strategy plumbing, determinism, parallel equality,
grid search and the experiment table."""
import math

import pytest

from lmdecode.experiment import (EXPERIMENT_HEADER, STRATEGIES, ExperimentRow,
                                 GridResult, PipelineConfig, grid_search,
                                 run_corpus, run_experiment)
from lmdecode.formats import Lexicon, LexiconVariant
from lmdecode.search_net import HmmTopology
from lmdecode.synth import (CorpusBundle, context_corpus, make_rng,
                            planted_emissions, random_rnn,
                            uniform_bigram_arpa)

INF = math.inf


@pytest.fixture(scope="module")
def small_bundle():
    return context_corpus(repeats=1)


def one_word_bundle():
    lexicon = Lexicon(words=["a", "b"],
                      variants={"a": [LexiconVariant(1.0, (0, 1))],
                                "b": [LexiconVariant(1.0, (2, 3))]})
    rng = make_rng(77)
    utts = []
    for i, ref in enumerate([("a",), ("b",), ("a",)]):
        em = planted_emissions(rng, lexicon, ref, utterance_id=f"u{i}")
        utts.append((f"u{i}", em, ref))
    return CorpusBundle(lexicon=lexicon,
                        rnn=random_rnn(make_rng(78), lexicon.words),
                        backoff=uniform_bigram_arpa(lexicon.words),
                        topology=HmmTopology(), utterances=utts)


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


def test_config_rejects_unknown_strategy():
    with pytest.raises(ValueError, match="unknown strategy"):
        PipelineConfig(strategy="two-pass-magic")


def test_config_rejects_bad_jobs():
    with pytest.raises(ValueError, match="jobs"):
        PipelineConfig(jobs=0)


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_every_strategy_runs(small_bundle, strategy):
    cfg = PipelineConfig(strategy=strategy, beam=14.0, recombination_n=3)
    outcome = run_corpus(small_bundle, cfg)
    assert len(outcome.outcomes) == len(small_bundle.utterances)
    assert outcome.counts.reference_words == 25
    assert 0.0 <= outcome.counts.wer <= 1.0
    assert outcome.rtf.audio_seconds == pytest.approx(
        small_bundle.audio_seconds)
    assert outcome.rtf.rtf > 0.0
    uids = [o.utterance_id for o in outcome.outcomes]
    assert uids == sorted(uids)
    for o in outcome.outcomes:
        assert o.reference, "references must be attached after decoding"


def test_recurrent_strategies_report_simulated_time(small_bundle):
    cfg = PipelineConfig(strategy="lstm-1pass", beam=14.0)
    outcome = run_corpus(small_bundle, cfg)
    assert outcome.rtf.simulated_seconds > 0.0
    # The backoff one-pass never touches the batched scorer.
    plain = run_corpus(small_bundle, PipelineConfig(strategy="backoff-1pass",
                                                    beam=14.0))
    assert plain.rtf.simulated_seconds == 0.0


def test_runs_are_deterministic(small_bundle):
    cfg = PipelineConfig(strategy="lstm-1pass", beam=10.0, recombination_n=2)
    a = run_corpus(small_bundle, cfg)
    b = run_corpus(small_bundle, cfg)
    assert [o.words for o in a.outcomes] == [o.words for o in b.outcomes]
    assert [o.score for o in a.outcomes] == [o.score for o in b.outcomes]
    assert a.counts == b.counts
    assert a.rtf.simulated_seconds == b.rtf.simulated_seconds


def test_parallel_jobs_change_nothing(small_bundle):
    base = PipelineConfig(strategy="lstm-1pass", beam=10.0, recombination_n=2)
    seq = run_corpus(small_bundle, base)
    par = run_corpus(small_bundle, PipelineConfig(
        strategy="lstm-1pass", beam=10.0, recombination_n=2, jobs=2))
    assert [o.words for o in seq.outcomes] == [o.words for o in par.outcomes]
    assert seq.counts == par.counts
    assert seq.rtf.simulated_seconds == pytest.approx(
        par.rtf.simulated_seconds)


def test_two_pass_recovers_unrestricted_one_pass(small_bundle):
    # Unlimited recombination without a beam blows up combinatorially on
    # this corpus, so both pipelines run at the wide sweep beam where the
    # unrestricted pass is known to recover every reference.
    one = run_corpus(small_bundle, PipelineConfig(
        strategy="lstm-1pass", beam=14.0, recombination_n=INF))
    two = run_corpus(small_bundle, PipelineConfig(
        strategy="lstm-n2+rescore", beam=14.0, k=10 ** 9, rescore_beam=INF))
    for a, b in zip(one.outcomes, two.outcomes):
        assert a.utterance_id == b.utterance_id
        assert a.words == b.words
    assert one.counts.wer == two.counts.wer == 0.0


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


def test_grid_search_tie_prefers_small_scales():
    bundle = one_word_bundle()
    cfg = PipelineConfig(strategy="backoff-1pass", beam=INF)
    pairs = [(2.0, 1.5), (1.0, 1.5), (0.5, 2.0)]
    res = grid_search(bundle, cfg, pairs)
    assert isinstance(res, GridResult)
    assert [p.wer for p in res.points] == [0.0, 0.0, 0.0]
    # All tied on error rate: lowest LM scale wins, then lowest acoustic.
    assert res.best == (1.0, 1.5)


def test_grid_search_needs_pairs():
    with pytest.raises(ValueError, match="at least one"):
        grid_search(one_word_bundle(), PipelineConfig(), [])


# ---------------------------------------------------------------------------
# Experiment table
# ---------------------------------------------------------------------------


def test_experiment_rows_and_tsv(small_bundle):
    configs = [PipelineConfig(strategy="backoff-1pass", beam=14.0),
               PipelineConfig(strategy="lstm-1pass", beam=INF,
                              recombination_n=2)]
    rows = run_experiment(small_bundle, configs)
    assert [r.strategy for r in rows] == ["backoff-1pass", "lstm-1pass"]
    assert len(EXPERIMENT_HEADER.split("\t")) == 6
    for row in rows:
        cells = row.tsv().split("\t")
        assert len(cells) == 6
        assert 0.0 <= float(cells[3]) <= 1.0
    assert rows[0].tsv().startswith("backoff-1pass\t14\t")
    assert rows[1].tsv().split("\t")[1] == "inf"
    assert rows[1].tsv().split("\t")[2] == "2"


def test_experiment_row_formats_inf_recombination():
    row = ExperimentRow(strategy="fullsum", beam=INF, recombination_n=INF,
                        wer=0.125, rtf_wall=0.5, rtf_simulated=1.25)
    assert row.tsv() == "fullsum\tinf\tinf\t0.1250\t0.5000\t1.2500"
