"""Acceptance gate for the decoding kernel.

Eight checks, one test each: exact search against a brute-force oracle,
two-pass equivalence, recombination-order sweeps, probability summation,
lattice calculus, batched LM scheduling, language model correctness, and
the evaluation metrics.  Each test prints a single ``[criterion N]``
PASS/FAIL line (stating the tolerance it enforces) before asserting, so a
``pytest tests/test_acceptance.py`` run reads as a checklist.

The heavy fixtures (100 random instances with exact decodes and oracle
enumerations) are shared across tests and computed lazily, so single
criteria can be re-run in isolation without paying for the others.
"""

import math
import time
from types import SimpleNamespace

import numpy as np
import pytest

from helpers import (
    HAND_ELMAN_D1,
    HAND_ELMAN_D2,
    HAND_ELMAN_H1,
    HAND_ELMAN_H2,
    TOY_ARPA,
    cut_posterior_sums,
    hand_elman_weights,
    quadratic_edit_counts,
    rescore_by_enumeration,
    scorer_factories,
)
from lmdecode.batching import BatchCostModel, BatchOverflow, LmRequest, schedule
from lmdecode.decoder import DecodeConfig, decode, fullsum_step
from lmdecode.experiment import PipelineConfig, run_corpus
from lmdecode.formats import CorpusManifest, ManifestEntry, manifest_to_text, parse_arpa, parse_manifest
from lmdecode.lattice import Lattice, LatticeArc, LatticeNode
from lmdecode.lattice_ops import cn_decode, confusion_network, forward_backward, push_forward_rescore
from lmdecode.lm import InterpolationConfig, RecurrentLm, interp_score, perplexity, rnn_step
from lmdecode.metrics import RtfReport, word_error_counts
from lmdecode.oracle import brute_force_oracle
from lmdecode.search_net import HmmTopology, PrefixTree, normalize_topology
from lmdecode.synth import (
    context_corpus,
    make_rng,
    random_bigram_arpa,
    random_instance,
    uniform_bigram_arpa,
)

INF = math.inf
N_INSTANCES = 100
EXACT = DecodeConfig(beam=INF, recombination_n=INF)
SWEEP_BEAMS = (6.0, 10.0, 14.0)
SWEEP_NS = (1, 2, 3, 5, 9, INF)


def announce(capsys, num: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[criterion {num}] {'PASS' if ok else 'FAIL'}: {detail}")


class SharedInstances:
    """100 small random instances plus lazily cached exact results."""

    def __init__(self):
        self.instances = [
            random_instance(make_rng(9000 + i), n_vocab=(2, 5))
            for i in range(N_INSTANCES)
        ]
        self._exact = None
        self._oracles = None

    def exact(self):
        """Exact (beam=inf, n=inf) decodes: [(backoff result, rnn result)]."""
        if self._exact is None:
            out = []
            for inst in self.instances:
                tree = PrefixTree(inst.lexicon)
                make = scorer_factories(inst)
                out.append((
                    decode(inst.emissions, tree, make["backoff"](), inst.topology, EXACT),
                    decode(inst.emissions, tree, make["rnn"](), inst.topology, EXACT),
                ))
            self._exact = out
        return self._exact

    def oracles(self):
        """Brute-force enumerations: [(backoff mode=both, rnn mode=viterbi)]."""
        if self._oracles is None:
            out = []
            for inst in self.instances:
                make = scorer_factories(inst)
                out.append((
                    brute_force_oracle(inst.emissions, inst.lexicon, make["backoff"](),
                                       inst.topology, max_words=inst.max_words,
                                       mode="both"),
                    brute_force_oracle(inst.emissions, inst.lexicon, make["rnn"](),
                                       inst.topology, max_words=inst.max_words,
                                       mode="viterbi"),
                ))
            self._oracles = out
        return self._oracles


@pytest.fixture(scope="module")
def shared():
    return SharedInstances()


def test_criterion_1_exact_search_matches_oracle(shared, capsys):
    t0 = time.perf_counter()
    oracles = shared.oracles()
    results = shared.exact()
    bad = []
    for i, ((ora_b, ora_r), (dec_b, dec_r)) in enumerate(zip(oracles, results)):
        for name, ora, dec in (("backoff", ora_b, dec_b), ("rnn", ora_r, dec_r)):
            if dec.words != ora.best_words or abs(dec.score - ora.best_score) > 1e-6:
                bad.append((i, name))
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 120.0
    announce(capsys, 1, ok,
             f"{N_INSTANCES - len({i for i, _ in bad})}/{N_INSTANCES} instances: "
             "exact decode matches brute-force oracle for backoff and recurrent "
             f"scorers (identical words, |score delta| <= 1e-6) in {elapsed:.2f}s "
             "(budget 120s)")
    assert bad == []
    assert elapsed < 120.0


def test_criterion_2_two_pass_recovers_exact_search(shared, capsys):
    results = shared.exact()
    matches = 0
    for inst, (_, exact_rnn) in zip(shared.instances, results):
        tree = PrefixTree(inst.lexicon)
        make = scorer_factories(inst)
        first = decode(inst.emissions, tree, make["rnn"](), inst.topology,
                       DecodeConfig(beam=INF, recombination_n=2))
        rescored = push_forward_rescore(first.lattice, make["rnn"](), k=10**9)
        matches += rescored.words == exact_rnn.words
    ok = matches == N_INSTANCES
    announce(capsys, 2, ok,
             f"{matches}/{N_INSTANCES} instances: n=2 first pass + push-forward "
             "rescore (k unlimited) returns the one-pass exact word sequence")
    assert matches == N_INSTANCES


def test_criterion_3_recombination_sweep_is_monotone(capsys):
    bundle = context_corpus(repeats=4)
    wers_by_beam = {}
    rtf_violations = 0
    for beam in SWEEP_BEAMS:
        wers, rtfs = [], []
        for n in SWEEP_NS:
            outcome = run_corpus(bundle, PipelineConfig(
                strategy="lstm-1pass", beam=beam, recombination_n=n))
            wers.append(outcome.counts.wer)
            rtfs.append(outcome.rtf.simulated_rtf)
        wers_by_beam[beam] = wers
        rtf_violations += sum(1 for a, b in zip(rtfs, rtfs[1:]) if b < a)
    top = wers_by_beam[max(SWEEP_BEAMS)]
    wer_violations = sum(1 for a, b in zip(top, top[1:]) if b > a)
    ok = wer_violations == 0 and rtf_violations == 0
    announce(capsys, 3, ok,
             "planted-context corpus, recombination n in {1,2,3,5,9,inf}: "
             f"corpus WER at beam {max(SWEEP_BEAMS):g} = "
             f"{[round(100 * w, 1) for w in top]}% non-increasing "
             f"({wer_violations} violations), simulated RTF non-decreasing in n "
             f"at every beam {SWEEP_BEAMS} ({rtf_violations} violations, ties ok)")
    assert wer_violations == 0
    assert rtf_violations == 0
    # The ladder itself is pinned so a silently weakened search cannot pass
    # by decoding everything equally badly.
    assert top == [0.16, 0.12, 0.08, 0.04, 0.0, 0.0]


def test_criterion_4_probability_summation(shared, capsys):
    oracles = shared.oracles()
    checked = 0
    dominance_violations = 0
    for ora_b, _ in oracles:
        for entry in ora_b.entries.values():
            if math.isinf(entry.viterbi):
                continue
            checked += 1
            # Neg-log domain: summing over alignments can only add mass.
            if entry.forward > entry.viterbi + 1e-9:
                dominance_violations += 1

    rng = make_rng(4242)
    step_worst = 0.0
    for _ in range(200):
        scores = rng.uniform(-5.0, 40.0, size=int(rng.integers(1, 12)))
        if rng.random() < 0.3:
            scores = np.append(scores, INF)
        direct = -np.logaddexp.reduce(-scores)
        step_worst = max(step_worst, abs(fullsum_step(list(scores)) - direct))

    topologies = [
        HmmTopology(),
        HmmTopology(loop_penalty=0.3, forward_penalty=1.7),
        HmmTopology(loop_penalty=5.0, forward_penalty=5.0),
        HmmTopology(loop_penalty=2.0, forward_penalty=0.05,
                    skip_penalty=1.0, skip_allowed=True),
        HmmTopology(loop_penalty=math.log(2.0), forward_penalty=math.log(2.0)),
    ]
    topo_worst = 0.0
    for topo in topologies:
        norm = normalize_topology(topo)
        total = math.exp(-norm.loop_penalty) + math.exp(-norm.forward_penalty)
        if norm.skip_allowed:
            total += math.exp(-norm.skip_penalty)
        topo_worst = max(topo_worst, abs(total - 1.0))

    ok = dominance_violations == 0 and step_worst <= 1e-9 and topo_worst <= 1e-12
    announce(capsys, 4, ok,
             f"forward <= viterbi (neg-log) on {checked} enumerated sequences "
             f"({dominance_violations} violations, tol 1e-9); fullsum_step vs "
             f"direct log-sum-exp worst |delta| = {step_worst:.2e} (tol 1e-9); "
             f"normalized topology probability sums off by at most "
             f"{topo_worst:.2e} (tol 1e-12)")
    assert dominance_violations == 0
    assert checked > 0
    assert step_worst <= 1e-9
    assert topo_worst <= 1e-12


def _single_path_lattice() -> Lattice:
    nodes = [LatticeNode(0), LatticeNode(5), LatticeNode(9)]
    arcs = [LatticeArc(0, 1, "hello", 0, -1.25, -0.5),
            LatticeArc(1, 2, "world", 0, -2.0, -1.5)]
    return Lattice("chain", nodes, arcs)


def test_criterion_5_lattice_calculus(shared, capsys):
    results = shared.exact()
    lattices = [r.lattice for _, r in results[:50]]

    cuts = 0
    cut_worst = 0.0
    for lat in lattices:
        post = forward_backward(lat)
        for total in cut_posterior_sums(lat, post.arc_posterior):
            cuts += 1
            cut_worst = max(cut_worst, abs(total - 1.0))

    rescore_checked = 0
    rescore_bad = 0
    for inst, (_, exact_rnn) in zip(shared.instances[:50], results[:50]):
        lat = exact_rnn.lattice
        try:
            list(lat.paths(limit=10**4))
        except ValueError:
            continue
        make = scorer_factories(inst)
        got = push_forward_rescore(lat, make["interp"](), k=10**9)
        want_score, want_words = rescore_by_enumeration(lat, make["interp"]())
        rescore_checked += 1
        if got.words != want_words or abs(got.score - want_score) > 1e-9:
            rescore_bad += 1

    slots = 0
    slot_worst = 0.0
    single_path_ok = True
    for lat in lattices:
        cn = confusion_network(lat, forward_backward(lat))
        for slot in cn.slots:
            slots += 1
            slot_worst = max(slot_worst, abs(math.fsum(slot.probs.values()) - 1.0))
        try:
            only = list(lat.paths(limit=1))
        except ValueError:
            continue
        if cn_decode(cn) != lat.path_words(only[0]):
            single_path_ok = False
    chain = _single_path_lattice()
    chain_cn = cn_decode(confusion_network(chain, forward_backward(chain)))
    single_path_ok = single_path_ok and chain_cn == ("hello", "world")

    ok = (cut_worst <= 1e-6 and rescore_bad == 0 and rescore_checked > 0
          and slot_worst <= 1e-6 and single_path_ok)
    announce(capsys, 5, ok,
             f"{len(lattices)} decoded lattices: {cuts} frame cuts sum to 1 "
             f"within {cut_worst:.2e} (tol 1e-6); push-forward (k unlimited) "
             f"equals path enumeration on {rescore_checked} lattices "
             f"({rescore_bad} mismatches, |score delta| <= 1e-9); {slots} "
             f"confusion slots sum to 1 within {slot_worst:.2e} (tol 1e-6); "
             f"single-path lattices reproduce their path through the CN: "
             f"{single_path_ok}")
    assert cut_worst <= 1e-6
    assert rescore_bad == 0
    assert rescore_checked > 0
    assert slot_worst <= 1e-6
    assert single_path_ok


def test_criterion_6_batching(shared, capsys):
    model = BatchCostModel()
    ratio = model.per_history_ms(32) / model.per_history_ms(1)

    duplicate_failures = 0
    for inst in shared.instances[:30]:
        scorer = inst.fresh_recurrent()
        decode(inst.emissions, PrefixTree(inst.lexicon), scorer, inst.topology, EXACT)
        # Every batched forward lands in the trace exactly once; the scorer
        # itself raises if a (history, step) pair is ever forwarded twice.
        if sum(record.size for record in scorer.trace) != len(scorer._forwarded):
            duplicate_failures += 1

    rng = make_rng(777)
    trials = 200
    demanded_misses = 0
    overflow_mistakes = 0
    for _ in range(trials):
        capacity = int(rng.integers(1, 12))
        pending = [
            LmRequest(history=SimpleNamespace(hid=int(rng.integers(0, 10))),
                      demanded=bool(rng.random() < 0.4),
                      dist_to_word_end=int(rng.integers(0, 5)),
                      score_gap=float(rng.uniform(0.0, 3.0)))
            for _ in range(int(rng.integers(0, 20)))
        ]
        demanded_hids = {r.history.hid for r in pending if r.demanded}
        try:
            batch = schedule(pending, capacity)
        except BatchOverflow:
            if len(demanded_hids) <= capacity:
                overflow_mistakes += 1
            continue
        if len(demanded_hids) > capacity:
            overflow_mistakes += 1
        if not demanded_hids <= {r.history.hid for r in batch}:
            demanded_misses += 1

    ok = (ratio <= 0.25 and duplicate_failures == 0
          and demanded_misses == 0 and overflow_mistakes == 0)
    announce(capsys, 6, ok,
             f"per-history cost at batch 32 is {ratio:.3f} of batch-1 cost "
             f"(<= 0.25); no duplicate (history, step) evaluation in 30 decode "
             f"traces ({duplicate_failures} failures); demanded requests "
             f"appear in the next batch in {trials} random schedules "
             f"({demanded_misses} misses, {overflow_mistakes} overflow mistakes)")
    assert ratio <= 0.25
    assert duplicate_failures == 0
    assert demanded_misses == 0
    assert overflow_mistakes == 0


def test_criterion_7_language_models(shared, capsys):
    models = [parse_arpa(TOY_ARPA),
              uniform_bigram_arpa(["u", "v"]),
              uniform_bigram_arpa(["u", "v", "w", "x", "y"]),
              context_corpus(repeats=1).backoff]
    models += [random_bigram_arpa(make_rng(100 + i), ["a", "b", "c"][:2 + i % 2])
               for i in range(10)]
    models += [inst.backoff for inst in shared.instances]
    norm_worst = 0.0
    norm_failures = 0
    for lm in models:
        try:
            norm_worst = max(norm_worst, lm.check_normalization(tol=1e-6))
        except ValueError:
            norm_failures += 1

    elman = RecurrentLm(hand_elman_weights())
    h1 = elman.initial()
    h2 = rnn_step(elman, h1, "a")
    rnn_worst = max(
        float(np.max(np.abs(h1.state[0] - HAND_ELMAN_H1))),
        float(np.max(np.abs(h1.logdist - HAND_ELMAN_D1))),
        float(np.max(np.abs(h2.state[0] - HAND_ELMAN_H2))),
        float(np.max(np.abs(h2.logdist - HAND_ELMAN_D2))),
    )

    uniform = uniform_bigram_arpa(["u", "v", "w"])
    ppl = perplexity(uniform, [["u", "v"], ["w"], ["v", "v", "u"]])

    rng = make_rng(2024)
    argmax_flips = 0
    for _ in range(100):
        k = int(rng.integers(3, 9))
        log_b = np.log(rng.dirichlet(np.ones(k)))
        log_r = np.log(rng.dirichlet(np.ones(k)))
        cfg = InterpolationConfig(lambda_backoff=float(rng.uniform(0.1, 2.0)),
                                  lambda_recurrent=float(rng.uniform(0.1, 2.0)))
        combined = np.array([interp_score(cfg, b, r)
                             for b, r in zip(log_b, log_r)])
        renormalized = combined - float(np.logaddexp.reduce(combined))
        if int(np.argmax(combined)) != int(np.argmax(renormalized)):
            argmax_flips += 1

    ok = (norm_failures == 0 and rnn_worst <= 1e-9 and ppl == 4.0
          and argmax_flips == 0)
    announce(capsys, 7, ok,
             f"{len(models)} backoff models normalized per context within 1e-6 "
             f"(worst {norm_worst:.2e}, {norm_failures} failures); recurrent "
             f"step matches the hand-computed 2-unit fixture within "
             f"{rnn_worst:.2e} (tol 1e-9); uniform 4-way perplexity = {ppl!r} "
             f"(exactly 4.0); interpolation argmax unchanged by "
             f"renormalization in 100 random trials ({argmax_flips} flips)")
    assert norm_failures == 0
    assert rnn_worst <= 1e-9
    assert ppl == 4.0
    assert argmax_flips == 0


def test_criterion_8_metrics(capsys):
    rng = make_rng(88)
    alphabet = ["a", "b", "c", "d", "e"]
    pairs = 1000
    cost_mismatches = 0
    arithmetic_failures = 0
    for _ in range(pairs):
        ref = [alphabet[int(i)] for i in rng.integers(0, 5, size=int(rng.integers(1, 9)))]
        hyp = [alphabet[int(i)] for i in rng.integers(0, 5, size=int(rng.integers(0, 9)))]
        counts = word_error_counts(ref, hyp)
        want_cost, _, _, _ = quadratic_edit_counts(ref, hyp)
        if counts.errors != want_cost or counts.wer != want_cost / len(ref):
            cost_mismatches += 1
        matched_ref = len(ref) - counts.substitutions - counts.deletions
        matched_hyp = len(hyp) - counts.substitutions - counts.insertions
        if matched_ref != matched_hyp or matched_ref < 0:
            arithmetic_failures += 1

    manifest = CorpusManifest([
        ManifestEntry("u0", "u0.fem", 0.5, ("hi",)),
        ManifestEntry("u1", "u1.fem", 1.25, ("there", "again")),
    ])
    again = parse_manifest(manifest_to_text(manifest))
    audio = again.total_duration_s
    report = RtfReport(audio_seconds=audio, compute_seconds=3.5,
                       simulated_seconds=0.4375)
    summed = (RtfReport(1.75, 3.5, 0.4375) + RtfReport(2.25, 4.5, 0.5625))
    rtf_exact = (audio == 1.75 and report.rtf == 2.0
                 and report.simulated_rtf == 0.25
                 and summed.rtf == 2.0 and summed.simulated_rtf == 0.25)

    ok = cost_mismatches == 0 and arithmetic_failures == 0 and rtf_exact
    announce(capsys, 8, ok,
             f"WER matches an independent quadratic-DP reference on {pairs} "
             f"random pairs ({cost_mismatches} mismatches, exact integer "
             f"costs); alignment arithmetic consistent ({arithmetic_failures} "
             f"failures); RTF arithmetic exact on manifest fixtures: {rtf_exact}")
    assert cost_mismatches == 0
    assert arithmetic_failures == 0
    assert rtf_exact
