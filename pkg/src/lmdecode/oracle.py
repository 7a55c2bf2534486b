"""Brute-force reference decoding by exhaustive enumeration.

Scores every word sequence up to a length bound by aligning its
concatenated pronunciation chain to the emission matrix with a dynamic
program (min for Viterbi, probability sum for forward mode), then adding
pronunciation and LM mass.  The scoring convention matches the search:

    total = scale_am * sum(-log emission) + time-distortion penalties
            + sum(-ln variant_prob) + scale_lm * (-log p(words, end))

Feasible only for toy problems; the enumeration budget guards against
accidental blowups.  A second, even slower helper enumerates every
alignment path explicitly to validate the dynamic program itself.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .formats import EmissionMatrix, Lexicon
from .lm import SENTENCE_END
from .search_net import HmmTopology

INF = math.inf


def _neg_log_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # -ln(exp(-a) + exp(-b)) elementwise, inf-safe.
    return -np.logaddexp(-a, -b)


@dataclass
class OracleEntry:
    words: tuple[str, ...]
    viterbi: float = INF
    forward: float = INF


@dataclass
class OracleResult:
    entries: dict = field(default_factory=dict)
    best_words: tuple[str, ...] | None = None
    best_score: float = INF
    forward_total: float = INF

    def score_of(self, words) -> float:
        entry = self.entries.get(tuple(words))
        return entry.viterbi if entry else INF


def align_chain(emissions: EmissionMatrix, chain: np.ndarray,
                word_of: np.ndarray, topology: HmmTopology,
                scale_am: float = 1.0, mode: str = "viterbi") -> float:
    """Best (or summed) alignment score of one state chain.

    The path starts on position 0 at frame 0 with no entry penalty, ends on
    the last position at the last frame, advances by 0, 1 or 2 positions
    per frame, and may only skip a position inside a word.  Returned mass
    is ``scale_am`` times the emission neg-logs plus the raw penalties.
    """
    T = emissions.frames
    P = len(chain)
    if P == 0 or T < 1:
        return INF
    reach = 2 if topology.skip_allowed else 1
    if P - 1 > reach * (T - 1):
        return INF
    combine = np.minimum if mode == "viterbi" else _neg_log_add
    neg = -emissions.scores

    skip_ok = None
    if topology.skip_allowed and P > 2:
        skip_ok = word_of[2:] == word_of[:-2]

    cur = np.full(P, INF)
    cur[0] = scale_am * neg[0, chain[0]]
    for t in range(1, T):
        nxt = cur + topology.loop_penalty
        nxt[1:] = combine(nxt[1:], cur[:-1] + topology.forward_penalty)
        if skip_ok is not None:
            stepped = np.where(skip_ok, cur[:-2] + topology.skip_penalty, INF)
            nxt[2:] = combine(nxt[2:], stepped)
        cur = nxt + scale_am * neg[t, chain]
    return float(cur[-1])


def enumerate_alignment_scores(emissions: EmissionMatrix, chain,
                               word_of, topology: HmmTopology,
                               scale_am: float = 1.0):
    """(viterbi, forward) alignment mass by explicit path enumeration.

    Walks every per-frame advance sequence, so it costs up to 3**(T-1)
    paths; meant as an independent check of :func:`align_chain` on tiny
    inputs.
    """
    T = emissions.frames
    P = len(chain)
    deltas = (0, 1, 2) if topology.skip_allowed else (0, 1)
    penalty = {0: topology.loop_penalty, 1: topology.forward_penalty,
               2: topology.skip_penalty}
    neg = -emissions.scores
    scores = []
    for steps in itertools.product(deltas, repeat=T - 1):
        p = 0
        score = scale_am * neg[0, chain[0]]
        ok = True
        for t, d in enumerate(steps, start=1):
            q = p + d
            if q >= P or (d == 2 and word_of[q] != word_of[q - 2]):
                ok = False
                break
            score += penalty[d] + scale_am * neg[t, chain[q]]
            p = q
        if ok and p == P - 1:
            scores.append(score)
    if not scores:
        return INF, INF
    m = min(scores)
    forward = m - math.log(sum(math.exp(m - s) for s in scores))
    return m, forward


def _word_sequences(lexicon: Lexicon, scorer, max_words: int):
    """DFS over word sequences sharing LM prefix work; yields
    (words, history, accumulated natural-log LM mass)."""

    def walk(seq, h, acc):
        if seq:
            yield seq, h, acc
        if len(seq) == max_words:
            return
        for w in lexicon.words:
            lp = scorer.logprob(h, w)
            yield from walk(seq + (w,), scorer.extend(h, w), acc + lp)

    yield from walk((), scorer.initial(), 0.0)


def brute_force_oracle(emissions: EmissionMatrix, lexicon: Lexicon, scorer,
                       topology: HmmTopology, scale_am: float = 1.0,
                       scale_lm: float = 1.0, max_words: int | None = None,
                       mode: str = "viterbi",
                       budget: int = 1_000_000) -> OracleResult:
    """Score every word sequence that can tile the utterance.

    ``mode`` picks which alignment treatment fills the entries: "viterbi",
    "forward", or "both".  ``best_words``/``best_score`` always refer to
    the Viterbi criterion (if computed); ``forward_total`` sums sequence
    probabilities (if computed).  Sequences with no legal alignment keep
    infinite scores and never win.
    """
    if mode not in ("viterbi", "forward", "both"):
        raise ValueError(f"unknown oracle mode {mode!r}")
    do_vit = mode in ("viterbi", "both")
    do_fwd = mode in ("forward", "both")

    T = emissions.frames
    if max_words is None:
        max_words = T // lexicon.min_frames(topology.skip_allowed)
    nv = len(lexicon.words)
    count = sum(nv ** k for k in range(1, max_words + 1))
    if count > budget:
        raise ValueError(
            f"oracle would enumerate {count} sequences (budget {budget}); "
            f"shrink the vocabulary, the utterance, or max_words")

    min_need = {
        w: min(1 + len(v.states) // 2 if topology.skip_allowed else len(v.states)
               for v in lexicon.variants[w])
        for w in lexicon.words
    }

    result = OracleResult()
    seq_forwards = []
    for seq, history, lm_acc in _word_sequences(lexicon, scorer, max_words):
        if sum(min_need[w] for w in seq) > T:
            continue
        lm_cost = scale_lm * -(lm_acc + scorer.sentence_end(history))
        vit = INF
        fwd_parts = []
        for combo in itertools.product(*(lexicon.variants[w] for w in seq)):
            chain = np.array([s for v in combo for s in v.states])
            word_of = np.array([i for i, v in enumerate(combo)
                                for _ in v.states])
            vp = -sum(math.log(v.prob) for v in combo)
            if do_vit:
                a = align_chain(emissions, chain, word_of, topology,
                                scale_am, "viterbi")
                vit = min(vit, a + vp)
            if do_fwd:
                a = align_chain(emissions, chain, word_of, topology,
                                scale_am, "forward")
                if not math.isinf(a):
                    fwd_parts.append(a + vp)
        entry = OracleEntry(words=seq)
        if do_vit and not math.isinf(vit):
            entry.viterbi = vit + lm_cost
        if do_fwd and fwd_parts:
            m = min(fwd_parts)
            entry.forward = (m - math.log(sum(math.exp(m - s) for s in fwd_parts))
                             + lm_cost)
            seq_forwards.append(entry.forward)
        if math.isinf(entry.viterbi) and math.isinf(entry.forward):
            continue
        result.entries[seq] = entry
        if entry.viterbi < result.best_score:
            result.best_score = entry.viterbi
            result.best_words = seq
    if seq_forwards:
        m = min(seq_forwards)
        result.forward_total = m - math.log(
            sum(math.exp(m - s) for s in seq_forwards))
    return result
