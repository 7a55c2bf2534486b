"""Shared test fixtures and independent reference implementations.

Everything here is deliberately written against the public behavior, not
the package internals, so the tests keep their value as oracles.
"""
from __future__ import annotations

import collections
import math

import numpy as np

from lmdecode import (
    BackoffLm,
    InterpolatedLm,
    InterpolationConfig,
    RecurrentLm,
    RnnWeights,
)

# ---------------------------------------------------------------------------
# A bigram model small enough to verify by hand.  Every
# context is exactly normalized by construction:
#   unigrams   p(a)=0.4  p(b)=0.35  p(</s>)=0.25
#   <s>        p(a)=0.6, p(b)=0.3 explicit; backoff mass 0.1 over {</s>},
#              so bo(<s>) = 0.1/0.25 = 0.4
#   a          p(b)=0.5 explicit; backoff mass 0.5 over {a, </s>},
#              so bo(a) = 0.5/0.65 = 10/13
#   b          nothing explicit, backoff weight defaults to one
# The log10 literals are rounded to 12 decimals, which keeps every derived
# natural-log score within 1e-9 of the exact value.
# ---------------------------------------------------------------------------

TOY_ARPA = """\
\\data\\
ngram 1=4
ngram 2=3

\\1-grams:
-99 <s> -0.397940008672
-0.397940008672 a -0.113943352307
-0.455931955650 b
-0.602059991328 </s>

\\2-grams:
-0.221848749616 <s> a
-0.522878745280 <s> b
-0.301029995664 a b

\\end\\
"""

# Expected natural-log scores of the toy model, exact closed forms.
TOY_SCORES = {
    (("<s>",), "a"): math.log(0.6),
    (("<s>",), "b"): math.log(0.3),
    (("<s>",), "</s>"): math.log(0.1),          # 0.4 * 0.25 via backoff
    (("a",), "b"): math.log(0.5),
    (("a",), "a"): math.log(4.0 / 13.0),        # (10/13) * 0.4
    (("a",), "</s>"): math.log(5.0 / 26.0),     # (10/13) * 0.25
    (("b",), "a"): math.log(0.4),               # implicit backoff weight 1
    (("b",), "b"): math.log(0.35),
    (("b",), "</s>"): math.log(0.25),
}


# ---------------------------------------------------------------------------
# Hand-checked two-unit Elman network.  The frozen vectors below were
# computed from these exact weights with mpmath at 40 decimal digits and
# rounded to 17 significant digits; to recompute, run
#
#   h1 = tanh(W_in @ x(<s>) + b)                    from the zero state
#   d1 = log_softmax(out_w @ h1 + out_b)
#   h2 = tanh(W_in @ x(a) + W_rec @ h1 + b)
#   d2 = log_softmax(out_w @ h2 + out_b)
#
# with x(w) the embedding row of w and natural-log softmax.
# ---------------------------------------------------------------------------

HAND_ELMAN_VOCAB = ["<s>", "</s>", "<unk>", "a", "b"]

HAND_ELMAN_H1 = np.array([0.089757784747160108, -0.079829769111131362])
HAND_ELMAN_D1 = np.array([
    -1.6629921901626940, -1.6818200132696134, -1.7309437471121260,
    -1.4881669932718671, -1.5073746817544726,
])
HAND_ELMAN_H2 = np.array([0.29034625909278499, 0.14118410514008316])
HAND_ELMAN_D2 = np.array([
    -1.6160828434729351, -1.6689007414773026, -1.7241520952914921,
    -1.5136894288291495, -1.5396794548076841,
])


def hand_elman_weights() -> RnnWeights:
    return RnnWeights(
        cell_type="elman",
        embedding=np.array([[0.1, -0.2], [0.0, 0.0], [0.0, 0.0],
                            [0.5, 0.3], [-0.4, 0.25]]),
        layers=[(np.array([[0.6, -0.1], [0.2, 0.4]]),
                 np.array([[0.3, 0.1], [-0.2, 0.5]]),
                 np.array([0.01, -0.02]))],
        out_w=np.array([[0.2, 0.1], [-0.3, 0.4], [0.0, 0.1],
                        [0.5, -0.5], [-0.25, 0.15]]),
        out_b=np.array([0.0, 0.05, -0.05, 0.1, 0.2]),
        vocab=HAND_ELMAN_VOCAB,
    )


# ---------------------------------------------------------------------------
# Scorer factories.  Decoder runs mutate scorer-side history tables, so a
# comparison between two runs always uses two fresh scorers built from the
# same weight tables.
# ---------------------------------------------------------------------------


def scorer_factories(inst):
    """name -> zero-state scorer factory for one synthetic instance."""
    def backoff():
        return BackoffLm(inst.backoff.order, inst.backoff.entries,
                         inst.backoff.vocab)

    def interp():
        return InterpolatedLm(backoff(), inst.fresh_recurrent(),
                              InterpolationConfig())

    return {"backoff": backoff, "rnn": inst.fresh_recurrent, "interp": interp}


# ---------------------------------------------------------------------------
# Independent references
# ---------------------------------------------------------------------------


def quadratic_edit_counts(reference, hypothesis):
    """Plain dict-of-dicts Levenshtein with operation counts.

    Kept intentionally naive (no numpy, no shared code with the package) so
    it can serve as an oracle for the metrics module.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    # cost, then (sub, del, ins) for tie-breaking stability
    dp = {}
    dp[(0, 0)] = (0, 0, 0, 0)
    for i in range(1, len(ref) + 1):
        c = dp[(i - 1, 0)]
        dp[(i, 0)] = (c[0] + 1, c[1], c[2] + 1, c[3])
    for j in range(1, len(hyp) + 1):
        c = dp[(0, j - 1)]
        dp[(0, j)] = (c[0] + 1, c[1], c[2], c[3] + 1)
    for i in range(1, len(ref) + 1):
        for j in range(1, len(hyp) + 1):
            diag = dp[(i - 1, j - 1)]
            hit = 0 if ref[i - 1] == hyp[j - 1] else 1
            cands = [
                (diag[0] + hit, diag[1] + hit, diag[2], diag[3]),
                (dp[(i - 1, j)][0] + 1, dp[(i - 1, j)][1],
                 dp[(i - 1, j)][2] + 1, dp[(i - 1, j)][3]),
                (dp[(i, j - 1)][0] + 1, dp[(i, j - 1)][1],
                 dp[(i, j - 1)][2], dp[(i, j - 1)][3] + 1),
            ]
            dp[(i, j)] = min(cands)
    return dp[(len(ref), len(hyp))]


def enumerate_paths(lattice):
    """(words, arc list) per initial-to-final path, plain DFS."""
    out = collections.defaultdict(list)
    for i, a in enumerate(lattice.arcs):
        out[a.start].append(i)
    finals = set(lattice.final_nodes())
    init = lattice.initial_node()
    results = []

    def walk(node, arcs):
        if node in finals:
            results.append((tuple(lattice.arcs[i].word for i in arcs),
                            list(arcs)))
            if not out[node]:
                return
        for ai in out[node]:
            walk(lattice.arcs[ai].end, arcs + [ai])

    walk(init, [])
    return results


def best_path_by_enumeration(lattice, scale_am=1.0, scale_lm=1.0):
    """Best (score, words) over all paths using stored arc scores only."""
    best = None
    for words, arcs in enumerate_paths(lattice):
        s = sum(scale_am * -lattice.arcs[i].am + scale_lm * -lattice.arcs[i].lm
                for i in arcs)
        if best is None or s < best[0]:
            best = (s, words)
    return best


def rescore_by_enumeration(lattice, scorer, scale_am=1.0, scale_lm=1.0):
    """Exhaustive lattice rescoring: best (score, words) after rescoring
    every path with a fresh LM walk, sentence end included."""
    best = None
    for words, arcs in enumerate_paths(lattice):
        h = scorer.initial()
        lm = 0.0
        for w in words:
            lm += scorer.logprob(h, w)
            h = scorer.extend(h, w)
        lm += scorer.sentence_end(h)
        s = (sum(scale_am * -lattice.arcs[i].am for i in arcs)
             + scale_lm * -lm)
        if best is None or (s, words) < (best[0], best[1]):
            best = (s, words)
    return best


def cut_posterior_sums(lattice, arc_posterior):
    """Total posterior crossing each inter-frame cut.

    Every initial-to-final path crosses the cut between frame f and f+1
    exactly once, so each sum must be one for a proper posterior.
    """
    last = max(n.frame for n in lattice.nodes)
    sums = []
    for f in range(last):
        total = 0.0
        for i, a in enumerate(lattice.arcs):
            if lattice.nodes[a.start].frame <= f < lattice.nodes[a.end].frame:
                total += arc_posterior[i]
        sums.append(total)
    return sums
