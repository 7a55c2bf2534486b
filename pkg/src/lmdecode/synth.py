"""Synthetic test data: random lexicons, planted emissions, exactly
normalized random bigram models, random recurrent weights, and the
hand-designed context corpus used for the recombination sweep.

Everything is driven by a numpy Generator so instances are reproducible
from a seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .formats import EmissionMatrix, Lexicon, LexiconVariant
from .lm import (SENTENCE_BEGIN, SENTENCE_END, BackoffLm, RecurrentLm,
                 RnnWeights)
from .search_net import HmmTopology


def make_rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# Lexicons and emissions
# ---------------------------------------------------------------------------


def random_lexicon(rng, n_words: int, n_states: int, min_len: int = 2,
                   max_len: int = 4, variant_fraction: float = 0.0) -> Lexicon:
    """Random pronunciation lexicon over ``n_states`` emission states.

    Words are named w0, w1, ...; a ``variant_fraction`` share of them get a
    second pronunciation with probability split 0.6/0.4.
    """
    words = [f"w{i}" for i in range(n_words)]
    variants = {}
    for w in words:
        length = int(rng.integers(min_len, max_len + 1))
        states = tuple(int(s) for s in rng.integers(0, n_states, size=length))
        if rng.random() < variant_fraction:
            alt_len = int(rng.integers(min_len, max_len + 1))
            alt = tuple(int(s) for s in rng.integers(0, n_states, size=alt_len))
            variants[w] = [LexiconVariant(0.6, states), LexiconVariant(0.4, alt)]
        else:
            variants[w] = [LexiconVariant(1.0, states)]
    return Lexicon(words=words, variants=variants)


def planted_emissions(rng, lexicon: Lexicon, reference, slack: int = 1,
                      peak: float = -0.05, off: float = -4.0,
                      jitter: float = 0.02, frame_shift_s: float = 0.01,
                      utterance_id: str = "") -> EmissionMatrix:
    """Emission matrix that makes ``reference`` the acoustically easy
    answer: within each word's segment all states of its first
    pronunciation score near ``peak``, everything else near ``off``.

    A little random jitter on every cell keeps hypothesis scores distinct,
    so best paths are unique and tie-breaking never decides a test.
    Segment lengths are the pronunciation length plus up to ``slack``
    extra frames.
    """
    n_states = lexicon.max_state() + 1
    segments = []
    t = 0
    for w in reference:
        chain = lexicon.variants[w][0].states
        length = len(chain) + int(rng.integers(0, slack + 1))
        segments.append((w, t, t + length))
        t += length
    T = t
    scores = off - rng.uniform(0.0, 0.5, size=(T, n_states))
    for w, s, e in segments:
        for v in lexicon.variants[w]:
            for st in v.states:
                scores[s:e, st] = peak - rng.uniform(0.0, jitter, size=e - s)
    return EmissionMatrix(scores=scores, frame_shift_s=frame_shift_s,
                          utterance_id=utterance_id)


# ---------------------------------------------------------------------------
# Language models
# ---------------------------------------------------------------------------


def random_bigram_arpa(rng, words) -> BackoffLm:
    """Random bigram backoff model that is exactly normalized.

    Unigrams are a Dirichlet draw over the predictable tokens (words plus
    sentence-end); the sentence-begin token gets a vanishing probability.
    Every context stores explicit bigrams for a proper subset of the
    predictable tokens with total mass q, and its backoff weight is
    computed as (1-q) / (unigram mass of the remaining tokens), which
    makes every context distribution sum to one by construction.
    """
    words = list(words)
    predictable = words + [SENTENCE_END]
    vocab = [SENTENCE_BEGIN, SENTENCE_END] + words
    uni = rng.dirichlet(np.ones(len(predictable)) * 2.0)
    uni = {w: float(p) for w, p in zip(predictable, uni)}

    entries = {}
    contexts = [SENTENCE_BEGIN] + words
    for c in contexts:
        k = int(rng.integers(1, len(predictable)))  # proper subset
        chosen = list(rng.choice(len(predictable), size=k, replace=False))
        chosen = [predictable[i] for i in sorted(chosen)]
        q = float(rng.uniform(0.3, 0.7))
        parts = rng.dirichlet(np.ones(k) * 2.0)
        rest = sum(uni[w] for w in predictable if w not in chosen)
        bo = (1.0 - q) / rest
        entries[(c,)] = (math.log10(1e-99) if c == SENTENCE_BEGIN
                         else math.log10(uni[c]), math.log10(bo))
        for w, p in zip(chosen, parts):
            entries[(c, w)] = (math.log10(q * float(p)), None)
    entries[(SENTENCE_END,)] = (math.log10(uni[SENTENCE_END]), None)
    return BackoffLm(order=2, entries=entries, vocab=vocab)


def _log10_exact(p: float) -> float:
    """log10 of ``p`` picked so that converting back to natural log lands on
    ``math.log(p)`` exactly when a representation within two ulps allows it.
    Stored models hold log10 values, so without this nudge a uniform model
    misses clean probabilities like 1/4 by one ulp."""
    target = math.log(p)
    u = math.log10(p)
    ln10 = math.log(10.0)
    for k in range(-2, 3):
        cand = u
        for _ in range(abs(k)):
            cand = math.nextafter(cand, math.copysign(math.inf, k))
        if cand * ln10 == target:
            return cand
    return u


def uniform_bigram_arpa(words) -> BackoffLm:
    """Uniform unigram-only model in bigram clothing (flat lookahead)."""
    predictable = list(words) + [SENTENCE_END]
    vocab = [SENTENCE_BEGIN, SENTENCE_END] + list(words)
    p = _log10_exact(1.0 / len(predictable))
    entries = {(SENTENCE_BEGIN,): (math.log10(1e-99), 0.0)}
    for w in predictable:
        entries[(w,)] = (p, 0.0)
    return BackoffLm(order=2, entries=entries, vocab=vocab)


def random_rnn(rng, words, cell_type: str = "elman", hidden: int = 2,
               embed: int = 2, scale: float = 0.6) -> RnnWeights:
    """Random small recurrent LM over the closed vocabulary."""
    vocab = [SENTENCE_BEGIN, SENTENCE_END] + list(words)
    v = len(vocab)
    rows = hidden if cell_type == "elman" else 4 * hidden
    return RnnWeights(
        cell_type=cell_type,
        embedding=rng.normal(0.0, scale, size=(v, embed)),
        layers=[(rng.normal(0.0, scale, size=(rows, embed)),
                 rng.normal(0.0, scale, size=(rows, hidden)),
                 rng.normal(0.0, scale, size=rows))],
        out_w=rng.normal(0.0, scale, size=(v, hidden)),
        out_b=rng.normal(0.0, scale, size=v),
        vocab=vocab,
    )


# ---------------------------------------------------------------------------
# Whole instances
# ---------------------------------------------------------------------------


@dataclass
class SynthInstance:
    """One self-contained decoding problem with its planted answer."""

    lexicon: Lexicon
    emissions: EmissionMatrix
    reference: tuple[str, ...]
    backoff: BackoffLm
    rnn: RnnWeights
    topology: HmmTopology
    max_words: int

    def fresh_recurrent(self, batch_capacity: int = 32) -> RecurrentLm:
        return RecurrentLm(self.rnn, batch_capacity=batch_capacity)


def random_instance(rng, n_vocab=(2, 4), n_ref_words=(1, 3), n_states=(4, 8),
                    pron_len=(2, 4), variant_fraction: float = 0.25,
                    skip_fraction: float = 0.3, word_budget: int = 4,
                    cell_types=("elman", "lstm")) -> SynthInstance:
    """Random decoding instance small enough for exhaustive reference
    scoring: regenerates until at most ``word_budget`` words fit into the
    utterance."""
    for _ in range(200):
        nv = int(rng.integers(n_vocab[0], n_vocab[1] + 1))
        skip = bool(rng.random() < skip_fraction)
        topology = HmmTopology(skip_penalty=math.log(4.0),
                               skip_allowed=True) if skip else HmmTopology()
        lexicon = random_lexicon(rng, nv, int(rng.integers(*n_states)),
                                 min_len=pron_len[0], max_len=pron_len[1],
                                 variant_fraction=variant_fraction)
        k = int(rng.integers(n_ref_words[0], n_ref_words[1] + 1))
        reference = tuple(lexicon.words[int(i)]
                          for i in rng.integers(0, nv, size=k))
        emissions = planted_emissions(rng, lexicon, reference,
                                      utterance_id="synth")
        if emissions.frames // lexicon.min_frames(skip) <= word_budget:
            cell = cell_types[int(rng.integers(0, len(cell_types)))]
            return SynthInstance(
                lexicon=lexicon, emissions=emissions, reference=reference,
                backoff=random_bigram_arpa(rng, lexicon.words),
                rnn=random_rnn(rng, lexicon.words, cell_type=cell),
                topology=topology,
                max_words=word_budget)
    raise RuntimeError("could not draw an instance within the word budget")


# ---------------------------------------------------------------------------
# Context corpus for the recombination sweep
# ---------------------------------------------------------------------------


@dataclass
class CorpusBundle:
    """In-memory corpus: shared models plus per-utterance emissions."""

    lexicon: Lexicon
    rnn: RnnWeights
    backoff: BackoffLm
    topology: HmmTopology
    utterances: list = field(default_factory=list)  # (id, EmissionMatrix, ref)

    @property
    def audio_seconds(self) -> float:
        return sum(e.frames * e.frame_shift_s for _, e, _ in self.utterances)


CONTEXT_GAPS = (0, 1, 2, 4, 8)


def context_corpus(repeats: int = 4) -> CorpusBundle:
    """Corpus where only long LM memory recovers the first word.

    Each utterance is opener + g fillers + ender.  Acoustically the wrong
    opener always scores a little better; the recurrent LM remembers which
    opener it saw (positive or negative hidden state, decaying but
    sign-stable) and strongly prefers the matching ender, which the
    acoustics pin down.  The opener hypotheses merge at some filler word
    end once the recombination limit n is at most the filler gap g, and the
    acoustically better wrong opener wins the merge, so the opener is
    misrecognized exactly when n <= g.  With gaps {0, 1, 2, 4, 8} the
    corpus WER shrinks stepwise as n grows.

    The fillers alternate between two words with disjoint states; a single
    filler stretched over two segments would sit on silent states, so the
    filler count cannot collapse.
    """
    words = ["a", "b", "x", "y", "c", "d"]
    variants = {
        "a": [LexiconVariant(1.0, (0, 1))],
        "b": [LexiconVariant(1.0, (2, 3))],
        "x": [LexiconVariant(1.0, (4, 5))],
        "y": [LexiconVariant(1.0, (6, 7))],
        "c": [LexiconVariant(1.0, (8, 9))],
        "d": [LexiconVariant(1.0, (10, 11))],
    }
    lexicon = Lexicon(words=words, variants=variants)
    vocab = [SENTENCE_BEGIN, SENTENCE_END] + words
    v = len(vocab)
    embedding = np.zeros((v, 2))
    embedding[vocab.index("a")] = (1.0, 0.0)
    embedding[vocab.index("b")] = (-1.0, 0.0)
    out_w = np.zeros((v, 2))
    out_w[vocab.index("c")] = (6.0, 0.0)
    out_w[vocab.index("d")] = (-6.0, 0.0)
    rnn = RnnWeights(cell_type="elman", embedding=embedding,
                     layers=[(np.eye(2), np.diag((0.8, 0.8)), np.zeros(2))],
                     out_w=out_w, out_b=np.zeros(v), vocab=vocab)

    bundle = CorpusBundle(lexicon=lexicon, rnn=rnn,
                          backoff=uniform_bigram_arpa(words),
                          topology=HmmTopology())
    frames_per_word = 3
    n_states = 2 * len(words)
    for g in CONTEXT_GAPS:
        for i in range(repeats):
            opener, ender = ("a", "c") if i % 2 == 0 else ("b", "d")
            competitor = "b" if opener == "a" else "a"
            fillers = tuple("x" if j % 2 == 0 else "y" for j in range(g))
            ref = (opener,) + fillers + (ender,)
            T = frames_per_word * len(ref)
            scores = np.full((T, n_states), -4.0)
            for j, w in enumerate(ref):
                s, e = j * frames_per_word, (j + 1) * frames_per_word
                level = -0.15 if j == 0 else -0.05
                for st in lexicon.variants[w][0].states:
                    scores[s:e, st] = level
                if j == 0:
                    for st in lexicon.variants[competitor][0].states:
                        scores[s:e, st] = -0.05
            uid = f"ctx-g{g}-{i}"
            bundle.utterances.append(
                (uid, EmissionMatrix(scores=scores, utterance_id=uid), ref))
    return bundle
