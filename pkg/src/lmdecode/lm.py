"""Language model scoring with opaque, shareable histories.

Three scorers live here and expose one duck-typed interface:

* :class:`BackoffLm` -- n-gram tables with backoff, loaded from ARPA text.
* :class:`RecurrentLm` -- Elman/LSTM recurrent LM evaluated with numpy,
  with lazy history extension so forwarding can be batched.
* :class:`InterpolatedLm` -- log-linear combination of the two.

The interface every scorer implements:

``initial()``                 history for a fresh sentence (sentence-begin consumed)
``extend(h, word)``           successor history with ``word`` appended
``logprob(h, word)``          natural-log p(word | h)
``logdist(h)``                natural-log distribution over ``vocab`` given h
``sentence_end(h)``           natural-log p(sentence-end | h)
``lookahead_model()``         the backoff component used for LM lookahead, or None

Histories are deduplicated per scorer by their word sequence, so two search
hypotheses that produced the same words share one history object (and, for
the recurrent model, one forward computation).
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

SENTENCE_BEGIN = "<s>"
SENTENCE_END = "</s>"
UNKNOWN_WORD = "<unk>"

LN10 = math.log(10.0)


@dataclass
class LmHistory:
    """One LM context: the words consumed so far plus scorer-specific state.

    Attributes
    ----------
    words : tuple[str, ...]
        Word sequence, most recent last, starting with the sentence-begin
        token.  This is the identity of the history.
    hid : int
        Dense id assigned by the owning scorer in creation order.  Used for
        deterministic tie-breaking, never for identity.
    state : object
        Scorer payload.  None for backoff histories; per-layer recurrent
        state for recurrent histories (or a pending marker before the
        history has been forwarded); a pair of component histories for the
        interpolated scorer.
    logdist : np.ndarray | None
        Cached natural-log distribution over the scorer vocabulary given
        this history, filled in when the history is forwarded.
    """

    words: tuple[str, ...]
    hid: int
    state: object = None
    logdist: np.ndarray | None = None


def recombination_key(history: LmHistory, n) -> tuple[str, ...]:
    """Last ``n`` words of the history (the whole sequence if ``n`` is inf
    or the sequence is shorter).  ``n`` must be at least 1."""
    if n != math.inf and (int(n) != n or n < 1):
        raise ValueError(f"recombination limit must be >= 1 or inf, got {n}")
    words = history.words
    if n == math.inf or n >= len(words):
        return words
    return words[-int(n):]


def _neg_log_sum(scores) -> float:
    """-ln sum_i exp(-s_i), shifted by the minimum for stability."""
    m = min(scores)
    if math.isinf(m):
        return m
    acc = 0.0
    for s in scores:
        acc += math.exp(m - s)
    return m - math.log(acc)


# ---------------------------------------------------------------------------
# Backoff n-gram model
# ---------------------------------------------------------------------------


class BackoffLm:
    """Backoff n-gram model over a closed vocabulary.

    Parameters
    ----------
    order : int
        Maximum n-gram order.
    entries : dict[tuple[str, ...], tuple[float, float | None]]
        Stored n-grams mapping gram -> (log10 probability, log10 backoff
        weight or None).  These are kept verbatim for serialization;
        scoring uses natural-log copies.
    vocab : list[str]
        Unigram vocabulary in file order.

    Notes
    -----
    Missing backoff weights count as 0.0 in log10 (weight one).  If a
    stored n-gram's prefix is absent it is inserted with probability equal
    to its own backoff estimate and backoff weight one, which keeps the
    scoring recursion total.
    """

    def __init__(self, order, entries, vocab):
        if order < 1:
            raise ValueError(f"n-gram order must be >= 1, got {order}")
        self.order = int(order)
        self.entries = dict(entries)
        self.vocab = list(vocab)
        self.vocab_index = {w: i for i, w in enumerate(self.vocab)}
        if len(self.vocab_index) != len(self.vocab):
            raise ValueError("duplicate words in vocabulary")

        self._logp: dict[tuple[str, ...], float] = {}
        self._backoff: dict[tuple[str, ...], float] = {}
        for gram, (p10, bo10) in self.entries.items():
            self._logp[gram] = p10 * LN10
            if bo10 is not None:
                self._backoff[gram] = bo10 * LN10
        self._close_prefixes()

        self._dist_cache: dict[tuple[str, ...], np.ndarray] = {}
        self._histories: dict[tuple[str, ...], LmHistory] = {}
        self._lock = threading.Lock()

    def _close_prefixes(self):
        # Insert missing prefixes order by order so that every stored gram
        # can be reached by the recursion through stored contexts.
        for k in range(2, self.order + 1):
            for gram in sorted(g for g in list(self._logp) if len(g) == k):
                prefix = gram[:-1]
                if prefix not in self._logp:
                    self._logp[prefix] = self._score_words(prefix[:-1], prefix[-1])

    # -- raw table scoring ---------------------------------------------

    def _score_words(self, context: tuple[str, ...], word: str) -> float:
        if self.order > 1:
            context = context[-(self.order - 1):]
        else:
            context = ()
        while True:
            gram = context + (word,)
            if gram in self._logp:
                return self._logp[gram]
            if not context:
                raise KeyError(word)
            # Backoff weight of a stored context defaults to log 1.
            bo = self._backoff.get(context, 0.0)
            return bo + self._score_words(context[1:], word)

    def _resolve(self, word: str) -> str:
        if word in self.vocab_index:
            return word
        if UNKNOWN_WORD not in self.vocab_index:
            raise ValueError(
                f"word {word!r} not in vocabulary and model has no {UNKNOWN_WORD}"
            )
        return UNKNOWN_WORD

    def score(self, context, word: str) -> float:
        """Natural-log p(word | context words) under the backoff recursion.

        Unknown words (in the context or the predicted position) map to the
        unknown token; if the model has none, scoring raises.
        """
        ctx = tuple(self._resolve(w) for w in context)
        return self._score_words(ctx, self._resolve(word))

    def context_of(self, words) -> tuple[str, ...]:
        """Truncate a word sequence to this model's context length."""
        words = tuple(words)
        if self.order == 1:
            return ()
        return words[-(self.order - 1):]

    def dist_over_vocab(self, context) -> np.ndarray:
        """Natural-log distribution over ``vocab`` for a context, cached per
        truncated context."""
        ctx = self.context_of(tuple(self._resolve(w) for w in context))
        with self._lock:
            hit = self._dist_cache.get(ctx)
        if hit is not None:
            return hit
        dist = np.array([self._score_words(ctx, w) for w in self.vocab])
        with self._lock:
            self._dist_cache[ctx] = dist
        return dist

    def stored_contexts(self) -> list[tuple[str, ...]]:
        """Every context the tables can condition on, the empty one included."""
        ctxs = {()} if self.order > 1 else set()
        if self.order == 1:
            ctxs = {()}
        for gram in self._logp:
            if len(gram) < self.order:
                ctxs.add(gram)
        return sorted(ctxs)

    def check_normalization(self, tol: float = 1e-6):
        """Verify sum_w p(w | context) = 1 within ``tol`` for every stored
        context.  Returns the worst |sum - 1| seen; raises on violation."""
        worst = 0.0
        for ctx in self.stored_contexts():
            total = float(np.exp(self.dist_over_vocab(ctx)).sum())
            err = abs(total - 1.0)
            worst = max(worst, err)
            if err > tol:
                raise ValueError(
                    f"context {ctx!r} sums to {total!r}, off by more than {tol}"
                )
        return worst

    # -- scorer interface -------------------------------------------------

    def _history(self, words: tuple[str, ...]) -> LmHistory:
        with self._lock:
            h = self._histories.get(words)
            if h is None:
                h = LmHistory(words=words, hid=len(self._histories))
                self._histories[words] = h
            return h

    def initial(self) -> LmHistory:
        return self._history((SENTENCE_BEGIN,))

    def extend(self, history: LmHistory, word: str) -> LmHistory:
        return self._history(history.words + (word,))

    def logprob(self, history: LmHistory, word: str) -> float:
        return self.score(history.words, word)

    def logdist(self, history: LmHistory) -> np.ndarray:
        return self.dist_over_vocab(history.words)

    def sentence_end(self, history: LmHistory) -> float:
        return self.score(history.words, SENTENCE_END)

    def lookahead_model(self):
        return self


# ---------------------------------------------------------------------------
# Recurrent model
# ---------------------------------------------------------------------------

CELL_TYPES = ("elman", "lstm")


@dataclass
class RnnWeights:
    """Weights of a recurrent LM.

    ``layers`` holds one (w_in, w_rec, bias) triple per layer.  For elman
    cells w_in is (hidden, input) and the update is
    ``h' = tanh(w_in x + w_rec h + bias)``.  For lstm cells the matrices
    stack the four gates in i, f, g, o order, (4*hidden, input), with

        i = sigmoid(.)   f = sigmoid(.)   g = tanh(.)   o = sigmoid(.)
        c' = f*c + i*g   h' = o * tanh(c')
    """

    cell_type: str
    embedding: np.ndarray           # (vocab, embed)
    layers: list                    # [(w_in, w_rec, bias), ...]
    out_w: np.ndarray               # (vocab, hidden)
    out_b: np.ndarray               # (vocab,)
    vocab: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.cell_type not in CELL_TYPES:
            raise ValueError(f"unknown cell type {self.cell_type!r}")
        v, e = self.embedding.shape
        if len(self.vocab) != v:
            raise ValueError("embedding rows do not match vocabulary size")
        hidden = self.layers[0][1].shape[1]
        rows = hidden if self.cell_type == "elman" else 4 * hidden
        in_dim = e
        for i, (w_in, w_rec, bias) in enumerate(self.layers):
            if w_in.shape != (rows, in_dim):
                raise ValueError(f"layer {i} input matrix has shape {w_in.shape}, "
                                 f"expected {(rows, in_dim)}")
            if w_rec.shape != (rows, hidden):
                raise ValueError(f"layer {i} recurrent matrix has shape {w_rec.shape}")
            if bias.shape != (rows,):
                raise ValueError(f"layer {i} bias has shape {bias.shape}")
            in_dim = hidden
        if self.out_w.shape != (v, hidden):
            raise ValueError(f"output projection has shape {self.out_w.shape}")
        if self.out_b.shape != (v,):
            raise ValueError(f"output bias has shape {self.out_b.shape}")

    @property
    def hidden_dim(self) -> int:
        return self.layers[0][1].shape[1]

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class _Pending:
    """Marker payload of a history that has not been forwarded yet."""

    __slots__ = ("parent", "word")

    def __init__(self, parent: LmHistory, word: str):
        self.parent = parent
        self.word = word


class RecurrentLm:
    """Recurrent LM with lazily forwarded, batch-evaluated histories.

    ``extend`` only records the new word; the matrix work happens when a
    batch of histories is forwarded, either on demand (a score is needed
    now) or speculatively through :meth:`prepare`.  Each history is
    forwarded exactly once; the evaluation trace is kept for throughput
    reporting.

    Parameters
    ----------
    weights : RnnWeights
    batch_capacity : int
        Largest batch the evaluator accepts.
    cost_model : lmdecode.batching.BatchCostModel | None
        Cost model attached to the trace for simulated timing.
    """

    def __init__(self, weights: RnnWeights, batch_capacity: int = 32,
                 cost_model=None):
        from .batching import BatchCostModel  # local import, no cycle at module load

        self.weights = weights
        self.vocab = list(weights.vocab)
        self.vocab_index = {w: i for i, w in enumerate(self.vocab)}
        for tok in (SENTENCE_BEGIN, SENTENCE_END):
            if tok not in self.vocab_index:
                raise ValueError(f"recurrent LM vocabulary lacks {tok}")
        self.batch_capacity = int(batch_capacity)
        self.cost_model = cost_model or BatchCostModel()
        self.trace: list = []
        self._histories: dict[tuple[str, ...], LmHistory] = {}
        self._lock = threading.Lock()
        self._forwarded: set[int] = set()

    # -- history bookkeeping ----------------------------------------------

    def _history(self, words, state) -> LmHistory:
        with self._lock:
            h = self._histories.get(words)
            if h is None:
                h = LmHistory(words=words, hid=len(self._histories), state=state)
                self._histories[words] = h
            return h

    def initial(self) -> LmHistory:
        root = LmHistory(words=(), hid=-1, state=self._zero_state())
        h = self._history((SENTENCE_BEGIN,), _Pending(root, SENTENCE_BEGIN))
        self.ensure([h])
        return h

    def extend(self, history: LmHistory, word: str) -> LmHistory:
        if word not in self.vocab_index:
            if UNKNOWN_WORD not in self.vocab_index:
                raise ValueError(f"word {word!r} not in recurrent LM vocabulary")
            word = UNKNOWN_WORD
        return self._history(history.words + (word,), _Pending(history, word))

    def step(self, history: LmHistory, word: str) -> LmHistory:
        """Extend and forward immediately; the successor's logdist is ready."""
        h = self.extend(history, word)
        self.ensure([h])
        return h

    def _zero_state(self):
        hidden = self.weights.hidden_dim
        if self.weights.cell_type == "elman":
            return tuple(np.zeros(hidden) for _ in self.weights.layers)
        return tuple((np.zeros(hidden), np.zeros(hidden)) for _ in self.weights.layers)

    def forwarded(self, history: LmHistory) -> bool:
        return history.logdist is not None

    # -- batched forwarding -------------------------------------------------

    def ensure(self, histories, demanded_count=None):
        """Forward every unforwarded history in ``histories`` (ancestors
        first), splitting the work into batches of at most
        ``batch_capacity``."""
        work: list[LmHistory] = []
        seen: set[int] = set()

        def collect(h: LmHistory):
            if h.logdist is not None or h.hid == -1 or id(h) in seen:
                return
            seen.add(id(h))
            collect(h.state.parent)
            work.append(h)

        for h in histories:
            collect(h)
        if not work:
            return
        # Ancestors precede descendants; evaluate level by level so a batch
        # never contains both a history and its parent.
        work.sort(key=lambda h: (len(h.words), h.hid))
        ndem = len(work) if demanded_count is None else demanded_count
        start = 0
        while start < len(work):
            level = len(work[start].words)
            chunk = [work[start]]
            start += 1
            while (start < len(work) and len(chunk) < self.batch_capacity
                   and len(work[start].words) == level):
                chunk.append(work[start])
                start += 1
            self._forward_batch(chunk, min(ndem, len(chunk)))
            ndem = max(0, ndem - len(chunk))

    def _forward_batch(self, batch: list[LmHistory], demanded_count: int):
        from .batching import BatchRecord

        n = len(batch)
        if n > self.batch_capacity:
            raise ValueError("internal: batch exceeds capacity")
        for h in batch:
            if h.hid in self._forwarded:
                raise RuntimeError(f"history {h.hid} forwarded twice")
            self._forwarded.add(h.hid)

        w = self.weights
        x = w.embedding[[self.vocab_index[h.state.word] for h in batch]]  # (n, E)
        parent_states = [h.state.parent.state for h in batch]
        new_states = [[] for _ in range(n)]
        for li, (w_in, w_rec, bias) in enumerate(w.layers):
            if w.cell_type == "elman":
                hprev = np.stack([ps[li] for ps in parent_states])
                hnew = np.tanh(x @ w_in.T + hprev @ w_rec.T + bias)
                for i in range(n):
                    new_states[i].append(hnew[i])
                x = hnew
            else:
                hprev = np.stack([ps[li][0] for ps in parent_states])
                cprev = np.stack([ps[li][1] for ps in parent_states])
                z = x @ w_in.T + hprev @ w_rec.T + bias
                hd = w.hidden_dim
                i_g = _sigmoid(z[:, 0:hd])
                f_g = _sigmoid(z[:, hd:2 * hd])
                g_g = np.tanh(z[:, 2 * hd:3 * hd])
                o_g = _sigmoid(z[:, 3 * hd:4 * hd])
                cnew = f_g * cprev + i_g * g_g
                hnew = o_g * np.tanh(cnew)
                for i in range(n):
                    new_states[i].append((hnew[i], cnew[i]))
                x = hnew
        logits = x @ w.out_w.T + w.out_b
        dists = _log_softmax(logits)
        for i, h in enumerate(batch):
            h.state = tuple(new_states[i])
            h.logdist = dists[i]
        self.trace.append(BatchRecord(size=n, demanded=demanded_count))

    def prepare(self, demanded, speculative_requests):
        """Rendezvous point for the decoder: forward the demanded histories
        now, filling spare batch slots with speculative ones by priority.

        ``speculative_requests`` is a list of
        :class:`lmdecode.batching.LmRequest` whose ``history`` fields are
        histories of this scorer.
        """
        from .batching import LmRequest, schedule

        demanded = [h for h in demanded if h.logdist is None]
        speculative = [r for r in speculative_requests
                       if r.history.logdist is None]
        spec_by_hid = {}
        for r in speculative:
            if r.history.hid not in spec_by_hid:
                spec_by_hid[r.history.hid] = r
        dem_ids = {h.hid for h in demanded}
        pending_spec = [r for r in spec_by_hid.values() if r.history.hid not in dem_ids]

        # One scheduled batch per capacity-sized slice of the demands; the
        # final slice is topped up with the best speculative work.
        demanded = sorted(demanded, key=lambda h: h.hid)
        cap = self.batch_capacity
        idx = 0
        while idx < len(demanded) or (idx == 0 and pending_spec):
            slice_dem = demanded[idx:idx + cap]
            idx += cap
            requests = [LmRequest(history=h, demanded=True) for h in slice_dem]
            if idx >= len(demanded):
                requests += pending_spec
            batch = schedule(requests, cap)
            if batch:
                self.ensure([r.history for r in batch],
                            demanded_count=sum(r.demanded for r in batch))
            if idx >= len(demanded):
                break

    # -- scoring ------------------------------------------------------------

    def logprob(self, history: LmHistory, word: str) -> float:
        if history.logdist is None:
            self.ensure([history])
        if word not in self.vocab_index:
            if UNKNOWN_WORD not in self.vocab_index:
                raise ValueError(f"word {word!r} not in recurrent LM vocabulary")
            word = UNKNOWN_WORD
        return float(history.logdist[self.vocab_index[word]])

    def logdist(self, history: LmHistory) -> np.ndarray:
        if history.logdist is None:
            self.ensure([history])
        return history.logdist

    def sentence_end(self, history: LmHistory) -> float:
        return self.logprob(history, SENTENCE_END)

    def lookahead_model(self):
        return None


def rnn_step(lm: RecurrentLm, history: LmHistory, word: str) -> LmHistory:
    """Single-step convenience wrapper around :meth:`RecurrentLm.step`."""
    return lm.step(history, word)


# ---------------------------------------------------------------------------
# Log-linear interpolation
# ---------------------------------------------------------------------------


@dataclass
class InterpolationConfig:
    lambda_backoff: float = 0.5
    lambda_recurrent: float = 0.5
    renormalize: bool = False

    def __post_init__(self):
        if self.lambda_backoff < 0 or self.lambda_recurrent < 0:
            raise ValueError("interpolation weights must be non-negative")
        if self.lambda_backoff == 0 and self.lambda_recurrent == 0:
            raise ValueError("interpolation weights must not both be zero")


def interp_score(cfg: InterpolationConfig, backoff_logprob: float,
                 recurrent_logprob: float) -> float:
    """Unnormalized log-linear combination of two natural-log scores."""
    return (cfg.lambda_backoff * backoff_logprob
            + cfg.lambda_recurrent * recurrent_logprob)


class InterpolatedLm:
    """Log-linear interpolation of a backoff and a recurrent scorer.

    The two component vocabularies must contain the same words (order may
    differ); ``vocab`` follows the backoff component.  With
    ``cfg.renormalize`` set, scores come from the renormalized combined
    distribution; otherwise they are the raw weighted sums, which is what
    the search uses (renormalization never changes the argmax over words
    for a fixed history).
    """

    def __init__(self, backoff: BackoffLm, recurrent: RecurrentLm,
                 cfg: InterpolationConfig | None = None):
        if set(backoff.vocab) != set(recurrent.vocab):
            raise ValueError("interpolated components must share one vocabulary")
        self.backoff = backoff
        self.recurrent = recurrent
        self.cfg = cfg or InterpolationConfig()
        self.vocab = list(backoff.vocab)
        self.vocab_index = {w: i for i, w in enumerate(self.vocab)}
        self._into_recurrent = np.array(
            [recurrent.vocab_index[w] for w in self.vocab])
        self._histories: dict[tuple[str, ...], LmHistory] = {}
        self._lock = threading.Lock()

    def _history(self, words, hb, hr) -> LmHistory:
        with self._lock:
            h = self._histories.get(words)
            if h is None:
                h = LmHistory(words=words, hid=len(self._histories), state=(hb, hr))
                self._histories[words] = h
            return h

    def initial(self) -> LmHistory:
        return self._history((SENTENCE_BEGIN,),
                             self.backoff.initial(), self.recurrent.initial())

    def extend(self, history: LmHistory, word: str) -> LmHistory:
        hb, hr = history.state
        return self._history(history.words + (word,),
                             self.backoff.extend(hb, word),
                             self.recurrent.extend(hr, word))

    def logprob(self, history: LmHistory, word: str) -> float:
        if self.cfg.renormalize:
            dist = self.logdist(history)
            idx = self.vocab_index.get(word)
            if idx is None:
                idx = self.vocab_index[UNKNOWN_WORD]
            return float(dist[idx])
        hb, hr = history.state
        return interp_score(self.cfg, self.backoff.logprob(hb, word),
                            self.recurrent.logprob(hr, word))

    def logdist(self, history: LmHistory) -> np.ndarray:
        hb, hr = history.state
        combined = (self.cfg.lambda_backoff * self.backoff.logdist(hb)
                    + self.cfg.lambda_recurrent
                    * self.recurrent.logdist(hr)[self._into_recurrent])
        if self.cfg.renormalize:
            combined = combined - _logsumexp(combined)
        return combined

    def sentence_end(self, history: LmHistory) -> float:
        return self.logprob(history, SENTENCE_END)

    def prepare(self, demanded, speculative_requests):
        from .batching import LmRequest

        dem = [h.state[1] for h in demanded]
        spc = [LmRequest(history=r.history.state[1], demanded=False,
                         dist_to_word_end=r.dist_to_word_end, score_gap=r.score_gap)
               for r in speculative_requests]
        self.recurrent.prepare(dem, spc)

    def lookahead_model(self):
        return self.backoff


def _logsumexp(x: np.ndarray) -> float:
    m = float(x.max())
    return m + math.log(float(np.exp(x - m).sum()))


# ---------------------------------------------------------------------------
# Perplexity
# ---------------------------------------------------------------------------


def perplexity(scorer, sentences) -> float:
    """Corpus perplexity ``exp(-sum log p / N)``.

    Every sentence is scored from a fresh initial history; N counts the
    sentence-end token but not the sentence-begin one.  A zero-probability
    word raises rather than returning inf.
    """
    total = 0.0
    count = 0
    for sentence in sentences:
        h = scorer.initial()
        for word in list(sentence) + [SENTENCE_END]:
            lp = scorer.logprob(h, word)
            if math.isinf(lp):
                raise ValueError(f"zero probability for {word!r} after {h.words}")
            total += lp
            count += 1
            if word != SENTENCE_END:
                h = scorer.extend(h, word)
    if count == 0:
        raise ValueError("perplexity of an empty corpus is undefined")
    return math.exp(-total / count)
