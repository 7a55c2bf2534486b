"""Time-synchronous one-pass beam search over the pronunciation prefix tree.

Hypotheses are grouped by LM history: each active history owns one score
per tree node, advanced frame by frame with loop/forward/skip transitions.
A hypothesis score accumulates acoustic scores times ``scale_am``, the raw
time-distortion penalties, the LM lookahead for its node, and at word ends
the lookahead is replaced by the true scaled LM score (plus the neg-log
pronunciation variant weight).  Word-end hypotheses whose last ``n`` words
agree are recombined: the best one survives and keeps its own history
verbatim (no recurrent state is recomputed), while the others only
contribute lattice arcs into the shared node.  With ``n`` infinite no two
distinct histories ever merge and the lattice stays a tree.

``mode="fullsum"`` switches the within-word recursion and all word-end
merging from minimization to probability summation (over alignment paths,
entry frames and pronunciation variants); the surviving candidate of every
merge still lends its history and backpointer to the merged hypothesis.

Exact-search property: with an infinite beam, no hypothesis cap and
``n = inf``, the decoder is equivalent to scoring every word sequence with
the brute-force reference in either mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .batching import LmRequest
from .lattice import Lattice, LatticeArc, LatticeNode
from .lm import LmHistory, recombination_key
from .search_net import HmmTopology, LookaheadCache, PrefixTree

INF = math.inf


class SearchCollapsed(RuntimeError):
    """Pruning (or an impossible utterance) left no viable hypothesis."""

    def __init__(self, frame: int):
        super().__init__(f"search collapsed at frame {frame}: no surviving "
                         f"hypothesis")
        self.frame = frame


@dataclass
class DecodeConfig:
    """Search settings.

    ``beam`` is the neg-log width of per-frame pruning against the best
    hypothesis; ``max_hyps`` caps the number of surviving state hypotheses
    per frame (None for no cap).  ``recombination_n`` is the word-end
    recombination limit (math.inf to disable merging).  ``mode`` selects
    Viterbi or full-sum path treatment.
    """

    beam: float = INF
    max_hyps: int | None = None
    recombination_n: float = INF
    mode: str = "viterbi"
    scale_am: float = 1.0
    scale_lm: float = 1.0
    lookahead_enabled: bool = True
    lookahead_capacity: int = 10000

    def __post_init__(self):
        if self.beam <= 0:
            raise ValueError(f"beam must be positive, got {self.beam}")
        if self.max_hyps is not None and self.max_hyps < 1:
            raise ValueError(f"max_hyps must be >= 1, got {self.max_hyps}")
        if self.mode not in ("viterbi", "fullsum"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.recombination_n != INF and (int(self.recombination_n)
                                            != self.recombination_n
                                            or self.recombination_n < 1):
            raise ValueError(f"recombination_n must be >= 1 or inf, "
                             f"got {self.recombination_n}")
        if self.scale_am <= 0 or self.scale_lm < 0:
            raise ValueError("scales must be positive (scale_lm may be 0)")


@dataclass
class WordEnd:
    """A word-end hypothesis: a word finished at frame ``end`` (exclusive)
    with the successor history already attached.  ``am`` and ``lm`` are the
    natural-log arc scores the lattice will store."""

    word: str
    variant: int
    start: int
    end: int
    score: float
    history: LmHistory
    start_node: int = 0
    am: float = 0.0
    lm: float = 0.0


@dataclass
class DecodeResult:
    """``score`` is the best final hypothesis (neg-log, sentence-end
    included); ``total`` equals ``score`` in Viterbi mode and the
    probability sum over all final hypotheses in full-sum mode."""

    words: tuple[str, ...]
    score: float
    total: float
    lattice: Lattice
    lm_trace: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)


def fullsum_step(scores) -> float:
    """Combine neg-log path scores by probability summation:
    ``-ln sum_i exp(-s_i)``, evaluated with a shift by the minimum."""
    m = min(scores)
    if math.isinf(m):
        return m
    return m - math.log(sum(math.exp(m - s) for s in scores))


def merge_pronunciation_variants(word_ends: list[WordEnd]) -> list[WordEnd]:
    """Full-sum merge of word ends identical in (word, end frame, history)
    but differing in pronunciation variant.  Scores already carry their
    -ln(variant probability), so merging is plain probability summation;
    the lowest-scoring variant keeps its segment and backpointer."""
    groups: dict = {}
    order = []
    for we in word_ends:
        key = (we.word, we.end, we.history.words)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(we)
    out = []
    for key in order:
        members = groups[key]
        if len(members) == 1:
            out.append(members[0])
            continue
        keep = min(members, key=lambda w: (w.score, w.variant, w.start))
        score = fullsum_step([m.score for m in members])
        am = float(np.logaddexp.reduce([m.am for m in members]))
        out.append(replace(keep, score=score, am=am))
    return out


def recombine(word_ends: list[WordEnd], n, mode: str = "viterbi"):
    """Group word ends by their last-``n``-words key and merge each group.

    The survivor keeps the lowest-scoring candidate's history verbatim; in
    fullsum mode the merged score sums the candidates' probabilities
    instead of taking the minimum.  Returns (survivors, groups) where
    ``groups`` aligns with ``survivors`` and lists every merged candidate
    (losers re-target their lattice arcs to the survivor's node).
    """
    groups: dict[tuple, list[WordEnd]] = {}
    order = []
    for we in word_ends:
        key = recombination_key(we.history, n)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(we)
    survivors = []
    grouped = []
    for key in order:
        members = groups[key]
        winner = min(members, key=lambda w: (w.score, w.history.hid, w.variant))
        if mode == "fullsum" and len(members) > 1:
            winner = replace(winner, score=fullsum_step([m.score for m in members]))
        survivors.append(winner)
        grouped.append(members)
    return survivors, grouped


def _scorer_trace(scorer):
    if hasattr(scorer, "trace"):
        return scorer.trace
    if hasattr(scorer, "recurrent"):
        return scorer.recurrent.trace
    return None


def decode(emissions, tree: PrefixTree, scorer, topology: HmmTopology,
           cfg: DecodeConfig | None = None) -> DecodeResult:
    """Decode one utterance.

    Parameters
    ----------
    emissions : EmissionMatrix
        Frame-by-state natural-log acoustic scores.
    tree : PrefixTree
        Search network built over the pronunciation lexicon.
    scorer
        Any LM scorer (backoff, recurrent, interpolated).  If it exposes
        ``prepare``, word-end scoring demands are batched through it.
    topology : HmmTopology
        Time-distortion penalties.
    cfg : DecodeConfig

    Returns
    -------
    DecodeResult
        Best word sequence (sentence-begin stripped), its neg-log score
        including the sentence-end LM term, the word lattice, and the LM
        batch trace of this utterance.
    """
    cfg = cfg or DecodeConfig()
    arrays = tree.arrays()
    state = arrays["state"]
    if int(state.max()) >= emissions.states:
        raise ValueError(
            f"lexicon uses emission state {int(state.max())} but the matrix "
            f"has only {emissions.states} states")

    T = emissions.frames
    N = len(tree)
    fullsum = cfg.mode == "fullsum"

    parent = arrays["parent"]
    grand = arrays["grandparent"]
    dist_to_end = arrays["dist_to_word_end"]
    has_ends = arrays["has_ends"]
    state_idx = np.where(state >= 0, state, 0)
    parent_idx = np.where(parent >= 1, parent, 0)
    parent_ok = parent >= 1
    grand_idx = np.where(grand >= 1, grand, 0)
    grand_ok = grand >= 1
    first_nodes = np.array(tree.first_nodes, dtype=np.int64)

    la_cache = None
    if cfg.lookahead_enabled:
        la_lm = scorer.lookahead_model()
        if la_lm is not None:
            la_cache = LookaheadCache(tree, la_lm, cfg.lookahead_capacity)

    def la_row(history) -> np.ndarray:
        if la_cache is None:
            return np.zeros(N)
        return -cfg.scale_lm * la_cache.get(history.words)

    # Per-history-row state.
    histories: list[LmHistory] = []
    hid_arr = np.zeros(0, dtype=np.int64)
    b = np.zeros((0, N))
    entry_b = np.zeros((0, N))
    entry_t = np.zeros((0, N), dtype=np.int64)
    bp = np.zeros((0, N), dtype=np.int64)
    la_mat = np.zeros((0, N))
    row_of: dict[int, int] = {}

    lat_nodes = [LatticeNode(frame=0)]
    lat_arcs: list[LatticeArc] = []

    h0 = scorer.initial()
    # hid -> (history, entry score, lattice backpointer, pays entry penalty)
    pending = {h0.hid: (h0, 0.0, 0, False)}
    finals: list[tuple[float, LmHistory, int]] = []

    trace = _scorer_trace(scorer)
    trace_start = len(trace) if trace is not None else 0
    max_active = 0
    word_end_count = 0

    for t in range(T):
        # Add rows for histories that only exist as pending entries.
        fresh = [hid for hid in sorted(pending) if hid not in row_of]
        if fresh:
            k = len(fresh)
            hists = [pending[hid][0] for hid in fresh]
            b = np.vstack([b, np.full((k, N), INF)])
            entry_b = np.vstack([entry_b, np.full((k, N), INF)])
            entry_t = np.vstack([entry_t, np.zeros((k, N), dtype=np.int64)])
            bp = np.vstack([bp, np.zeros((k, N), dtype=np.int64)])
            la_mat = np.vstack([la_mat, np.stack([la_row(h) for h in hists])])
            for h in hists:
                row_of[h.hid] = len(histories)
                histories.append(h)
            hid_arr = np.concatenate([hid_arr,
                                      np.array([h.hid for h in hists],
                                               dtype=np.int64)])
        H = len(histories)
        if H == 0:
            raise SearchCollapsed(t)
        max_active = max(max_active, H)

        e_score = np.full(H, INF)
        e_base = np.full(H, INF)
        e_bp = np.zeros(H, dtype=np.int64)
        for hid, (h, s, node, pays_entry) in pending.items():
            r = row_of[hid]
            # The re-entry penalty is charged to the word being entered, so
            # the segment baseline stays at the pre-penalty score.
            e_base[r] = s
            e_score[r] = s + (topology.forward_penalty if pays_entry else 0.0)
            e_bp[r] = node
        pending = {}

        # Within-word expansion: loop / forward / skip / word (re-)entry.
        cands = [b + topology.loop_penalty,
                 np.where(parent_ok, b[:, parent_idx] + topology.forward_penalty,
                          INF)]
        prop_eb = [entry_b, entry_b[:, parent_idx]]
        prop_et = [entry_t, entry_t[:, parent_idx]]
        prop_bp = [bp, bp[:, parent_idx]]
        if topology.skip_allowed:
            cands.append(np.where(grand_ok, b[:, grand_idx] + topology.skip_penalty,
                                  INF))
            prop_eb.append(entry_b[:, grand_idx])
            prop_et.append(entry_t[:, grand_idx])
            prop_bp.append(bp[:, grand_idx])
        entry_cand = np.full((H, N), INF)
        entry_cand[:, first_nodes] = e_score[:, None]
        cands.append(entry_cand)
        prop_eb.append(np.broadcast_to(e_base[:, None], (H, N)))
        prop_et.append(np.full((H, N), t, dtype=np.int64))
        prop_bp.append(np.broadcast_to(e_bp[:, None], (H, N)))

        cand = np.stack(cands)
        src = np.argmin(cand, axis=0)
        if fullsum:
            m = cand.min(axis=0)
            safe = np.where(np.isfinite(m), m, 0.0)
            mass = np.exp(safe[None] - cand).sum(axis=0)
            value = np.where(mass > 0, safe - np.log(np.where(mass > 0, mass, 1.0)),
                             INF)
        else:
            value = np.take_along_axis(cand, src[None], axis=0)[0]
        sel = src[None]
        entry_b = np.take_along_axis(np.stack(prop_eb), sel, axis=0)[0]
        entry_t = np.take_along_axis(np.stack(prop_et), sel, axis=0)[0]
        bp = np.take_along_axis(np.stack(prop_bp), sel, axis=0)[0]

        emit_add = cfg.scale_am * -emissions.scores[t][state_idx]
        b = value + emit_add[None, :]
        b[:, 0] = INF

        # Beam and histogram pruning against the frame-best score (scores
        # include the LM lookahead).
        prune = b + la_mat
        frame_best = float(prune.min())
        if math.isinf(frame_best):
            raise SearchCollapsed(t)
        b[prune > frame_best + cfg.beam] = INF
        finite = np.isfinite(b)
        if cfg.max_hyps is not None and int(finite.sum()) > cfg.max_hyps:
            rows, cols = np.nonzero(finite)
            order = np.lexsort((cols, hid_arr[rows], prune[rows, cols]))
            drop = order[cfg.max_hyps:]
            b[rows[drop], cols[drop]] = INF
            finite = np.isfinite(b)

        # Word-end processing.
        we_rows, we_cols = np.nonzero(finite & has_ends[None, :])
        if len(we_rows) and hasattr(scorer, "prepare"):
            demanded_rows = sorted(set(int(r) for r in we_rows))
            demanded = [histories[r] for r in demanded_rows]
            speculative = []
            row_fin = finite
            for r in range(H):
                if r in demanded_rows or not row_fin[r].any():
                    continue
                nodes_r = np.nonzero(row_fin[r])[0]
                speculative.append(LmRequest(
                    history=histories[r], demanded=False,
                    dist_to_word_end=int(dist_to_end[nodes_r].min()),
                    score_gap=float(prune[r, nodes_r].min() - frame_best)))
            scorer.prepare(demanded, speculative)

        word_ends: list[WordEnd] = []
        for r, v in zip(we_rows, we_cols):
            h = histories[r]
            base = float(b[r, v])
            seg_mass = base - float(entry_b[r, v])
            for word, vi, vprob in tree.nodes[v].ends:
                lp = scorer.logprob(h, word)
                vp = -math.log(vprob)
                word_ends.append(WordEnd(
                    word=word, variant=vi,
                    start=int(entry_t[r, v]), end=t + 1,
                    score=base + cfg.scale_lm * -lp + vp,
                    history=scorer.extend(h, word),
                    start_node=int(bp[r, v]),
                    am=-(seg_mass + vp), lm=lp))
        word_end_count += len(word_ends)

        if word_ends:
            if fullsum:
                word_ends = merge_pronunciation_variants(word_ends)
            survivors, groups = recombine(word_ends, cfg.recombination_n,
                                          mode=cfg.mode)
            at_final = t + 1 == T
            if at_final and hasattr(scorer, "prepare"):
                scorer.prepare([s.history for s in survivors], [])
            for winner, members in zip(survivors, groups):
                node_id = len(lat_nodes)
                lat_nodes.append(LatticeNode(frame=t + 1))
                for m in members:
                    lat_arcs.append(LatticeArc(
                        start=m.start_node, end=node_id, word=m.word,
                        variant=m.variant, am=m.am, lm=m.lm))
                if at_final:
                    fs = winner.score + cfg.scale_lm * -scorer.sentence_end(
                        winner.history)
                    finals.append((fs, winner.history, node_id))
                else:
                    pending[winner.history.hid] = (winner.history, winner.score,
                                                   node_id, True)

        # Drop histories with no live hypothesis left.
        alive = np.isfinite(b).any(axis=1)
        if not alive.all():
            keep = np.nonzero(alive)[0]
            b = b[keep]
            entry_b = entry_b[keep]
            entry_t = entry_t[keep]
            bp = bp[keep]
            la_mat = la_mat[keep]
            hid_arr = hid_arr[keep]
            histories = [histories[i] for i in keep]
            row_of = {h.hid: i for i, h in enumerate(histories)}

    if not finals:
        raise SearchCollapsed(T - 1)
    best_score, best_history, _ = min(finals, key=lambda f: (f[0], f[1].hid))
    total = fullsum_step([f[0] for f in finals]) if fullsum else best_score

    lattice = Lattice(utterance_id=emissions.utterance_id,
                      nodes=lat_nodes, arcs=lat_arcs).trimmed()
    trace_slice = list(trace[trace_start:]) if trace is not None else []
    stats = {
        "frames": T,
        "max_active_histories": max_active,
        "word_ends": word_end_count,
        "lookahead_hits": la_cache.hits if la_cache else 0,
        "lookahead_misses": la_cache.misses if la_cache else 0,
    }
    return DecodeResult(words=best_history.words[1:], score=float(best_score),
                        total=float(total), lattice=lattice,
                        lm_trace=trace_slice, stats=stats)
