"""Operations on word lattices: best path, push-forward LM rescoring,
arc posteriors, confusion networks.

Arc scores are natural-log probabilities: ``am`` carries the acoustic mass
(already scaled by the acoustic scale used during search, pronunciation
weight included) and ``lm`` the raw LM probability of the arc word given
the history that won the arc at search time.  Consumers therefore default
to ``scale_am=1`` and take the LM scale explicitly.

The sentence-end LM term is never stored on arcs: rescoring adds it at the
final nodes, the plain best-path search leaves it out.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .lattice import Lattice

INF = math.inf
EPSILON = "<eps>"


# ---------------------------------------------------------------------------
# Best path without new LM knowledge
# ---------------------------------------------------------------------------


@dataclass
class BestPath:
    words: tuple[str, ...]
    score: float
    arc_ids: tuple[int, ...]


def lattice_best_path(lattice: Lattice, scale_am: float = 1.0,
                      scale_lm: float = 1.0) -> BestPath:
    """Lowest-cost path using the scores stored on the arcs, cost
    ``scale_am * -am + scale_lm * -lm`` per arc."""
    order = lattice.topological_nodes()
    out = lattice.out_arcs()
    best = {lattice.initial_node(): (0.0, None, None)}
    for nid in order:
        if nid not in best:
            continue
        score = best[nid][0]
        for ai in out[nid]:
            arc = lattice.arcs[ai]
            s = score + scale_am * -arc.am + scale_lm * -arc.lm
            if arc.end not in best or s < best[arc.end][0]:
                best[arc.end] = (s, nid, ai)
    finals = [n for n in lattice.final_nodes() if n in best]
    if not finals:
        raise ValueError("lattice has no complete path")
    end = min(finals, key=lambda n: (best[n][0], n))
    arcs = []
    node = end
    while best[node][1] is not None:
        _, prev, ai = best[node]
        arcs.append(ai)
        node = prev
    arcs.reverse()
    return BestPath(words=tuple(lattice.arcs[ai].word for ai in arcs),
                    score=best[end][0], arc_ids=tuple(arcs))


# ---------------------------------------------------------------------------
# Push-forward rescoring
# ---------------------------------------------------------------------------


@dataclass
class RescoreResult:
    words: tuple[str, ...]
    score: float
    lattice: Lattice
    histories_expanded: int = 0


def push_forward_rescore(lattice: Lattice, scorer, k: int = 16,
                         rescore_beam: float = INF, scale_am: float = 1.0,
                         scale_lm: float = 1.0) -> RescoreResult:
    """Rescore a lattice by pushing LM histories through it.

    Every node keeps at most ``k`` surviving histories (after merging
    entries with identical word sequences and dropping those more than
    ``rescore_beam`` above the node best); each survivor extends over every
    outgoing arc with the new scorer's word probability replacing the
    arc's stored one.  The sentence-end probability of the surviving
    history is added at the final nodes.

    With ``k`` unbounded and the beam infinite the result is the exact
    best path of the lattice under the new LM.

    Returns the best words and score plus a copy of the lattice whose arc
    ``lm`` fields carry the best new-LM score achieved on each arc (arcs no
    history reached keep their old score).
    """
    if k < 1:
        raise ValueError(f"history limit must be >= 1, got {k}")
    order = lattice.topological_nodes()
    out = lattice.out_arcs()
    initial = lattice.initial_node()
    final_frame = max(n.frame for n in lattice.nodes)

    # node -> {words: [score, history, parent node, parent words, arc id]}
    table: dict[int, dict] = {initial: {}}
    h0 = scorer.initial()
    table[initial][h0.words] = [0.0, h0, None, None, None]
    arc_lm: dict[int, float] = {}
    finals: list[tuple[float, tuple, int]] = []  # (score, words, node)
    expanded = 0

    for nid in order:
        entries = table.pop(nid, None)
        if not entries:
            continue
        ranked = sorted(entries.values(), key=lambda e: (e[0], e[1].hid))
        node_best = ranked[0][0]
        ranked = [e for e in ranked[:k] if e[0] <= node_best + rescore_beam]
        expanded += len(ranked)
        if lattice.nodes[nid].frame == final_frame and not out[nid]:
            if hasattr(scorer, "prepare"):
                scorer.prepare([e[1] for e in ranked], [])
            for score, h, *_ in ranked:
                finals.append((score + scale_lm * -scorer.sentence_end(h),
                               h.words, nid))
            continue
        if hasattr(scorer, "prepare"):
            scorer.prepare([e[1] for e in ranked], [])
        for score, h, *_ in ranked:
            for ai in out[nid]:
                arc = lattice.arcs[ai]
                lp = scorer.logprob(h, arc.word)
                s = score + scale_am * -arc.am + scale_lm * -lp
                if ai not in arc_lm or lp > arc_lm[ai]:
                    arc_lm[ai] = lp
                succ = scorer.extend(h, arc.word)
                slot = table.setdefault(arc.end, {})
                old = slot.get(succ.words)
                if old is None or s < old[0]:
                    slot[succ.words] = [s, succ, nid, h.words, ai]

    if not finals:
        raise ValueError("no history reached a final node")
    best_score, best_words, _ = min(finals, key=lambda f: (f[0], f[1]))

    new_arcs = [replace(a, lm=arc_lm[ai]) if ai in arc_lm else a
                for ai, a in enumerate(lattice.arcs)]
    rescored = Lattice(utterance_id=lattice.utterance_id,
                       nodes=list(lattice.nodes), arcs=new_arcs)
    return RescoreResult(words=best_words[1:], score=float(best_score),
                         lattice=rescored, histories_expanded=expanded)


# ---------------------------------------------------------------------------
# Arc posteriors
# ---------------------------------------------------------------------------


@dataclass
class PosteriorResult:
    arc_posterior: np.ndarray
    total: float
    forward: dict = field(default_factory=dict)
    backward: dict = field(default_factory=dict)


def forward_backward(lattice: Lattice, scale_am: float = 1.0,
                     scale_lm: float = 1.0,
                     posterior_scale: float = 1.0) -> PosteriorResult:
    """Arc posteriors by the forward-backward recursion over the lattice.

    Arc log weight: ``posterior_scale * (scale_am * am + scale_lm * lm)``.
    ``total`` is the log sum over complete paths; every time cut through
    the lattice has posteriors summing to one.
    """
    order = lattice.topological_nodes()
    out = lattice.out_arcs()
    inc = lattice.in_arcs()
    weight = [posterior_scale * (scale_am * a.am + scale_lm * a.lm)
              for a in lattice.arcs]

    fwd = {lattice.initial_node(): 0.0}
    for nid in order:
        parts = [fwd[lattice.arcs[ai].start] + weight[ai]
                 for ai in inc[nid] if lattice.arcs[ai].start in fwd]
        if parts:
            fwd[nid] = _logsumexp(parts)
    finals = lattice.final_nodes()
    bwd = {}
    for nid in reversed(order):
        if nid in finals:
            bwd[nid] = 0.0
            continue
        parts = [weight[ai] + bwd[lattice.arcs[ai].end]
                 for ai in out[nid] if lattice.arcs[ai].end in bwd]
        if parts:
            bwd[nid] = _logsumexp(parts)
    total = _logsumexp([fwd[n] for n in finals if n in fwd])

    post = np.zeros(len(lattice.arcs))
    for ai, arc in enumerate(lattice.arcs):
        if arc.start in fwd and arc.end in bwd:
            post[ai] = math.exp(fwd[arc.start] + weight[ai] + bwd[arc.end]
                                - total)
    return PosteriorResult(arc_posterior=post, total=total, forward=fwd,
                           backward=bwd)


def _logsumexp(parts) -> float:
    m = max(parts)
    if math.isinf(m):
        return m
    return m + math.log(sum(math.exp(p - m) for p in parts))


# ---------------------------------------------------------------------------
# Confusion networks
# ---------------------------------------------------------------------------


@dataclass
class ConfusionSlot:
    start: int
    end: int
    probs: dict  # word -> probability, EPSILON included, sums to one


@dataclass
class ConfusionNetwork:
    utterance_id: str
    slots: list


def confusion_network(lattice: Lattice, posteriors: PosteriorResult,
                      scale_am: float = 1.0,
                      scale_lm: float = 1.0) -> ConfusionNetwork:
    """Collapse a lattice into a linear sequence of word slots.

    The lattice best path seeds one slot per arc (the pivot); every other
    arc joins, in descending posterior order, the slot its time span
    overlaps best, where overlap is measured as intersection over union
    and must reach at least one half (earlier slot on ties).  An arc
    without such a slot founds a new one, inserted in start-frame order.
    Per slot, word posteriors accumulate, a skip entry absorbs any missing
    mass, and the slot is normalized to sum to one exactly.
    """
    pivot = lattice_best_path(lattice, scale_am=scale_am, scale_lm=scale_lm)
    spans = []
    slot_arcs: list[list[int]] = []
    pivot_set = set(pivot.arc_ids)
    for ai in pivot.arc_ids:
        arc = lattice.arcs[ai]
        spans.append((lattice.nodes[arc.start].frame,
                      lattice.nodes[arc.end].frame))
        slot_arcs.append([ai])

    rest = [ai for ai in range(len(lattice.arcs)) if ai not in pivot_set]
    rest.sort(key=lambda ai: (-posteriors.arc_posterior[ai], ai))
    for ai in rest:
        arc = lattice.arcs[ai]
        s = lattice.nodes[arc.start].frame
        e = lattice.nodes[arc.end].frame
        ratio = [max(0, min(e, se) - max(s, ss)) / (max(e, se) - min(s, ss))
                 for ss, se in spans]
        best = max(range(len(spans)), key=lambda i: (ratio[i], -i))
        if ratio[best] >= 0.5:
            slot_arcs[best].append(ai)
        else:
            pos = sum(1 for ss, se in spans
                      if ss < s or (ss == s and se <= e))
            spans.insert(pos, (s, e))
            slot_arcs.insert(pos, [ai])

    slots = []
    for (s, e), arcs in zip(spans, slot_arcs):
        probs: dict[str, float] = {}
        for ai in arcs:
            w = lattice.arcs[ai].word
            probs[w] = probs.get(w, 0.0) + float(posteriors.arc_posterior[ai])
        mass = sum(probs.values())
        eps = max(0.0, 1.0 - mass)
        if eps > 0:
            probs[EPSILON] = eps
        norm = mass + eps
        probs = {w: p / norm for w, p in probs.items()}
        slots.append(ConfusionSlot(start=s, end=e, probs=probs))
    return ConfusionNetwork(utterance_id=lattice.utterance_id, slots=slots)


def cn_decode(cn: ConfusionNetwork) -> tuple[str, ...]:
    """Per-slot argmax through a confusion network, skip entries removed.
    Ties resolve to the lexicographically first word."""
    words = []
    for slot in cn.slots:
        best = min(slot.probs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        if best != EPSILON:
            words.append(best)
    return tuple(words)
