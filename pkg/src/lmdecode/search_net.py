"""Search network: pronunciation prefix tree, time-distortion topology and
dynamic LM lookahead.

The prefix tree shares common pronunciation prefixes across words; every
tree node is one emission state, and a node may end one or more (word,
variant) pairs.  The lookahead table assigns each node the best backoff-LM
score among the words still reachable below it, so within-word hypotheses
can be pruned against an optimistic estimate of the LM score they will
eventually pay.  Lookahead always uses the backoff model: recurrent state
is never needed inside a word.
"""
from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np

from .formats import Lexicon


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HmmTopology:
    """Neg-log time distortion penalties of the left-to-right topology."""

    loop_penalty: float = 0.6931471805599453
    forward_penalty: float = 0.6931471805599453
    skip_penalty: float = math.inf
    skip_allowed: bool = False

    def __post_init__(self):
        for name in ("loop_penalty", "forward_penalty"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.skip_allowed:
            if not (math.isfinite(self.skip_penalty) and self.skip_penalty >= 0):
                raise ValueError("skip penalty must be finite and >= 0 when "
                                 "skips are allowed")


def transition_score(topology: HmmTopology, delta: int) -> float:
    """Penalty of advancing ``delta`` states in one frame (0 loop, 1
    forward, 2 skip)."""
    if delta == 0:
        return topology.loop_penalty
    if delta == 1:
        return topology.forward_penalty
    if delta == 2:
        if not topology.skip_allowed:
            raise ValueError("skip transition requested but skips are disabled")
        return topology.skip_penalty
    raise ValueError(f"transition advance must be 0, 1 or 2, got {delta}")


def normalize_topology(topology: HmmTopology) -> HmmTopology:
    """Rescale the penalties so the outgoing transition probabilities of a
    state sum to one.  Used by full-sum decoding, which interprets the
    penalties as a probability distribution."""
    pens = [topology.loop_penalty, topology.forward_penalty]
    if topology.skip_allowed:
        pens.append(topology.skip_penalty)
    m = min(pens)
    z = m - math.log(sum(math.exp(m - p) for p in pens))
    new = [p - z for p in pens]
    return replace(topology,
                   loop_penalty=new[0],
                   forward_penalty=new[1],
                   skip_penalty=new[2] if topology.skip_allowed else math.inf)


# ---------------------------------------------------------------------------
# Prefix tree
# ---------------------------------------------------------------------------


@dataclass
class TreeNode:
    state: int
    parent: int
    depth: int
    children: dict[int, int]            # emission state -> node index
    ends: list                          # [(word, variant_idx, variant_prob)]
    reachable: frozenset = frozenset()  # words reachable at or below the node
    dist_to_word_end: int = 0


class PrefixTree:
    """Pronunciation prefix tree over a lexicon.

    Node 0 is a virtual root carrying no emission state; its children are
    the first states of all pronunciations.  Equal prefixes share nodes, so
    the node count never exceeds the total number of pronunciation states
    plus the root.
    """

    def __init__(self, lexicon: Lexicon):
        self.lexicon = lexicon
        self.nodes: list[TreeNode] = [
            TreeNode(state=-1, parent=-1, depth=0, children={}, ends=[])]
        for word in lexicon.words:
            for vi, variant in enumerate(lexicon.variants[word]):
                node = 0
                for state in variant.states:
                    nxt = self.nodes[node].children.get(state)
                    if nxt is None:
                        nxt = len(self.nodes)
                        self.nodes.append(TreeNode(
                            state=state, parent=node,
                            depth=self.nodes[node].depth + 1,
                            children={}, ends=[]))
                        self.nodes[node].children[state] = nxt
                    node = nxt
                self.nodes[node].ends.append((word, vi, variant.prob))
        self._fill_reachable()
        self._fill_distances()
        self._arrays = None

    def _fill_reachable(self):
        for idx in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[idx]
            words = {w for w, _, _ in node.ends}
            for child in node.children.values():
                words |= self.nodes[child].reachable
            node.reachable = frozenset(words)

    def _fill_distances(self):
        for idx in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[idx]
            if node.ends:
                node.dist_to_word_end = 0
            else:
                node.dist_to_word_end = 1 + min(
                    self.nodes[c].dist_to_word_end
                    for c in node.children.values())

    def __len__(self):
        return len(self.nodes)

    @property
    def first_nodes(self) -> list[int]:
        return sorted(self.nodes[0].children.values())

    def check_consistency(self):
        """Reachable-word sets must be the union of the children's plus the
        node's own ending words."""
        for idx, node in enumerate(self.nodes):
            expect = {w for w, _, _ in node.ends}
            for child in node.children.values():
                expect |= self.nodes[child].reachable
            if expect != set(node.reachable):
                raise AssertionError(f"node {idx} reachable set inconsistent")
        total_states = sum(len(v.states)
                           for vs in self.lexicon.variants.values() for v in vs)
        if len(self.nodes) > total_states + 1:
            raise AssertionError("tree larger than the flat pronunciation list")
        return True

    def arrays(self) -> dict:
        """Dense per-node arrays for the time-synchronous search."""
        if self._arrays is None:
            n = len(self.nodes)
            parent = np.array([nd.parent for nd in self.nodes], dtype=np.int64)
            grand = np.array(
                [self.nodes[nd.parent].parent if nd.parent >= 0 else -1
                 for nd in self.nodes], dtype=np.int64)
            self._arrays = {
                "state": np.array([nd.state for nd in self.nodes], dtype=np.int64),
                "parent": parent,
                "grandparent": grand,
                "depth": np.array([nd.depth for nd in self.nodes], dtype=np.int64),
                "dist_to_word_end": np.array(
                    [nd.dist_to_word_end for nd in self.nodes], dtype=np.int64),
                "has_ends": np.array([bool(nd.ends) for nd in self.nodes]),
            }
        return self._arrays


# ---------------------------------------------------------------------------
# LM lookahead
# ---------------------------------------------------------------------------


class LookaheadCache:
    """Per-node lookahead scores, cached per truncated backoff context.

    ``get(context)`` returns natural-log scores, one per tree node: the
    maximum backoff-LM log probability over every word reachable below the
    node.  Tables are shared across all histories whose truncated context
    agrees and evicted least-recently-used beyond ``capacity``.
    """

    def __init__(self, tree: PrefixTree, lm, capacity: int = 10000):
        if capacity < 1:
            raise ValueError("lookahead cache capacity must be >= 1")
        self.tree = tree
        self.lm = lm
        self.capacity = capacity
        self._tables: OrderedDict[tuple[str, ...], np.ndarray] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, words) -> np.ndarray:
        context = self.lm.context_of(words)
        with self._lock:
            table = self._tables.get(context)
            if table is not None:
                self.hits += 1
                self._tables.move_to_end(context)
                return table
            self.misses += 1
        table = self._build(context)
        with self._lock:
            self._tables[context] = table
            self._tables.move_to_end(context)
            while len(self._tables) > self.capacity:
                self._tables.popitem(last=False)
        return table

    def _build(self, context) -> np.ndarray:
        dist = self.lm.dist_over_vocab(context)
        by_word = {w: float(dist[i]) for i, w in enumerate(self.lm.vocab)}
        nodes = self.tree.nodes
        table = np.full(len(nodes), -math.inf)
        for idx in range(len(nodes) - 1, -1, -1):
            node = nodes[idx]
            best = -math.inf
            for word, _, _ in node.ends:
                s = by_word.get(word)
                if s is None:
                    s = by_word[self.lm._resolve(word)]
                best = max(best, s)
            for child in node.children.values():
                best = max(best, float(table[child]))
            table[idx] = best
        return table
