"""Word lattices: a DAG of word arcs between time-stamped nodes.

Arc scores are natural logs: ``am`` covers the acoustic mass of the word
segment (emissions, time-distortion transitions and the pronunciation
variant weight, in the decoder's acoustically scaled domain) and ``lm`` is
the unscaled LM log probability the decoder assigned.  Sentence-end LM mass
is never stored on arcs.

The text form is one header plus one line per node and per arc:

    VERSION=1 UTTERANCE=<id> N=<nodes> L=<links>
    I=<i> t=<frame>
    J=<j> S=<s> E=<e> W=<word> v=<variant> a=<am> l=<lm>

Scores round-trip at six decimals.
"""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class LatticeNode:
    frame: int


@dataclass
class LatticeArc:
    start: int
    end: int
    word: str
    variant: int
    am: float
    lm: float


@dataclass
class Lattice:
    utterance_id: str
    nodes: list[LatticeNode] = field(default_factory=list)
    arcs: list[LatticeArc] = field(default_factory=list)

    # -- structure ----------------------------------------------------------

    def out_arcs(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.nodes]
        for i, arc in enumerate(self.arcs):
            out[arc.start].append(i)
        return out

    def in_arcs(self) -> list[list[int]]:
        inc: list[list[int]] = [[] for _ in self.nodes]
        for i, arc in enumerate(self.arcs):
            inc[arc.end].append(i)
        return inc

    def initial_node(self) -> int:
        incoming = self.in_arcs()
        starts = [i for i in range(len(self.nodes)) if not incoming[i]]
        if len(starts) != 1:
            raise ValueError(f"lattice has {len(starts)} initial nodes, expected 1")
        return starts[0]

    def final_nodes(self) -> list[int]:
        outgoing = self.out_arcs()
        return [i for i in range(len(self.nodes)) if not outgoing[i]]

    def topological_nodes(self) -> list[int]:
        # Arc frames strictly increase, so frame order is a topological order.
        return sorted(range(len(self.nodes)),
                      key=lambda i: (self.nodes[i].frame, i))

    def validate(self):
        """Check the structural invariants; raises ValueError on the first
        violation."""
        if not self.nodes:
            raise ValueError("lattice has no nodes")
        for i, arc in enumerate(self.arcs):
            for ref in (arc.start, arc.end):
                if not (0 <= ref < len(self.nodes)):
                    raise ValueError(f"arc {i} references missing node {ref}")
            if self.nodes[arc.end].frame <= self.nodes[arc.start].frame:
                raise ValueError(
                    f"arc {i} does not advance in time "
                    f"({self.nodes[arc.start].frame} -> {self.nodes[arc.end].frame})")
        init = self.initial_node()
        if self.nodes[init].frame != 0:
            raise ValueError("initial node is not at frame 0")
        finals = self.final_nodes()
        if not finals:
            raise ValueError("lattice has no final node")
        last = max(n.frame for n in self.nodes)
        for f in finals:
            if self.nodes[f].frame != last:
                raise ValueError(f"final node {f} at frame {self.nodes[f].frame}, "
                                 f"others end at {last}")
        reach = self._reachable(init)
        coreach = self._coreachable(set(finals))
        for i in range(len(self.nodes)):
            if i not in reach:
                raise ValueError(f"node {i} unreachable from the initial node")
            if i not in coreach:
                raise ValueError(f"node {i} cannot reach a final node")
        return self

    def _reachable(self, init: int) -> set[int]:
        out = self.out_arcs()
        seen = {init}
        stack = [init]
        while stack:
            for ai in out[stack.pop()]:
                nxt = self.arcs[ai].end
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def _coreachable(self, finals: set[int]) -> set[int]:
        inc = self.in_arcs()
        seen = set(finals)
        stack = list(finals)
        while stack:
            for ai in inc[stack.pop()]:
                prv = self.arcs[ai].start
                if prv not in seen:
                    seen.add(prv)
                    stack.append(prv)
        return seen

    def trimmed(self) -> "Lattice":
        """Copy with every node not on an initial-to-final path removed."""
        if not self.nodes:
            return Lattice(self.utterance_id)
        incoming = self.in_arcs()
        starts = [i for i in range(len(self.nodes)) if not incoming[i]]
        # Arc pruning can leave extra sources; the earliest one is the real
        # initial node, the rest are junk to cut.
        init = min(starts, key=lambda i: (self.nodes[i].frame, i))
        last = max(n.frame for n in self.nodes)
        finals = {i for i in self.final_nodes() if self.nodes[i].frame == last}
        keep = self._reachable(init) & self._coreachable(finals)
        order = [i for i in range(len(self.nodes)) if i in keep]
        remap = {old: new for new, old in enumerate(order)}
        nodes = [LatticeNode(frame=self.nodes[i].frame) for i in order]
        arcs = [LatticeArc(start=remap[a.start], end=remap[a.end], word=a.word,
                           variant=a.variant, am=a.am, lm=a.lm)
                for a in self.arcs if a.start in keep and a.end in keep]
        return Lattice(self.utterance_id, nodes=nodes, arcs=arcs)

    def paths(self, limit: int = 100000):
        """Yield every initial-to-final path as a list of arc indices.
        Raises if the lattice holds more than ``limit`` paths."""
        out = self.out_arcs()
        init = self.initial_node()
        finals = set(self.final_nodes())
        count = 0
        stack = [(init, [])]
        while stack:
            node, prefix = stack.pop()
            if node in finals:
                count += 1
                if count > limit:
                    raise ValueError(f"more than {limit} lattice paths")
                yield prefix
                continue
            for ai in reversed(out[node]):
                stack.append((self.arcs[ai].end, prefix + [ai]))

    def path_words(self, path: list[int]) -> tuple[str, ...]:
        return tuple(self.arcs[ai].word for ai in path)


def write_lattice(lat: Lattice) -> str:
    out = [f"VERSION=1 UTTERANCE={lat.utterance_id} "
           f"N={len(lat.nodes)} L={len(lat.arcs)}"]
    for i, node in enumerate(lat.nodes):
        out.append(f"I={i} t={node.frame}")
    for j, arc in enumerate(lat.arcs):
        out.append(f"J={j} S={arc.start} E={arc.end} W={arc.word} "
                   f"v={arc.variant} a={arc.am:.6f} l={arc.lm:.6f}")
    return "\n".join(out) + "\n"


def _field(token: str, key: str, line_no: int) -> str:
    if not token.startswith(key + "="):
        raise ValueError(f"line {line_no}: expected {key}=..., got {token!r}")
    return token[len(key) + 1:]


def read_lattice(text: str) -> Lattice:
    """Parse the text form back; validates node references and arc times."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("line 1: empty lattice")
    head = lines[0].split()
    if len(head) != 4:
        raise ValueError(f"line 1: bad header {lines[0]!r}")
    if _field(head[0], "VERSION", 1) != "1":
        raise ValueError(f"line 1: unsupported version {head[0]!r}")
    utt = _field(head[1], "UTTERANCE", 1)
    n_nodes = int(_field(head[2], "N", 1))
    n_arcs = int(_field(head[3], "L", 1))
    if len(lines) != 1 + n_nodes + n_arcs:
        raise ValueError(f"line {len(lines)}: {len(lines) - 1} body lines, "
                         f"header declares {n_nodes}+{n_arcs}")
    nodes: list[LatticeNode] = []
    for i in range(n_nodes):
        ln = 2 + i
        toks = lines[1 + i].split()
        if len(toks) != 2 or _field(toks[0], "I", ln) != str(i):
            raise ValueError(f"line {ln}: expected node I={i}")
        nodes.append(LatticeNode(frame=int(_field(toks[1], "t", ln))))
    arcs: list[LatticeArc] = []
    for j in range(n_arcs):
        ln = 2 + n_nodes + j
        toks = lines[1 + n_nodes + j].split()
        if len(toks) != 7 or _field(toks[0], "J", ln) != str(j):
            raise ValueError(f"line {ln}: expected arc J={j}")
        start = int(_field(toks[1], "S", ln))
        end = int(_field(toks[2], "E", ln))
        for ref in (start, end):
            if not (0 <= ref < n_nodes):
                raise ValueError(f"line {ln}: arc references missing node {ref}")
        arc = LatticeArc(start=start, end=end,
                         word=_field(toks[3], "W", ln),
                         variant=int(_field(toks[4], "v", ln)),
                         am=float(_field(toks[5], "a", ln)),
                         lm=float(_field(toks[6], "l", ln)))
        if nodes[arc.end].frame <= nodes[arc.start].frame:
            raise ValueError(f"line {ln}: arc does not advance in time")
        arcs.append(arc)
    return Lattice(utterance_id=utt, nodes=nodes, arcs=arcs)
