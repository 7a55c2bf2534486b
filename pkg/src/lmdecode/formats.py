"""Readers and writers for the on-disk formats.

ARPA n-gram files, pronunciation lexica (TSV), emission matrices (EMIT v1),
recurrent LM weights (RNNLM v1) and corpus manifests (TSV).  All parse
errors carry a 1-based line number.  Writers serialize floats with repr so
load -> write -> load is the identity.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .lm import (SENTENCE_BEGIN, SENTENCE_END, UNKNOWN_WORD, BackoffLm,
                 RnnWeights)


class FormatError(ValueError):
    """Malformed input file; message names the offending line."""


def _fail(line_no: int, message: str):
    raise FormatError(f"line {line_no}: {message}")


# ---------------------------------------------------------------------------
# ARPA
# ---------------------------------------------------------------------------


def parse_arpa(text: str) -> BackoffLm:
    """Parse ARPA text into a :class:`BackoffLm`.

    Declared n-gram counts must match the sections exactly; an n-gram
    section for an undeclared order is an error.  Stored log10 values are
    kept verbatim so :func:`arpa_to_text` round-trips bit for bit.
    """
    lines = text.splitlines()
    i = 0
    n = len(lines)
    while i < n and lines[i].strip() != "\\data\\":
        if lines[i].strip():
            _fail(i + 1, f"expected \\data\\ header, got {lines[i].strip()!r}")
        i += 1
    if i == n:
        _fail(n, "no \\data\\ section")
    i += 1

    declared: dict[int, int] = {}
    count_re = re.compile(r"^ngram (\d+)=(\d+)$")
    while i < n:
        stripped = lines[i].strip()
        if not stripped:
            i += 1
            continue
        m = count_re.match(stripped)
        if not m:
            break
        declared[int(m.group(1))] = int(m.group(2))
        i += 1
    if not declared:
        _fail(i + 1 if i < n else n, "no ngram counts declared")
    order = max(declared)

    entries: dict[tuple[str, ...], tuple[float, float | None]] = {}
    vocab: list[str] = []
    section_re = re.compile(r"^\\(\d+)-grams:$")
    seen: dict[int, int] = {}
    cur: int | None = None

    def close_section(line_no: int):
        if cur is not None and seen.get(cur, 0) != declared[cur]:
            _fail(line_no, f"{cur}-gram section has {seen.get(cur, 0)} entries, "
                           f"declared {declared[cur]}")

    while i < n:
        stripped = lines[i].strip()
        if not stripped:
            i += 1
            continue
        if stripped == "\\end\\":
            close_section(i + 1)
            for k, c in declared.items():
                if seen.get(k, 0) != c:
                    _fail(i + 1, f"missing \\{k}-grams: section")
            return BackoffLm(order, entries, vocab)
        m = section_re.match(stripped)
        if m:
            close_section(i + 1)
            cur = int(m.group(1))
            if cur not in declared:
                _fail(i + 1, f"{cur}-gram section was not declared")
            if cur in seen:
                _fail(i + 1, f"duplicate \\{cur}-grams: section")
            seen[cur] = 0
            i += 1
            continue
        if cur is None:
            _fail(i + 1, f"entry outside any n-gram section: {stripped!r}")
        if seen[cur] >= declared[cur]:
            _fail(i + 1, f"extra {cur}-gram beyond the declared {declared[cur]}")
        fields = stripped.split()
        if len(fields) not in (cur + 1, cur + 2):
            _fail(i + 1, f"expected {cur + 1} or {cur + 2} fields, got {len(fields)}")
        try:
            logp = float(fields[0])
        except ValueError:
            _fail(i + 1, f"bad log10 probability {fields[0]!r}")
        backoff = None
        if len(fields) == cur + 2:
            try:
                backoff = float(fields[-1])
            except ValueError:
                _fail(i + 1, f"bad log10 backoff weight {fields[-1]!r}")
            gram = tuple(fields[1:-1])
        else:
            gram = tuple(fields[1:cur + 1])
        if gram in entries:
            _fail(i + 1, f"duplicate n-gram {' '.join(gram)!r}")
        entries[gram] = (logp, backoff)
        if cur == 1:
            vocab.append(gram[0])
        seen[cur] += 1
        i += 1
    _fail(n, "no \\end\\ marker")


def arpa_to_text(lm: BackoffLm) -> str:
    """Serialize the stored tables back to ARPA text."""
    by_order: dict[int, list] = {}
    for gram, (logp, bo) in lm.entries.items():
        by_order.setdefault(len(gram), []).append((gram, logp, bo))
    out = ["\\data\\"]
    for k in sorted(by_order):
        out.append(f"ngram {k}={len(by_order[k])}")
    for k in sorted(by_order):
        out.append("")
        out.append(f"\\{k}-grams:")
        if k == 1:
            # Keep vocabulary order for unigrams.
            rank = {w: i for i, w in enumerate(lm.vocab)}
            rows = sorted(by_order[k], key=lambda e: rank[e[0][0]])
        else:
            rows = sorted(by_order[k], key=lambda e: e[0])
        for gram, logp, bo in rows:
            line = f"{logp!r} {' '.join(gram)}"
            if bo is not None:
                line += f" {bo!r}"
            out.append(line)
    out.append("")
    out.append("\\end\\")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Lexicon
# ---------------------------------------------------------------------------


@dataclass
class LexiconVariant:
    prob: float
    states: tuple[int, ...]


@dataclass
class Lexicon:
    """Pronunciation lexicon: each word maps to weighted state sequences."""

    words: list[str]
    variants: dict[str, list[LexiconVariant]]
    sentence_begin: str = SENTENCE_BEGIN
    sentence_end: str = SENTENCE_END
    unknown: str = UNKNOWN_WORD

    def max_state(self) -> int:
        return max(s for vs in self.variants.values() for v in vs for s in v.states)

    def min_frames(self, skip_allowed: bool = False) -> int:
        """Fewest frames any single pronunciation can occupy."""

        def need(length: int) -> int:
            if skip_allowed:
                return 1 + (length - 1 + 1) // 2
            return length

        return min(need(len(v.states)) for vs in self.variants.values() for v in vs)


def parse_lexicon(text: str, prob_tol: float = 1e-6) -> Lexicon:
    """Parse TSV lines ``word<TAB>variant_prob<TAB>s1 s2 ...``.

    Variant probabilities of one word must sum to 1 within ``prob_tol``.
    """
    words: list[str] = []
    variants: dict[str, list[LexiconVariant]] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) != 3:
            _fail(ln, f"expected 3 tab-separated fields, got {len(fields)}")
        word, prob_s, states_s = fields
        if not word:
            _fail(ln, "empty word")
        try:
            prob = float(prob_s)
        except ValueError:
            _fail(ln, f"bad variant probability {prob_s!r}")
        if not (0.0 < prob <= 1.0):
            _fail(ln, f"variant probability {prob} outside (0, 1]")
        try:
            states = tuple(int(t) for t in states_s.split())
        except ValueError:
            _fail(ln, f"bad state index in {states_s!r}")
        if not states:
            _fail(ln, f"empty state sequence for {word!r}")
        if any(s < 0 for s in states):
            _fail(ln, "negative state index")
        if word not in variants:
            words.append(word)
            variants[word] = []
        variants[word].append(LexiconVariant(prob=prob, states=states))
    if not words:
        raise FormatError("line 1: empty lexicon")
    for word in words:
        total = sum(v.prob for v in variants[word])
        if abs(total - 1.0) > prob_tol:
            raise FormatError(
                f"variant probabilities of {word!r} sum to {total}, expected 1")
    return Lexicon(words=words, variants=variants)


def lexicon_to_text(lexicon: Lexicon) -> str:
    out = []
    for word in lexicon.words:
        for v in lexicon.variants[word]:
            out.append(f"{word}\t{v.prob!r}\t{' '.join(str(s) for s in v.states)}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Emission matrices
# ---------------------------------------------------------------------------


@dataclass
class EmissionMatrix:
    """Frame-by-state natural-log emission scores, all finite and <= 0."""

    scores: np.ndarray
    frame_shift_s: float = 0.01
    utterance_id: str = ""

    @property
    def frames(self) -> int:
        return self.scores.shape[0]

    @property
    def states(self) -> int:
        return self.scores.shape[1]


def parse_emissions(text: str, utterance_id: str = "") -> EmissionMatrix:
    """Parse ``EMIT v1 <frames> <states> <frame_shift_s>`` plus one row of
    scores per frame.  A positive or non-finite score is an error naming
    its frame."""
    lines = [ln for ln in text.splitlines()]
    if not lines:
        raise FormatError("line 1: empty emission file")
    header = lines[0].split()
    if len(header) != 5 or header[0] != "EMIT" or header[1] != "v1":
        _fail(1, f"bad header {lines[0]!r}, expected 'EMIT v1 <T> <S> <shift>'")
    try:
        frames, states = int(header[2]), int(header[3])
        shift = float(header[4])
    except ValueError:
        _fail(1, f"bad header numbers in {lines[0]!r}")
    if frames < 1 or states < 1:
        _fail(1, f"need at least one frame and one state, got {frames}x{states}")
    if shift <= 0:
        _fail(1, f"frame shift must be positive, got {shift}")
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != frames:
        raise FormatError(f"line {len(lines)}: {len(rows)} score rows, "
                          f"header declares {frames}")
    scores = np.empty((frames, states))
    for t, row in enumerate(rows):
        fields = row.split()
        if len(fields) != states:
            _fail(t + 2, f"frame {t}: {len(fields)} scores, expected {states}")
        try:
            vals = [float(x) for x in fields]
        except ValueError:
            _fail(t + 2, f"frame {t}: non-numeric score")
        for s, v in enumerate(vals):
            if not math.isfinite(v) or v > 0.0:
                _fail(t + 2, f"frame {t}: score {v!r} for state {s} is not a "
                             f"log probability")
        scores[t] = vals
    return EmissionMatrix(scores=scores, frame_shift_s=shift,
                          utterance_id=utterance_id)


def emissions_to_text(em: EmissionMatrix) -> str:
    out = [f"EMIT v1 {em.frames} {em.states} {em.frame_shift_s!r}"]
    for row in em.scores:
        out.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Recurrent LM weights
# ---------------------------------------------------------------------------

_RNN_HEADER = "RNNLM v1"


def parse_rnn_weights(text: str) -> RnnWeights:
    """Parse ``RNNLM v1 <cell> <layers> <embed> <hidden> <vocab>`` followed
    by the vocabulary line and the weight matrices as row-major numbers.

    Matrix order: embedding (V x E); per layer w_in, w_rec, bias (elman
    rows H, lstm rows 4H with gates stacked i, f, g, o); output projection
    (V x H); output bias (V).  A size mismatch is reported against the
    matrix being read.
    """
    lines = text.splitlines()
    if not lines:
        raise FormatError("line 1: empty weights file")
    head = lines[0].split()
    if len(head) != 7 or " ".join(head[:2]) != _RNN_HEADER:
        _fail(1, f"bad header {lines[0]!r}")
    cell = head[2]
    if cell not in ("elman", "lstm"):
        _fail(1, f"unknown cell type {cell!r}")
    try:
        layers, embed, hidden, vsize = (int(x) for x in head[3:])
    except ValueError:
        _fail(1, f"bad header numbers in {lines[0]!r}")
    if min(layers, embed, hidden, vsize) < 1:
        _fail(1, "all dimensions must be positive")
    if len(lines) < 2:
        _fail(2, "missing vocabulary line")
    vocab = lines[1].split()
    if len(vocab) != vsize:
        _fail(2, f"{len(vocab)} vocabulary words, header declares {vsize}")

    tokens: list[str] = []
    for ln in lines[2:]:
        tokens.extend(ln.split())
    pos = 0

    def take(rows: int, cols: int, name: str) -> np.ndarray:
        nonlocal pos
        need = rows * cols
        if pos + need > len(tokens):
            raise FormatError(
                f"weights exhausted while reading {name} "
                f"({need} values needed, {len(tokens) - pos} left)")
        try:
            flat = np.array([float(t) for t in tokens[pos:pos + need]])
        except ValueError:
            raise FormatError(f"non-numeric value inside {name}")
        pos += need
        return flat.reshape(rows, cols) if cols > 1 else flat

    embedding = take(vsize, embed, "embedding")
    gate_rows = hidden if cell == "elman" else 4 * hidden
    layer_list = []
    in_dim = embed
    for li in range(layers):
        w_in = take(gate_rows, in_dim, f"layer{li}.w_in")
        w_rec = take(gate_rows, hidden, f"layer{li}.w_rec")
        bias = take(gate_rows, 1, f"layer{li}.bias")
        layer_list.append((w_in, w_rec, bias))
        in_dim = hidden
    out_w = take(vsize, hidden, "output.proj")
    out_b = take(vsize, 1, "output.bias")
    if pos != len(tokens):
        raise FormatError(f"{len(tokens) - pos} trailing values after output.bias")
    return RnnWeights(cell_type=cell, embedding=embedding, layers=layer_list,
                      out_w=out_w, out_b=out_b, vocab=vocab)


def rnn_weights_to_text(w: RnnWeights) -> str:
    head = (f"RNNLM v1 {w.cell_type} {len(w.layers)} {w.embed_dim} "
            f"{w.hidden_dim} {len(w.vocab)}")
    out = [head, " ".join(w.vocab)]

    def emit(mat: np.ndarray):
        if mat.ndim == 1:
            out.append(" ".join(repr(float(v)) for v in mat))
        else:
            for row in mat:
                out.append(" ".join(repr(float(v)) for v in row))

    emit(w.embedding)
    for w_in, w_rec, bias in w.layers:
        emit(w_in)
        emit(w_rec)
        emit(bias)
    emit(w.out_w)
    emit(w.out_b)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Corpus manifest
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    utterance_id: str
    emission_path: str
    duration_s: float
    reference: tuple[str, ...] = ()


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    @property
    def total_duration_s(self) -> float:
        return sum(e.duration_s for e in self.entries)


def parse_manifest(text: str) -> CorpusManifest:
    """Parse TSV ``utt_id<TAB>emit_path<TAB>duration_s<TAB>ref words``.

    The reference field may be empty.  Utterance ids must be unique and
    durations positive.
    """
    entries: list[ManifestEntry] = []
    ids: set[str] = set()
    for ln, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) != 4:
            _fail(ln, f"expected 4 tab-separated fields, got {len(fields)}")
        utt, path, dur_s, ref = fields
        if not utt:
            _fail(ln, "empty utterance id")
        if utt in ids:
            _fail(ln, f"duplicate utterance id {utt!r}")
        ids.add(utt)
        try:
            dur = float(dur_s)
        except ValueError:
            _fail(ln, f"bad duration {dur_s!r}")
        if dur <= 0:
            _fail(ln, f"duration must be positive, got {dur}")
        entries.append(ManifestEntry(utterance_id=utt, emission_path=path,
                                     duration_s=dur,
                                     reference=tuple(ref.split())))
    if not entries:
        raise FormatError("line 1: empty manifest")
    return CorpusManifest(entries=entries)


def manifest_to_text(manifest: CorpusManifest) -> str:
    out = []
    for e in manifest.entries:
        out.append(f"{e.utterance_id}\t{e.emission_path}\t{e.duration_s!r}\t"
                   f"{' '.join(e.reference)}")
    return "\n".join(out) + "\n"
