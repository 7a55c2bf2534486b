#!/usr/bin/env python3
"""Write a synthetic corpus to disk in the formats the CLI reads.

Two flavors.  "random" plants independent random references over one
shared random lexicon and language model pair; "context" writes the
long-memory corpus used by the recombination sweep, where the opening
word is acoustically ambiguous and only a recurrent history that spans
the filler words recovers it.

Typical use:

    python3 scripts/make_corpus.py --out /tmp/corpus --kind context
    lmdecode decode --lexicon /tmp/corpus/lexicon.txt \
        --manifest /tmp/corpus/manifest.tsv --arpa /tmp/corpus/lm.arpa
"""

import argparse
import sys
from pathlib import Path

from lmdecode.formats import (
    CorpusManifest,
    ManifestEntry,
    arpa_to_text,
    emissions_to_text,
    lexicon_to_text,
    manifest_to_text,
    rnn_weights_to_text,
)
from lmdecode.synth import context_corpus, make_rng, planted_emissions, random_instance


def write_corpus(out: Path, lexicon, backoff, rnn, utterances):
    out.mkdir(parents=True, exist_ok=True)
    (out / "lexicon.txt").write_text(lexicon_to_text(lexicon))
    (out / "lm.arpa").write_text(arpa_to_text(backoff))
    (out / "rnn.rnnlm").write_text(rnn_weights_to_text(rnn))
    entries = []
    for uid, em, ref in utterances:
        (out / f"{uid}.fem").write_text(emissions_to_text(em))
        entries.append(ManifestEntry(
            utterance_id=uid, emission_path=f"{uid}.fem",
            duration_s=em.frames * em.frame_shift_s, reference=tuple(ref)))
    (out / "manifest.tsv").write_text(
        manifest_to_text(CorpusManifest(entries=entries)))
    return entries


def random_corpus(seed: int, n_utterances: int, n_vocab: int):
    inst = random_instance(make_rng(seed), n_vocab=(n_vocab, n_vocab))
    rng = make_rng(seed + 1)
    utterances = []
    for i in range(n_utterances):
        size = 1 + int(rng.integers(0, 3))
        ref = tuple(inst.lexicon.words[int(j)]
                    for j in rng.integers(0, n_vocab, size=size))
        uid = f"u{i:03d}"
        em = planted_emissions(rng, inst.lexicon, ref, utterance_id=uid)
        utterances.append((uid, em, ref))
    return inst.lexicon, inst.backoff, inst.rnn, utterances


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True, help="output directory")
    ap.add_argument("--kind", choices=("random", "context"), default="random")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--utterances", type=int, default=20,
                    help="utterance count for --kind random")
    ap.add_argument("--vocab", type=int, default=4,
                    help="vocabulary size for --kind random (at least 2)")
    ap.add_argument("--repeats", type=int, default=4,
                    help="utterances per context gap for --kind context")
    args = ap.parse_args(argv)
    if args.vocab < 2:
        ap.error("--vocab must be at least 2")
    if args.utterances < 1 or args.repeats < 1:
        ap.error("--utterances and --repeats must be positive")

    if args.kind == "context":
        bundle = context_corpus(repeats=args.repeats)
        entries = write_corpus(args.out, bundle.lexicon, bundle.backoff,
                               bundle.rnn, bundle.utterances)
    else:
        lexicon, backoff, rnn, utterances = random_corpus(
            args.seed, args.utterances, args.vocab)
        entries = write_corpus(args.out, lexicon, backoff, rnn, utterances)
    total = sum(e.duration_s for e in entries)
    print(f"wrote {len(entries)} utterances ({total:.2f}s of audio) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
