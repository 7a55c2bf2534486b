#!/usr/bin/env python3
"""Sweep recombination order against beam width on the long-memory corpus.

Prints one TSV row per (beam, n) cell.  At a wide enough beam the WER
falls as n grows, because merging word ends that agree on fewer tail
words discards recurrent histories the corpus was built to need; the
simulated batched-LM cost rises with n as more distinct histories stay
alive.  Keeping n finite is what makes the wide beams affordable: with
both the beam and n unlimited every history survives and the pass
degenerates into full enumeration, so that cell is rejected.
"""

import argparse
import math
import sys

from lmdecode.experiment import EXPERIMENT_HEADER, PipelineConfig, run_experiment
from lmdecode.synth import context_corpus


def _parse_list(text: str, convert):
    return [math.inf if t == "inf" else convert(t)
            for t in text.split(",") if t]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--strategy", default="lstm-1pass")
    ap.add_argument("--beams", default="6,10,14",
                    help="comma-separated beam widths ('inf' allowed)")
    ap.add_argument("--orders", default="1,2,3,5,9,inf",
                    help="comma-separated recombination n values")
    ap.add_argument("--repeats", type=int, default=4,
                    help="utterances per context gap")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)

    beams = _parse_list(args.beams, float)
    orders = _parse_list(args.orders, int)
    if not beams or not orders:
        ap.error("need at least one beam and one recombination order")
    for beam in beams:
        if math.isinf(beam) and any(math.isinf(n) for n in orders):
            ap.error("beam=inf with n=inf enumerates every word history "
                     "on this corpus; pick a finite beam or drop n=inf")

    bundle = context_corpus(repeats=args.repeats)
    print(EXPERIMENT_HEADER, flush=True)
    for beam in beams:
        for n in orders:
            cfg = PipelineConfig(strategy=args.strategy, beam=beam,
                                 recombination_n=n, jobs=args.jobs)
            row, = run_experiment(bundle, [cfg])
            print(row.tsv(), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
