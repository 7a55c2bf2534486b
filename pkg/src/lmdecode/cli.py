"""Command-line entry point.

Subcommands: decode, rescore, fullsum, evaluate, ppl, bench-batch,
grid-search, run-experiment.  Options may come from a key=value config
file (--config); explicit flags win over the file, the file wins over
defaults.  Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from .batching import BatchCostModel, simulate_cost
from .experiment import (EXPERIMENT_HEADER, STRATEGIES, PipelineConfig,
                         grid_search, run_corpus, run_experiment)
from .formats import (FormatError, parse_arpa, parse_emissions, parse_lexicon,
                      parse_manifest, parse_rnn_weights)
from .lattice import read_lattice, write_lattice
from .lattice_ops import push_forward_rescore
from .lm import BackoffLm, InterpolatedLm, InterpolationConfig, RecurrentLm, perplexity
from .metrics import RtfReport, WerCounts, word_error_counts
from .synth import CorpusBundle
from .search_net import HmmTopology

INF = math.inf


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the contract here is 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _float_or_inf(text: str) -> float:
    return INF if text.lower() in ("inf", "infinity") else float(text)


def _int_or_inf(text: str) -> float:
    return INF if text.lower() in ("inf", "infinity") else int(text)


def _int_or_none(text: str):
    return None if text.lower() == "none" else int(text)


# Option name -> (coercion, default).  These are the settings a config
# file may provide; flags always override.
_SETTINGS = {
    "beam": (_float_or_inf, INF),
    "max_hyps": (_int_or_none, None),
    "recomb_n": (_int_or_inf, INF),
    "scale_am": (float, 1.0),
    "scale_lm": (float, 1.0),
    "lambda_backoff": (float, 0.5),
    "lambda_recurrent": (float, 0.5),
    "mode": (str, "viterbi"),
    "k": (int, 16),
    "rescore_beam": (_float_or_inf, INF),
    "posterior_scale": (float, 1.0),
    "jobs": (int, 1),
    "batch_capacity": (int, 32),
    "lookahead": (lambda s: s.lower() in ("1", "true", "yes"), True),
}


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="key=value settings file")
    parser.add_argument("--lexicon", help="pronunciation lexicon (TSV)")
    parser.add_argument("--arpa", help="backoff LM in ARPA format")
    parser.add_argument("--rnnlm", help="recurrent LM weights file")
    parser.add_argument("--manifest", help="corpus manifest (TSV)")
    parser.add_argument("--out", help="output path (default stdout)")
    for name in _SETTINGS:
        flag = "--" + name.replace("_", "-")
        parser.add_argument(flag, dest=name, default=None)


def _merge_settings(parser, args) -> dict:
    merged = {name: default for name, (_, default) in _SETTINGS.items()}
    if args.config:
        text = Path(args.config).read_text()
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"line {ln}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            key = key.strip().replace("-", "_")
            if key not in _SETTINGS:
                raise FormatError(f"line {ln}: unknown setting {key!r}")
            try:
                merged[key] = _SETTINGS[key][0](value.strip())
            except ValueError:
                raise FormatError(f"line {ln}: bad value for {key}: {value!r}")
    for name, (coerce, _) in _SETTINGS.items():
        value = getattr(args, name, None)
        if value is not None:
            try:
                merged[name] = coerce(value) if isinstance(value, str) else value
            except ValueError:
                parser.error(f"bad value for --{name.replace('_', '-')}: {value!r}")
    return merged


def _require(parser, args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        parser.error("missing required option(s): "
                     + ", ".join("--" + n.replace("_", "-") for n in missing))


def _load_corpus(args) -> CorpusBundle:
    lexicon = parse_lexicon(Path(args.lexicon).read_text())
    manifest = parse_manifest(Path(args.manifest).read_text())
    base = Path(args.manifest).parent
    backoff = parse_arpa(Path(args.arpa).read_text()) if args.arpa else None
    rnn = (parse_rnn_weights(Path(args.rnnlm).read_text())
           if args.rnnlm else None)
    bundle = CorpusBundle(lexicon=lexicon, rnn=rnn, backoff=backoff,
                          topology=HmmTopology())
    for entry in manifest.entries:
        emissions = parse_emissions((base / entry.emission_path).read_text(),
                                    utterance_id=entry.utterance_id)
        bundle.utterances.append((entry.utterance_id, emissions,
                                  entry.reference))
    return bundle


def _build_scorer(parser, bundle: CorpusBundle, merged, fresh: bool = True):
    backoff = bundle.backoff
    if backoff is not None and fresh:
        backoff = BackoffLm(backoff.order, backoff.entries, backoff.vocab)
    recurrent = (RecurrentLm(bundle.rnn, batch_capacity=merged["batch_capacity"])
                 if bundle.rnn is not None else None)
    if backoff is not None and recurrent is not None:
        cfg = InterpolationConfig(lambda_backoff=merged["lambda_backoff"],
                                  lambda_recurrent=merged["lambda_recurrent"])
        return InterpolatedLm(backoff, recurrent, cfg)
    if backoff is not None:
        return backoff
    if recurrent is not None:
        return recurrent
    parser.error("need --arpa, --rnnlm, or both")


def _write_out(args, lines):
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


_STRATEGY_NEEDS = {
    "backoff-1pass": ("backoff",),
    "lstm-1pass": ("rnn",),
    "backoff+rescore": ("backoff", "rnn"),
    "lstm-n2+rescore": ("rnn",),
    "fullsum": ("rnn",),
    "fullsum+cn": ("rnn",),
}


def _check_strategy(parser, bundle: CorpusBundle, strategy: str):
    if strategy not in STRATEGIES:
        parser.error(f"unknown strategy {strategy!r}")
    for need in _STRATEGY_NEEDS[strategy]:
        if getattr(bundle, need) is None:
            flag = "--arpa" if need == "backoff" else "--rnnlm"
            parser.error(f"strategy {strategy!r} needs {flag}")


def _pipeline_config(merged, strategy: str, jobs=None) -> PipelineConfig:
    return PipelineConfig(
        strategy=strategy, beam=merged["beam"], max_hyps=merged["max_hyps"],
        recombination_n=merged["recomb_n"], scale_am=merged["scale_am"],
        scale_lm=merged["scale_lm"], lambda_backoff=merged["lambda_backoff"],
        lambda_recurrent=merged["lambda_recurrent"], k=merged["k"],
        rescore_beam=merged["rescore_beam"],
        posterior_scale=merged["posterior_scale"],
        batch_capacity=merged["batch_capacity"], lookahead=merged["lookahead"],
        jobs=merged["jobs"] if jobs is None else jobs)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_decode(parser, args):
    from .decoder import DecodeConfig, decode
    from .search_net import PrefixTree, normalize_topology

    _require(parser, args, "lexicon", "manifest")
    merged = _merge_settings(parser, args)
    bundle = _load_corpus(args)
    tree = PrefixTree(bundle.lexicon)
    mode = merged["mode"]
    if mode not in ("viterbi", "fullsum"):
        parser.error(f"unknown mode {mode!r}")
    topology = (normalize_topology(bundle.topology) if mode == "fullsum"
                else bundle.topology)
    n = INF if mode == "fullsum" else merged["recomb_n"]
    lines = []
    lat_dir = Path(args.write_lattices) if args.write_lattices else None
    if lat_dir:
        lat_dir.mkdir(parents=True, exist_ok=True)
    for uid, emissions, _ in bundle.utterances:
        scorer = _build_scorer(parser, bundle, merged)
        cfg = DecodeConfig(beam=merged["beam"], max_hyps=merged["max_hyps"],
                           recombination_n=n, mode=mode,
                           scale_am=merged["scale_am"],
                           scale_lm=merged["scale_lm"],
                           lookahead_enabled=merged["lookahead"])
        result = decode(emissions, tree, scorer, topology, cfg)
        lines.append(f"{uid}\t{' '.join(result.words)}")
        if lat_dir:
            (lat_dir / f"{uid}.lat").write_text(write_lattice(result.lattice))
    _write_out(args, lines)


def _cmd_rescore(parser, args):
    _require(parser, args, "manifest")
    if not args.lattice_dir:
        parser.error("missing required option(s): --lattice-dir")
    merged = _merge_settings(parser, args)
    manifest = parse_manifest(Path(args.manifest).read_text())
    backoff = parse_arpa(Path(args.arpa).read_text()) if args.arpa else None
    rnn = (parse_rnn_weights(Path(args.rnnlm).read_text())
           if args.rnnlm else None)
    bundle = CorpusBundle(lexicon=None, rnn=rnn, backoff=backoff,
                          topology=HmmTopology())
    lines = []
    for entry in manifest.entries:
        lattice = read_lattice(
            (Path(args.lattice_dir) / f"{entry.utterance_id}.lat").read_text())
        scorer = _build_scorer(parser, bundle, merged)
        result = push_forward_rescore(lattice, scorer, k=merged["k"],
                                      rescore_beam=merged["rescore_beam"],
                                      scale_am=1.0,
                                      scale_lm=merged["scale_lm"])
        lines.append(f"{entry.utterance_id}\t{' '.join(result.words)}")
    _write_out(args, lines)


def _cmd_fullsum(parser, args):
    from .decoder import DecodeConfig, decode
    from .lattice_ops import cn_decode, confusion_network, forward_backward
    from .search_net import PrefixTree, normalize_topology

    _require(parser, args, "lexicon", "manifest")
    merged = _merge_settings(parser, args)
    bundle = _load_corpus(args)
    tree = PrefixTree(bundle.lexicon)
    topology = normalize_topology(bundle.topology)
    lines = []
    for uid, emissions, _ in bundle.utterances:
        scorer = _build_scorer(parser, bundle, merged)
        cfg = DecodeConfig(beam=merged["beam"], max_hyps=merged["max_hyps"],
                           recombination_n=INF, mode="fullsum",
                           scale_am=merged["scale_am"],
                           scale_lm=merged["scale_lm"],
                           lookahead_enabled=merged["lookahead"])
        result = decode(emissions, tree, scorer, topology, cfg)
        words = result.words
        if args.cn:
            post = forward_backward(result.lattice, scale_am=1.0,
                                    scale_lm=merged["scale_lm"],
                                    posterior_scale=merged["posterior_scale"])
            words = cn_decode(confusion_network(result.lattice, post,
                                                scale_am=1.0,
                                                scale_lm=merged["scale_lm"]))
        lines.append(f"{uid}\t{' '.join(words)}")
    _write_out(args, lines)


def _cmd_evaluate(parser, args):
    _require(parser, args, "manifest")
    if not args.hyp:
        parser.error("missing required option(s): --hyp")
    manifest = parse_manifest(Path(args.manifest).read_text())
    hyps = {}
    for ln, raw in enumerate(Path(args.hyp).read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) not in (1, 2):
            raise FormatError(f"line {ln}: expected 'utt<TAB>words'")
        hyps[parts[0]] = tuple(parts[1].split()) if len(parts) == 2 else ()
    counts = WerCounts()
    for entry in manifest.entries:
        if entry.utterance_id not in hyps:
            raise FormatError(f"no hypothesis for {entry.utterance_id!r}")
        counts = counts + word_error_counts(entry.reference,
                                            hyps[entry.utterance_id])
    lines = [f"substitutions\t{counts.substitutions}",
             f"deletions\t{counts.deletions}",
             f"insertions\t{counts.insertions}",
             f"reference_words\t{counts.reference_words}",
             f"wer\t{counts.wer:.4f}"]
    if args.wall_seconds is not None:
        report = RtfReport(audio_seconds=manifest.total_duration_s,
                           compute_seconds=float(args.wall_seconds))
        lines.append(f"rtf\t{report.rtf:.4f}")
    _write_out(args, lines)


def _cmd_ppl(parser, args):
    if not args.text:
        parser.error("missing required option(s): --text")
    merged = _merge_settings(parser, args)
    backoff = parse_arpa(Path(args.arpa).read_text()) if args.arpa else None
    rnn = (parse_rnn_weights(Path(args.rnnlm).read_text())
           if args.rnnlm else None)
    bundle = CorpusBundle(lexicon=None, rnn=rnn, backoff=backoff,
                          topology=HmmTopology())
    scorer = _build_scorer(parser, bundle, merged, fresh=False)
    sentences = [line.split() for line in Path(args.text).read_text().splitlines()
                 if line.strip()]
    _write_out(args, [f"perplexity\t{perplexity(scorer, sentences):.6f}"])


def _cmd_bench_batch(parser, args):
    sizes = ([int(s) for s in args.sizes.split(",")] if args.sizes
             else [1, 2, 4, 8, 16, 32, 64])
    model = BatchCostModel()
    lines = ["batch_size\tms_per_history"]
    for size, per in simulate_cost(model, sizes):
        lines.append(f"{size}\t{per:.6f}")
    _write_out(args, lines)


def _cmd_grid_search(parser, args):
    _require(parser, args, "lexicon", "manifest")
    merged = _merge_settings(parser, args)
    bundle = _load_corpus(args)
    if bundle.rnn is None and bundle.backoff is None:
        parser.error("need --arpa, --rnnlm, or both")
    try:
        ams = [float(x) for x in args.scales_am.split(",")]
        lms = [float(x) for x in args.scales_lm.split(",")]
    except (AttributeError, ValueError):
        parser.error("grid-search needs --scales-am and --scales-lm "
                     "as comma-separated floats")
    strategy = args.strategy or "lstm-1pass"
    _check_strategy(parser, bundle, strategy)
    cfg = _pipeline_config(merged, strategy)
    result = grid_search(bundle, cfg, [(a, l) for a in ams for l in lms])
    lines = ["scale_am\tscale_lm\twer"]
    lines += [f"{p.scale_am:g}\t{p.scale_lm:g}\t{p.wer:.4f}"
              for p in result.points]
    lines.append(f"best\t{result.best[0]:g}\t{result.best[1]:g}")
    _write_out(args, lines)


def _cmd_run_experiment(parser, args):
    _require(parser, args, "lexicon", "manifest")
    merged = _merge_settings(parser, args)
    bundle = _load_corpus(args)
    strategies = (args.strategies.split(",") if args.strategies
                  else ["lstm-1pass"])
    for s in strategies:
        _check_strategy(parser, bundle, s)
    beams = ([_float_or_inf(b) for b in args.beams.split(",")]
             if args.beams else [merged["beam"]])
    configs = []
    for s in strategies:
        for beam in beams:
            cfg = _pipeline_config(merged, s)
            cfg.beam = beam
            configs.append(cfg)
    rows = run_experiment(bundle, configs)
    _write_out(args, [EXPERIMENT_HEADER] + [r.tsv() for r in rows])


def main(argv=None) -> int:
    parser = _Parser(prog="lmdecode",
                     description="Beam-search decoding kernel with recurrent "
                                 "LM histories")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("decode", help="one-pass beam search over a corpus")
    _add_common(p)
    p.add_argument("--write-lattices", help="directory for lattice output")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("rescore", help="push-forward rescoring of lattices")
    _add_common(p)
    p.add_argument("--lattice-dir", help="directory holding <utt>.lat files")
    p.set_defaults(func=_cmd_rescore)

    p = sub.add_parser("fullsum", help="probability-summation decoding")
    _add_common(p)
    p.add_argument("--cn", action="store_true",
                   help="confusion network decoding on the lattice")
    p.set_defaults(func=_cmd_fullsum)

    p = sub.add_parser("evaluate", help="WER (and RTF) for a hypothesis file")
    _add_common(p)
    p.add_argument("--hyp", help="hypothesis TSV from decode/rescore/fullsum")
    p.add_argument("--wall-seconds", type=float, default=None,
                   help="wallclock seconds to report RTF against")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ppl", help="corpus perplexity of a scorer")
    _add_common(p)
    p.add_argument("--text", help="one sentence per line")
    p.set_defaults(func=_cmd_ppl)

    p = sub.add_parser("bench-batch", help="cost model per-history table")
    _add_common(p)
    p.add_argument("--sizes", help="comma-separated batch sizes")
    p.set_defaults(func=_cmd_bench_batch)

    p = sub.add_parser("grid-search", help="scale grid search on a corpus")
    _add_common(p)
    p.add_argument("--scales-am", help="comma-separated acoustic scales")
    p.add_argument("--scales-lm", help="comma-separated LM scales")
    p.add_argument("--strategy", help="pipeline strategy to evaluate")
    p.set_defaults(func=_cmd_grid_search)

    p = sub.add_parser("run-experiment", help="strategy comparison table")
    _add_common(p)
    p.add_argument("--strategies", help="comma-separated strategy names")
    p.add_argument("--beams", help="comma-separated beams for the sweep")
    p.set_defaults(func=_cmd_run_experiment)

    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.error("a subcommand is required")
    try:
        args.func(parser, args)
    except (FormatError, FileNotFoundError, ValueError, OSError) as exc:
        sys.stderr.write(f"lmdecode: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
