"""Command-line entry point: tokenize, graph, train, generate, eval."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .ensemble import generate_ensemble
from .errors import NanyinError
from .gnn.train import ModelParams, load_checkpoint, save_checkpoint, train_stage1, write_loss_csv
from .graph import (apply_technique_rules, build_graph, inject_pentatonic_enhancement, place_ornaments,
                    serialize_graph)
from .metrics import evaluate_scores
from .midi_io import read_midi, save_midi, segment_score
from .nianzhi import train_detector
from .tokenizer import build_vocabulary, detect_nianzhi, encode, get_mode, span_beats

log = logging.getLogger("nanyin_hgnn")


class UsageError(Exception):
    pass


def _graph_for(score, cfg: config_mod.Config, mode, rng):
    g = build_graph(score, detect_nianzhi(score, cfg.detection))
    g = place_ornaments(g, cfg.graph.density, rng, cfg.graph.upper_probability, cfg.graph.edge_weight,
                        cfg.ornament.grace_offset)
    g = inject_pentatonic_enhancement(g, mode, cfg.graph.pentatonic_factor)
    return apply_technique_rules(g, cfg.graph.technique_window, cfg.graph.phrase_gap)


def cmd_tokenize(args, cfg, rng) -> int:
    mode = get_mode(args.mode or cfg.tokenizer.mode)
    score = read_midi(args.input)
    seq = encode(score, mode, build_vocabulary([mode]), cfg.detection)
    text = seq.to_json() if args.format == "json" else seq.to_text()
    Path(args.output).write_text(text)
    log.info("wrote %d tokens to %s", len(seq), args.output)
    return 0


def cmd_graph(args, cfg, rng) -> int:
    mode = get_mode(args.mode or cfg.tokenizer.mode)
    g = _graph_for(read_midi(args.input), cfg, mode, rng)
    Path(args.output).write_bytes(serialize_graph(g))
    log.info("graph: %d notes, %d ornaments, %d techs, %d edges",
             len(g.notes), len(g.ornaments), len(g.techs), len(g.edges))
    return 0


def _midi_files(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.rglob("*") if q.suffix.lower() in (".mid", ".midi")))
        else:
            out.append(p)
    return out


def cmd_train(args, cfg, rng) -> int:
    mode = get_mode(args.mode or cfg.tokenizer.mode)
    files = _midi_files(args.inputs)
    if not files:
        raise UsageError("no MIDI files given")
    segments = []
    for f in files:
        score = read_midi(f)
        notes = score.main_track()
        spans = span_beats(notes, detect_nianzhi(notes, cfg.detection))
        segments.extend(s for s in segment_score(score, cfg.tokenizer.max_segment_seconds, spans)
                        if len(s.main_track()) >= 2)
    log.info("%d segments from %d files", len(segments), len(files))
    graphs = [_graph_for(s, cfg, mode, rng) for s in segments]
    params = train_stage1(graphs, cfg.train, rng, model_config=cfg.model)
    detector = train_detector(segments, cfg.nianzhi, rng, cfg.detection)
    save_checkpoint(args.output, params, detector, config_mod.to_dict(cfg))
    if args.loss_csv:
        write_loss_csv(args.loss_csv, params.history)
    last = params.history[-1]
    log.info("trained %d epochs, final train CE %.4f, val loss %.4f",
             len(params.history), last["train_ce"], last["val_loss"])
    return 0


def cmd_generate(args, cfg, rng) -> int:
    mode = get_mode(args.mode or cfg.tokenizer.mode)
    skeleton = read_midi(args.skeleton)
    if args.checkpoint:
        params, detector, _ = load_checkpoint(args.checkpoint)
    else:
        params, detector = ModelParams.initial(cfg.model, rng=args.seed), None
    ens = cfg.ensemble
    if args.ornament_style:
        ens = dataclasses.replace(ens, style=args.ornament_style)
    if args.no_special:
        ens = dataclasses.replace(ens, special_notes=False)
    result = generate_ensemble(skeleton, params, ens, rng, detector, mode, cfg.ornament, cfg.nianzhi)
    save_midi(result.score, args.output)
    report = {"seed": args.seed, **result.report, "nianzhi": result.nianzhi_json(),
              "metrics": evaluate_scores(result.score, skeleton, mode, cfg.ors)}
    report_path = args.report or str(Path(args.output).with_suffix(".json"))
    Path(report_path).write_text(json.dumps(report, indent=2, sort_keys=True))
    log.info("wrote %s and %s", args.output, report_path)
    return 0


def cmd_eval(args, cfg, rng) -> int:
    mode = get_mode(args.mode or cfg.tokenizer.mode)
    report = evaluate_scores(read_midi(args.pred), read_midi(args.ref), mode, cfg.ors)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text)
    print(text)
    return 0


def _common_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies must not reset values given before the subcommand
    def d(value):
        return argparse.SUPPRESS if suppress else value

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    common.add_argument("--config", default=d(None), help="YAML config file; defaults are used for missing keys")
    common.add_argument("--set", action="append", default=d([]), metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False), help="debug logging")
    common.add_argument("--mode", default=d(None), help="modal system (default from config: wukong)")
    return common


def build_parser() -> argparse.ArgumentParser:
    top = _common_flags(suppress=False)
    common = _common_flags(suppress=True)
    p = argparse.ArgumentParser(prog="nanyin-hgnn", description=__doc__, parents=[top])
    sub = p.add_subparsers(dest="command", metavar="{tokenize,graph,train,generate,eval}")

    t = sub.add_parser("tokenize", parents=[common], help="MIDI -> token text")
    t.add_argument("input", help="input MIDI file")
    t.add_argument("-o", "--output", required=True, help="output token file")
    t.add_argument("--format", choices=("text", "json"), default="text")
    t.set_defaults(func=cmd_tokenize)

    g = sub.add_parser("graph", parents=[common], help="MIDI -> heterogeneous graph JSON")
    g.add_argument("input", help="input MIDI file")
    g.add_argument("-o", "--output", required=True, help="output graph JSON")
    g.set_defaults(func=cmd_graph)

    tr = sub.add_parser("train", parents=[common], help="train the stage-1 model and the nianzhi detector")
    tr.add_argument("inputs", nargs="+", help="MIDI files or directories")
    tr.add_argument("-o", "--output", default="model.json", help="checkpoint path (default model.json)")
    tr.add_argument("--loss-csv", help="write the per-epoch history as CSV")
    tr.set_defaults(func=cmd_train)

    ge = sub.add_parser("generate", parents=[common], help="skeleton MIDI -> four-instrument ensemble")
    ge.add_argument("--skeleton", required=True, help="pipa skeleton MIDI")
    ge.add_argument("--checkpoint", help="checkpoint from `train` (untrained weights if omitted)")
    ge.add_argument("-o", "--out", dest="output", default="ensemble.mid", help="output MIDI (default ensemble.mid)")
    ge.add_argument("--report", help="JSON report path (default: output with .json suffix)")
    ge.add_argument("--ornament-style", choices=("standard", "light", "melodic"))
    ge.add_argument("--no-special", action="store_true", help="disable special-note seeding")
    ge.set_defaults(func=cmd_generate)

    ev = sub.add_parser("eval", parents=[common], help="compare a generated MIDI with a reference")
    ev.add_argument("--pred", required=True, help="generated MIDI")
    ev.add_argument("--ref", required=True, help="reference MIDI")
    ev.add_argument("-o", "--output", help="also write the JSON report here")
    ev.set_defaults(func=cmd_eval)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_help(sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        cfg = config_mod.load_config(args.config) if args.config else config_mod.Config()
        cfg = config_mod.apply_overrides(cfg, args.set)
        log.info("resolved config (seed %d):\n%s", args.seed, config_mod.dump_config(cfg))
        return args.func(args, cfg, np.random.default_rng(args.seed))
    except UsageError as exc:
        log.error("%s", exc)
        return 2
    except (NanyinError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


def main() -> None:
    sys.exit(run())
