"""Command line: ``xllm {gen,train,eval,generate,inspect}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PROFILES, load_config
from .errors import ConfigurationError, DataError, OrderingError, XLLMError

log = logging.getLogger("xllm")


def _global_flags(parser: argparse.ArgumentParser, defaults: bool) -> None:
    # subcommands repeat the flags with suppressed defaults so they never clobber the top-level values
    def d(value):
        return value if defaults else argparse.SUPPRESS

    parser.add_argument("--config", type=Path, default=d(None), help="YAML file with a 'profiles' tree (default: built-in)")
    parser.add_argument("--profile", choices=PROFILES, default=d("desk"))
    parser.add_argument("--seed", type=int, default=d(None))
    parser.add_argument("--run-dir", type=Path, default=d(Path("runs/desk")))
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xllm", description="Desk-scale multimodal interface stack.")
    _global_flags(p, defaults=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, defaults=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    add("gen", help="generate the synthetic corpora into <run-dir>/data")

    t = add("train", help="run one training stage (resumes finished stages)")
    t.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)

    e = add("eval", help="score recognition or judge records")
    e.add_argument("--metric", choices=("cer", "relscore"), required=True)
    e.add_argument("--input", type=Path, default=None, help="NDJSON: {reference, hypothesis} pairs for cer, judge records for relscore")
    e.add_argument("--out", type=Path, default=None, help="report stem; writes <stem>.json and <stem>.csv")

    g = add("generate", help="answer one prompt built from held corpus items")
    g.add_argument("--instruction", required=True)
    g.add_argument("--image", type=int, default=None, metavar="INDEX")
    g.add_argument("--video", type=int, default=None, metavar="INDEX")
    g.add_argument("--speech", type=int, default=None, metavar="INDEX")
    g.add_argument("--mode", choices=("greedy", "temperature"), default="greedy")
    g.add_argument("--temperature", type=float, default=1.0)
    g.add_argument("--max-new", type=int, default=32)

    i = add("inspect", help="show a rendered prompt or an integrate-and-fire trace")
    what = i.add_mutually_exclusive_group(required=True)
    what.add_argument("--prompt", action="store_true")
    what.add_argument("--cif", action="store_true")
    i.add_argument("--modalities", default="", help="comma-separated subset of image,video,speech (for --prompt)")
    i.add_argument("--instruction", default="<Instruction>")
    i.add_argument("--speech", type=int, default=0, metavar="INDEX", help="held-out utterance (for --cif)")
    return p


def _run(args):
    from .training import TrainingRun

    cfg = load_config(args.config, args.profile, seed=args.seed)
    return TrainingRun(cfg, args.run_dir)


def cmd_gen(args) -> dict:
    from .training import Corpora

    cfg = load_config(args.config, args.profile, seed=args.seed)
    corpora = Corpora.generate(cfg)
    sums = corpora.save(args.run_dir / "data", cfg.corpus)
    return {"data": str(args.run_dir / "data"), "sha256": sums}


def cmd_train(args) -> dict:
    run = _run(args)
    summary = run.run_stage_number(args.stage)
    return {k: v for k, v in summary.items() if k != "hashes"}


def _read_ndjson(path: Path) -> list[dict]:
    if path is None or not path.exists():
        raise DataError(f"input file {path} not found")
    rows = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{n}: {exc}") from None
    return rows


def cmd_eval(args) -> dict:
    from .eval import cer, cer_table, read_records, relative_score, relative_score_table, write_report

    if args.metric == "relscore":
        if args.input is None:
            raise ConfigurationError("--metric relscore needs --input records")
        scores = relative_score(read_records(args.input))
        table = relative_score_table(scores)
        summary = {"relative_score": scores}
    else:
        if args.input is not None:
            rows = _read_ndjson(args.input)
            try:
                pairs = [(list(r["reference"]), list(r["hypothesis"])) for r in rows]
            except KeyError as exc:
                raise DataError(f"cer input rows need 'reference' and 'hypothesis' ({exc} missing)") from None
        else:
            run = _run(args)
            if 1 not in run.done:
                raise OrderingError("no trained recogniser in the run directory; run 'train --stage 1' first")
            run._ensure_loaded()
            items = run.corpora.heldout_speech
            hyps = run.model.asr.recognize_batch([it["frames"] for it in items])
            pairs = [(it["tokens"], h) for it, h in zip(items, hyps)]
        reports = [cer(r, h) for r, h in pairs]
        total = sum(r.reference_length for r in reports)
        summary = {
            "cer": sum(r.errors for r in reports) / total,
            "substitutions": sum(r.substitutions for r in reports),
            "deletions": sum(r.deletions for r in reports),
            "insertions": sum(r.insertions for r in reports),
            "reference_tokens": total,
            "utterances": len(reports),
        }
        table = cer_table({"model": {"heldout": summary["cer"]}})
    if args.out is not None:
        write_report(args.out, summary, table)
    return summary


def _trained(args, stage: int):
    run = _run(args)
    if stage not in run.done:
        raise OrderingError(f"stage {stage} has not finished in {args.run_dir}")
    run._ensure_loaded()
    return run


def cmd_generate(args) -> dict:
    run = _trained(args, 3)
    c = run.corpora

    def pick(items, idx, key):
        if idx is None:
            return None
        if not 0 <= idx < len(items):
            raise DataError(f"index {idx} outside 0..{len(items) - 1}")
        return items[idx][key]

    answer = run.model.answer(
        args.instruction,
        image=pick(c.image, args.image, "pixels"),
        video=pick(c.video, args.video, "frames"),
        speech=pick(c.heldout_speech, args.speech, "frames"),
        max_new=args.max_new,
        mode=args.mode,
        temperature=args.temperature,
        seed=args.seed or 0,
    )
    return {"instruction": args.instruction, "answer": answer}


def cmd_inspect(args) -> dict:
    from .fusion import render_prompt

    if args.prompt:
        mods = [m for m in args.modalities.split(",") if m]
        return {"prompt": render_prompt(mods, args.instruction)}
    run = _trained(args, 1)
    items = run.corpora.heldout_speech
    if not 0 <= args.speech < len(items):
        raise DataError(f"index {args.speech} outside 0..{len(items) - 1}")
    _, trace = run.model.speech_tokens(items[args.speech]["frames"])
    return json.loads(trace.to_record(args.speech))


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "generate": cmd_generate, "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        out = COMMANDS[args.command](args)
    except XLLMError as exc:
        print(f"xllm: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    if args.command == "inspect" and args.prompt:
        sys.stdout.write(out["prompt"] + "\n")
    else:
        print(json.dumps(out, indent=2, default=lambda o: o.tolist() if isinstance(o, np.ndarray) else str(o)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
