"""Command-line entry point.

Exit codes: 0 success, 1 internal error, 2 configuration error, 3 invalid
input data, 4 missing or stale upstream stage, 5 output directory locked,
6 training diverged. Failures also print one JSON object to stderr with
``error`` (the category), ``message`` and, where known, ``rerun``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from xml.etree.ElementTree import ParseError

from citysplat.binio import FormatError
from citysplat.citymodel.parser import CityGMLParseError
from citysplat.citymodel.triangulate import GeometryError
from citysplat.identity.train import TrainingDiverged
from citysplat.masks.fusion import ConfigError as FusionConfigError
from citysplat.pipeline.config import ConfigError, load_config
from citysplat.pipeline.manifest import OutputLocked, StageDependencyError
from citysplat.pipeline.stages import read_prompt_file, run_all, run_stage

log = logging.getLogger("citysplat")

EXIT = {"internal": 1, "config": 2, "input": 3, "dependency": 4, "locked": 5, "training": 6}


def _categorize(exc: BaseException) -> str:
    if isinstance(exc, (ConfigError, FusionConfigError)):
        return "config"
    if isinstance(exc, StageDependencyError):
        return "dependency"
    if isinstance(exc, OutputLocked):
        return "locked"
    if isinstance(exc, TrainingDiverged):
        return "training"
    if isinstance(exc, (CityGMLParseError, GeometryError, FormatError, ParseError, ValueError, OSError)):
        return "input"
    return "internal"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (YAML)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a config field, e.g. masks.m_view=5; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    p = argparse.ArgumentParser(prog="citysplat", description="Hierarchical semantic labelling of Gaussian scenes "
                                "from CityGML building models and instance masks.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [("citymodel", "parse CityGML into the semantic table and labelled mesh"),
                       ("raycast", "two-pass raycasting of hierarchical id maps"),
                       ("fuse", "filter, associate and fuse instance masks with city ids"),
                       ("train", "optimise per-Gaussian identity codes"),
                       ("eval", "score query masks against ground truth and render figures")]:
        sub.add_parser(name, parents=[common], help=text)
    for name, text in [("query", "answer text prompts with binary masks"),
                       ("run-all", "run every stage in order")]:
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--prompt", action="append", default=[], help="text prompt; repeatable")
        sp.add_argument("--prompts-file", help="YAML list of prompts or {prompt, level, embedding} entries")
        sp.add_argument("--level", default="Any", choices=["Feature", "Surface", "Part", "Any"],
                        help="hierarchy level for --prompt queries")
    demo = sub.add_parser("make-demo", help="write a synthetic input set with config.yaml")
    demo.add_argument("directory")
    demo.add_argument("--seed", type=int, default=0)
    demo.add_argument("-v", "--verbose", action="store_true")
    return p


def _prompts(args) -> list:
    out = [{"prompt": p, "level": args.level} for p in args.prompt]
    if args.prompts_file:
        out += read_prompt_file(args.prompts_file)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "make-demo":
            from citysplat.synthetic import write_demo

            print(write_demo(args.directory, seed=args.seed))
            return 0
        cfg = load_config(args.config, args.override, out=args.out, seed=args.seed)
        if args.command == "run-all":
            run_all(cfg, _prompts(args))
        elif args.command == "query":
            run_stage(cfg, "query", prompts=_prompts(args))
        else:
            run_stage(cfg, args.command)
        print(cfg.out_dir)
        return 0
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit category
        cat = _categorize(exc)
        err = {"error": cat, "message": str(exc)}
        if isinstance(exc, StageDependencyError):
            err["rerun"] = f"stage_{exc.upstream}"
        if cat == "internal":
            log.exception("unexpected failure")
        print(json.dumps(err), file=sys.stderr)
        return EXIT[cat]


if __name__ == "__main__":
    sys.exit(main())
