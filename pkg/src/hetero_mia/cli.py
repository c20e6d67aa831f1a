"""``hetero-mia`` command line.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import experiment as ex
from .dataset import gen_synthetic, load_csv, load_schema, load_synthetic_spec, preprocess
from .errors import ConfigError, DataError, HeteroMIAError
from .metric import heterogeneity

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_metric(args) -> int:
    if args.config:
        cfg = ex.load_config(args.config, seed=args.seed)
        report = ex.repeat_heterogeneity(cfg, args.repeat)
    else:
        if not (args.a and args.b and args.schema):
            raise ConfigError("metric needs --config, or all of --a, --b and --schema")
        schema = load_schema(args.schema)
        raw_a, raw_b = load_csv(args.a, schema), load_csv(args.b, schema)
        # shared vocabulary across both files so the feature spaces line up
        declared = {c.name for c in schema.columns if c.vocabulary is not None}
        vocab = {
            k: tuple(sorted(set(raw_a.vocabularies[k]) | set(raw_b.vocabularies[k])))
            for k in raw_a.vocabularies
            if k not in declared
        }
        a = preprocess(load_csv(args.a, schema, vocab), standardize=args.standardize)
        b = preprocess(load_csv(args.b, schema, vocab), standardize=args.standardize)
        report = heterogeneity(a, b)
    _emit(report.to_dict(), args.out)
    print(report.summary(), file=sys.stderr)
    return EXIT_OK


def cmd_split(args) -> int:
    raw = yaml.safe_load(Path(args.plan).read_text())
    base = Path(args.plan).parent
    if args.data or args.schema:
        if not (args.data and args.schema):
            raise ConfigError("--data and --schema go together")
        raw["dataset"] = {"path": str(Path(args.data).resolve()), "schema": str(Path(args.schema).resolve())}
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = ex.config_from_dict(raw, base)
    _, model_ds = ex.load_data(cfg)
    sp = ex.repeat_split(cfg, args.repeat, model_ds)
    _emit(sp.to_dict(), args.out)
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = ex.load_config(args.config, seed=args.seed)
    record = ex.run_repeat(cfg, args.repeat, keep_artifacts=True)
    if record.status != "ok":
        print(f"attack run failed: {record.error}", file=sys.stderr)
        return EXIT_RUNTIME
    results = [dict(s, config=cfg.attack.to_dict()) for s in record.scores.values()]
    for res in results:
        for k in ("scores", "membership", "indices"):
            res.pop(k, None)
    out = Path(args.out) if args.out else None
    _emit({"repeat": args.repeat, "rhos": list(cfg.rhos), "results": results}, str(out / "attack.json") if out else None)
    if args.scores_csv:
        with open(args.scores_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rho", "index", "membership", "score"])
            for rho, s in record.scores.items():
                for idx, bit, score in zip(s["indices"], s["membership"], s["scores"]):
                    writer.writerow([f"{rho:g}", idx, bit, repr(score)])
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = ex.load_config(args.config, seed=args.seed, output_dir=args.out)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    if cfg.output_dir is None:
        raise ConfigError("no output directory: set output_dir in the config or pass --out")
    report = ex.run_experiment(cfg)
    print(ex.emit_table(report, "markdown"), end="")
    failed = len(report.runs) - len(report.successful)
    if failed:
        print(f"{failed} of {len(report.runs)} runs failed; see report.json", file=sys.stderr)
    print(f"wrote {cfg.output_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = load_synthetic_spec(args.config)
    ds = gen_synthetic(spec, args.seed if args.seed is not None else 0)
    if not args.out:
        raise ConfigError("synth needs --out <csv path>")
    sidecar = ds.save(args.out)
    print(f"wrote {ds.n} rows x {ds.d} features to {args.out} (metadata: {sidecar})", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetero-mia", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("metric", help="heterogeneity between two datasets")
    p.add_argument("--a")
    p.add_argument("--b")
    p.add_argument("--schema")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--config", help="experiment config: measure attacker vs target of its split")
    p.add_argument("--repeat", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("split", help="emit attacker/target/non-member index lists")
    p.add_argument("--plan", "--config", dest="plan", required=True, help="YAML with a split section")
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--repeat", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("attack", help="run one repeat of an experiment and emit attack results")
    p.add_argument("--config", required=True)
    p.add_argument("--repeat", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for attack.json (default: stdout)")
    p.add_argument("--scores-csv", help="dump per-point scores here")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("run-experiment", help="full experiment with report and tables")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="sample a synthetic dataset from a Gaussian spec")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (HeteroMIAError, RuntimeError, ValueError, FloatingPointError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
