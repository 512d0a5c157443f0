"""Command-line entry point: ``advlab {synth,train,attack,defend,run,report}``.

Exit codes: 0 success, 2 configuration error, 3 data or I/O error,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .data import synth_generate, write_csv
from .errors import AdvLabError, ConfigurationError
from .harness import ATTACK_KINDS, ExperimentConfig, PhaseConfig
from .metrics import METRIC_KEYS, format_value
from .nn import ModelParams

log = logging.getLogger("advlab")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
MODEL_FILE = "model.bin"


def _common(p):
    p.add_argument("--config", help="JSON or YAML experiment file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--data", help="feature CSV; synthetic blobs are used when absent")
    p.add_argument("--label-col", help="label column of --data (default: label)")
    p.add_argument("--model", choices=("cnn", "mlp"), help="classifier architecture")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="advlab",
        description="Attack and defend traffic-feature malware classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic blob dataset as CSV")
    _common(p)

    p = sub.add_parser("train", help="train the baseline classifier and save it")
    _common(p)

    for name, text in (("attack", "run one attack phase and write the perturbed samples"),
                       ("defend", "run one attack phase, then the self-training defence")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--attack", choices=ATTACK_KINDS, required=True)
        p.add_argument("--model-file", help=f"baseline saved by 'train' (default: train afresh)")

    p = sub.add_parser("run", help="full pipeline: baseline, attacks, defences, report")
    _common(p)
    p.add_argument("--attack", choices=ATTACK_KINDS, action="append",
                   help="restrict to this attack (repeatable; default: all five)")
    p.add_argument("--defence", choices=("on", "off"), help="run the defence phases")
    p.add_argument("--reference", choices=sorted(harness.REFERENCE_TABLE),
                   help="add published F1/AUC columns for this dataset")

    p = sub.add_parser("report", help="print (and optionally re-emit) an existing report.csv")
    p.add_argument("--out", default="out", help="directory holding report.csv")
    p.add_argument("--plot-data", action="store_true", help="also rewrite plot_data.csv")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args):
    cfg = harness.load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.data is not None:
        changes["data_path"] = args.data
    if args.label_col is not None:
        changes["label_column"] = args.label_col
    if args.model is not None:
        changes["model"] = args.model
    if getattr(args, "defence", None) is not None:
        changes["defence"] = args.defence == "on"
    attacks = getattr(args, "attack", None)
    if attacks:
        attacks = [attacks] if isinstance(attacks, str) else attacks
        by_kind = {p.kind: p for p in cfg.phases}
        changes["phases"] = tuple(by_kind.get(k, PhaseConfig(k)) for k in dict.fromkeys(attacks))
    changes["out_dir"] = args.out
    return replace(cfg, **changes)


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _print_table(rows):
    head = ["phase", "view", *METRIC_KEYS]
    width = max([len(h) for h in head[:1]] + [len(r["phase"]) for r in rows])
    print(f"{'phase':<{width}}  {'view':<9}  " + "  ".join(f"{k:>9}" for k in METRIC_KEYS))
    for r in rows:
        print(f"{r['phase']:<{width}}  {r['view']:<9}  "
              + "  ".join(f"{r[k]:>9}" for k in METRIC_KEYS))


def cmd_synth(args):
    cfg = _config(args).resolved()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = synth_generate(cfg.synth)
    write_csv(dataset, out / "synth.csv", cfg.label_column)
    print(f"wrote {len(dataset)} samples to {out / 'synth.csv'}")


def cmd_train(args):
    cfg = _config(args)
    ctx = harness.prepare(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx.baseline.save(out / MODEL_FILE)
    row = ctx.baseline_row()
    _write_json(out / "metrics.json", row.metrics.as_dict())
    print(f"test accuracy {format_value(row.metrics.accuracy)}; model saved to {out / MODEL_FILE}")


def _phase_outcome(args, defence):
    cfg = _config(args)
    model = ModelParams.load(args.model_file) if args.model_file else None
    ctx = harness.prepare(cfg, model)
    return ctx, harness.run_phase(ctx, ctx.cfg.phases[0], defence=defence)


def cmd_attack(args):
    ctx, outcome = _phase_outcome(args, defence=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outcome.pool.write_csv(out / "perturbed.csv", ctx.cfg.label_column)
    outcome.pool.write_provenance(out / "provenance.json")
    rows = [ctx.baseline_row(), outcome.attack_row]
    harness.emit_report(harness.ExperimentReport(rows, ctx.cfg.to_dict()), out, ("csv",))
    _print_table([r.record() for r in rows])


def cmd_defend(args):
    ctx, outcome = _phase_outcome(args, defence=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outcome.defence.write_csv(out / "corrected.csv", ctx.cfg.label_column)
    outcome.defence.model.save(out / "hardened.bin")
    rows = [ctx.baseline_row(), outcome.attack_row, outcome.defence_row]
    harness.emit_report(harness.ExperimentReport(rows, ctx.cfg.to_dict()), out, ("csv",))
    _print_table([r.record() for r in rows])


def cmd_run(args):
    cfg = _config(args)
    report = harness.run_experiment(cfg)
    paths = harness.emit_report(report, args.out, reference=args.reference)
    _print_table(report.metric_table())
    print("wrote " + ", ".join(str(p) for p in paths))


def cmd_report(args):
    path = Path(args.out) / harness.REPORT_CSV
    report = harness.read_report_csv(path)
    _print_table(report.metric_table())
    if args.plot_data:
        harness.emit_report(report, args.out, ("plot-data",))


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "attack": cmd_attack,
            "defend": cmd_defend, "run": cmd_run, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except AdvLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
