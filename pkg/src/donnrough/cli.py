"""Command line entry point: ``donnrough <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .config import ConfigError, load_config
from .dataio import DataError, export_mask, load_checkpoint, save_checkpoint
from .slr import SlrDivergenceError
from . import train as tr

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 2, 3, 4

log = logging.getLogger("donnrough")


def _config(args):
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        node = overrides
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, args.preset, overrides)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args):
    cfg = _config(args)
    out = _out(args)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    _, report = tr.train(cfg, out)
    print(f"accuracy {report.accuracy:.4f}  R_overall {report.roughness_before.overall:.4f}")


def cmd_evaluate(args):
    cfg = _config(args)
    model = load_checkpoint(args.checkpoint)
    _, test = tr.load_data(cfg)
    acc = tr.evaluate(model, test)
    (_out(args) / "evaluate.json").write_text(json.dumps({"checkpoint": str(args.checkpoint), "accuracy": acc}))
    print(f"accuracy {acc:.4f}")


def cmd_sparsify(args):
    cfg = _config(args)
    if not cfg.uses_slr:
        raise ConfigError(f"sparsify needs mode B, C or D, config has {cfg.mode!r}")
    model = load_checkpoint(args.checkpoint)
    train_set, test = tr.load_data(cfg)
    sparse, history = tr.sparsify(model, train_set, cfg)
    from .roughness import overall_roughness

    report = tr.RunReport(tr.evaluate(sparse, test), overall_roughness(sparse, cfg.neighbors),
                          slr_trace=history, config=cfg.to_dict(), calls=["load", "slr"])
    tr.write_run(sparse, report, cfg, _out(args), name="sparse")
    print(f"accuracy {report.accuracy:.4f}  R_overall {report.roughness_before.overall:.4f}")


def cmd_smooth2pi(args):
    cfg = _config(args)
    check = None
    try:
        check = tr.load_data(cfg)[1].X[:500]
    except (OSError, DataError) as e:
        log.warning("no held-out data for the prediction check: %s", e)
    out = _out(args)
    result = tr.smooth2pi(args.checkpoint, out / "smoothed.ckpt", cfg, check)
    (out / "smoothing.csv").write_text(result.to_csv())
    print(f"R_overall {result.before.overall:.4f} -> {result.after.overall:.4f} "
          f"({100 * result.reduction:.1f}% lower)")


def cmd_report(args):
    text = tr.roughness_report(args.checkpoint)
    if args.out:
        (_out(args) / "roughness.csv").write_text(text)
    sys.stdout.write(text)


def cmd_sweep(args):
    cfg = _config(args)
    values = [yaml.safe_load(v) for v in args.values.split(",")]
    if len(values) < 2:
        raise ConfigError("a sweep needs at least two values")
    sys.stdout.write(tr.sweep(cfg, args.axis, values, _out(args)))


def cmd_export_mask(args):
    model = load_checkpoint(args.checkpoint)
    out = _out(args)
    layers = range(model.depth) if args.layer is None else [args.layer]
    for i in layers:
        export_mask(model.masks[i], out / f"layer{i}.{args.format}", args.format)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--preset", choices=["desk", "paper"], default="desk")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="runs/latest")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="donnrough", description="Roughness-aware diffractive network trainer")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common]).set_defaults(func=cmd_train)
    for name, func in (("evaluate", cmd_evaluate), ("sparsify", cmd_sparsify), ("smooth2pi", cmd_smooth2pi),
                       ("report", cmd_report)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--checkpoint", required=True)
        p.set_defaults(func=func)
    p = sub.add_parser("sweep", parents=[common])
    p.add_argument("--axis", choices=sorted(tr.SWEEP_AXES), required=True)
    p.add_argument("--values", required=True, help="comma separated")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("export-mask", parents=[common])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", type=int)
    p.add_argument("--format", choices=["csv", "pgm"], default="csv")
    p.set_defaults(func=cmd_export_mask)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (tr.DivergenceError, SlrDivergenceError) as e:
        print(f"numerical divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return 0


if __name__ == "__main__":
    sys.exit(main())
