"""Command-line interface.

Exit codes: 0 success, 2 validation failure, 3 numeric abort. A gradient check
that runs but fails its tolerance exits 1.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from .config import Config, ConfigError, TaskSpec
from .gradcheck import grad_check
from .hilbert import scan_order
from .metrics import compute_delta_g
from .tensor import NumericError, TensorError
from .train import RunReport, train

TOGGLES = ("pe", "pp", "mdhs-dirs", "topk")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pamm",
        description="Train and probe the multi-task scan-block stack on "
                    "synthetic dense-prediction data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on synthetic data")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True, help="where to write the report")
    p_train.add_argument("--progress", action="store_true")

    p_gc = sub.add_parser("grad-check", help="finite-difference gradient check")
    p_gc.add_argument("--config", required=True)

    p_h = sub.add_parser("hilbert", help="emit a scan order as JSON")
    p_h.add_argument("--height", type=int, required=True)
    p_h.add_argument("--width", type=int, required=True)
    p_h.add_argument("--direction", type=int, required=True)
    p_h.add_argument("--out", default=None)

    p_ab = sub.add_parser("ablate", help="train with and without one component")
    p_ab.add_argument("--toggle", choices=TOGGLES, required=True)
    p_ab.add_argument("--config", required=True)
    p_ab.add_argument("--out", default=None)

    p_dg = sub.add_parser("delta-g", help="aggregate gain of one report over another")
    p_dg.add_argument("--ours", required=True)
    p_dg.add_argument("--base", required=True)
    return parser


def _cmd_train(args) -> int:
    config = Config.from_json(args.config)
    report = train(config, progress=args.progress)
    report.save(args.out)
    print(f"wrote {args.out}")
    for name, value in report.final_metrics.items():
        print(f"  {name}: {value:.4f}")
    print(f"  delta_g vs {report.baseline['name']}: {report.delta_g:.2f}%")
    return 0


def _cmd_grad_check(args) -> int:
    config = Config.from_json(args.config)
    report = grad_check(config)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def _cmd_hilbert(args) -> int:
    if args.direction not in (1, 2, 3, 4):
        raise ConfigError(f"direction must be 1..4, got {args.direction}")
    if args.height < 1 or args.width < 1:
        raise ConfigError("height and width must be >= 1")
    order = scan_order(args.direction, args.height, args.width)
    payload = {
        "direction": order.direction,
        "height": order.height,
        "width": order.width,
        "visit": [[r, c] for r, c in order.visit],
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _ablated_config(config: Config, toggle: str) -> Config:
    variant = copy.deepcopy(config)
    if toggle == "pe":
        variant.experts.enabled = False
    elif toggle == "pp":
        variant.experts.priors = False
    elif toggle == "mdhs-dirs":
        variant.pame.directions = 1
    elif toggle == "topk":
        variant.experts.top_k = 1
    return variant.validate()


def _cmd_ablate(args) -> int:
    config = Config.from_json(args.config)
    variant = _ablated_config(config, args.toggle)
    full = train(config)
    reduced = train(variant)
    delta = compute_delta_g(full.final_metrics, reduced.final_metrics, config.tasks)
    payload = {
        "toggle": args.toggle,
        "delta_g_full_over_ablated": delta,
        "full_metrics": full.final_metrics,
        "ablated_metrics": reduced.final_metrics,
        "seed": config.train.seed,
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    print(f"toggle {args.toggle}: delta_g(full vs ablated) = {delta:.2f}%")
    return 0


def _cmd_delta_g(args) -> int:
    ours = RunReport.load(args.ours)
    base = RunReport.load(args.base)
    specs = [TaskSpec(**raw) for raw in ours.config["tasks"]]
    value = compute_delta_g(ours.final_metrics, base.final_metrics, specs)
    print(f"{value:.6f}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "grad-check": _cmd_grad_check,
    "hilbert": _cmd_hilbert,
    "ablate": _cmd_ablate,
    "delta-g": _cmd_delta_g,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"numeric abort: {err}", file=sys.stderr)
        return 3
    except (ValueError, TensorError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
