"""Command-line entry point: ``qcert <command> [options]``.

Options override values from ``--config``. Exit codes: 0 success, 2 invalid
config or parameters, 3 budget exceeded, 4 truncation exhausted.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import BudgetExceeded, ConfigError, PovmError, TruncationExhausted
from .experiments import COMMANDS, ExperimentConfig, run

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_TRUNCATION = 0, 2, 3, 4


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _sigma(text: str):
    """A comma-separated eigenvalue list, or a path to a JSON state file."""
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        return text


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qcert", description="Certification-lower-bound simulation experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--family", choices=["mixedness", "paninski", "offdiag", "multiblock"])
    p.add_argument("--strategy", choices=["standard", "haar", "k-eigen"])
    p.add_argument("--d", type=int)
    p.add_argument("--d1", type=int)
    p.add_argument("--d2", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--n-values", dest="n_values", type=_int_list)
    p.add_argument("--d-values", dest="d_values", type=_int_list)
    p.add_argument("--trials", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scheme", choices=["simple", "refined"])
    p.add_argument("--path", choices=["auto", "exhaustive", "estimator"])
    p.add_argument("--likelihood", choices=["exact", "bank"])
    p.add_argument("--sigma", type=_sigma, help="eigenvalues 'a,b,...' or a JSON state file")
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--t", type=int)
    p.add_argument("--prefixes", type=int)
    p.add_argument("--max-n", dest="max_n", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--force", action="store_true", default=None)
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    data["command"] = args.command
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        data[key] = value
    if args.command == "bound-calc" and "format" not in data:
        data["format"] = "json"
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        text = run(cfg).render(cfg.format)
    except BudgetExceeded as exc:
        print(f"qcert: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except TruncationExhausted as exc:
        print(f"qcert: truncation exhausted: {exc}", file=sys.stderr)
        return EXIT_TRUNCATION
    except (ValueError, PovmError) as exc:
        print(f"qcert: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
