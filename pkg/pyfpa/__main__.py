"""Command line front end.

    pyfpa <command> [--instance PATH] [--seed N] [--samples N] [--tol X] [--out PATH] ...

Every command writes one report, to --out or to standard output. JSON
reports carry the tool version, the tolerances and seed used, and a
config line that reproduces them when run again. Numbers are written with
12 significant digits."""

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import __version__
from .numerics import ToleranceConfig, ConvergenceError, BracketError, QUADRATURE_TOL, MINIMIZE_TOL
from .model import AuctionInstance, InvalidInstanceError, InvalidStrategyError, InstanceParseError, load_strategies
from .bounds import DomainError, CertificationError, PHI_CLAIM, phi_constant, old_constant, ell_table, write_ell_table
from .equilibrium import EquilibriumSolution, ShootingOptions, solve, best_response_residual
from .welfare import WELFARE_TOL, DEFAULT_SAMPLES, equilibrium_welfare, audit_lemmas

__all__ = [ "RunConfig", "ConfigError", "COMMANDS", "run", "main",
            "EXIT_OK", "EXIT_ARGUMENTS", "EXIT_PARSE", "EXIT_CONVERGENCE", "EXIT_ASSERTION" ]

logger = logging.getLogger(__name__)

EXIT_OK          = 0
EXIT_ARGUMENTS   = 2
EXIT_PARSE       = 3
EXIT_CONVERGENCE = 4
EXIT_ASSERTION   = 5

DEFAULT_GRID = 1001
DEFAULT_RESIDUAL_TOL = 1e-3
DEFAULT_AUDIT_TOL = 1e-3
METHODS = [ "quadrature", "monte-carlo" ]

NEEDS_INSTANCE = [ "solve", "verify", "poa", "audit" ]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    instance_path: Optional[str] = None
    seed: Optional[int] = None
    samples: int = DEFAULT_SAMPLES
    tol: Optional[float] = None
    output_path: Optional[str] = None
    threads: Optional[int] = None
    strategy_paths: List[str] = field(default_factory=list)
    method: str = "quadrature"
    grid: int = DEFAULT_GRID

    def needs_seed(self):
        return self.command == "audit" or (self.command == "poa" and self.method == "monte-carlo")

    def validate(self):
        """Raise ConfigError for any missing or out of range argument."""
        if self.command not in COMMANDS:
            raise ConfigError("unknown command {!r}".format(self.command))
        if self.command in NEEDS_INSTANCE and self.instance_path is None:
            raise ConfigError("{} needs --instance".format(self.command))
        if self.needs_seed() and self.seed is None:
            raise ConfigError("{} samples outcomes and needs --seed".format(self.command))
        if self.seed is not None and not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be a 64-bit unsigned integer, got {}".format(self.seed))
        if self.samples < 2:
            raise ConfigError("--samples must be at least 2, got {}".format(self.samples))
        if self.tol is not None and not (self.tol > 0.0):
            raise ConfigError("--tol must be positive, got {}".format(self.tol))
        if self.threads is not None and self.threads < 1:
            raise ConfigError("--threads must be at least 1, got {}".format(self.threads))
        if self.grid < 2:
            raise ConfigError("--grid must be at least 2, got {}".format(self.grid))
        if self.method not in METHODS:
            raise ConfigError("--method must be one of {}, got {!r}".format(", ".join(METHODS), self.method))
        if self.command == "verify" and not self.strategy_paths:
            raise ConfigError("verify needs one --strategy file per bidder")
        if self.command == "solve" and self.output_path is None:
            raise ConfigError("solve needs --out, strategy files are written beside it")
        return self

    def tolerances(self):
        """The tolerances this command runs with, by the name of what they control."""
        if self.command in ("constant", "ell-table"):
            quadrature = QUADRATURE_TOL if self.tol is None else ToleranceConfig(self.tol, self.tol, QUADRATURE_TOL.max_iter)
            return { "quadrature" : quadrature, "minimize" : MINIMIZE_TOL }
        if self.command == "poa":
            quadrature = WELFARE_TOL if self.tol is None else ToleranceConfig(self.tol, self.tol, WELFARE_TOL.max_iter)
            return { "quadrature" : quadrature, "residual" : DEFAULT_RESIDUAL_TOL }
        if self.command == "audit":
            return { "audit" : DEFAULT_AUDIT_TOL if self.tol is None else self.tol, "residual" : DEFAULT_RESIDUAL_TOL }
        return { "residual" : DEFAULT_RESIDUAL_TOL if self.tol is None else self.tol }

    def command_line(self):
        """A pyfpa invocation that reproduces this configuration."""
        words = [ "pyfpa", self.command ]
        if self.instance_path is not None:
            words += [ "--instance", self.instance_path ]
        for path in self.strategy_paths:
            words += [ "--strategy", path ]
        if self.seed is not None:
            words += [ "--seed", str(self.seed) ]
        if self.command in ("poa", "audit"):
            words += [ "--samples", str(self.samples) ]
        if self.command == "poa":
            words += [ "--method", self.method ]
        if self.command in ("constant", "ell-table"):
            words += [ "--grid", str(self.grid) ]
        if self.tol is not None:
            words += [ "--tol", repr(self.tol) ]
        if self.output_path is not None:
            words += [ "--out", self.output_path ]
        return " ".join(words)

    def shooting_options(self):
        return ShootingOptions(residual_tol=self.tolerances()["residual"], threads=self.threads)

    @classmethod
    def from_args(cls, args):
        return cls(command=args.command, instance_path=args.instance, seed=args.seed, samples=args.samples,
                   tol=args.tol, output_path=args.out, threads=args.threads, strategy_paths=args.strategy or [],
                   method=args.method, grid=args.grid)


def _significant(obj):
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float("{:.12g}".format(x)) if math.isfinite(x) else x
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, ToleranceConfig):
        return _significant(obj.as_dict())
    if isinstance(obj, dict):
        return { k : _significant(v) for (k, v) in obj.items() }
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [ _significant(v) for v in obj ]
    return obj


def _emit(config, write):
    if config.output_path is None:
        write(sys.stdout)
    else:
        with open(config.output_path, "w", newline="", encoding="utf-8") as f:
            write(f)


def _write_report(config, payload):
    report = dict(payload)
    report["tolerances"] = config.tolerances()
    report.update({ "version" : __version__, "command" : config.command, "config" : config.command_line(), "seed" : config.seed })

    def write(f):
        json.dump(_significant(report), f, indent=2, sort_keys=True)
        f.write("\n")
    _emit(config, write)


def _bidder_path(output_path, i):
    return "{}.bidder{}.csv".format(os.path.splitext(output_path)[0], i)


def _supplied_or_solved(config, instance, strategies):
    if strategies is not None:
        return EquilibriumSolution(strategies, best_response_residual(instance, strategies, threads=config.threads),
                                   { "solver" : "supplied" })
    return solve(instance, config.shooting_options())


def _constant(config, instance, strategies):
    tols = config.tolerances()
    report = phi_constant(tol=tols["quadrature"], grid=config.grid, minimize_tol=tols["minimize"])
    payload = report.to_json()
    payload.update({ "claim" : PHI_CLAIM, "old_constant" : old_constant(tols["minimize"]) })
    _write_report(config, payload)
    report.certify()


def _ell_table(config, instance, strategies):
    table = ell_table(config.grid, config.tolerances()["minimize"])
    _emit(config, lambda f : write_ell_table(table, f))
    logger.info("%s", config.command_line())


def _solve(config, instance, strategies):
    solution = solve(instance, config.shooting_options())
    paths = []
    for (i, s) in enumerate(solution.strategies):
        paths.append(_bidder_path(config.output_path, i))
        s.to_csv(paths[-1])
    payload = solution.to_json()
    payload["strategy_files"] = paths
    _write_report(config, payload)


def _verify(config, instance, strategies):
    tol = config.tolerances()["residual"]
    residual = best_response_residual(instance, strategies, threads=config.threads)
    _write_report(config, { "residual" : residual, "certified" : residual <= tol })
    if residual > tol:
        sys.stderr.write("pyfpa verify: residual {:.12g} exceeds tolerance {:.12g}\n".format(residual, tol))
        return EXIT_ASSERTION


def _poa(config, instance, strategies):
    solution = _supplied_or_solved(config, instance, strategies)
    estimate = equilibrium_welfare(instance, solution.strategies, method=config.method, seed=config.seed,
                                   samples=config.samples, tol=config.tolerances()["quadrature"], threads=config.threads)
    payload = estimate.to_json()
    payload["residual"] = solution.residual
    _write_report(config, payload)


def _audit(config, instance, strategies):
    solution = _supplied_or_solved(config, instance, strategies)
    report = audit_lemmas(instance, solution, config.seed, config.samples, tol=config.tolerances()["audit"], threads=config.threads)
    if not report.passed():
        logger.warning("audit found %d violations", report.violations)
    _write_report(config, report.to_json())


COMMANDS = {
    "constant"  : [ _constant, "compute the welfare fraction phi and certify phi >= {}".format(PHI_CLAIM) ],
    "ell-table" : [ _ell_table, "write the table of ell(q) and its minimising r as CSV" ],
    "solve"     : [ _solve, "solve for an equilibrium and write its strategies" ],
    "verify"    : [ _verify, "report the best-response residual of supplied strategies" ],
    "poa"       : [ _poa, "equilibrium welfare as a fraction of optimal welfare" ],
    "audit"     : [ _audit, "check the welfare inequalities on sampled outcomes" ],
}


def run(config):
    """Validate config, run its command and return the process exit status.

    Failures are reported on stderr naming the stage that failed: arguments,
    parse, or the command itself."""
    stage = "arguments"
    try:
        config.validate()
        stage = "parse"
        instance = AuctionInstance.load(config.instance_path) if config.instance_path is not None else None
        strategies = load_strategies(config.strategy_paths) if config.strategy_paths else None
        stage = config.command
        logger.info("running %s", config.command_line())
        status = COMMANDS[config.command][0](config, instance, strategies)
    except (ConfigError, InvalidInstanceError, InvalidStrategyError, DomainError) as e:
        return _fail(stage, e, EXIT_ARGUMENTS)
    except (InstanceParseError, OSError) as e:
        return _fail(stage, e, EXIT_PARSE)
    except (ConvergenceError, BracketError) as e:
        return _fail(stage, e, EXIT_CONVERGENCE)
    except CertificationError as e:
        return _fail(stage, e, EXIT_ASSERTION)
    return EXIT_OK if status is None else status


def _fail(stage, e, status):
    sys.stderr.write("pyfpa {}: {}\n".format(stage, e))
    return status


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--instance", default=None, help="auction instance JSON file")
    common.add_argument("--strategy", action="append", default=None,
                        help="strategy CSV (value,bid) for the next bidder; repeat once per bidder")
    common.add_argument("--seed", type=int, default=None, help="seed for every sampled quantity")
    common.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="Monte Carlo sample count")
    common.add_argument("--tol", type=float, default=None, help="tolerance of the command's main numerical step")
    common.add_argument("--out", default=None, help="report path (standard output if omitted)")
    common.add_argument("--threads", type=int, default=None, help="worker thread cap (default: all cores)")
    common.add_argument("--method", default="quadrature", choices=METHODS, help="welfare computation for poa")
    common.add_argument("--grid", type=int, default=DEFAULT_GRID, help="points in the ell table")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="pyfpa", description="Welfare guarantees of first-price auctions.")
    parser.add_argument("--version", action="version", version="pyfpa {}".format(__version__))
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True
    for (name, (_, description)) in COMMANDS.items():
        commands.add_parser(name, parents=[ common ], help=description, description=description)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    return run(RunConfig.from_args(args))


if __name__ == "__main__":
    raise SystemExit(main())
