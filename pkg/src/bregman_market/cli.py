"""Command-line front end: scenario files in, JSON/CSV analysis artifacts out.

Subcommands: solve, path, additivity, certify, search. Scenario files are
JSON with a pinned schema (see `Scenario`); outcome order in the file is
significant because faces are reported as outcome indices. All floating
output is printed with 12 significant digits so golden files stay stable.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import additivity as additivity_mod
from . import costs, geometry, paths, trader
from .costs import CostModel, DirectSumCost, LmsrCost, LogPartitionCost, QuadraticCost
from .errors import (
    DomainError,
    MarketInputError,
    NumericalError,
    OracleError,
    PathUnsupportedError,
)
from .geometry import OutcomeSpace

logger = logging.getLogger("bregman_market.cli")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3


def _format_floats(obj):
    """Round every float to 12 significant digits, recursively."""
    if isinstance(obj, float):
        return float(f"{obj:.12g}")
    if isinstance(obj, dict):
        return {k: _format_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_format_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_format_floats(float(v)) for v in obj.reshape(-1)]
    if isinstance(obj, (np.floating,)):
        return _format_floats(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _dump(obj) -> str:
    return json.dumps(_format_floats(obj), sort_keys=True)


@dataclass
class Scenario:
    """A parsed scenario file: market, start state, belief, budget schedule."""

    space: OutcomeSpace
    cost_spec: dict
    model: CostModel
    mu: np.ndarray
    q0: Optional[np.ndarray] = None
    nu0: Optional[np.ndarray] = None
    budgets: tuple[float, ...] = ()
    tolerances: dict = field(default_factory=dict)
    seed: Optional[int] = None
    name: Optional[str] = None

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        try:
            space_raw = raw["space"]
            space = OutcomeSpace(
                dim=int(space_raw["dim"]),
                outcomes=np.array(space_raw["outcomes"], dtype=float),
                labels=tuple(space_raw["labels"]) if "labels" in space_raw else None,
            )
            cost_spec = dict(raw["cost"])
            model = build_cost_model(cost_spec, space)
            mu = np.array(raw["mu"], dtype=float)
            q0 = np.array(raw["q0"], dtype=float) if "q0" in raw else None
            nu0 = np.array(raw["nu0"], dtype=float) if "nu0" in raw else None
            if q0 is None and nu0 is None:
                raise MarketInputError("scenario needs q0 or nu0")
            if q0 is not None and nu0 is not None:
                raise MarketInputError("scenario must not set both q0 and nu0")
            budgets = tuple(float(b) for b in raw.get("budgets", []))
            if any(b < 0 for b in budgets):
                raise MarketInputError("budgets must be nonnegative")
            return cls(
                space=space,
                cost_spec=cost_spec,
                model=model,
                mu=mu,
                q0=q0,
                nu0=nu0,
                budgets=budgets,
                tolerances=dict(raw.get("tolerances", {})),
                seed=int(raw["seed"]) if "seed" in raw else None,
                name=raw.get("name"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, MarketInputError):
                raise
            raise MarketInputError(f"bad scenario file: {exc}") from exc

    @classmethod
    def load(cls, path: str) -> "Scenario":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def initial_state(self) -> np.ndarray:
        if self.q0 is not None:
            return self.q0
        return self.model.inverse_price_array(self.nu0)

    def solver_tol(self, override: Optional[float]) -> float:
        if override is not None:
            return override
        return float(self.tolerances.get("solver", trader.DEFAULT_SOLVE_TOL))

    def to_dict(self) -> dict:
        out: dict = {}
        if self.name is not None:
            out["name"] = self.name
        out["space"] = {
            "dim": self.space.dim,
            "outcomes": [list(row) for row in self.space.outcomes],
        }
        if self.space.labels is not None:
            out["space"]["labels"] = list(self.space.labels)
        out["cost"] = self.cost_spec
        if self.q0 is not None:
            out["q0"] = list(self.q0)
        if self.nu0 is not None:
            out["nu0"] = list(self.nu0)
        out["mu"] = list(self.mu)
        out["budgets"] = list(self.budgets)
        if self.tolerances:
            out["tolerances"] = self.tolerances
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    def to_canonical_json(self) -> str:
        return json.dumps(_format_floats(self.to_dict()), indent=2, sort_keys=True) + "\n"


def build_cost_model(spec: dict, space: OutcomeSpace) -> CostModel:
    kind = spec.get("kind")
    if kind == "quadratic":
        return QuadraticCost(space.dim)
    if kind == "lmsr":
        return LmsrCost(space.dim)
    if kind == "log_partition":
        return LogPartitionCost(space)
    if kind == "direct_sum":
        blocks_spec = spec.get("blocks")
        if not blocks_spec:
            raise MarketInputError("direct_sum cost needs a blocks list")
        dims = [int(b.get("dim", 0)) for b in blocks_spec]
        if any(d <= 0 for d in dims) or sum(dims) != space.dim:
            raise MarketInputError("direct_sum block dims must be positive and sum to the dimension")
        block_spaces = additivity_mod._split_block_spaces(space, dims)
        blocks = []
        for j, bspec in enumerate(blocks_spec):
            bkind = bspec.get("kind")
            if bkind == "quadratic":
                blocks.append(QuadraticCost(dims[j]))
            elif bkind == "lmsr":
                blocks.append(LmsrCost(dims[j]))
            elif bkind == "log_partition":
                if block_spaces is None:
                    raise MarketInputError(
                        "log_partition blocks need a product-structured outcome set"
                    )
                blocks.append(LogPartitionCost(block_spaces[j]))
            else:
                raise MarketInputError(f"unknown block cost kind: {bkind}")
        return DirectSumCost(blocks)
    raise MarketInputError(f"unknown cost kind: {kind}")


def _face_payload(face: geometry.Face, space: OutcomeSpace) -> dict:
    return {
        "members": list(face.members),
        "labels": [space.label_for(i) for i in face.members],
    }


def _solution_payload(sol: trader.TradeSolution, space: OutcomeSpace, budget: float) -> dict:
    return {
        "budget": budget,
        "q_hat": sol.q_hat,
        "nu_hat": sol.nu_hat.nu,
        "tight": _face_payload(sol.tight, space),
        "budget_used": sol.budget_used,
        "kkt_residuals": sol.kkt_residuals,
    }


def run_solve(scenario: Scenario, budgets, tol, out) -> int:
    q0 = scenario.initial_state()
    for budget in budgets:
        problem = trader.TradeProblem(
            model=scenario.model, space=scenario.space, q0=q0, mu=scenario.mu, budget=budget
        )
        sol = trader.solve_generic(problem, tol=scenario.solver_tol(tol))
        print(_dump(_solution_payload(sol, scenario.space, budget)), file=out)
    return EXIT_OK


def run_path(scenario: Scenario, samples: int, csv_out, as_json, tol, out) -> int:
    q0 = scenario.initial_state()
    path = paths.trace_path(
        scenario.model,
        scenario.space,
        q0,
        scenario.mu,
        tol=scenario.solver_tol(tol),
        samples_per_segment=samples,
    )
    payload = {
        "segments": [
            {
                "index": seg.index,
                "face": _face_payload(seg.face, scenario.space),
                "nu_start": seg.nu_start,
                "nu_end": seg.nu_end,
                "budget_start": seg.samples[0].budget,
                "budget_end": seg.samples[-1].budget,
            }
            for seg in path.segments
        ],
        "terminal": path.terminal,
        "total_budget": path.total_budget,
        "truncated": path.truncated,
        "acute_violations": [
            {
                "segment_index": v.segment_index,
                "lambda": v.lam,
                "worst_dot": v.worst_dot,
                "pair": list(v.pair),
            }
            for v in path.acute_violations
        ],
    }
    if as_json:
        print(_dump(payload), file=out)
    else:
        for seg_payload in payload["segments"]:
            print(_dump(seg_payload), file=out)
        print(_dump({k: payload[k] for k in ("terminal", "total_budget", "truncated")}), file=out)
        for v in payload["acute_violations"]:
            print(f"warning: acute violation {_dump(v)}", file=out)
    if csv_out:
        _write_path_csv(csv_out, path, scenario.space.dim)
    return EXIT_OK


def _write_path_csv(filename: str, path: paths.SolutionPath, dim: int) -> None:
    with open(filename, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment_index", "lambda"] + [f"nu_{i}" for i in range(dim)] + ["budget"])
        for seg in path.segments:
            for smp in seg.samples:
                row = [seg.index, f"{smp.lam:.12g}"]
                row += [f"{v:.12g}" for v in smp.nu]
                row.append(f"{smp.budget:.12g}")
                writer.writerow(row)


def run_additivity(scenario: Scenario, budgets, tol, out) -> int:
    if len(budgets) < 2:
        raise MarketInputError("additivity needs at least two budgets")
    q0 = scenario.initial_state()
    gap_tol = float(scenario.tolerances.get("additivity_gap", additivity_mod.DEFAULT_GAP_TOL))
    report = additivity_mod.check_budget_additivity_sequence(
        scenario.model, scenario.space, q0, scenario.mu, budgets, tol=gap_tol
    )
    payload = {
        "additive": report.additive,
        "gap": report.gap,
        "tolerance": report.tolerance,
        "budgets": list(report.budgets),
        "price_sequential": report.price_sequential.nu,
        "price_combined": report.price_combined.nu,
        "intermediate_prices": [sol.nu_hat.nu for sol in report.trail[:-1]],
    }
    print(_dump(payload), file=out)
    return EXIT_OK


def run_certify(scenario: Scenario, out) -> int:
    verdict = additivity_mod.certify_sufficient_conditions(scenario.model, scenario.space)
    payload = {
        "status": verdict.status,
        "face": _face_payload(verdict.face, scenario.space) if verdict.face is not None else None,
        "evidence": verdict.evidence,
    }
    print(_dump(payload), file=out)
    return EXIT_OK


def run_search(scenario: Scenario, trials: int, seed: Optional[int], out) -> int:
    actual_seed = seed if seed is not None else (scenario.seed if scenario.seed is not None else 0)
    gap_tol = float(scenario.tolerances.get("additivity_gap", additivity_mod.DEFAULT_GAP_TOL))
    report = additivity_mod.randomized_counterexample_search(
        scenario.model, scenario.space, trials, actual_seed, tol=gap_tol
    )
    payload = {
        "found": report is not None,
        "trials": trials,
        "seed": actual_seed,
    }
    if report is not None:
        payload["trial"] = report.trial
        payload["gap"] = report.gap
        payload["budgets"] = list(report.budgets)
        payload["price_sequential"] = report.price_sequential.nu
        payload["price_combined"] = report.price_combined.nu
    print(_dump(payload), file=out)
    return EXIT_OK


def _parse_budget_list(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as exc:
        raise MarketInputError(f"bad budget list: {text}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bregman-market",
        description="Budget-constrained trading analysis for cost-function market makers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="Scenario JSON file")
        p.add_argument("--budgets", default=None, help="Comma-separated budget override")
        p.add_argument("--tol", type=float, default=None, help="Solver tolerance override")
        p.add_argument("--json", action="store_true", help="Emit a single JSON document")
        p.add_argument("--seed", type=int, default=None, help="Random seed override")

    for name in ("solve", "path", "additivity", "certify", "search"):
        p = sub.add_parser(name)
        common(p)
        if name == "path":
            p.add_argument("--samples", type=int, default=paths.DEFAULT_SAMPLES_PER_SEGMENT)
            p.add_argument("--csv-out", default=None, help="Write path samples as CSV")
        if name == "search":
            p.add_argument("--trials", type=int, default=200)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("BREGMAN_MARKET_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    out = sys.stdout
    try:
        scenario = Scenario.load(args.scenario)
        budgets = scenario.budgets
        if args.budgets is not None:
            budgets = _parse_budget_list(args.budgets)
        if args.command == "solve":
            return run_solve(scenario, budgets, args.tol, out)
        if args.command == "path":
            return run_path(scenario, args.samples, args.csv_out, args.json, args.tol, out)
        if args.command == "additivity":
            return run_additivity(scenario, budgets, args.tol, out)
        if args.command == "certify":
            return run_certify(scenario, out)
        if args.command == "search":
            return run_search(scenario, args.trials, args.seed, out)
        raise MarketInputError(f"unknown command {args.command}")
    except (MarketInputError, DomainError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, OracleError, PathUnsupportedError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
