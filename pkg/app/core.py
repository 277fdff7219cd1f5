#!/usr/bin/env python3
"""
MAP Market Lab - Command Processing

Heavy half of the command line: loads a scenario, runs one of the batch
commands (simulate, verify-emm, optimize, hedge-check, oracle) and saves CSV
reports plus a manifest that is enough to reproduce every number in them.

Exit codes: 0 success, 1 unreadable or malformed scenario, 2 invariant
violation, 3 martingale test or static no-arbitrage failure, 4 solver
non-convergence.
"""

import json
import logging
import platform
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import scipy
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from app import __version__
from app.config import (ScenarioConfig, build_market, config_hash, environment_defaults, load_config,
                        resolve_checkpoints, resolve_orders, with_overrides)
from app.errors import (AdmissibilityError, ConfigError, DomainError, GridError, MarketLabError,
                        MartingaleTestError, SpecError)
from app.hedge import ResidualRow, constant_coefficients, residual_report, selffinancing_check
from app.market import DEFAULT_GRID_STEPS, check_no_arbitrage, export_path_csv, simulate_assets
from app.measure import girsanov_parameters, martingale_ztest, require_paths, ztest_frame
from app.parallel import map_paths
from app.portfolio import (grid_oracle, merton_closed_form, original_objective, solution_frame,
                           solve_all_regimes, solve_original)
from app.wealth import ObjectiveRow, deterministic_expected_log, exact_expected_power, objective_frame

console = Console()
logger = logging.getLogger(__name__)

Z_THRESHOLD = 3.0

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2
EXIT_MARTINGALE = 3
EXIT_CONVERGENCE = 4


class ScenarioRunner:
    """Runs the batch commands for one scenario and saves their reports"""

    def __init__(self, config: ScenarioConfig, output_dir: str = "output", threads: int = 1):
        """
        Initialize the runner

        Args:
            config: parsed scenario, overrides already applied
            output_dir: directory for CSV reports and manifest.json
            threads: worker count for Monte-Carlo fan-out
        """
        self.config = config
        self.spec = build_market(config)
        self.output_dir = Path(output_dir)
        self.threads = max(int(threads), 1)
        self.logger = logging.getLogger(__name__)

    @property
    def run(self):
        return self.config.run

    def simulate(self) -> int:
        """Export ``export_paths`` simulated paths as CSV"""
        K, L = resolve_orders(self.config, self.spec)
        checkpoints = resolve_checkpoints(self.config)
        console.print(f"📈 Simulating {self.run.export_paths} path(s) on [0, {self.run.horizon:g}]", style="bold blue")

        def one_path(index: int, rng: np.random.Generator):
            return simulate_assets(self.spec, self.run.horizon, self.run.dt, K, L, rng, checkpoints=checkpoints)

        paths = map_paths(one_path, self.run.export_paths, self.run.seed, self.threads)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        files = [export_path_csv(path, self.output_dir / f"path_{i:04d}.csv").name for i, path in enumerate(paths)]
        self._save_results({}, "simulate", extra_outputs=files)
        console.print("✅ Simulation completed", style="bold green")
        return EXIT_OK

    def verify_emm(self) -> int:
        """Static drift conditions first, then the ℓ-weighted martingale z-test"""
        K, L = resolve_orders(self.config, self.spec)
        report = check_no_arbitrage(self.spec, K, L)
        if not report.passed:
            console.print("❌ Static no-arbitrage check failed", style="red")
            for violation in report.violations:
                console.print(f"   {violation}", style="dim")
            raise MartingaleTestError(report.violations[0], "drift breaks the martingale condition")
        for warning in report.warnings:
            self.logger.warning("density leaves switch marks untilted: %s", warning)

        require_paths(self.run.n_paths)
        gir = girsanov_parameters(self.spec)
        checkpoints = resolve_checkpoints(self.config)
        console.print(f"🔄 Martingale test: {self.run.n_paths} paths, checkpoints {checkpoints}", style="bold blue")
        rows = martingale_ztest(self.spec, gir, None, checkpoints, self.run.n_paths, self.run.seed, K, L,
                                dt=self.run.dt, threads=self.threads)
        frame = ztest_frame(rows)
        self._save_results({"ztest.csv": frame}, "verify-emm")
        self._print_table("Martingale z-scores", frame)

        failures = [row for row in rows if not abs(row.z) < Z_THRESHOLD]
        if failures:
            worst = max(failures, key=lambda row: abs(row.z))
            raise MartingaleTestError(worst.asset, f"|z| = {abs(worst.z):.2f} at t = {worst.checkpoint:g}")
        console.print("✅ Every discounted asset passed the martingale test", style="bold green")
        return EXIT_OK

    def optimize(self) -> int:
        """Per-regime optimal portfolios in the enlarged and the stock-only market"""
        K, L = resolve_orders(self.config, self.spec)
        utility = self.run.utility
        console.print(f"🎯 Solving first-order conditions: {utility.label} utility, K={K}, L={L}", style="bold blue")
        solutions = solve_all_regimes(self.spec, utility, K, L)

        oracle = None
        if self.config.oracle is not None:
            oracle = [grid_oracle(self.spec, c, utility, self.config.oracle.bounds, self.config.oracle.points, K, L)
                      for c in range(self.spec.n_regimes)]
        frame = solution_frame(solutions, utility, oracle)

        original, original_rate, merton = [], [], []
        for c in range(self.spec.n_regimes):
            weight = solve_original(self.spec, c, utility)
            original.append(weight)
            original_rate.append(original_objective(self.spec, c, utility, weight))
            merton.append(merton_closed_form(self.spec, c, utility) if self.spec.sigma0[c] > 0 else np.nan)
        frame["original_pi0"] = original
        frame["original_objective"] = original_rate
        frame["value_gap"] = frame["objective"] - frame["original_objective"]
        frame["merton_pi0"] = merton

        reports = {"solutions.csv": frame}
        if all(s.converged for s in solutions):
            strategy = [s.weights for s in solutions]
            rows = []
            for c in range(self.spec.n_regimes):
                if utility.is_power:
                    value = exact_expected_power(self.spec, strategy, c, self.run.z0, self.run.horizon, utility)
                else:
                    value = deterministic_expected_log(self.spec, strategy, c, self.run.z0, self.run.horizon)
                rows.append(ObjectiveRow(c, K, L, value, 0.0))
            reports["objectives.csv"] = objective_frame(rows)

        self._save_results(reports, "optimize")
        self._print_table("Optimal portfolios", frame)

        failed = [s for s in solutions if not s.converged]
        if failed:
            for s in failed:
                console.print(f"❌ Regime {s.regime}: {s.message} (residual {s.residual_norm:.3e})", style="red")
            return EXIT_CONVERGENCE
        console.print("✅ Every regime converged", style="bold green")
        return EXIT_OK

    def hedge_check(self) -> int:
        """Self-financing residuals of the hedge-block coefficients at dt and dt/2"""
        K, L = resolve_orders(self.config, self.spec)
        gir = girsanov_parameters(self.spec)
        hedge = self.config.hedge
        dt = self.run.dt if self.run.dt is not None else self.run.horizon / DEFAULT_GRID_STEPS
        console.print(f"🔧 Hedge check: {self.run.n_paths} paths at dt={dt:g} and dt={dt / 2:g}", style="bold blue")

        def one_path(index: int, rng: np.random.Generator):
            # one seed for both grids keeps the regime and jump draws shared
            path_seed = int(rng.integers(2 ** 63))
            rows = []
            for step in (dt, dt / 2):
                path = simulate_assets(self.spec, self.run.horizon, step, K, L, path_seed)
                if hedge is None:
                    coeffs = constant_coefficients(path)
                else:
                    coeffs = constant_coefficients(path, hedge.h0, hedge.h_jump, hedge.h_power, hedge.h_impulse,
                                                   hedge.m0)
                rows.append(ResidualRow(index, selffinancing_check(self.spec, coeffs, path, gir), step))
            return rows

        results = map_paths(one_path, self.run.n_paths, self.run.seed, self.threads, description="Hedge check")
        frame = residual_report([row for rows in results for row in rows])
        self._save_results({"hedge_residuals.csv": frame}, "hedge-check")

        summary = frame.groupby("grid_step", sort=False)["max_residual"].agg(["mean", "max"]).reset_index()
        self._print_table("Self-financing residuals", summary)
        coarse, fine = summary["mean"].iloc[0], summary["mean"].iloc[1]
        if coarse > 0:
            console.print(f"   refinement ratio {fine / coarse:.3f}", style="dim")
        console.print("✅ Hedge check completed", style="bold green")
        return EXIT_OK

    def oracle(self) -> int:
        """Grid maximization of the regime-local objective"""
        if self.config.oracle is None:
            raise ConfigError("the oracle command needs an oracle block", field="oracle")
        K, L = resolve_orders(self.config, self.spec)
        utility = self.run.utility
        block = self.config.oracle
        rows = []
        for c in range(self.spec.n_regimes):
            result = grid_oracle(self.spec, c, utility, block.bounds, block.points, K, L)
            row = {"regime": c, "utility": utility.label, "K": K, "L": L}
            row.update(zip(result.weights.labels, result.weights.to_vector()))
            row.update(objective=result.objective, grid_step=result.grid_step, n_points=result.n_points,
                       n_admissible=result.n_admissible)
            rows.append(row)
        frame = pd.DataFrame(rows)
        self._save_results({"oracle.csv": frame}, "oracle")
        self._print_table("Grid oracle", frame)
        console.print("✅ Oracle completed", style="bold green")
        return EXIT_OK

    def _print_table(self, title: str, frame: pd.DataFrame):
        table = Table(title=title)
        for column in frame.columns:
            table.add_column(str(column))
        for values in frame.itertuples(index=False):
            table.add_row(*(f"{v:.6g}" if isinstance(v, float) else str(v) for v in values))
        console.print(table)

    def _save_results(self, reports: Dict[str, pd.DataFrame], command: str, extra_outputs: Optional[List[str]] = None):
        """Write every report as CSV and a manifest describing the run"""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        outputs = list(extra_outputs or [])
        for name, frame in reports.items():
            frame.to_csv(self.output_dir / name, index=False)
            outputs.append(name)

        manifest = {
            "command": command,
            "config": self.config.source,
            "config_hash": config_hash(self.config),
            "seed": self.run.seed,
            "n_paths": self.run.n_paths,
            "threads": self.threads,
            "overrides": self.config.overrides,
            "outputs": outputs,
            "versions": {
                "maplab": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pandas": pd.__version__,
            },
            "created": datetime.now().isoformat(timespec="seconds"),
        }
        manifest_file = self.output_dir / "manifest.json"
        with open(manifest_file, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2)

        console.print(f"📄 Results saved to: {self.output_dir}", style="green")
        for name in outputs[:10]:
            console.print(f"   - {name}", style="dim")
        if len(outputs) > 10:
            console.print(f"   - ... {len(outputs) - 10} more", style="dim")
        console.print(f"   - {manifest_file.name}", style="dim")


COMMANDS = {
    "simulate": ScenarioRunner.simulate,
    "verify-emm": ScenarioRunner.verify_emm,
    "optimize": ScenarioRunner.optimize,
    "hedge-check": ScenarioRunner.hedge_check,
    "oracle": ScenarioRunner.oracle,
}


def configure_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=False, show_path=verbose)],
        force=True,
    )


def run_command(command: str, config_path: str, output_dir: Optional[str] = None, threads: Optional[int] = None,
                n_paths: Optional[int] = None, seed: Optional[int] = None) -> int:
    """
    Run one batch command and map its outcome onto an exit code

    Args:
        command: one of simulate, verify-emm, optimize, hedge-check, oracle
        config_path: scenario document
        output_dir: report directory; MAPLAB_OUTPUT_DIR when omitted
        threads: worker count; MAPLAB_THREADS when omitted
        n_paths, seed: overrides of the document's run block

    Returns:
        Process exit code
    """
    try:
        defaults = environment_defaults()
        config = with_overrides(load_config(config_path), n_paths=n_paths, seed=seed)
        runner = ScenarioRunner(config, output_dir or defaults.output_dir, threads or defaults.threads)
        return COMMANDS[command](runner)
    except ConfigError as e:
        console.print(f"❌ Scenario error: {e}", style="red")
        return EXIT_CONFIG
    except OSError as e:
        console.print(f"❌ I/O error: {e}", style="red")
        return EXIT_CONFIG
    except MartingaleTestError as e:
        console.print(f"❌ Martingale test failed: {e}", style="red")
        return EXIT_MARTINGALE
    except (SpecError, AdmissibilityError) as e:
        console.print(f"❌ Invalid input: {e}", style="red")
        return EXIT_INVARIANT
    except (DomainError, GridError) as e:
        console.print(f"❌ {e}", style="red")
        return EXIT_INVARIANT
    except MarketLabError as e:
        logger.exception("unexpected library error")
        console.print(f"❌ Error: {e}", style="red")
        return EXIT_INVARIANT


def cmd_simulate(config_path: str, output_dir: Optional[str] = None, **overrides) -> int:
    return run_command("simulate", config_path, output_dir, **overrides)


def cmd_verify_emm(config_path: str, output_dir: Optional[str] = None, **overrides) -> int:
    return run_command("verify-emm", config_path, output_dir, **overrides)


def cmd_optimize(config_path: str, output_dir: Optional[str] = None, **overrides) -> int:
    return run_command("optimize", config_path, output_dir, **overrides)


def cmd_hedge_check(config_path: str, output_dir: Optional[str] = None, **overrides) -> int:
    return run_command("hedge-check", config_path, output_dir, **overrides)


def cmd_oracle(config_path: str, output_dir: Optional[str] = None, **overrides) -> int:
    return run_command("oracle", config_path, output_dir, **overrides)


def process_with_args(args) -> int:
    """Run a command with pre-parsed arguments - called from the lightweight CLI"""
    configure_logging(args.verbose)
    if not args.config:
        console.print("❌ Error: --config is required", style="red")
        return EXIT_CONFIG
    return run_command(args.command, args.config, args.out, args.threads, args.paths, args.seed)


def main() -> int:
    from app.cli import main as cli_main

    return cli_main()


if __name__ == "__main__":
    raise SystemExit(main())
