"""
Command-line front end for the emission-permits mean field equilibrium solver
"""
import argparse
import sys
from dataclasses import replace

from joblib import Parallel, delayed

from config import Config, ConfigError, RunConfig, load_run_config
from coupling import solve_equilibrium
from fitted_fvm import SingularSystemError
from grid import NonFiniteFieldError, build_time_grid
from logger import get_logger, level_from_env, setup_logging
from model import ConstantPrice, ModelParamsError, RampPrice, prices_on
from table_processor import TableProcessor
from validation import (
    convergence_study, l1_distance, low_emission_mass, simulate_particles,
)

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2


class UsageError(ValueError):
    """Raised for command arguments that cannot describe a valid run"""


class ExperimentRunner:
    """Runs the equilibrium experiments and writes their tables"""

    def __init__(self, run_config, output_dir, jobs=1):
        self.run_config = run_config
        self.tables = TableProcessor(output_dir)
        self.jobs = jobs
        self.results = []

    def _solve(self, schedule=None):
        cfg = self.run_config
        return solve_equilibrium(cfg.solver, cfg.model, schedule or cfg.schedule, cfg.initial_density)

    def process_equilibrium(self):
        """
        Solve one equilibrium and write m, v, tau, the price path, the trace
        and a summary

        Returns:
            Exit status
        """
        print(f"\n{'='*60}")
        print("Equilibrium run")
        print(f"{'='*60}")

        solution = self._solve()
        self.results = [solution]

        for field in (solution.m, solution.v, solution.tau):
            if field is not None:
                self.tables.save_results(self.tables.field_table(field), f"{field.quantity}.csv")
        self.tables.save_results(self.tables.trace_table(solution.errors), 'trace.csv')
        self._save_prices()

        tally = solution.diagnostics
        self.tables.save_summary({
            'status': solution.status,
            'iterations': solution.iterations,
            'final_epsilon': f"{solution.errors[-1]:.6e}" if solution.errors else 'n/a',
            'mass_drift': f"{tally.max_mass_drift:.3e}",
            'm_matrix_pass_rate': f"{tally.pass_rate:.6f}",
            'm_matrix_checks': tally.checks,
            'clip_events': tally.clip_events,
            'wall_time_s': f"{solution.wall_time:.3f}",
            'message': solution.message or '-',
        })

        self._print_summary()
        return EXIT_OK if solution.converged else EXIT_NOT_CONVERGED

    def process_price_sweep(self, values):
        """
        Solve one equilibrium per price level (S for constant schedules,
        S_max for ramps) and write final densities and low-emission mass

        Returns:
            Exit status
        """
        if len(values) < 2:
            raise UsageError(f"a sweep needs at least two values, got {len(values)}")

        base = self.run_config.schedule
        if isinstance(base, ConstantPrice):
            parameter = 'S'
            schedules = [ConstantPrice(S=value) for value in values]
        elif isinstance(base, RampPrice):
            parameter = 'S_max'
            schedules = [replace(base, S_max=value) for value in values]
        else:
            raise UsageError(f"cannot sweep schedule {type(base).__name__}")

        print(f"\n{'='*60}")
        print(f"Price sweep over {parameter} = {', '.join(f'{v:g}' for v in values)}")
        print(f"{'='*60}")

        cfg = self.run_config
        self.results = Parallel(n_jobs=self.jobs)(
            delayed(solve_equilibrium)(cfg.solver, cfg.model, schedule, cfg.initial_density)
            for schedule in schedules
        )

        runs, swept, masses = [], [], []
        for value, solution in zip(values, self.results):
            if solution.m is None:
                logger.error(f"{parameter}={value:g}: {solution.status} {solution.message}")
                continue
            m_T = solution.m.values[0]
            grid = solution.m.space
            runs.append((value, grid, m_T))
            swept.append(value)
            masses.append(low_emission_mass(m_T, grid))
            print(f"{parameter}={value:g}: {solution.status}, low-emission mass {masses[-1]:.6f}")

        if runs:
            self.tables.save_results(self.tables.sweep_table(parameter, runs), 'sweep.csv')
            self.tables.save_results(self.tables.low_mass_table(parameter, swept, masses), 'lowmass.csv')

        self._print_summary()
        all_converged = all(solution.converged for solution in self.results)
        return EXIT_OK if all_converged else EXIT_NOT_CONVERGED

    def process_convergence(self, n_min, n_max, n_ref):
        """Mesh-refinement study of v(., 0); writes convergence.csv"""
        if not 1 <= n_min < n_max < n_ref:
            raise UsageError(f"need 1 <= n_min < n_max < n_ref, got {n_min}, {n_max}, {n_ref}")

        print(f"\n{'='*60}")
        print(f"Convergence study: n = {n_min}..{n_max}, reference n = {n_ref}")
        print(f"{'='*60}")

        cfg = self.run_config
        report = convergence_study(
            n_min, n_max, n_ref, cfg.solver, cfg.model, cfg.schedule, cfg.initial_density
        )
        self.tables.save_results(self.tables.convergence_table(report), 'convergence.csv')

        for lvl in report.levels:
            print(f"  n={lvl.n}  N=K={lvl.N}  h={lvl.h:.6g}  error={lvl.error:.6e}")
        print(f"Fitted order: {report.fitted_order:.4f}")
        if report.failures:
            print(f"Levels without convergence: {report.failures}")
        return EXIT_OK if report.complete else EXIT_NOT_CONVERGED

    def process_mc_validation(self, particles, seed):
        """Compare the PDE density at t = T with a particle simulation"""
        if particles < 1:
            raise UsageError(f"particles must be at least 1, got {particles}")

        print(f"\n{'='*60}")
        print(f"Monte Carlo cross-check with {particles} particles (seed {seed})")
        print(f"{'='*60}")

        solution = self._solve()
        self.results = [solution]
        if not solution.converged:
            print(f"Equilibrium did not converge: {solution.status} {solution.message}")
            return EXIT_NOT_CONVERGED

        cfg = self.run_config
        grid = solution.m.space
        m_pde = solution.m.values[0]
        m_mc = simulate_particles(
            solution.tau, cfg.model, particles,
            substeps_per_level=cfg.validation.substeps,
            seed=seed,
            m0_kind=cfg.initial_density,
            block_size=cfg.validation.block_size,
            n_jobs=self.jobs,
        )
        self.tables.save_results(self.tables.comparison_table(grid, m_pde, m_mc), 'mc_vs_pde.csv')
        distance = l1_distance(m_pde, m_mc, grid)
        print(f"L1 distance (PDE vs MC) at t=T: {distance:.6f}")
        return EXIT_OK

    def _save_prices(self):
        """Write the permit price path S(t_k) on the run's time grid"""
        cfg = self.run_config
        times = build_time_grid(cfg.solver.K, cfg.model.T)
        prices = prices_on(cfg.schedule, times)
        self.tables.save_results(self.tables.price_table(times, prices), 'price.csv')

    def _print_summary(self):
        """Print processing summary"""
        print(f"\n{'='*60}")
        print("RUN SUMMARY")
        print(f"{'='*60}")

        total = len(self.results)
        converged = sum(1 for s in self.results if s.converged)
        print(f"Equilibria solved: {total}")
        print(f"Converged: {converged}")
        for s in self.results:
            tally = s.diagnostics
            print(
                f"  {s.status}: {s.iterations} iterations, "
                f"M-matrix pass rate {tally.pass_rate:.3f}, mass drift {tally.max_mass_drift:.2e}, "
                f"{s.wall_time:.2f}s"
            )
        print(f"Output folder: {self.tables.output_dir}")
        print(f"{'='*60}\n")


def _parse_values(text):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def build_parser():
    parser = argparse.ArgumentParser(
        prog='mfg-permits',
        description='Mean field equilibria of producers under emission permits trading',
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='INI config file (defaults reproduce Example 1)')
    common.add_argument('--out', default=Config.OUTPUT_DIR, help='output folder')
    common.add_argument('--jobs', type=int, default=Config.JOBS, help='parallel workers')

    sub = parser.add_subparsers(dest='command', required=True)

    sub.add_parser('equilibrium', parents=[common], help='solve one equilibrium')

    sweep = sub.add_parser('sweep-price', parents=[common], help='sweep S or S_max')
    sweep.add_argument('--values', type=_parse_values, required=True,
                       help='comma-separated prices, e.g. 0,2,4')

    converge = sub.add_parser('converge', parents=[common], help='mesh-refinement study')
    converge.add_argument('--n-min', type=int, default=4)
    converge.add_argument('--n-max', type=int, default=8)
    converge.add_argument('--n-ref', type=int, default=9)

    mc = sub.add_parser('validate-mc', parents=[common], help='Monte Carlo cross-check')
    mc.add_argument('--particles', type=int, default=None)
    mc.add_argument('--seed', type=int, default=None)

    return parser


def main(argv=None):
    """Main entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        Config.validate()
        setup_logging(level_from_env(Config.MFG_LOG), Config.LOG_DIR)
        run_config = load_run_config(args.config) if args.config else RunConfig()
    except ConfigError as e:
        print(f"\nConfiguration Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    runner = ExperimentRunner(run_config, args.out, jobs=args.jobs)

    try:
        if args.command == 'equilibrium':
            return runner.process_equilibrium()
        if args.command == 'sweep-price':
            return runner.process_price_sweep(args.values)
        if args.command == 'converge':
            return runner.process_convergence(args.n_min, args.n_max, args.n_ref)
        if args.command == 'validate-mc':
            particles = args.particles if args.particles is not None else run_config.validation.particles
            seed = args.seed if args.seed is not None else run_config.validation.seed
            return runner.process_mc_validation(particles, seed)
    except (UsageError, ModelParamsError) as e:
        print(f"\nUsage Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteFieldError, SingularSystemError) as e:
        print(f"\nNumerical Error: {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED

    parser.print_help()
    return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
