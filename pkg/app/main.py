import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.config import settings
from app.core.ccopf import TclBounds, UncertaintyModel, solve_interval
from app.core.exceptions import TclOpfError
from app.core.tcl_mdp import (
    backward_forward_solve, discomfort_cost, ensemble_from_site, expected_injections, utilities_from_prices,
)
from app.models.schemas import RunManifest, SweepParameter
from app.services.pipeline import (
    build_model, manifest_echo, prepare_network, resolve_manifest, run_solve, run_validation, solver_options,
    std2_config,
)
from app.services.result_writer import ResultWriter, check_network_hash, read_setpoints
from app.services.sweep import SweepRunner, parse_values

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


class CliParser(argparse.ArgumentParser):
    """Usage errors exit with 1; 2 means a run did not converge"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", dest="case_path", help="case file (JSON)")
    common.add_argument("--out", dest="output_dir", help="output directory")
    common.add_argument("--delta", type=float)
    common.add_argument("--zeta", type=float)
    common.add_argument("--max-iter", dest="max_iter", type=int)
    common.add_argument("--step-rule", dest="step_rule", choices=["constant", "diminishing"])
    common.add_argument("--no-proximal", dest="proximal", action="store_const", const=False,
                        help="plain dual ascent without the proximal term on the network side")
    common.add_argument("--eta-g", dest="eta_g", type=float)
    common.add_argument("--eta-v", dest="eta_v", type=float)
    common.add_argument("--tariff", dest="lambda_tariff", type=float, help="$/kWh, overrides the case tariff")
    common.add_argument("--sigma-frac", dest="sigma_frac", type=float)
    common.add_argument("--gamma-mode", dest="gamma_mode", choices=["uniform", "nonuniform"])
    common.add_argument("--alpha-mode", dest="alpha_mode", choices=["fixed", "optimize"])
    common.add_argument("--objective-mode", dest="objective_mode", choices=["exact", "paper", "aggregated"])
    common.add_argument("--n-states", dest="n_states", type=int)
    common.add_argument("--n-ensembles", dest="n_ensembles", type=int)
    common.add_argument("--samples", dest="n_samples", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--log-level", dest="log_level")
    return common


def build_parser() -> CliParser:
    common = _common_flags()
    parser = CliParser(prog="tclopf", description="TCL ensemble dispatch with chance-constrained OPF")
    sub = parser.add_subparsers(dest="command", parser_class=CliParser)
    sub.required = True

    sub.add_parser("solve", parents=[common], help="run the dual decomposition on a case")

    validate = sub.add_parser("validate", parents=[common], help="Monte Carlo validation of a saved solution")
    validate.add_argument("--solution", help="directory of a saved solve run (defaults to --out)")
    validate.add_argument("--truncate-pv", dest="truncate_pv", action="store_true")

    sweep = sub.add_parser("sweep", parents=[common], help="solve and validate across parameter values")
    sweep.add_argument("--parameter", required=True, choices=[p.value for p in SweepParameter])
    sweep.add_argument("--values", nargs="*", default=[])
    sweep.add_argument("--no-validate", dest="no_validate", action="store_true")
    sweep.add_argument("--truncate-pv", dest="truncate_pv", action="store_true")

    mdp = sub.add_parser("mdp", parents=[common], help="solve ensemble MDPs at fixed prices")
    mdp.add_argument("--bus", type=int, help="only the ensemble at this bus")
    mdp.add_argument("--price-p", dest="price_p", type=float, default=0.0, help="$/kW offered each interval")
    mdp.add_argument("--price-q", dest="price_q", type=float, default=0.0)

    opf = sub.add_parser("opf", parents=[common], help="solve one interval's OPF")
    opf.add_argument("--t", dest="interval", type=int, default=0)
    opf.add_argument("--deterministic", action="store_true", help="drop the forecast uncertainty")
    opf.add_argument("--price-p", dest="price_p", type=float, default=0.0)
    opf.add_argument("--price-q", dest="price_q", type=float, default=0.0)
    return parser


MANIFEST_KEYS = (
    "case_path", "output_dir", "delta", "zeta", "max_iter", "step_rule", "proximal", "eta_g", "eta_v",
    "lambda_tariff", "sigma_frac", "gamma_mode", "alpha_mode", "objective_mode", "n_states", "n_ensembles",
    "n_samples", "seed", "workers",
)


def manifest_from_args(args: argparse.Namespace) -> RunManifest:
    overrides: Dict[str, Any] = {k: getattr(args, k, None) for k in MANIFEST_KEYS}
    manifest = resolve_manifest(overrides)
    if not Path(manifest.case_path).is_file():
        raise FileNotFoundError(f"case file not found: {manifest.case_path}")
    return manifest


def cmd_solve(args: argparse.Namespace) -> int:
    manifest = manifest_from_args(args)
    logger.info(f"🚀 Solving {manifest.case_path}")
    run = run_solve(manifest)
    writer = ResultWriter(manifest.output_dir)
    writer.write_manifest(manifest_echo(manifest, run.network))
    writer.write_solution(run.solution, run.network, run.baseline)
    solution = run.solution
    logger.info(
        f"📊 {solution.status.value} after {solution.iterations} iterations, "
        f"integrated objective {solution.integrated_objective:.4f}, "
        f"expected loss {solution.expected_losses.sum():.4f} kWh"
    )
    return EXIT_OK if solution.converged else EXIT_NOT_CONVERGED


def cmd_validate(args: argparse.Namespace) -> int:
    manifest = manifest_from_args(args)
    solution_dir = args.solution or manifest.output_dir
    network = prepare_network(manifest)
    check_network_hash(solution_dir, network)
    setpoints = read_setpoints(solution_dir, network)
    model = build_model(network, manifest)
    logger.info(f"🎲 Validating {len(setpoints)} intervals with {manifest.n_samples} samples (seed {manifest.seed})")
    report = run_validation(network, model, setpoints, manifest, truncate=args.truncate_pv)
    writer = ResultWriter(manifest.output_dir)
    writer.write_manifest(manifest_echo(manifest, network))
    writer.write_validation(report.violations, report.losses, manifest.eta_v)
    logger.info(f"📊 Max voltage violation rate {report.violations.max_rate('voltage_upper'):.4f} (upper), "
                f"{report.violations.max_rate('voltage_lower'):.4f} (lower)")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    parameter = SweepParameter(args.parameter)
    values = parse_values(parameter, args.values)
    manifest = manifest_from_args(args)
    runner = SweepRunner(manifest, validate=not args.no_validate, truncate=args.truncate_pv)
    results = runner.run(parameter, values)
    writer = ResultWriter(manifest.output_dir)
    echo = manifest.model_dump(mode="json")
    echo["sweep"] = {"parameter": parameter.value, "values": [r.case.label for r in results]}
    writer.write_manifest(echo)
    writer.write_table(runner.interval_frame(), "sweep_intervals.csv")
    writer.write_table(runner.summary_frame(), "sweep_summary.csv")
    stats = runner.generate_statistics()
    logger.info(f"📊 Sweep finished: {stats['total_values'] - stats['failed_values']}/{stats['total_values']} values ok")
    return EXIT_ERROR if stats["failed_values"] == len(results) else EXIT_OK


def cmd_mdp(args: argparse.Namespace) -> int:
    manifest = manifest_from_args(args)
    network = prepare_network(manifest)
    sites = [s for s in network.tcl if args.bus is None or s.bus == args.bus]
    if not sites:
        raise ValueError(f"no TCL ensemble at bus {args.bus}" if args.bus is not None else "case has no TCL ensembles")
    config = std2_config(manifest)
    T = network.horizon
    policies, rows = [], []
    for site in sites:
        spec = ensemble_from_site(site, T, config.gamma_mode, config.n_states)
        utilities = utilities_from_prices(spec, np.full(T, args.price_p), np.full(T, args.price_q))
        policy = backward_forward_solve(spec, utilities, config.mdp_method)
        p, q = expected_injections(policy, spec)
        policies.append(policy)
        for t in range(T):
            rows.append({"bus": site.bus, "t": t, "p": p[t], "q": q[t]})
        logger.info(f"Ensemble at bus {site.bus}: objective {policy.objective_value:.6f}, "
                    f"discomfort {discomfort_cost(policy, spec):.6f}")
    writer = ResultWriter(manifest.output_dir)
    writer.write_manifest(manifest_echo(manifest, network))
    writer.write_policies(policies)
    writer.write_table(pd.DataFrame(rows, columns=["bus", "t", "p", "q"]), "mdp_injections.csv")
    return EXIT_OK


def cmd_opf(args: argparse.Namespace) -> int:
    manifest = manifest_from_args(args)
    network = prepare_network(manifest)
    t = args.interval
    if not 0 <= t < network.horizon:
        raise ValueError(f"interval {t} outside horizon 0..{network.horizon - 1}")
    config = std2_config(manifest)
    model = UncertaintyModel.zero(network) if args.deterministic else build_model(network, manifest)
    specs = [ensemble_from_site(site, network.horizon, config.gamma_mode, config.n_states) for site in network.tcl]
    bounds = TclBounds.from_states([s.p_states for s in specs], [s.q_states for s in specs])
    n = len(specs)
    result = solve_interval(network, model, t, np.full(n, args.price_p), np.full(n, args.price_q), bounds,
                            config.ccopf, solver_options())
    writer = ResultWriter(manifest.output_dir)
    writer.write_manifest(manifest_echo(manifest, network))
    writer.write_dispatch([result], network)
    logger.info(f"📊 Interval {t}: objective {result.objective:.6f}, expected loss {result.expected_loss:.6f} kW")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "validate": cmd_validate,
    "sweep": cmd_sweep,
    "mdp": cmd_mdp,
    "opf": cmd_opf,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, (args.log_level or settings.LOG_LEVEL).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        print(f"error: invalid configuration: {e.errors()[0].get('loc')} {e.errors()[0].get('msg')}", file=sys.stderr)
    except (TclOpfError, ValueError, OSError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
