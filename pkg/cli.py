#!/usr/bin/env python3
"""
Command-line front door for fitting and simulating panel GLARMA models.

    python cli.py fit --data panel.csv --config model.json --out-dir out/
    python cli.py simulate --config sim.json --out-dir sim/ --seed 7
    python cli.py loglik --data panel.csv --config model.json --psi out/estimates.csv --q 5
    python cli.py posterior --data panel.csv --config model.json --psi out/estimates.csv
    python cli.py benchmark-q --data panel.csv --config model.json --q-list 2,3,4,5,6,7
    python cli.py basis --K 3 --lags 11
    python cli.py fit-series --data panel.csv --config model.json
    python cli.py lr-test --data panel.csv --config full.json --reduced-config reduced.json
    python cli.py check-derivatives --data panel.csv --config model.json --psi psi.csv --q 10

Exit codes: 0 success, 1 invalid input or numerical failure, 2 fit did not converge.
"""
import argparse
import logging
import os
import sys
import time
from typing import List, Optional

import numpy as np
import pandas as pd

from errors import GlarmaError, SingularInformationError
from fit import (FitOptions, ascent_direction, fit, lr_test, posterior_summaries, series_lag_lr_tests,
                 standard_errors, transfer_function_curves)
from lag_design import basis_matrix, implied_lag_coefs
from marginal_likelihood import panel_loglik
from model_config import load_model_config, load_simulation_config
from numerical_checks import derivative_check
from panel_data import load_panel, read_psi
from reports import (estimates_frame, posterior_frame, series_timings_frame, write_fit_report, write_frame,
                     write_json, write_loglik_report)
from settings import RuntimeSettings
from simulate import simulate_panel, write_simulation

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def _q_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("Q values must be positive integers")
    return values


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{text}'")
    if value < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return value


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _load(args):
    config = load_model_config(args.config)
    panel, spec = load_panel(args.data, config)
    options = FitOptions.from_config(config, workers=args.workers, q=args.q)
    return config, panel, spec, options


def _psi_or_fit(args, panel, spec, options):
    if getattr(args, 'psi', None):
        return read_psi(args.psi, spec), None
    logger.info("No --psi given; fitting with the configured schedule first")
    result = fit(panel, spec, options)
    return result.psi_hat, result


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    _, panel, spec, options = _load(args)
    result = fit(panel, spec, options)
    posteriors = posterior_summaries(panel, spec, result.psi_hat, options.final_Q)
    curves = transfer_function_curves(spec, result.psi_hat, posteriors)
    write_fit_report(result, args.out_dir, posteriors, curves, timings=args.timings)
    print(estimates_frame(result).to_string(index=False))
    print(f"\nlog L = {result.loglik:.6f}  AIC = {result.aic:.4f}  BIC = {result.bic:.4f}")
    if not result.converged:
        logger.warning(f"Fit did not converge: {result.message}")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_simulate(args) -> int:
    sim = load_simulation_config(args.config)
    result = simulate_panel(sim, seed=args.seed, workers=args.workers)
    paths = write_simulation(result, args.out_dir)
    print(f"✅ Simulated {result.panel.J} series: {paths['data']} (latents: {paths['latents']})")
    return EXIT_OK


def cmd_loglik(args) -> int:
    _, panel, spec, options = _load(args)
    psi = read_psi(args.psi, spec)
    evaluation = panel_loglik(psi, options.final_Q, panel, spec, want_derivs=2, workers=args.workers)
    write_loglik_report(evaluation, spec.constraints.names, args.out_dir)
    write_frame(series_timings_frame(evaluation), os.path.join(args.out_dir, 'series_timings.csv'))
    print(f"{evaluation.loglik:.17g}")
    return EXIT_OK


def cmd_posterior(args) -> int:
    _, panel, spec, options = _load(args)
    psi, _ = _psi_or_fit(args, panel, spec, options)
    posteriors = posterior_summaries(panel, spec, psi, options.final_Q)
    if spec.d:
        write_frame(posterior_frame(posteriors, spec.r_names), os.path.join(args.out_dir, 'posterior_means.csv'))
    curves = transfer_function_curves(spec, psi, posteriors)
    if curves:
        write_frame(pd.DataFrame(curves), os.path.join(args.out_dir, 'transfer_functions.csv'))
    return EXIT_OK


def _pct_change(new: np.ndarray, old: np.ndarray) -> float:
    with np.errstate(divide='ignore', invalid='ignore'):
        change = 100.0 * np.abs(new - old) / np.maximum(np.abs(old), 1e-12)
    change = change[np.isfinite(change)]
    return float(np.max(change)) if len(change) else float('nan')


def cmd_benchmark_q(args) -> int:
    _, panel, spec, options = _load(args)
    psi, _ = _psi_or_fit(args, panel, spec, options)
    rows = []
    previous = None
    # untimed warm-up
    panel_loglik(psi, args.q_list[0], panel, spec, want_derivs=2, workers=args.workers)
    for Q in args.q_list:
        seconds = float('inf')
        for _ in range(args.repeats):
            started = time.perf_counter()
            ev = panel_loglik(psi, Q, panel, spec, want_derivs=2, workers=args.workers)
            step, _ = ascent_direction(ev.hess, ev.grad, options.ridge)
            seconds = min(seconds, time.perf_counter() - started)
        after = panel_loglik(psi + step, Q, panel, spec, want_derivs=2, workers=args.workers)
        estimates = psi + step
        try:
            se, _ = standard_errors(after.hess, spec.constraints.names)
        except SingularInformationError as e:
            logger.warning(f"Q={Q}: {e}")
            se = np.full(len(psi), np.nan)
        row = {'Q': Q, 'grid_points': Q ** spec.d, 'seconds': seconds, 'minutes': seconds / 60.0,
               'loglik': after.loglik, 'integral_count': after.integral_count,
               'param_pct_change': float('nan'), 'se_pct_change': float('nan')}
        if previous is not None:
            row['param_pct_change'] = _pct_change(estimates, previous[0])
            row['se_pct_change'] = _pct_change(se, previous[1])
        previous = (estimates, se)
        rows.append(row)
        logger.info(f"Q={Q}: log L={after.loglik:.6f} ({seconds:.3f}s, {row['grid_points']} points per series)")
    table = pd.DataFrame(rows)
    write_frame(table, os.path.join(args.out_dir, 'benchmark_q.csv'))
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_basis(args) -> int:
    basis = basis_matrix(args.K, args.lags)
    table = pd.DataFrame(basis.H, columns=[f"h{k}" for k in range(1, basis.K + 1)])
    table.insert(0, 'v', basis.lags / (basis.L_lags + 1.0))
    table.insert(0, 'lag', basis.lags)
    if args.beta:
        table['omega'] = implied_lag_coefs(args.beta, basis)
    write_frame(table, os.path.join(args.out_dir, 'basis.csv'))
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_fit_series(args) -> int:
    _, panel, spec, options = _load(args)
    table = pd.DataFrame(series_lag_lr_tests(panel, spec, options))
    write_frame(table, os.path.join(args.out_dir, 'series_fits.csv'))
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_lr_test(args) -> int:
    full_config = load_model_config(args.config)
    reduced_config = load_model_config(args.reduced_config)
    full_panel, full_spec = load_panel(args.data, full_config)
    reduced_panel, reduced_spec = load_panel(args.data, reduced_config)
    full = fit(full_panel, full_spec, FitOptions.from_config(full_config, workers=args.workers, q=args.q))
    reduced = fit(reduced_panel, reduced_spec,
                  FitOptions.from_config(reduced_config, workers=args.workers, q=args.q))
    test = lr_test(full, reduced)
    write_json({
        'G2': test.statistic, 'df': test.df, 'p_value': test.p_value, 'boundary': test.boundary,
        'loglik_full': full.loglik, 'loglik_reduced': reduced.loglik,
        'converged_full': full.converged, 'converged_reduced': reduced.converged,
    }, os.path.join(args.out_dir, 'lr_test.json'))
    print(f"G2 = {test.statistic:.4f} on {test.df} df, p = {test.p_value:.4g}"
          + (" (boundary: chi-squared reference is conservative)" if test.boundary else ""))
    if not (full.converged and reduced.converged):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_check_derivatives(args) -> int:
    _, panel, spec, options = _load(args)
    psi = read_psi(args.psi, spec)
    table = derivative_check(panel, spec, psi, options.final_Q, h=args.h, workers=args.workers)
    write_frame(table, os.path.join(args.out_dir, 'derivative_check.csv'))
    print(table.to_string(index=False))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser(settings: Optional[RuntimeSettings] = None) -> argparse.ArgumentParser:
    settings = settings or RuntimeSettings()
    parser = argparse.ArgumentParser(
        description='Panel GLARMA models with random effects: fit, simulate and inspect',
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument('--log-level', default=settings.log_level, help='Logging level (default from GLARMA_LOG_LEVEL)')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p, data=True, psi=False):
        if data:
            p.add_argument('--data', required=True, help='Long-format panel CSV')
        p.add_argument('--config', required=True, help='Model configuration JSON')
        p.add_argument('--out-dir', default=settings.out_dir, help='Directory for report files')
        p.add_argument('--workers', type=int, default=settings.workers, help='Series evaluated in parallel')
        p.add_argument('--q', type=int, default=None, help='Use a single quadrature stage with this Q')
        if psi:
            p.add_argument('--psi', required=psi == 'required', default=None,
                           help='Parameter CSV with columns parameter,estimate')

    p = sub.add_parser('fit', help='Fit the model and write the report (byte-identical on rerun '
                                   'unless --timings is given)')
    common(p)
    p.add_argument('--timings', action='store_true', help='Also write timings.csv with wall time per iteration')
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser('simulate', help='Simulate a panel from a simulation config')
    p.add_argument('--config', required=True, help='Simulation configuration JSON')
    p.add_argument('--out-dir', default=settings.out_dir)
    p.add_argument('--seed', type=int, default=None, help='Override the configured seed')
    p.add_argument('--workers', type=int, default=settings.workers)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser('loglik', help='Log-likelihood, gradient and Hessian at given parameters')
    common(p, psi='required')
    p.set_defaults(handler=cmd_loglik)

    p = sub.add_parser('posterior', help='Posterior random-effect means and transfer-function curves')
    common(p, psi=True)
    p.set_defaults(handler=cmd_posterior)

    p = sub.add_parser('benchmark-q', help='One Newton iteration per Q: timing and stability')
    common(p, psi=True)
    p.add_argument('--q-list', type=_q_list, required=True, help='Comma-separated Q values')
    p.add_argument('--repeats', type=_positive_int, default=1,
                   help='Timed Newton iterations per Q; the fastest is reported')
    p.set_defaults(handler=cmd_benchmark_q)

    p = sub.add_parser('basis', help='Lag basis matrix and implied lag coefficients')
    p.add_argument('--K', type=int, default=3)
    p.add_argument('--lags', type=int, default=11)
    p.add_argument('--beta', type=_float_list, default=None, help='Comma-separated basis coefficients')
    p.add_argument('--out-dir', default=settings.out_dir)
    p.set_defaults(handler=cmd_basis)

    p = sub.add_parser('fit-series', help='Fixed-effects fit of every series separately')
    common(p)
    p.set_defaults(handler=cmd_fit_series)

    p = sub.add_parser('lr-test', help='Likelihood-ratio test of a reduced against a full model')
    common(p)
    p.add_argument('--reduced-config', required=True, help='Reduced model configuration JSON')
    p.set_defaults(handler=cmd_lr_test)

    p = sub.add_parser('check-derivatives', help='Compare analytic derivatives with finite differences')
    common(p, psi='required')
    p.add_argument('--h', type=float, default=1e-5, help='Finite-difference step')
    p.set_defaults(handler=cmd_check_derivatives)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    settings = RuntimeSettings()
    parser = build_parser(settings)
    args = parser.parse_args(argv)
    settings.configure_logging(args.log_level)
    try:
        settings.require_valid()
        logger.debug(f"Runtime settings: {settings.to_dict()}")
        return args.handler(args)
    except GlarmaError as e:
        logger.error(str(e))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
