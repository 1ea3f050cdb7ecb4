#!/usr/bin/env python3
"""
Report files written by the command-line tools and served by the report API.

CSV numbers are written with 17 significant digits. Files that must be
byte-identical across reruns carry no wall-clock values; timings go to
their own file, written on request.
"""
import json
import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from fit import FitResult
from marginal_likelihood import PanelEvaluation, PosteriorSummary

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'

ESTIMATES_FILE = 'estimates.csv'
VCOV_FILE = 'vcov.csv'
TRACE_FILE = 'trace.csv'
TIMINGS_FILE = 'timings.csv'
POSTERIOR_FILE = 'posterior_means.csv'
TRANSFER_FILE = 'transfer_functions.csv'
SUMMARY_FILE = 'fit_summary.json'

TRACE_COLUMNS = ['stage', 'iteration', 'Q', 'loglik', 'grad_norm', 'step_norm', 'halvings', 'ridge']


def write_frame(df: pd.DataFrame, path: str) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(df)} rows to {path}")
    return path


def write_json(payload: Dict, path: str) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')
    logger.info(f"Wrote {path}")
    return path


def _finite_or_none(value: Optional[float]):
    if value is None:
        return None
    value = float(value)
    return value if np.isfinite(value) else None


def estimates_frame(result: FitResult) -> pd.DataFrame:
    return pd.DataFrame({
        'component': list(result.components),
        'parameter': list(result.names),
        'estimate': result.psi_hat,
        'se': result.se,
    })


def vcov_frame(result: FitResult) -> pd.DataFrame:
    df = pd.DataFrame(result.vcov, columns=list(result.names))
    df.insert(0, 'parameter', list(result.names))
    return df


def trace_frame(trace: List[Dict]) -> pd.DataFrame:
    return pd.DataFrame([{k: row[k] for k in TRACE_COLUMNS} for row in trace], columns=TRACE_COLUMNS)


def timings_frame(trace: List[Dict]) -> pd.DataFrame:
    rows = [{'stage': r['stage'], 'iteration': r['iteration'], 'Q': r['Q'],
             'seconds': r['wall_time'], 'minutes': r['wall_time'] / 60.0} for r in trace]
    return pd.DataFrame(rows, columns=['stage', 'iteration', 'Q', 'seconds', 'minutes'])


def posterior_frame(posteriors: Sequence[PosteriorSummary], r_names: Sequence[str]) -> pd.DataFrame:
    rows = []
    for post in posteriors:
        row = {'series': post.series_id}
        for k, name in enumerate(r_names):
            row[f"zeta_mean_{name}"] = float(post.zeta_mean[k])
            row[f"zeta_sd_{name}"] = float(np.sqrt(post.zeta_cov[k, k]))
            row[f"U_hat_{name}"] = float(post.U_hat[k])
            row[f"U_sd_{name}"] = float(np.sqrt(post.U_cov[k, k]))
        rows.append(row)
    return pd.DataFrame(rows)


def summary_payload(result: FitResult) -> Dict:
    spec = result.spec
    return {
        'loglik': result.loglik,
        'converged': result.converged,
        'message': result.message,
        'iterations': result.iterations,
        'Q': result.Q,
        'n_params': result.n_params,
        'n_obs': result.n_obs,
        'n_series': len(spec.series_ids) if spec else None,
        'family': spec.family.value if spec else None,
        'random_effects_dim': spec.d if spec else None,
        'aic': result.aic,
        'bic': result.bic,
        'max_abs_gradient': _finite_or_none(np.max(np.abs(result.grad))) if len(result.grad) else 0.0,
        'information_error': result.information_error,
    }


def write_fit_report(result: FitResult, out_dir: str, posteriors: Optional[Sequence[PosteriorSummary]] = None,
                     curves: Optional[List[Dict]] = None, timings: bool = False) -> Dict[str, str]:
    """Write the fit report files and return their paths by name.

    timings.csv is only written when timings is set, so a default report is
    byte-identical across reruns.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        'estimates': write_frame(estimates_frame(result), os.path.join(out_dir, ESTIMATES_FILE)),
        'vcov': write_frame(vcov_frame(result), os.path.join(out_dir, VCOV_FILE)),
        'trace': write_frame(trace_frame(result.trace), os.path.join(out_dir, TRACE_FILE)),
        'summary': write_json(summary_payload(result), os.path.join(out_dir, SUMMARY_FILE)),
    }
    if timings:
        paths['timings'] = write_frame(timings_frame(result.trace), os.path.join(out_dir, TIMINGS_FILE))
    if posteriors is not None and result.spec is not None and result.spec.d:
        paths['posterior'] = write_frame(posterior_frame(posteriors, result.spec.r_names),
                                         os.path.join(out_dir, POSTERIOR_FILE))
    if curves:
        paths['transfer_functions'] = write_frame(pd.DataFrame(curves), os.path.join(out_dir, TRANSFER_FILE))
    return paths


def write_loglik_report(evaluation: PanelEvaluation, names: Sequence[str], out_dir: str) -> Dict[str, str]:
    paths = {'loglik': write_json({
        'loglik': evaluation.loglik,
        'Q': evaluation.Q,
        'integral_count': evaluation.integral_count,
        'max_inner_iterations': evaluation.inner_iterations,
    }, os.path.join(out_dir, 'loglik.json'))}
    if evaluation.grad is not None:
        paths['gradient'] = write_frame(pd.DataFrame({'parameter': list(names), 'gradient': evaluation.grad}),
                                        os.path.join(out_dir, 'gradient.csv'))
    if evaluation.hess is not None:
        hess = pd.DataFrame(evaluation.hess, columns=list(names))
        hess.insert(0, 'parameter', list(names))
        paths['hessian'] = write_frame(hess, os.path.join(out_dir, 'hessian.csv'))
    return paths


def series_timings_frame(evaluation: PanelEvaluation) -> pd.DataFrame:
    return pd.DataFrame([{
        'series': b.series_id, 'inner_iterations': b.inner_iterations, 'grid_points': b.grid_points,
        'integral_count': b.integral_count, 'seconds': b.wall_time,
    } for b in evaluation.bundles])
