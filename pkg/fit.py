#!/usr/bin/env python3
"""
Maximum likelihood fitting of panel GLARMA models with random effects.

The outer problem is a ridge-stabilized Newton-Raphson on the adaptive
quadrature log-likelihood, run over a schedule of increasing Q. Standard
errors come from the observed information at the optimum.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from errors import ContractError, GlarmaError, NonNestedModelsError, SingularInformationError
from expfam import Family
from glarma_kernel import ArmaParams, SeriesData, glarma_filter
from lag_design import implied_lag_coefs
from marginal_likelihood import PosteriorSummary, panel_loglik, series_posterior
from model_config import ModelConfig
from panel_data import ModelSpec, PanelData
from ranef import normalize_signs

logger = logging.getLogger(__name__)

# objective(psi, Q) -> (loglik, gradient, Hessian)
Objective = Callable[[np.ndarray, int], Tuple[float, np.ndarray, np.ndarray]]

MAX_RIDGE = 1e12
LAMBDA_START_FLOOR = 0.1


@dataclass(frozen=True)
class FitOptions:
    schedule: Tuple[Tuple[int, int], ...] = ((3, 20), (5, 50))
    grad_tol: float = 1e-6
    param_tol: float = 1e-8
    max_halvings: int = 10
    ridge: float = 1e-4
    workers: int = 1

    def __post_init__(self):
        if not self.schedule:
            raise ContractError("Q schedule needs at least one stage")
        qs = [q for q, _ in self.schedule]
        if any(q < 1 for q in qs) or any(b < a for a, b in zip(qs, qs[1:])):
            raise ContractError(f"Q values must be >= 1 and nondecreasing, got {qs}")

    @classmethod
    def from_config(cls, config: ModelConfig, workers: int = 1, q: Optional[int] = None) -> 'FitOptions':
        schedule = tuple((int(a), int(b)) for a, b in config.quadrature.schedule)
        if q is not None:
            # single stage at the requested Q with the whole iteration budget
            schedule = ((int(q), int(sum(it for _, it in schedule))),)
        opt = config.optimizer
        return cls(schedule=schedule, grad_tol=opt.grad_tol, param_tol=opt.param_tol,
                   max_halvings=opt.max_halvings, ridge=opt.ridge, workers=workers)

    @property
    def final_Q(self) -> int:
        return self.schedule[-1][0]


@dataclass(frozen=True)
class NewtonOutcome:
    psi: np.ndarray
    loglik: float
    grad: np.ndarray
    hess: np.ndarray
    converged: bool
    iterations: int
    trace: List[Dict]
    message: str


@dataclass(frozen=True)
class FitResult:
    psi_hat: np.ndarray
    names: Tuple[str, ...]
    components: Tuple[str, ...]
    se: np.ndarray
    vcov: np.ndarray
    loglik: float
    grad: np.ndarray
    hess: np.ndarray
    converged: bool
    iterations: int
    Q: int
    trace: List[Dict]
    n_obs: int
    spec: Optional[ModelSpec] = None
    message: str = ''
    information_error: Optional[str] = None

    @property
    def n_params(self) -> int:
        return len(self.psi_hat)

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + self.n_params * float(np.log(max(self.n_obs, 1)))

    def estimate(self, name: str) -> float:
        return float(self.psi_hat[self.names.index(name)])


@dataclass(frozen=True)
class SeriesFit:
    series_id: str
    names: Tuple[str, ...]
    estimates: np.ndarray
    se: np.ndarray
    loglik: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int
    p_value: float
    boundary: bool = False


# ---------------------------------------------------------------------------
# Newton-Raphson


def ascent_direction(hess: np.ndarray, grad: np.ndarray, ridge0: float) -> Tuple[np.ndarray, float]:
    """solve(-H + ridge I, g), trying ridge = 0 first and escalating x10 until SPD."""
    neg_hess = -hess
    n = len(grad)
    scale = max(1.0, float(np.max(np.abs(np.diag(neg_hess))))) if n else 1.0
    ridge = 0.0
    while True:
        try:
            factor = linalg.cho_factor(neg_hess + ridge * scale * np.eye(n), lower=True)
            return linalg.cho_solve(factor, grad), ridge
        except linalg.LinAlgError:
            ridge = ridge0 if ridge == 0.0 else ridge * 10.0
            if ridge > MAX_RIDGE:
                raise SingularInformationError([])


def newton_maximize(objective: Objective, psi0, options: FitOptions) -> NewtonOutcome:
    psi = np.asarray(psi0, dtype=float).copy()
    trace: List[Dict] = []
    converged = False
    message = 'iteration limit reached'
    total_steps = 0
    n_stages = len(options.schedule)
    l = g = H = None

    for stage, (Q, max_iters) in enumerate(options.schedule, start=1):
        final = stage == n_stages
        l, g, H = objective(psi, Q)
        logger.info(f"Stage {stage}/{n_stages} (Q={Q}): start loglik={l:.10g}")
        for iteration in range(1, max_iters + 1):
            started = time.perf_counter()
            grad_norm = float(np.max(np.abs(g))) if len(g) else 0.0
            grad_ok = grad_norm <= options.grad_tol * (1.0 + abs(l))
            step, ridge = ascent_direction(H, g, options.ridge)
            rel_step = float(np.max(np.abs(step)) / (1.0 + np.max(np.abs(psi)))) if len(step) else 0.0
            if grad_ok and rel_step <= options.param_tol:
                if final:
                    converged, message = True, 'converged'
                break

            scale, halvings, accepted = 1.0, 0, False
            for _ in range(options.max_halvings + 1):
                candidate = psi + scale * step
                try:
                    lc, gc, Hc = objective(candidate, Q)
                except GlarmaError as e:
                    logger.debug(f"candidate rejected: {e}")
                    lc = -np.inf
                if np.isfinite(lc) and lc >= l:
                    accepted = True
                    break
                scale *= 0.5
                halvings += 1

            if not accepted:
                if grad_ok:
                    # no further ascent possible at round-off level
                    if final:
                        converged, message = True, 'converged (step halving exhausted at tolerance)'
                    break
                message = f"step halving failed at stage {stage}, iteration {iteration}"
                logger.warning(message)
                break

            psi, l, g, H = candidate, lc, gc, Hc
            total_steps += 1
            step_norm = float(np.max(np.abs(scale * step))) if len(step) else 0.0
            trace.append({
                'stage': stage, 'iteration': iteration, 'Q': Q, 'loglik': float(l),
                'grad_norm': float(np.max(np.abs(g))) if len(g) else 0.0, 'step_norm': step_norm,
                'halvings': halvings, 'ridge': ridge, 'wall_time': time.perf_counter() - started,
            })
            logger.info(f"  iter {iteration}: loglik={l:.10g} |g|={trace[-1]['grad_norm']:.3e} "
                        f"|step|={step_norm:.3e} halvings={halvings}")
        else:
            message = f"iteration limit reached at stage {stage} (Q={Q})"

        if final and not converged:
            logger.warning(f"Fit did not converge: {message}")

    return NewtonOutcome(psi=psi, loglik=float(l), grad=g, hess=H, converged=converged,
                         iterations=total_steps, trace=trace, message=message)


# ---------------------------------------------------------------------------
# standard errors and tests


def _null_directions(neg_hess: np.ndarray, names: Sequence[str]) -> List[Dict[str, float]]:
    values, vectors = np.linalg.eigh(neg_hess)
    cutoff = 1e-10 * max(1.0, float(np.max(np.abs(values))))
    labels = list(names) or [f"psi[{i}]" for i in range(len(values))]
    directions = []
    for k in np.flatnonzero(values <= cutoff):
        v = vectors[:, k]
        directions.append({labels[i]: float(v[i]) for i in np.flatnonzero(np.abs(v) > 0.1)})
    return directions


def standard_errors(hess, names: Sequence[str] = ()) -> Tuple[np.ndarray, np.ndarray]:
    """vcov = (-H)^-1 and se = sqrt(diag(vcov))."""
    hess = np.asarray(hess, dtype=float)
    neg_hess = -0.5 * (hess + hess.T)
    try:
        factor = linalg.cho_factor(neg_hess, lower=True)
    except linalg.LinAlgError:
        raise SingularInformationError(_null_directions(neg_hess, names))
    vcov = linalg.cho_solve(factor, np.eye(len(neg_hess)))
    vcov = 0.5 * (vcov + vcov.T)
    return np.sqrt(np.diag(vcov)), vcov


def wald_test(result: FitResult, C, c0=None) -> TestResult:
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != result.n_params:
        raise ContractError(f"contrast has {C.shape[1]} columns, model has {result.n_params} parameters")
    c0 = np.zeros(C.shape[0]) if c0 is None else np.asarray(c0, dtype=float).reshape(-1)
    diff = C @ result.psi_hat - c0
    V = C @ result.vcov @ C.T
    try:
        factor = linalg.cho_factor(V, lower=True)
    except linalg.LinAlgError:
        raise SingularInformationError(_null_directions(V, [f"contrast[{i}]" for i in range(len(V))]))
    statistic = float(diff @ linalg.cho_solve(factor, diff))
    df = int(np.linalg.matrix_rank(C))
    return TestResult(statistic=statistic, df=df, p_value=float(chi2.sf(statistic, df)))


def selection_contrast(result: FitResult, names: Sequence[str]) -> np.ndarray:
    C = np.zeros((len(names), result.n_params))
    for row, name in enumerate(names):
        C[row, result.names.index(name)] = 1.0
    return C


def _embedding(reduced_rows: List[str], full_rows: List[str]) -> np.ndarray:
    E = np.zeros((len(full_rows), len(reduced_rows)))
    for k, row in enumerate(reduced_rows):
        if row not in full_rows:
            raise NonNestedModelsError(f"reduced model has {row}, which the full model lacks")
        E[full_rows.index(row), k] = 1.0
    return E


def _contained(A_full: np.ndarray, B: np.ndarray) -> bool:
    if B.size == 0 or not np.any(B):
        return True
    if A_full.shape[1] == 0:
        return False
    coef = np.linalg.lstsq(A_full, B, rcond=None)[0]
    return bool(np.allclose(A_full @ coef, B, atol=1e-10))


def check_nested(full: ModelSpec, reduced: ModelSpec) -> bool:
    """True when the reduced model drops random-effect variances (a boundary null)."""
    if full.family != reduced.family:
        raise NonNestedModelsError(f"families differ: {full.family.value} vs {reduced.family.value}")
    if full.series_ids != reduced.series_ids:
        raise NonNestedModelsError("models were fitted to different series")
    fc, rc = full.constraints, reduced.constraints

    beta_full = [f"{sid}:{x}" for sid in full.series_ids for x in full.x_names]
    beta_red = [f"{sid}:{x}" for sid in reduced.series_ids for x in reduced.x_names]
    if not _contained(fc.A_beta, _embedding(beta_red, beta_full) @ rc.A_beta):
        raise NonNestedModelsError("reduced regression constraints are not implied by the full model")

    def tau_rows(spec: ModelSpec) -> List[str]:
        rows = []
        for sid, (p, q) in zip(spec.series_ids, spec.constraints.orders):
            rows += [f"{sid}:phi{l}" for l in range(1, p + 1)] + [f"{sid}:theta{l}" for l in range(1, q + 1)]
        return rows

    if not _contained(fc.A_tau, _embedding(tau_rows(reduced), tau_rows(full)) @ rc.A_tau):
        raise NonNestedModelsError("reduced serial-dependence constraints are not implied by the full model")

    full_free = {(full.r_names[r], full.r_names[c]) for r, c in full.structure.free}
    red_free = {(reduced.r_names[r], reduced.r_names[c]) for r, c in reduced.structure.free}
    if not red_free <= full_free:
        raise NonNestedModelsError("reduced random-effect structure is not a restriction of the full one")
    return reduced.d < full.d


def lr_test(fit_full: FitResult, fit_reduced: FitResult) -> TestResult:
    boundary = False
    if fit_full.spec is not None and fit_reduced.spec is not None:
        boundary = check_nested(fit_full.spec, fit_reduced.spec)
    df = fit_full.n_params - fit_reduced.n_params
    if df < 0:
        raise NonNestedModelsError(f"reduced model has more parameters ({fit_reduced.n_params}) "
                                   f"than the full model ({fit_full.n_params})")
    G2 = 2.0 * (fit_full.loglik - fit_reduced.loglik)
    p_value = 1.0 if df == 0 else float(chi2.sf(max(G2, 0.0), df))
    if boundary:
        logger.warning("Reduced model sets random-effect variances to zero; "
                       "the chi-squared reference distribution is conservative on the boundary")
    return TestResult(statistic=G2, df=df, p_value=p_value, boundary=boundary)


# ---------------------------------------------------------------------------
# per-series fits and starting values


def fit_series(series: SeriesData, family: Family, p: int = 0, q: int = 0,
               options: Optional[FitOptions] = None, covariates: Optional[np.ndarray] = None,
               x_names: Optional[Sequence[str]] = None) -> SeriesFit:
    """Fixed-effects GLARMA fit of one series (no random effects)."""
    X = series.X if covariates is None else np.asarray(covariates, dtype=float)
    x_names = list(series.x_names if x_names is None else x_names)
    b = X.shape[1]
    options = options or FitOptions(schedule=((1, 50),))
    options = FitOptions(schedule=((1, options.schedule[-1][1]),), grad_tol=options.grad_tol,
                         param_tol=options.param_tol, max_halvings=options.max_halvings, ridge=options.ridge)
    offset = np.zeros(series.n)

    def objective(theta, _Q):
        out = glarma_filter(series, theta[:b], X, offset, ArmaParams.of(theta[b:b + p], theta[b + p:]),
                            family, want_derivs=2)
        return float(out.loglik), out.grad, out.hess

    names = tuple(x_names + [f"phi{l}" for l in range(1, p + 1)] + [f"theta{l}" for l in range(1, q + 1)])
    outcome = newton_maximize(objective, np.zeros(b + p + q), options)
    try:
        se, _ = standard_errors(outcome.hess, names)
    except SingularInformationError as e:
        logger.warning(f"series {series.series_id}: {e}")
        se = np.full(len(names), np.nan)
    return SeriesFit(series_id=series.series_id, names=names, estimates=outcome.psi, se=se,
                     loglik=outcome.loglik, converged=outcome.converged, iterations=outcome.iterations)


def series_lag_lr_tests(panel: PanelData, spec: ModelSpec, options: Optional[FitOptions] = None) -> List[Dict]:
    """Per-series fits with an LR test that the lag-basis coefficients are all zero."""
    rows = []
    lag_idx = [spec.x_names.index(name) for name in spec.lag_names if name in spec.x_names]
    keep = [k for k in range(len(spec.x_names)) if k not in lag_idx]
    for j, series in enumerate(panel.series):
        p, q = spec.constraints.orders[j]
        full = fit_series(series, spec.family, p, q, options)
        row = {'series': series.series_id, 'loglik': full.loglik, 'converged': full.converged}
        for name, est, se in zip(full.names, full.estimates, full.se):
            row[name] = float(est)
            row[f"se_{name}"] = float(se)
        if lag_idx:
            reduced = fit_series(series, spec.family, p, q, options, covariates=series.X[:, keep],
                                 x_names=[spec.x_names[k] for k in keep])
            G2 = 2.0 * (full.loglik - reduced.loglik)
            row.update({'lr_statistic': G2, 'lr_df': len(lag_idx),
                        'lr_p_value': float(chi2.sf(max(G2, 0.0), len(lag_idx)))})
        rows.append(row)
    return rows


def initialize(panel: PanelData, spec: ModelSpec, options: Optional[FitOptions] = None) -> np.ndarray:
    """Starting Psi from per-series fixed-effects fits projected onto the constraints."""
    cm = spec.constraints
    b = len(spec.x_names)
    workers = options.workers if options else 1

    def one(j: int) -> Tuple[np.ndarray, np.ndarray]:
        p, q = cm.orders[j]
        series = panel.series[j]
        try:
            sf = fit_series(series, spec.family, p, q, options)
            if np.all(np.isfinite(sf.estimates)):
                return sf.estimates[:b], sf.estimates[b:]
        except GlarmaError as e:
            logger.warning(f"series {series.series_id}: start fit failed ({e}); using zeros")
            return np.zeros(b), np.zeros(p + q)
        logger.warning(f"series {series.series_id}: start fit not finite; using zeros")
        return np.zeros(b), np.zeros(p + q)

    if workers > 1 and panel.J > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            per_series = list(executor.map(one, range(panel.J)))
    else:
        per_series = [one(j) for j in range(panel.J)]

    beta_stack = np.concatenate([bj for bj, _ in per_series]) if b else np.zeros(0)
    tau_stack = np.concatenate([tj for _, tj in per_series]) if per_series else np.zeros(0)
    psi_beta, psi_tau = cm.project(beta_stack, tau_stack)

    lam = np.zeros(cm.n_lambda)
    betas = np.array([bj for bj, _ in per_series]).reshape(panel.J, b)
    for pos in spec.structure.diagonal_positions():
        k, _ = spec.structure.free[pos]
        name = spec.r_names[k]
        sd = 0.0
        if name in spec.x_names and panel.J > 1:
            sd = float(np.std(betas[:, spec.x_names.index(name)], ddof=1))
        lam[pos] = max(sd, LAMBDA_START_FLOOR)
    psi0 = cm.join(psi_beta, psi_tau, lam)
    logger.info(f"Initialized {len(psi0)} parameters from {panel.J} per-series fits")
    return psi0


# ---------------------------------------------------------------------------
# full fit


def _normalize(spec: ModelSpec, psi: np.ndarray, grad: np.ndarray, hess: np.ndarray):
    sl = spec.constraints.lambda_slice
    if sl.stop == sl.start:
        return psi, grad, hess, np.ones(len(psi))
    _, flips = normalize_signs(psi[sl], spec.structure)
    D = np.ones(len(psi))
    D[sl] = flips
    return psi * D, grad * D, hess * np.outer(D, D), D


def fit(panel: PanelData, spec: ModelSpec, options: Optional[FitOptions] = None,
        psi0: Optional[np.ndarray] = None) -> FitResult:
    options = options or FitOptions()
    if psi0 is None:
        psi0 = initialize(panel, spec, options)

    def objective(psi, Q):
        ev = panel_loglik(psi, Q, panel, spec, want_derivs=2, workers=options.workers)
        return ev.loglik, ev.grad, ev.hess

    names = spec.constraints.names
    logger.info(f"Fitting {len(psi0)} parameters on {panel.J} series, schedule={list(options.schedule)}")
    outcome = newton_maximize(objective, psi0, options)
    psi, grad, hess, _ = _normalize(spec, outcome.psi, outcome.grad, outcome.hess)

    information_error = None
    try:
        se, vcov = standard_errors(hess, names)
    except SingularInformationError as e:
        information_error = str(e)
        logger.warning(information_error)
        se = np.full(len(psi), np.nan)
        vcov = np.full((len(psi), len(psi)), np.nan)

    result = FitResult(
        psi_hat=psi, names=names, components=spec.constraints.components, se=se, vcov=vcov,
        loglik=outcome.loglik, grad=grad, hess=hess, converged=outcome.converged,
        iterations=outcome.iterations, Q=options.final_Q, trace=outcome.trace, n_obs=panel.total_obs,
        spec=spec, message=outcome.message, information_error=information_error,
    )
    logger.info(f"Fit finished: loglik={result.loglik:.10g}, converged={result.converged}, "
                f"AIC={result.aic:.4f}, BIC={result.bic:.4f}")
    return result


# ---------------------------------------------------------------------------
# posterior summaries


def posterior_mean_re(panel: PanelData, spec: ModelSpec, j: int, psi, Q: int) -> Tuple[np.ndarray, np.ndarray]:
    """(U_hat_j, E[zeta_j | y_j]) on the adapted quadrature grid."""
    summary = series_posterior(panel, spec, j, psi, Q)
    return summary.U_hat, summary.zeta_mean


def posterior_summaries(panel: PanelData, spec: ModelSpec, psi, Q: int) -> List[PosteriorSummary]:
    return [series_posterior(panel, spec, j, psi, Q) for j in range(panel.J)]


def transfer_function_curves(spec: ModelSpec, psi, posteriors: Sequence[PosteriorSummary]) -> List[Dict]:
    """Implied lag coefficients per series: fixed part H beta and posterior-mean H (beta + U_hat)."""
    if spec.lag_basis is None:
        return []
    basis = spec.lag_basis
    x_idx = [spec.x_names.index(name) for name in spec.lag_names]
    rows = []
    for j, post in enumerate(posteriors):
        beta = spec.constraints.series_theta(j, psi).beta[x_idx]
        shift = np.zeros(basis.K)
        for k, name in enumerate(spec.lag_names):
            if name in spec.r_names and len(post.U_hat):
                shift[k] = post.U_hat[spec.r_names.index(name)]
        fixed = implied_lag_coefs(beta, basis)
        posterior = implied_lag_coefs(beta + shift, basis)
        for lag, w_fixed, w_post in zip(basis.lags, fixed, posterior):
            rows.append({'series': post.series_id, 'lag': int(lag),
                         'omega_fixed': float(w_fixed), 'omega_posterior': float(w_post)})
    return rows
