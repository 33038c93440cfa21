"""Trend-model fitting for monthly ecosystem series.

Models: linear, quadratic, exponential growth, asymptotic convergence
y = L - (L - y0)*exp(-k*t), and poly-convergence y = L - exp(a + b*t + c*t^2).
All fits are weighted least squares (weights default to 1). Nonlinear models
are solved with a damped Gauss-Newton (Levenberg) iteration from documented
starting points; confidence intervals come from the parameter covariance
matrix, from standard or wild bootstrap, or from the delta method.

Also hosts Fleiss' kappa and the stakes-vs-tool-count quadratic regression.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

REL_TOL = 1e-10
MAX_ITER = 10_000

MODEL_PARAMS = {
    "linear": ("a", "b"),
    "quadratic": ("a", "b", "c"),
    "exponential": ("A", "k"),
    "asymptotic": ("L", "y0", "k"),
    "poly_convergence": ("L", "a", "b", "c"),
}


class FitError(ValueError):
    """Raised when a fit is rejected before iteration starts."""


@dataclass
class TimeSeries:
    """Monthly series: points are (t, y) with t a month index, strictly increasing."""

    points: list[tuple[float, float]]
    weights: list[float] | None = None

    def __post_init__(self):
        ts = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("t values must be strictly increasing")
        if self.weights is not None:
            if len(self.weights) != len(self.points):
                raise ValueError("weights length must match points")
            if any(w <= 0 for w in self.weights):
                raise ValueError("weights must be positive")

    def arrays(self):
        t = np.array([p[0] for p in self.points], dtype=float)
        y = np.array([p[1] for p in self.points], dtype=float)
        w = (
            np.array(self.weights, dtype=float)
            if self.weights is not None
            else np.ones_like(t)
        )
        return t, y, w


@dataclass
class FitResult:
    model: str
    params: dict[str, float]
    r_squared: float
    ci: dict[str, tuple[float, float]]
    ci_method: str
    converged: bool
    n_iter: int
    rel_tol: float = REL_TOL
    max_iter: int = MAX_ITER
    seed: int | None = None
    data_digest: str = ""
    active_bounds: list[str] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    n_points: int = 0
    covariance: list[list[float]] | None = None

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        p = np.array([self.params[n] for n in MODEL_PARAMS[self.model]])
        return _model_fn(self.model)(t, p)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": self.params,
            "r_squared": self.r_squared,
            "ci": {k: list(v) for k, v in self.ci.items()},
            "ci_method": self.ci_method,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "rel_tol": self.rel_tol,
            "max_iter": self.max_iter,
            "seed": self.seed,
            "data_digest": self.data_digest,
            "active_bounds": self.active_bounds,
            "flags": self.flags,
            "n_points": self.n_points,
            "covariance": self.covariance,
        }


def _model_fn(model):
    if model == "linear":
        return lambda t, p: p[0] + p[1] * t
    if model == "quadratic":
        return lambda t, p: p[0] + p[1] * t + p[2] * t * t
    if model == "exponential":
        return lambda t, p: p[0] * np.exp(p[1] * t)
    if model == "asymptotic":
        return lambda t, p: p[0] - (p[0] - p[1]) * np.exp(-p[2] * t)
    if model == "poly_convergence":
        return lambda t, p: p[0] - np.exp(p[1] + p[2] * t + p[3] * t * t)
    raise FitError(f"unknown model: {model}")


def _jacobian(model, t, p):
    n = len(t)
    if model == "linear":
        return np.column_stack([np.ones(n), t])
    if model == "quadratic":
        return np.column_stack([np.ones(n), t, t * t])
    if model == "exponential":
        e = np.exp(p[1] * t)
        return np.column_stack([e, p[0] * t * e])
    if model == "asymptotic":
        e = np.exp(-p[2] * t)
        return np.column_stack([1.0 - e, e, (p[0] - p[1]) * t * e])
    if model == "poly_convergence":
        e = np.exp(p[1] + p[2] * t + p[3] * t * t)
        return np.column_stack([np.ones(n), -e, -t * e, -t * t * e])
    raise FitError(f"unknown model: {model}")


def _initial_params(model, t, y, w):
    """Documented starting points for the iterative models."""
    if model == "exponential":
        # log-linear WLS seed; pre-check guarantees y > 0
        coef = np.polyfit(t, np.log(y), 1, w=np.sqrt(w))
        return np.array([math.exp(coef[1]), coef[0]])
    if model == "asymptotic":
        return np.array([np.max(y) * 1.05, y[0], 0.1])
    if model == "poly_convergence":
        span = max(np.max(y) - np.min(y), abs(np.max(y)), 1e-9)
        l0 = np.max(y) * 1.05 if np.max(y) > 0 else np.max(y) + 0.05 * span
        resid = np.clip(l0 - y, 1e-12, None)
        c2, c1, c0 = np.polyfit(t, np.log(resid), 2)
        return np.array([l0, c0, c1, c2])
    raise FitError(f"no initialization for model: {model}")


def _weighted_r_squared(y, yhat, w):
    ss_res = float(np.sum(w * (y - yhat) ** 2))
    ybar = float(np.sum(w * y) / np.sum(w))
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    if ss_tot <= 0.0:
        return 0.0
    return 1.0 - ss_res / ss_tot


def _covariance_ci(model, t, y, w, p):
    """95% per-parameter CIs and the covariance matrix from the WLS fit."""
    names = MODEL_PARAMS[model]
    n, npar = len(t), len(p)
    yhat = _model_fn(model)(t, p)
    dof = n - npar
    if dof <= 0:
        ci = {name: (float(p[i]), float(p[i])) for i, name in enumerate(names)}
        return ci, None
    s2 = float(np.sum(w * (y - yhat) ** 2)) / dof
    J = _jacobian(model, t, p) * np.sqrt(w)[:, None]
    jtj = J.T @ J
    try:
        cov = s2 * np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = s2 * np.linalg.pinv(jtj)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    q = stats.t.ppf(0.975, dof)
    ci = {
        name: (float(p[i] - q * se[i]), float(p[i] + q * se[i]))
        for i, name in enumerate(names)
    }
    return ci, cov.tolist()


def _solve_linear(model, t, y, w):
    """Closed-form WLS for polynomial models."""
    deg = 1 if model == "linear" else 2
    sw = np.sqrt(w)
    design = np.column_stack([t**i for i in range(deg + 1)])
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    return coef


def _levenberg(model, t, y, w, p0, bounds=None):
    """Damped Gauss-Newton with multiplicative damping.

    Stops when the relative parameter change of a step falls below REL_TOL,
    or flags non-convergence after MAX_ITER iterations.
    """
    fn = _model_fn(model)
    sw = np.sqrt(w)

    def clip(p):
        if bounds is None:
            return p
        lo, hi = bounds
        return np.clip(p, lo, hi)

    p = clip(np.array(p0, dtype=float))
    ssr = float(np.sum((sw * (y - fn(t, p))) ** 2))
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        J = _jacobian(model, t, p) * sw[:, None]
        r = sw * (y - fn(t, p))
        jtj = J.T @ J
        g = J.T @ r
        diag = np.clip(np.diag(jtj), 1e-300, None)
        try:
            step = np.linalg.solve(jtj + lam * np.diag(diag), g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        rel = float(np.max(np.abs(step) / np.maximum(np.abs(p), 1e-12)))
        if rel < REL_TOL:
            converged = True
            break
        trial = clip(p + step)
        trial_ssr = float(np.sum((sw * (y - fn(t, trial))) ** 2))
        if trial_ssr <= ssr:
            moved = float(np.max(np.abs(trial - p) / np.maximum(np.abs(p), 1e-12)))
            p, ssr = trial, trial_ssr
            lam = max(lam / 3.0, 1e-15)
            if moved < REL_TOL:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e15:
                # damping saturated: no descent direction left
                converged = True
                break
    return p, converged, it


def fit(
    series: TimeSeries,
    model: str,
    bounds: dict[str, tuple[float, float]] | None = None,
) -> FitResult:
    """Fit one of the five trend models by weighted least squares.

    bounds maps a parameter name to (lo, hi); fitted parameters that land on
    a bound are reported in FitResult.active_bounds.
    """
    if model not in MODEL_PARAMS:
        raise FitError(f"unknown model: {model}")
    names = MODEL_PARAMS[model]
    t, y, w = series.arrays()
    if len(t) < len(names) + 1:
        raise FitError(
            f"{model} needs at least {len(names) + 1} points, got {len(t)}"
        )
    if model == "exponential" and np.any(y <= 0):
        raise FitError("exponential model requires all y > 0")

    bound_arrays = None
    if bounds:
        lo = np.array([bounds.get(n, (-np.inf, np.inf))[0] for n in names])
        hi = np.array([bounds.get(n, (-np.inf, np.inf))[1] for n in names])
        bound_arrays = (lo, hi)

    if model in ("linear", "quadratic"):
        p = _solve_linear(model, t, y, w)
        converged, n_iter = True, 0
        if bound_arrays is not None:
            clipped = np.clip(p, *bound_arrays)
            if not np.array_equal(clipped, p):
                # closed form left the box: polish with the damped iteration
                p, converged, n_iter = _levenberg(model, t, y, w, clipped, bound_arrays)
    else:
        p0 = _initial_params(model, t, y, w)
        if bound_arrays is not None:
            p0 = np.clip(p0, *bound_arrays)
        p, converged, n_iter = _levenberg(model, t, y, w, p0, bound_arrays)

    yhat = _model_fn(model)(t, p)
    active = []
    if bound_arrays is not None:
        lo, hi = bound_arrays
        for i, name in enumerate(names):
            if np.isfinite(lo[i]) and abs(p[i] - lo[i]) <= 1e-12 * max(1.0, abs(lo[i])):
                active.append(name)
            elif np.isfinite(hi[i]) and abs(p[i] - hi[i]) <= 1e-12 * max(1.0, abs(hi[i])):
                active.append(name)

    ci, cov = _covariance_ci(model, t, y, w, p)
    result = FitResult(
        model=model,
        params={name: float(p[i]) for i, name in enumerate(names)},
        r_squared=_weighted_r_squared(y, yhat, w),
        ci=ci,
        ci_method="covariance",
        converged=converged,
        n_iter=n_iter,
        data_digest=_digest(t, y, w),
        active_bounds=active,
        n_points=len(t),
        covariance=cov,
    )
    if not converged:
        result.flags.append("non_convergence")
        logger.warning("%s fit did not converge after %d iterations", model, n_iter)
    return result


def _digest(t, y, w):
    payload = json.dumps([list(map(float, t)), list(map(float, y)), list(map(float, w))])
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class DoublingTime:
    months: float
    ci: tuple[float, float]


def doubling_time(fit_result: FitResult) -> DoublingTime:
    """ln(2)/k for an exponential fit, CI mapped through the monotone transform."""
    if fit_result.model != "exponential":
        raise FitError("doubling time is defined for the exponential model only")
    k = fit_result.params["k"]
    if k <= 0:
        raise FitError(f"no doubling for k={k} <= 0")
    lo_k, hi_k = fit_result.ci["k"]
    hi = math.log(2) / lo_k if lo_k > 0 else math.inf
    lo = math.log(2) / hi_k if hi_k > 0 else math.inf
    return DoublingTime(months=math.log(2) / k, ci=(lo, hi))


def bootstrap_ci(
    series: TimeSeries,
    model: str,
    kind: str = "standard",
    n_boot: int = 1000,
    seed: int = 0,
) -> FitResult:
    """Percentile bootstrap CIs for a trend fit.

    kind="standard" resamples (t, y, w) points with replacement; kind="wild"
    keeps the design points and flips residuals by Rademacher signs. Replicate
    r uses rng seed (seed + r), so the result is reproducible and independent
    of evaluation order. If more than 20% of replicate fits fail to converge,
    the CI is flagged unreliable.
    """
    if kind not in ("standard", "wild"):
        raise FitError(f"unknown bootstrap kind: {kind}")
    base = fit(series, model)
    if not base.converged:
        raise FitError("base fit did not converge; bootstrap rejected")
    names = MODEL_PARAMS[model]
    t, y, w = series.arrays()
    yhat = base.predict(t)
    resid = y - yhat
    p_base = np.array([base.params[n] for n in names])

    draws = []
    failed = 0
    for r in range(n_boot):
        rng = np.random.default_rng(seed + r)
        if kind == "standard":
            idx = rng.integers(0, len(t), len(t))
            tb, yb, wb = t[idx], y[idx], w[idx]
        else:
            signs = rng.integers(0, 2, len(t)) * 2 - 1
            tb, wb = t, w
            yb = yhat + resid * signs
        try:
            if model == "exponential" and np.any(yb <= 0):
                raise FitError("nonpositive y in replicate")
            if model in ("linear", "quadratic"):
                pb = _solve_linear(model, tb, yb, wb)
            else:
                pb, ok, _ = _levenberg(model, tb, yb, wb, p_base)
                if not ok:
                    raise FitError("replicate did not converge")
        except (FitError, np.linalg.LinAlgError):
            failed += 1
            continue
        draws.append(pb)

    result = FitResult(
        model=model,
        params=dict(base.params),
        r_squared=base.r_squared,
        ci=dict(base.ci),
        ci_method=f"bootstrap_{kind}",
        converged=base.converged,
        n_iter=base.n_iter,
        seed=seed,
        data_digest=base.data_digest,
        n_points=base.n_points,
        covariance=base.covariance,
    )
    if not draws:
        result.flags.append("bootstrap_all_failed")
        return result
    arr = np.array(draws)
    lo, hi = np.percentile(arr, [2.5, 97.5], axis=0)
    result.ci = {name: (float(lo[i]), float(hi[i])) for i, name in enumerate(names)}
    if failed > 0.2 * n_boot:
        result.flags.append("bootstrap_unreliable")
        logger.warning("%d/%d bootstrap replicates diverged", failed, n_boot)
    return result


def quadratic_marginal_change(fit_result: FitResult, t_values) -> tuple[float, tuple[float, float]]:
    """Average marginal change b + 2*c*t over a window, delta-method 95% CI.

    Var(b + 2*c*tbar) = Var(b) + 4*tbar^2*Var(c) + 4*tbar*Cov(b, c), taken
    from the fit's parameter covariance matrix.
    """
    if fit_result.model != "quadratic":
        raise FitError("marginal change is defined for the quadratic model")
    t_values = np.asarray(t_values, dtype=float)
    tbar = float(np.mean(t_values))
    b, c = fit_result.params["b"], fit_result.params["c"]
    value = b + 2 * c * tbar
    if fit_result.covariance is None:
        return value, (value, value)
    cov = np.array(fit_result.covariance)
    var = cov[1, 1] + 4 * tbar * tbar * cov[2, 2] + 4 * tbar * cov[1, 2]
    se = math.sqrt(max(var, 0.0))
    dof = max(fit_result.n_points - 3, 1)
    q = stats.t.ppf(0.975, dof)
    return value, (value - q * se, value + q * se)


@dataclass
class KappaResult:
    kappa: float
    p_bar: float
    p_expected: float
    degenerate: bool = False


def fleiss_kappa(labels) -> KappaResult:
    """Fleiss' kappa for an items x raters matrix of categorical labels.

    Chance agreement uses the squared marginal category shares. The
    degenerate all-one-category case (expected agreement 1) is returned as
    kappa=1.0 with the degenerate flag set.
    """
    rows = [list(r) for r in labels]
    if len(rows) < 2:
        raise ValueError("need at least 2 items")
    n_raters = len(rows[0])
    if n_raters < 2:
        raise ValueError("need at least 2 raters")
    if any(len(r) != n_raters for r in rows):
        raise ValueError("ragged ratings matrix")

    categories = sorted({c for r in rows for c in r}, key=str)
    counts = np.zeros((len(rows), len(categories)))
    index = {c: j for j, c in enumerate(categories)}
    for i, r in enumerate(rows):
        for c in r:
            counts[i, index[c]] += 1

    n = n_raters
    p_item = (np.sum(counts * counts, axis=1) - n) / (n * (n - 1))
    p_bar = float(np.mean(p_item))
    shares = np.sum(counts, axis=0) / counts.sum()
    p_exp = float(np.sum(shares * shares))
    if p_exp >= 1.0 - 1e-15:
        return KappaResult(kappa=1.0, p_bar=p_bar, p_expected=p_exp, degenerate=True)
    return KappaResult(
        kappa=(p_bar - p_exp) / (1.0 - p_exp), p_bar=p_bar, p_expected=p_exp
    )


@dataclass
class StakesFit:
    fit: FitResult
    f_statistic: float
    p_value: float
    n_occupations: int


def stakes_fit(points: list[tuple[float, float]]) -> StakesFit:
    """Quadratic regression of log10(tool count) on occupation stakes score.

    Occupations with zero tools are excluded. The F-test compares the
    quadratic model against intercept-only (slope terms jointly zero).
    """
    kept = [(s, c) for s, c in points if c >= 1]
    if len(kept) < 4:
        raise FitError(f"need >= 4 occupations with tools, got {len(kept)}")
    x = np.array([s for s, _ in kept], dtype=float)
    y = np.log10(np.array([c for _, c in kept], dtype=float))
    if np.ptp(x) <= 0:
        raise FitError("degenerate stakes scores: no variance")

    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    # collapse ties in x so TimeSeries' strictly-increasing contract holds
    if len(np.unique(x)) < len(x):
        series_fit = _fit_quadratic_arrays(x, y)
    else:
        series_fit = fit(TimeSeries(points=list(zip(x, y))), "quadratic")

    yhat = series_fit.predict(x)
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    dof = len(x) - 3
    if ss_tot <= 1e-14:
        return StakesFit(fit=series_fit, f_statistic=0.0, p_value=1.0, n_occupations=len(x))
    if ss_res <= 1e-14:
        return StakesFit(fit=series_fit, f_statistic=math.inf, p_value=0.0, n_occupations=len(x))
    f_stat = ((ss_tot - ss_res) / 2) / (ss_res / dof)
    p_value = float(stats.f.sf(f_stat, 2, dof))
    return StakesFit(fit=series_fit, f_statistic=f_stat, p_value=p_value, n_occupations=len(x))


def _fit_quadratic_arrays(x, y):
    w = np.ones_like(x)
    p = _solve_linear("quadratic", x, y, w)
    yhat = _model_fn("quadratic")(x, p)
    ci, cov = _covariance_ci("quadratic", x, y, w, p)
    return FitResult(
        model="quadratic",
        params={"a": float(p[0]), "b": float(p[1]), "c": float(p[2])},
        r_squared=_weighted_r_squared(y, yhat, w),
        ci=ci,
        ci_method="covariance",
        converged=True,
        n_iter=0,
        data_digest=_digest(x, y, w),
        n_points=len(x),
        covariance=cov,
    )
