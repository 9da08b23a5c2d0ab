"""Approximate and exact marginal-likelihood engines.

The default engine integrates a quadratic expansion of the log-likelihood
against a Normal coefficient prior in closed form.  Expanded at the
posterior mode this is the Laplace approximation; expanded at zero it gives
a fast score whose per-model cost, once the touched column pairs are
cached, does not grow with the sample size.  Product-moment priors reuse
the Normal-kernel score and multiply in the posterior expectation of the
penalty.  Exact Gaussian formulas, numerical quadrature, and a Monte Carlo
route are provided as references.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.special
from scipy.special import gammaln, log_ndtr

from . import families as fam
from .data_model import (
    DesignMatrix,
    GramStore,
    GroupBlocks,
    ModelId,
    SuffStatsCache,
    ls_solve,
    submodel_stats,
)
from .errors import (
    NoConvergence,
    NotConcave,
    NotConcaveAtExpansion,
    NotInvertible,
    ToleranceNotMet,
)
from .priors import (
    ModelPriorSpec,
    ParamPriorSpec,
    log_gzellner,
    log_invgamma,
    log_model_prior_unnorm,
    log_tau_prior,
)

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class MarginalScore:
    """One model's log marginal likelihood with how it was obtained."""

    log_ml: float
    method: str
    expansion: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CurvatureContext:
    """Response-variance inflation for the Hessian at the expansion point."""

    rho_hat: float
    nu0: float
    bpp_nu0: float


def _chol(matrix: np.ndarray, exc=NotConcaveAtExpansion, what="joint curvature"):
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as err:
        raise exc(f"{what} is not positive definite") from err


def _chol_logdet(factor: np.ndarray) -> float:
    if factor.shape[0] == 0:
        return 0.0
    return 2.0 * float(np.sum(np.log(np.diag(factor))))


def _cache_scalar(cache: SuffStatsCache, key, compute):
    memo = cache.scalar_memo
    if key not in memo:
        memo[key] = compute()
    return memo[key]


def _loglik_at_center(cache: SuffStatsCache, family: fam.FamilySpec, phi: float):
    """Log-likelihood with the whole predictor pinned at nu0, memoized."""

    def compute():
        y = cache.y
        n = cache.n
        kernel = cache.nu0 * float(np.sum(y)) - n * float(family.b(cache.nu0))
        return kernel / phi + float(np.sum(family.c(y, phi)))

    return _cache_scalar(cache, ("l0", family.kind, phi), compute)


def _block_precision(
    model: ModelId, cache: SuffStatsCache, g: float, phi: float, shift: int = 0
):
    """Dense Normal-prior precision over the active columns plus its logdet.

    Block j is ``(p_j + shift) / (g n phi)`` times the Gram block, so shift 0
    is the block Zellner precision and shift 2 the product-moment kernel.
    """
    k = model.p_gamma
    n = cache.n
    prec = np.zeros((k, k))
    logdet = 0.0
    offset = 0
    for j in model.active_groups:
        pj = cache.design.group_size(j)
        coef = (pj + shift) / (g * n * phi)
        prec[offset : offset + pj, offset : offset + pj] = coef * cache.group_block(j)
        logdet += pj * np.log(coef) + cache.group_logdet(j)
        offset += pj
    return prec, logdet


def _log_block_normal(
    beta: np.ndarray,
    model: ModelId,
    cache: SuffStatsCache,
    g: float,
    phi: float,
    shift: int = 0,
) -> float:
    """Log density of the block Normal with covariance scale g n / (p_j+shift)."""
    total = 0.0
    offset = 0
    n = cache.n
    for j in model.active_groups:
        pj = cache.design.group_size(j)
        bj = beta[offset : offset + pj]
        offset += pj
        half = cache.group_chol(j).T @ bj
        quad = float(half @ half)
        scale = phi * g * n / (pj + shift)
        total += -0.5 * (
            pj * _LOG_2PI + pj * np.log(scale) - cache.group_logdet(j) + quad / scale
        )
    return float(total)


def ala_general(
    loglik0: float,
    grad: np.ndarray,
    hess: np.ndarray,
    prior_precision: np.ndarray,
    theta0: Optional[np.ndarray] = None,
    prior_logdet: Optional[float] = None,
    method: str = "ala-general",
) -> MarginalScore:
    """Closed-form integral of a quadratic log-likelihood expansion against a
    centered Normal prior.

    ``grad`` and ``hess`` are derivatives of the negative log-likelihood at
    ``theta0``.  Exact whenever the log-likelihood is quadratic; at the
    posterior mode it reproduces the Laplace approximation.
    """
    grad = np.asarray(grad, dtype=np.float64)
    d = grad.shape[0]
    if theta0 is None:
        theta0 = np.zeros(d)
    if prior_logdet is None:
        prior_logdet = _chol_logdet(
            _chol(prior_precision, NotInvertible, "prior precision")
        )
    h_joint = hess + prior_precision
    factor = _chol(h_joint)
    g_joint = grad + prior_precision @ theta0
    shift = scipy.linalg.cho_solve((factor, True), g_joint)
    quad = float(g_joint @ shift)
    quad_prior = float(theta0 @ prior_precision @ theta0)
    log_ml = (
        loglik0
        - 0.5 * quad_prior
        + 0.5 * prior_logdet
        - 0.5 * _chol_logdet(factor)
        + 0.5 * quad
    )
    return MarginalScore(
        log_ml=float(log_ml),
        method=method,
        expansion=theta0 - shift,
        diagnostics={"quad": quad},
    )


def ala_plugin(
    loglik0: float,
    grad: np.ndarray,
    hess: np.ndarray,
    log_prior: Callable[[np.ndarray], float],
    theta0: Optional[np.ndarray] = None,
    method: str = "ala-plugin",
) -> MarginalScore:
    """Quadratic-expansion score with the prior density evaluated at the
    implied update point.

    Works for any prior density; pays for the generality with an extra
    ``(d/2) log 2 pi - 0.5 log det H`` volume term from the likelihood
    curvature alone.
    """
    grad = np.asarray(grad, dtype=np.float64)
    d = grad.shape[0]
    if theta0 is None:
        theta0 = np.zeros(d)
    factor = _chol(hess, NotConcaveAtExpansion, "likelihood curvature")
    shift = scipy.linalg.cho_solve((factor, True), grad)
    theta_tilde = theta0 - shift
    quad = float(grad @ shift)
    log_ml = (
        loglik0
        + 0.5 * quad
        + log_prior(theta_tilde)
        + 0.5 * d * _LOG_2PI
        - 0.5 * _chol_logdet(factor)
    )
    return MarginalScore(
        log_ml=float(log_ml),
        method=method,
        expansion=theta_tilde,
        diagnostics={"quad": quad},
    )


def _known_phi_core(
    model: ModelId,
    cache: SuffStatsCache,
    family: fam.FamilySpec,
    g: float,
    curvature: Optional[CurvatureContext],
    shift: int,
):
    """Shared zero-expansion machinery for known-dispersion families."""
    phi = float(family.phi)
    l0 = _loglik_at_center(cache, family, phi)
    p = model.p_gamma
    out = {"l0": l0, "phi": phi, "p": p}
    if p == 0:
        out["score"] = l0
        out["beta_tilde"] = np.empty(0)
        return out
    xtx, xty = submodel_stats(cache, model)
    bpp = cache.bpp_nu0
    rho = curvature.rho_hat if curvature is not None else 1.0
    prec, logdet_p0 = _block_precision(model, cache, g, phi, shift)
    h_joint = (rho * bpp / phi) * xtx + prec
    factor = _chol(h_joint)
    g_joint = -(bpp / phi) * xty
    sol = scipy.linalg.cho_solve((factor, True), g_joint)
    quad = float(g_joint @ sol)
    logdet_h = _chol_logdet(factor)
    out.update(
        score=l0 + 0.5 * logdet_p0 - 0.5 * logdet_h + 0.5 * quad,
        beta_tilde=-sol,
        chol=factor,
        rho_hat=rho,
        quad=quad,
        xtx=xtx,
        xty=xty,
        logdet_p0=logdet_p0,
        logdet_h=logdet_h,
    )
    return out


def ala_expfam_known_phi(
    model: ModelId,
    cache: SuffStatsCache,
    family: fam.FamilySpec,
    prior: ParamPriorSpec,
    curvature: Optional[CurvatureContext] = None,
    variant: str = "exact-normal",
) -> MarginalScore:
    """Zero-expansion score for known dispersion under the block Zellner prior.

    The default variant integrates the Normal prior in closed form against
    the quadratic expansion.  ``variant="plugin-density"`` instead evaluates
    the prior density at the implied update and keeps only the likelihood
    curvature in the volume term.
    """
    if prior.kind != "gzellner":
        raise ValueError("this engine expects the block Zellner prior")
    if not family.phi_known:
        raise ValueError("dispersion must be known for this engine")
    method = "ala" if curvature is None else "ala-curvadj"
    if variant == "exact-normal":
        core = _known_phi_core(model, cache, family, prior.g, curvature, shift=0)
        diag = {"phi": core["phi"], "rho_hat": core.get("rho_hat", 1.0)}
        if "quad" in core:
            diag["quad"] = core["quad"]
        return MarginalScore(
            log_ml=float(core["score"]),
            method=method,
            expansion=core["beta_tilde"],
            diagnostics=diag,
        )
    if variant != "plugin-density":
        raise ValueError(f"unknown variant {variant!r}")
    phi = float(family.phi)
    l0 = _loglik_at_center(cache, family, phi)
    if model.p_gamma == 0:
        return MarginalScore(l0, method, np.empty(0), {"phi": phi})
    xtx, xty = submodel_stats(cache, model)
    bpp = cache.bpp_nu0
    rho = curvature.rho_hat if curvature is not None else 1.0
    score = ala_plugin(
        l0,
        -(bpp / phi) * xty,
        (rho * bpp / phi) * xtx,
        lambda b: log_gzellner(b, model, cache, prior.g, phi),
        method=method,
    )
    score.diagnostics.update(phi=phi, rho_hat=rho, variant=variant)
    return score


def ala_bf_known_phi(
    model: ModelId,
    cache: SuffStatsCache,
    family: fam.FamilySpec,
    prior: ParamPriorSpec,
    curvature: Optional[CurvatureContext] = None,
) -> float:
    """Log Bayes factor of ``model`` against the empty model."""
    score = ala_expfam_known_phi(model, cache, family, prior, curvature)
    phi = float(family.phi)
    return score.log_ml - _loglik_at_center(cache, family, phi)


def curvature_context(cache: SuffStatsCache, family: fam.FamilySpec) -> CurvatureContext:
    """Ratio of observed response variance to the model-implied variance at
    the intercept-only fit.

    Built on a cache centered at the intercept estimate; the ratio inflates
    the expansion Hessian so overdispersed responses are not overconfident.
    """
    if not family.phi_known:
        raise ValueError("curvature adjustment needs a known dispersion")
    if not cache.transform_tag.endswith(":intercept-mle"):
        raise ValueError("curvature adjustment needs an intercept-centered cache")
    y = cache.y
    n = cache.n
    if n < 2:
        raise ValueError("need at least two observations")
    resid = y - cache.bp_nu0
    rho_hat = float(resid @ resid) / (float(family.phi) * cache.bpp_nu0 * (n - 1))
    return CurvatureContext(rho_hat=rho_hat, nu0=cache.nu0, bpp_nu0=cache.bpp_nu0)


def ala_curvadj_bf(
    model: ModelId,
    cache: SuffStatsCache,
    family: fam.FamilySpec,
    prior: ParamPriorSpec,
    curvature: Optional[CurvatureContext] = None,
) -> float:
    """Log Bayes factor against the empty model with the inflated Hessian."""
    if curvature is None:
        curvature = curvature_context(cache, family)
    score = ala_expfam_known_phi(model, cache, family, prior, curvature)
    return score.log_ml - _loglik_at_center(cache, family, float(family.phi))


def _unknown_phi_stats(cache: SuffStatsCache, family: fam.FamilySpec) -> dict:
    """Dispersion-profile quantities at the zero expansion, memoized."""

    def compute():
        if cache.nu0 != 0.0:
            raise ValueError("unknown-dispersion scoring expects zero centering")
        y = cache.y
        n = cache.n
        phi0 = fam.phi0_mle(family, y, 0.0)
        b0 = float(family.b(0.0))
        bpp0 = float(family.bpp(0.0))
        l0 = -n * b0 / phi0 + float(np.sum(family.c(y, phi0)))
        # negative-loglik curvature in phi at (0, phi0); the score in phi is
        # zero there because phi0 solves the profile equation
        h_pp = 2.0 * n * b0 / phi0**3 - float(np.sum(family.c_dphi2(y, phi0)))
        if not h_pp > 0.0:
            raise NotConcaveAtExpansion("dispersion curvature is not positive")
        return {
            "phi0": phi0,
            "l0": l0,
            "bpp0": bpp0,
            "h_pp": h_pp,
            "s": phi0 * h_pp / bpp0,
        }

    return _cache_scalar(cache, ("unknown-phi", family.kind), compute)


def ala_expfam_unknown_phi(
    model: ModelId,
    cache: SuffStatsCache,
    family: fam.FamilySpec,
    prior: ParamPriorSpec,
    _kernel_shift: int = 0,
) -> MarginalScore:
    """Zero-expansion score with the dispersion treated as a parameter.

    Expands the log-likelihood jointly in ``(beta, phi)`` at ``(0, phi0)``
    where phi0 maximizes the null likelihood, then evaluates the coefficient
    prior and the inverse-gamma dispersion prior at the implied update.
    """
    a, b = prior.phi_prior_required()
    st = _unknown_phi_stats(cache, family)
    phi0, l0 = st["phi0"], st["l0"]
    p = model.p_gamma
    if p == 0:
        log_ml = (
            l0 + log_invgamma(phi0, a, b) + 0.5 * _LOG_2PI - 0.5 * np.log(st["h_pp"])
        )
        return MarginalScore(
            float(log_ml), "ala", np.array([phi0]), {"phi0": phi0}
        )
    xtx, xty = submodel_stats(cache, model)
    bpp = st["bpp0"]
    factor = bpp / phi0
    hess = np.empty((p + 1, p + 1))
    hess[:p, :p] = factor * xtx
    hess[:p, p] = hess[p, :p] = factor * xty / phi0
    hess[p, p] = st["h_pp"]
    grad = np.concatenate([-factor * xty, [0.0]])
    chol = _chol(hess, NotConcaveAtExpansion, "joint (beta, phi) curvature")
    sol = scipy.linalg.cho_solve((chol, True), grad)
    quad = float(grad @ sol)
    beta_tilde = -sol[:p]
    phi_tilde = phi0 - sol[p]
    expansion = np.concatenate([beta_tilde, [phi_tilde]])
    diag = {"phi0": phi0, "phi_tilde": phi_tilde, "quad": quad}
    if not phi_tilde > 0.0:
        return MarginalScore(-np.inf, "ala", expansion, diag)
    log_prior = _log_block_normal(
        beta_tilde, model, cache, prior.g, phi_tilde, shift=_kernel_shift
    ) + log_invgamma(phi_tilde, a, b)
    log_ml = (
        l0
        + 0.5 * quad
        + log_prior
        + 0.5 * (p + 1) * _LOG_2PI
        - 0.5 * _chol_logdet(chol)
    )
    return MarginalScore(float(log_ml), "ala", expansion, diag)


def gmom_tilt(
    model: ModelId,
    cache: SuffStatsCache,
    g: float,
    mean: np.ndarray,
    shape: np.ndarray,
    rbar: float,
) -> float:
    """Log posterior expectation of the product-moment penalty.

    ``mean`` and ``shape`` are the dispersion-free posterior moments of the
    active coefficients (covariance = phi * shape), and ``rbar`` the
    posterior mean of ``1/phi``.  Each active group contributes
    ``log(tr(V_j S_jj) + rbar m_j' V_j m_j)`` with the penalty matrix
    ``V_j = A_j (p_j + 2) / (n p_j g)``.
    """
    n = cache.n
    total = 0.0
    offset = 0
    for j in model.active_groups:
        pj = cache.design.group_size(j)
        sl = slice(offset, offset + pj)
        offset += pj
        block = cache.group_block(j)
        coef = (pj + 2) / (n * pj * g)
        mj = mean[sl]
        trace = float(np.sum(block * shape[sl, sl]))
        value = coef * (trace + rbar * float(mj @ block @ mj))
        if not value > 0.0:
            return -np.inf
        total += np.log(value)
    return float(total)


def ala_gmom(
    model: ModelId,
    cache: SuffStatsCache,
    family: fam.FamilySpec,
    prior: ParamPriorSpec,
    curvature: Optional[CurvatureContext] = None,
) -> MarginalScore:
    """Zero-expansion score under the block product-moment prior.

    Scores the Normal kernel in closed form, then adds the log posterior
    expectation of the penalty computed from the kernel-posterior moments.
    """
    if prior.kind != "gmom":
        raise ValueError("this engine expects the product-moment prior")
    if model.p_gamma == 0:
        if family.phi_known:
            phi = float(family.phi)
            return MarginalScore(
                _loglik_at_center(cache, family, phi), "ala-gmom", np.empty(0), {}
            )
        return ala_expfam_unknown_phi(model, cache, family, prior)
    if family.phi_known:
        phi = float(family.phi)
        core = _known_phi_core(model, cache, family, prior.g, curvature, shift=2)
        sigma = scipy.linalg.cho_solve(
            (core["chol"], True), np.eye(model.p_gamma)
        )
        tilt = gmom_tilt(
            model, cache, prior.g, core["beta_tilde"], sigma / phi, 1.0 / phi
        )
        return MarginalScore(
            float(core["score"] + tilt),
            "ala-gmom" if curvature is None else "ala-gmom-curvadj",
            core["beta_tilde"],
            {"tilt": tilt, "phi": phi, "rho_hat": core.get("rho_hat", 1.0)},
        )
    if family.kind != "gaussian":
        raise ValueError(
            "unknown dispersion with the product-moment prior is supported "
            "for the gaussian family only"
        )
    if curvature is not None:
        raise ValueError("curvature adjustment applies to known dispersion only")
    a, b = prior.phi_prior_required()
    local = ala_expfam_unknown_phi(model, cache, family, prior, _kernel_shift=2)
    if not np.isfinite(local.log_ml):
        return MarginalScore(local.log_ml, "ala-gmom", local.expansion, local.diagnostics)
    xtx, xty = submodel_stats(cache, model)
    n = cache.n
    scaled = np.array(xtx, copy=True)
    offset = 0
    for j in model.active_groups:
        pj = cache.design.group_size(j)
        sl = slice(offset, offset + pj)
        scaled[sl, sl] += ((pj + 2) / (prior.g * n)) * cache.group_block(j)
        offset += pj
    factor = _chol(scaled)
    shape = scipy.linalg.cho_solve((factor, True), np.eye(model.p_gamma))
    mean = shape @ xty
    fit = ls_solve(xtx, xty, jitter=True)
    rbar = (a + n) / (b + cache.yty - fit.quad)
    tilt = gmom_tilt(model, cache, prior.g, mean, shape, rbar)
    diag = dict(local.diagnostics)
    diag.update(tilt=tilt, rbar=rbar, jittered=fit.jittered)
    return MarginalScore(
        float(local.log_ml + tilt), "ala-gmom", local.expansion, diag
    )


def _damped_newton(
    objective,
    theta0: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 100,
    positive: tuple[int, ...] = (),
):
    """Minimize a smooth convex objective by Newton steps with halving.

    ``objective(theta)`` returns ``(value, grad, hess)``.  Coordinates in
    ``positive`` are kept strictly positive by the line search.  Returns the
    final ``(theta, value, grad, hess, trace)``.
    """
    theta = np.asarray(theta0, dtype=np.float64).copy()
    value, grad, hess = objective(theta)
    if not np.isfinite(value):
        raise NoConvergence("objective is not finite at the start", trace=[])
    trace = []
    for iteration in range(max_iter):
        if float(np.max(np.abs(grad))) <= tol:
            return theta, value, grad, hess, trace
        step = _newton_direction(grad, hess)
        # when the predicted decrease is below float resolution the point is
        # converged for all practical purposes even if the gradient test
        # has not quite triggered
        if 0.5 * float(grad @ step) <= 1e-13 * (1.0 + abs(value)):
            return theta, value, grad, hess, trace
        slack = 1e-13 * (1.0 + abs(value))
        scale = 1.0
        accepted = False
        for _ in range(60):
            candidate = theta - scale * step
            if any(candidate[i] <= 0.0 for i in positive):
                scale *= 0.5
                continue
            cand_value, cand_grad, cand_hess = objective(candidate)
            if np.isfinite(cand_value) and (
                cand_value < value
                or (
                    cand_value <= value + slack
                    and float(np.max(np.abs(cand_grad)))
                    < float(np.max(np.abs(grad)))
                )
            ):
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            raise NoConvergence(
                f"line search stalled at iteration {iteration}", trace=trace
            )
        theta, value, grad, hess = candidate, cand_value, cand_grad, cand_hess
        trace.append(
            {
                "iteration": iteration,
                "objective": float(value),
                "grad_norm": float(np.max(np.abs(grad))),
                "step_scale": scale,
            }
        )
    if float(np.max(np.abs(grad))) <= tol:
        return theta, value, grad, hess, trace
    raise NoConvergence(
        f"gradient norm {float(np.max(np.abs(grad))):.3e} above {tol:.1e} "
        f"after {max_iter} iterations",
        trace=trace,
    )


def _newton_direction(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    d = grad.shape[0]
    base = max(abs(float(np.trace(hess))) / max(d, 1), 1e-300)
    ridge = 0.0
    for _ in range(12):
        try:
            shifted = hess + ridge * np.eye(d) if ridge else hess
            factor = np.linalg.cholesky(shifted)
        except np.linalg.LinAlgError:
            ridge = 1e-10 * base if ridge == 0.0 else 100.0 * ridge
            continue
        return scipy.linalg.cho_solve((factor, True), grad)
    raise NotConcave("objective curvature is not positive definite")


def la_marginal(
    model: ModelId,
    cache: SuffStatsCache,
    family: fam.FamilySpec,
    prior: ParamPriorSpec,
    start: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> MarginalScore:
    """Laplace approximation: expand at the joint posterior mode.

    Runs damped Newton on the negative log joint until the gradient drops
    below ``tol``; raises if it fails to, with the iteration trace attached.
    """
    if prior.kind != "gzellner":
        raise ValueError("mode-expansion scoring expects the block Zellner prior")
    if family.phi_known:
        return _la_known_phi(model, cache, family, prior, start, tol, max_iter)
    return _la_unknown_phi(model, cache, family, prior, start, tol, max_iter)


def _la_known_phi(model, cache, family, prior, start, tol, max_iter):
    phi = float(family.phi)
    p = model.p_gamma
    if p == 0:
        return MarginalScore(
            _loglik_at_center(cache, family, phi), "la", np.empty(0), {"iterations": 0}
        )
    cols = cache.design.columns_for(model.bits)
    Z = cache.design.values[:, cols]
    y = cache.y
    prec, logdet_p0 = _block_precision(model, cache, prior.g, phi, shift=0)

    def objective(beta):
        g, h = fam.grad_hess(family, Z, y, beta, phi)
        value = -fam.loglik(family, Z @ beta, y, phi) + 0.5 * float(beta @ prec @ beta)
        return value, g + prec @ beta, h + prec

    theta0 = np.zeros(p) if start is None else np.asarray(start, dtype=np.float64)
    theta, value, grad, hess, trace = _damped_newton(
        objective, theta0, tol=tol, max_iter=max_iter
    )
    factor = _chol(hess, NotConcave, "curvature at the mode")
    sol = scipy.linalg.cho_solve((factor, True), grad)
    log_ml = (
        -value + 0.5 * logdet_p0 - 0.5 * _chol_logdet(factor) + 0.5 * float(grad @ sol)
    )
    return MarginalScore(
        float(log_ml),
        "la",
        theta,
        {"iterations": len(trace), "grad_norm": float(np.max(np.abs(grad)))},
    )


def _la_unknown_phi(model, cache, family, prior, start, tol, max_iter):
    a, b = prior.phi_prior_required()
    p = model.p_gamma
    cols = cache.design.columns_for(model.bits)
    Z = cache.design.values[:, cols]
    y = cache.y
    n = cache.n
    st = _unknown_phi_stats(cache, family)
    # phi-free prior precision and its constants
    prec_bar, logdet_bar = _block_precision(model, cache, prior.g, 1.0, shift=0)
    prior_const = 0.5 * p * _LOG_2PI - 0.5 * logdet_bar - a * np.log(b) + gammaln(a)

    def objective(theta):
        beta, phi = theta[:p], theta[p]
        g, h = fam.grad_hess(family, Z, y, beta, phi)
        quad = float(beta @ prec_bar @ beta)
        value = (
            -fam.loglik(family, Z @ beta, y, phi)
            + 0.5 * p * np.log(phi)
            + 0.5 * quad / phi
            + (a + 1.0) * np.log(phi)
            + b / phi
            + prior_const
        )
        grad = np.empty(p + 1)
        grad[:p] = g[:p] + prec_bar @ beta / phi
        grad[p] = g[p] + 0.5 * p / phi - 0.5 * quad / phi**2 + (a + 1.0) / phi - b / phi**2
        hess = np.array(h, copy=True)
        hess[:p, :p] += prec_bar / phi
        cross = -prec_bar @ beta / phi**2
        hess[:p, p] += cross
        hess[p, :p] += cross
        hess[p, p] += -0.5 * p / phi**2 + quad / phi**3 - (a + 1.0) / phi**2 + 2.0 * b / phi**3
        return value, grad, hess

    theta0 = (
        np.concatenate([np.zeros(p), [st["phi0"]]])
        if start is None
        else np.asarray(start, dtype=np.float64)
    )
    theta, value, grad, hess, trace = _damped_newton(
        objective, theta0, tol=tol, max_iter=max_iter, positive=(p,)
    )
    factor = _chol(hess, NotConcave, "curvature at the mode")
    log_ml = -value + 0.5 * (p + 1) * _LOG_2PI - 0.5 * _chol_logdet(factor)
    return MarginalScore(
        float(log_ml),
        "la",
        theta,
        {"iterations": len(trace), "grad_norm": float(np.max(np.abs(grad)))},
    )


def ala_refined(
    model: ModelId,
    cache: SuffStatsCache,
    family: fam.FamilySpec,
    prior: ParamPriorSpec,
    k: int = 1,
) -> MarginalScore:
    """Zero-expansion score after ``k`` Newton steps on the log-likelihood.

    The expansion point is moved toward the maximum-likelihood estimate
    before applying the closed-form Normal-prior integral; ``k = 0`` is the
    plain zero expansion.  A non-finite step stops the refinement early and
    is reported in the diagnostics.
    """
    if prior.kind != "gzellner":
        raise ValueError("refined scoring expects the block Zellner prior")
    if not family.phi_known:
        raise ValueError("refined scoring expects a known dispersion")
    if cache.nu0 != 0.0:
        raise ValueError("refined scoring expects zero centering")
    phi = float(family.phi)
    p = model.p_gamma
    if p == 0:
        return MarginalScore(
            _loglik_at_center(cache, family, phi),
            f"ala-refined({k})",
            np.empty(0),
            {"steps_taken": 0},
        )
    cols = cache.design.columns_for(model.bits)
    Z = cache.design.values[:, cols]
    y = cache.y
    beta = np.zeros(p)
    steps = 0
    note = None
    for _ in range(k):
        grad, hess = fam.grad_hess(family, Z, y, beta, phi)
        try:
            factor = np.linalg.cholesky(hess)
        except np.linalg.LinAlgError:
            note = "curvature lost during refinement"
            break
        candidate = beta - scipy.linalg.cho_solve((factor, True), grad)
        if not np.all(np.isfinite(candidate)):
            note = "refinement step diverged"
            break
        beta = candidate
        steps += 1
    l0 = fam.loglik(family, Z @ beta, y, phi)
    diag = {"steps_taken": steps}
    if note:
        diag["note"] = note
    if not np.isfinite(l0):
        return MarginalScore(-np.inf, f"ala-refined({k})", beta, diag)
    grad, hess = fam.grad_hess(family, Z, y, beta, phi)
    prec, logdet_p0 = _block_precision(model, cache, prior.g, phi, shift=0)
    score = ala_general(
        l0, grad, hess, prec, theta0=beta, prior_logdet=logdet_p0,
        method=f"ala-refined({k})",
    )
    score.diagnostics.update(diag)
    return score


def exact_gaussian_marginal(
    model: ModelId,
    cache: SuffStatsCache,
    family: fam.FamilySpec,
    prior: ParamPriorSpec,
) -> MarginalScore:
    """Exact Gaussian marginal likelihood through the n-dimensional
    observation covariance.

    Marginalizes the coefficients analytically: y is Normal with covariance
    ``phi (I + sum_j (g n / p_j) Z_j A_j^{-1} Z_j')``.  With unknown
    dispersion the inverse-gamma prior integrates to a multivariate-t form.
    Cost grows with n cubed; intended as a reference, not a search engine.
    """
    if family.kind != "gaussian":
        raise ValueError("exact marginal is available for the gaussian family")
    if prior.kind != "gzellner":
        raise ValueError("exact marginal expects the block Zellner prior")
    y = cache.y
    n = cache.n
    cov = np.eye(n)
    for j in model.active_groups:
        start, stop = cache.design.groups[j]
        zj = cache.design.values[:, start:stop]
        ainv_zt = np.linalg.solve(zj.T @ zj, zj.T)
        cov += (prior.g * n / (stop - start)) * (zj @ ainv_zt)
    factor = _chol(cov, NotInvertible, "marginal covariance")
    half = scipy.linalg.solve_triangular(factor, y, lower=True)
    quad = float(half @ half)
    logdet = _chol_logdet(factor)
    if family.phi_known:
        phi = float(family.phi)
        log_ml = -0.5 * n * (_LOG_2PI + np.log(phi)) - 0.5 * logdet - 0.5 * quad / phi
        return MarginalScore(float(log_ml), "exact-gaussian", np.empty(0), {})
    a, b = prior.phi_prior_required()
    log_ml = (
        -0.5 * n * _LOG_2PI
        - 0.5 * logdet
        + a * np.log(b)
        - gammaln(a)
        + gammaln(a + 0.5 * n)
        - (a + 0.5 * n) * np.log(b + 0.5 * quad)
    )
    return MarginalScore(float(log_ml), "exact-gaussian", np.empty(0), {})


def _panel_logsum(logf, lo, hi, panels, nodes, weights):
    """Log of the integral of exp(logf) by composite Gauss-Legendre."""
    edges = np.linspace(lo, hi, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    points = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    logw = np.log(np.repeat(half, nodes.shape[0]) * np.tile(weights, panels))
    vals = logf(points) + logw
    return float(scipy.special.logsumexp(vals))


def quadrature_oracle(
    log_integrand: Callable[[np.ndarray], np.ndarray],
    x0: float = 0.0,
    rtol: float = 1e-8,
    max_refinements: int = 12,
) -> float:
    """Log of a one-dimensional integral of ``exp(log_integrand)`` over the
    real line, by mode-centered adaptive composite Gauss-Legendre.

    Widens the window until the tails are negligible and doubles the panel
    count until two successive estimates agree to ``rtol``; raises when the
    tolerance cannot be met.
    """
    scan = x0 + np.linspace(-50.0, 50.0, 4001)
    scan_vals = log_integrand(scan)
    best = int(np.argmax(scan_vals))
    lo_b = scan[max(best - 1, 0)]
    hi_b = scan[min(best + 1, scan.shape[0] - 1)]
    opt = scipy.optimize.minimize_scalar(
        lambda x: -float(log_integrand(np.array([x]))[0]),
        bounds=(lo_b, hi_b),
        method="bounded",
        options={"xatol": 1e-12},
    )
    mode = float(opt.x)
    peak = -float(opt.fun)
    h = 1e-4 * (1.0 + abs(mode))
    f2 = (
        float(log_integrand(np.array([mode - h]))[0])
        - 2.0 * peak
        + float(log_integrand(np.array([mode + h]))[0])
    ) / h**2
    sd = 1.0 / np.sqrt(max(-f2, 1e-12))
    width = 8.0 * sd
    for _ in range(60):
        lo, hi = mode - width, mode + width
        tail = max(
            float(log_integrand(np.array([lo]))[0]),
            float(log_integrand(np.array([hi]))[0]),
        )
        if tail < peak + np.log(rtol) - 30.0:
            break
        width *= 2.0
    nodes, weights = np.polynomial.legendre.leggauss(40)
    panels = 8
    previous = None
    for _ in range(max_refinements):
        estimate = _panel_logsum(log_integrand, lo, hi, panels, nodes, weights)
        if previous is not None and abs(estimate - previous) <= rtol:
            return estimate
        previous = estimate
        panels *= 2
    raise ToleranceNotMet(
        f"quadrature failed to stabilize within {rtol:.1e} after "
        f"{max_refinements} refinements"
    )


def exact_gmom_blockdiag(
    model: ModelId,
    cache: SuffStatsCache,
    family: fam.FamilySpec,
    prior: ParamPriorSpec,
    rtol: float = 1e-9,
) -> MarginalScore:
    """Exact product-moment marginal for mutually orthogonal groups, by
    per-group numerical quadrature.

    Requires a known-dispersion gaussian family and a design whose active
    groups have exactly zero cross products, so the integral factorizes.
    Groups of one or two columns are supported.
    """
    if family.kind != "gaussian" or not family.phi_known:
        raise ValueError("block quadrature expects the known-dispersion gaussian")
    if prior.kind != "gmom":
        raise ValueError("block quadrature expects the product-moment prior")
    phi = float(family.phi)
    y = cache.y
    n = cache.n
    if model.p_gamma:
        xtx, _ = submodel_stats(cache, model)
        off = np.array(xtx, copy=True)
        offset = 0
        for j in model.active_groups:
            pj = cache.design.group_size(j)
            off[offset : offset + pj, offset : offset + pj] = 0.0
            offset += pj
        scale = float(np.max(np.abs(np.diag(xtx)))) or 1.0
        if float(np.max(np.abs(off))) > 1e-8 * scale:
            raise ValueError("active groups are not mutually orthogonal")
    base = -0.5 * n * (_LOG_2PI + np.log(phi)) - 0.5 * float(y @ y) / phi
    total = base
    g = prior.g
    for j in model.active_groups:
        pj = cache.design.group_size(j)
        if pj > 2:
            raise ValueError("block quadrature supports groups of up to 2 columns")
        block = cache.group_block(j)
        start, stop = cache.design.groups[j]
        uj = cache.zty[start:stop]
        kernel_cov = phi * g * n / (pj + 2)
        pen_coef = (pj + 2) / (n * pj * g * phi)

        def log_f(bvecs):
            # bvecs: (m, pj) points; likelihood kernel times the prior density
            quad_a = np.einsum("mi,ij,mj->m", bvecs, block, bvecs)
            lin = bvecs @ uj
            with np.errstate(divide="ignore"):
                log_pen = np.log(pen_coef * quad_a)
            log_kernel = (
                -0.5 * pj * (_LOG_2PI + np.log(kernel_cov))
                + 0.5 * cache.group_logdet(j)
                - 0.5 * quad_a / kernel_cov
            )
            return lin / phi - 0.5 * quad_a / phi + log_pen + log_kernel

        total += _tensor_quad(log_f, block, uj, phi, rtol)
    return MarginalScore(float(total), "quadrature", np.empty(0), {})


def _tensor_quad(log_f, block, uj, phi, rtol):
    """Adaptive tensor Gauss-Legendre over an eigenbox centered at the
    likelihood mean; the box is wide enough that the polynomial penalty
    cannot push mass past it."""
    n_cols = block.shape[0]
    a_inv = np.linalg.inv(block)
    mean = a_inv @ uj
    cov_like = phi * a_inv
    eigvals, eigvecs = np.linalg.eigh(cov_like)
    half_widths = 12.0 * np.sqrt(np.maximum(eigvals, 1e-300))
    nodes, weights = np.polynomial.legendre.leggauss(32)
    panels = 4
    previous = None
    for _ in range(10):
        per_axis = []
        for k in range(n_cols):
            edges = np.linspace(-half_widths[k], half_widths[k], panels + 1)
            mid = 0.5 * (edges[:-1] + edges[1:])
            half = 0.5 * (edges[1:] - edges[:-1])
            pts = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
            wts = np.repeat(half, nodes.shape[0]) * np.tile(weights, panels)
            per_axis.append((pts, wts))
        if n_cols == 1:
            pts, wts = per_axis[0]
            bvecs = mean[None, :] + pts[:, None] * eigvecs.T
            logw = np.log(wts)
        else:
            p0, w0 = per_axis[0]
            p1, w1 = per_axis[1]
            grid0, grid1 = np.meshgrid(p0, p1, indexing="ij")
            coords = np.stack([grid0.ravel(), grid1.ravel()], axis=1)
            bvecs = mean[None, :] + coords @ eigvecs.T
            logw = np.log(np.outer(w0, w1).ravel())
        vals = log_f(bvecs) + logw
        estimate = float(scipy.special.logsumexp(vals))
        if previous is not None and abs(estimate - previous) <= rtol:
            return estimate
        previous = estimate
        panels *= 2
    raise ToleranceNotMet("group quadrature failed to stabilize")


def exact_gmom_mc(
    model: ModelId,
    cache: SuffStatsCache,
    family: fam.FamilySpec,
    prior: ParamPriorSpec,
    n_draws: int = 200_000,
    rng: Optional[np.random.Generator] = None,
) -> MarginalScore:
    """Product-moment marginal for general gaussian designs by Monte Carlo.

    Writes the marginal as the Normal-kernel marginal times the posterior
    expectation of the penalty product, draws from the exact kernel
    posterior, and averages.  The log-scale standard error is reported.
    """
    if family.kind != "gaussian":
        raise ValueError("the Monte Carlo reference expects the gaussian family")
    if prior.kind != "gmom":
        raise ValueError("the Monte Carlo reference expects the product-moment prior")
    if rng is None:
        rng = np.random.default_rng(0)
    y = cache.y
    n = cache.n
    g = prior.g
    p = model.p_gamma
    cov = np.eye(n)
    for j in model.active_groups:
        start, stop = cache.design.groups[j]
        zj = cache.design.values[:, start:stop]
        ainv_zt = np.linalg.solve(zj.T @ zj, zj.T)
        cov += (g * n / (stop - start + 2)) * (zj @ ainv_zt)
    factor = _chol(cov, NotInvertible, "kernel marginal covariance")
    half = scipy.linalg.solve_triangular(factor, y, lower=True)
    quad = float(half @ half)
    logdet = _chol_logdet(factor)
    if p == 0:
        if family.phi_known:
            phi = float(family.phi)
            log_ml = -0.5 * n * (_LOG_2PI + np.log(phi)) - 0.5 * logdet - 0.5 * quad / phi
        else:
            a, b = prior.phi_prior_required()
            log_ml = (
                -0.5 * n * _LOG_2PI
                - 0.5 * logdet
                + a * np.log(b)
                - gammaln(a)
                + gammaln(a + 0.5 * n)
                - (a + 0.5 * n) * np.log(b + 0.5 * quad)
            )
        return MarginalScore(float(log_ml), "mc", np.empty(0), {"mc_se_log": 0.0})
    xtx, xty = submodel_stats(cache, model)
    m_prec = np.array(xtx, copy=True)
    offset = 0
    for j in model.active_groups:
        pj = cache.design.group_size(j)
        sl = slice(offset, offset + pj)
        m_prec[sl, sl] += ((pj + 2) / (g * n)) * cache.group_block(j)
        offset += pj
    m_factor = _chol(m_prec, NotInvertible, "kernel posterior precision")
    mean = scipy.linalg.cho_solve((m_factor, True), xty)
    shape = scipy.linalg.cho_solve((m_factor, True), np.eye(p))
    shape_chol = np.linalg.cholesky(shape + 1e-14 * np.eye(p))
    normal = rng.standard_normal((n_draws, p))
    if family.phi_known:
        phi_draws = np.full(n_draws, float(family.phi))
        log_kernel = (
            -0.5 * n * (_LOG_2PI + np.log(float(family.phi)))
            - 0.5 * logdet
            - 0.5 * quad / float(family.phi)
        )
    else:
        a, b = prior.phi_prior_required()
        post_a, post_b = a + 0.5 * n, b + 0.5 * quad
        phi_draws = post_b / rng.gamma(post_a, 1.0, size=n_draws)
        log_kernel = (
            -0.5 * n * _LOG_2PI
            - 0.5 * logdet
            + a * np.log(b)
            - gammaln(a)
            + gammaln(post_a)
            - post_a * np.log(post_b)
        )
    draws = mean[None, :] + np.sqrt(phi_draws)[:, None] * (normal @ shape_chol.T)
    log_pen = np.zeros(n_draws)
    offset = 0
    for j in model.active_groups:
        pj = cache.design.group_size(j)
        sl = slice(offset, offset + pj)
        offset += pj
        block = cache.group_block(j)
        coef = (pj + 2) / (n * pj * g)
        quad_j = np.einsum("mi,ij,mj->m", draws[:, sl], block, draws[:, sl])
        log_pen += np.log(coef * quad_j / phi_draws)
    log_mean = float(scipy.special.logsumexp(log_pen) - np.log(n_draws))
    pen = np.exp(log_pen - log_pen.max())
    se_rel = float(np.std(pen) / (np.mean(pen) * np.sqrt(n_draws)))
    return MarginalScore(
        float(log_kernel + log_mean),
        "mc",
        mean,
        {"mc_se_log": se_rel, "n_draws": n_draws},
    )


# ---------------------------------------------------------------------------
# survival scoring


@dataclass
class AftContext:
    """Shared statistics for scoring survival models at ``(0, tau0)``.

    ``tau0`` maximizes the covariate-free likelihood, where the gradient in
    tau vanishes.  The censoring weights are model independent there, so the
    curvature of every sub-model assembles from one weighted Gram store.
    """

    design: DesignMatrix
    data: fam.SurvivalData
    tau0: float
    l0: float
    wgram: GramStore
    prior_blocks: GroupBlocks
    ztv: np.ndarray
    ztyw: np.ndarray
    h_tt: float

    @property
    def n(self) -> int:
        return self.design.n


def build_aft_context(design: DesignMatrix, data: fam.SurvivalData) -> AftContext:
    if data.n != design.n:
        raise ValueError("survival data length does not match the design")
    tau0 = fam.aft_tau0(data)
    obs = data.observed
    y = data.log_time
    yo, yc = y[obs], y[~obs]
    n_o = yo.shape[0]
    weights = np.ones(design.n)
    weights[~obs] = fam.log_ndtr_curvature(-tau0 * yc)
    v = np.empty(design.n)
    v[obs] = tau0 * yo
    v[~obs] = fam.mills_ratio(-tau0 * yc)
    l0 = (
        -0.5 * n_o * _LOG_2PI
        + n_o * np.log(tau0)
        - 0.5 * tau0**2 * float(yo @ yo)
        + float(np.sum(log_ndtr(-tau0 * yc)))
    )
    weighted = design.values * np.sqrt(weights)[:, None]
    return AftContext(
        design=design,
        data=data,
        tau0=tau0,
        l0=float(l0),
        wgram=GramStore(weighted),
        prior_blocks=GroupBlocks(design, GramStore(design.values)),
        ztv=design.values.T @ v,
        ztyw=design.values.T @ (y * weights),
        h_tt=float(n_o / tau0**2 + yo @ yo + (yc * yc) @ weights[~obs]),
    )


def _aft_log_prior(ctx: AftContext, prior: ParamPriorSpec, model: ModelId, alpha, tau):
    a, b = prior.phi_prior_required()
    total = log_tau_prior(tau, a, b)
    offset = 0
    n = ctx.n
    for j in model.active_groups:
        pj = ctx.design.group_size(j)
        aj = alpha[offset : offset + pj]
        offset += pj
        half = ctx.prior_blocks.chol(j).T @ aj
        scale = prior.g * n / pj
        total += -0.5 * (
            pj * _LOG_2PI
            + pj * np.log(scale)
            - ctx.prior_blocks.logdet(j)
            + float(half @ half) / scale
        )
    return float(total)


def ala_aft(
    model: ModelId, ctx: AftContext, prior: ParamPriorSpec
) -> MarginalScore:
    """Zero-expansion survival score with the prior density at the update.

    Expands the survival log-likelihood at ``(alpha, tau) = (0, tau0)``; the
    scale prior is not Normal, so the prior density is evaluated at the
    implied update point.
    """
    if prior.kind != "gzellner":
        raise ValueError("survival scoring expects the block Zellner prior")
    a, b = prior.phi_prior_required()
    p = model.p_gamma
    if p == 0:
        log_ml = (
            ctx.l0
            + log_tau_prior(ctx.tau0, a, b)
            + 0.5 * _LOG_2PI
            - 0.5 * np.log(ctx.h_tt)
        )
        return MarginalScore(
            float(log_ml), "ala", np.array([ctx.tau0]), {"tau0": ctx.tau0}
        )
    cols = ctx.design.columns_for(model.bits)
    hess = np.empty((p + 1, p + 1))
    hess[:p, :p] = ctx.wgram.block(cols)
    hess[:p, p] = hess[p, :p] = -ctx.ztyw[cols]
    hess[p, p] = ctx.h_tt
    grad = np.concatenate([-ctx.ztv[cols], [0.0]])
    factor = _chol(hess, NotConcaveAtExpansion, "survival curvature")
    sol = scipy.linalg.cho_solve((factor, True), grad)
    quad = float(grad @ sol)
    alpha_tilde = -sol[:p]
    tau_tilde = ctx.tau0 - sol[p]
    expansion = np.concatenate([alpha_tilde, [tau_tilde]])
    diag = {"tau0": ctx.tau0, "tau_tilde": tau_tilde}
    if not tau_tilde > 0.0:
        return MarginalScore(-np.inf, "ala", expansion, diag)
    log_ml = (
        ctx.l0
        + 0.5 * quad
        + _aft_log_prior(ctx, prior, model, alpha_tilde, tau_tilde)
        + 0.5 * (p + 1) * _LOG_2PI
        - 0.5 * _chol_logdet(factor)
    )
    return MarginalScore(float(log_ml), "ala", expansion, diag)


def la_aft(
    model: ModelId,
    ctx: AftContext,
    prior: ParamPriorSpec,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> MarginalScore:
    """Mode-expansion survival score via damped Newton on the log joint."""
    if prior.kind != "gzellner":
        raise ValueError("survival scoring expects the block Zellner prior")
    a, b = prior.phi_prior_required()
    p = model.p_gamma
    cols = ctx.design.columns_for(model.bits)
    Z = ctx.design.values[:, cols]
    fam.aft_concavity_check(Z, ctx.data)
    n = ctx.n
    prec = np.zeros((p, p))
    prior_const = -a * np.log(b) + gammaln(a) - np.log(2.0)
    offset = 0
    for j in model.active_groups:
        pj = ctx.design.group_size(j)
        sl = slice(offset, offset + pj)
        prec[sl, sl] = (pj / (prior.g * n)) * ctx.prior_blocks.block(j)
        prior_const += 0.5 * (
            pj * _LOG_2PI + pj * np.log(prior.g * n / pj) - ctx.prior_blocks.logdet(j)
        )
        offset += pj

    def objective(theta):
        alpha, tau = theta[:p], theta[p]
        ll, g_ll, h_ll = fam.aft_loglik_grad_hess(Z, ctx.data, alpha, tau)
        value = (
            -ll
            + 0.5 * float(alpha @ prec @ alpha)
            - (2.0 * a - 1.0) * np.log(tau)
            + b * tau * tau
            + prior_const
        )
        grad = -g_ll
        grad[:p] += prec @ alpha
        grad[p] += -(2.0 * a - 1.0) / tau + 2.0 * b * tau
        hess = -h_ll
        hess[:p, :p] += prec
        hess[p, p] += (2.0 * a - 1.0) / tau**2 + 2.0 * b
        return value, grad, hess

    theta0 = np.concatenate([np.zeros(p), [ctx.tau0]])
    theta, value, grad, hess, trace = _damped_newton(
        objective, theta0, tol=tol, max_iter=max_iter, positive=(p,)
    )
    factor = _chol(hess, NotConcave, "curvature at the mode")
    log_ml = -value + 0.5 * (p + 1) * _LOG_2PI - 0.5 * _chol_logdet(factor)
    return MarginalScore(
        float(log_ml),
        "la",
        theta,
        {"iterations": len(trace), "grad_norm": float(np.max(np.abs(grad)))},
    )


# ---------------------------------------------------------------------------
# scoring front ends used by the search routines


def _parse_method(method: str) -> tuple[str, Optional[int]]:
    if method.startswith("ala-refined"):
        inner = method[len("ala-refined") :]
        if inner.startswith("(") and inner.endswith(")"):
            return "ala-refined", int(inner[1:-1])
        if inner == "":
            return "ala-refined", None
        raise ValueError(f"cannot parse method {method!r}")
    return method, None


class ModelScorer:
    """Memoizing per-model scorer for the regression families.

    ``log_score`` adds the unnormalized model prior to the marginal score,
    which is what the enumeration and Gibbs routines need.
    """

    def __init__(
        self,
        cache: SuffStatsCache,
        family: fam.FamilySpec,
        prior: ParamPriorSpec,
        model_prior: Optional[ModelPriorSpec] = None,
        method: str = "ala",
        refine_steps: int = 1,
        variant: str = "exact-normal",
    ):
        self.cache = cache
        self.family = family
        self.prior = prior
        self.model_prior = model_prior
        name, parsed_k = _parse_method(method)
        self.method = name
        self.refine_steps = parsed_k if parsed_k is not None else refine_steps
        self.variant = variant
        self.curvature: Optional[CurvatureContext] = None
        if name == "ala-curvadj":
            self.curvature = curvature_context(cache, family)
        self._memo: dict[tuple[int, ...], MarginalScore] = {}

    @property
    def design(self) -> DesignMatrix:
        return self.cache.design

    @property
    def n_groups(self) -> int:
        return self.cache.design.n_groups

    def marginal(self, bits) -> MarginalScore:
        key = tuple(getattr(bits, "bits", bits))
        found = self._memo.get(key)
        if found is None:
            found = self._compute(self.cache.design.model(key))
            self._memo[key] = found
        return found

    def _compute(self, model: ModelId) -> MarginalScore:
        name = self.method
        if self.prior.kind == "gmom":
            if name in ("ala", "ala-curvadj"):
                return ala_gmom(
                    model, self.cache, self.family, self.prior, self.curvature
                )
            if name == "la":
                if self.family.kind == "gaussian":
                    # the kernel posterior is exact here, so the zero
                    # expansion and the mode expansion coincide
                    return ala_gmom(model, self.cache, self.family, self.prior)
                raise ValueError(
                    "mode expansion with the product-moment prior is supported "
                    "for the gaussian family only"
                )
            raise ValueError(f"method {name!r} is unavailable for this prior")
        if name == "ala":
            if self.family.phi_known:
                return ala_expfam_known_phi(
                    model, self.cache, self.family, self.prior, variant=self.variant
                )
            return ala_expfam_unknown_phi(model, self.cache, self.family, self.prior)
        if name == "ala-curvadj":
            return ala_expfam_known_phi(
                model,
                self.cache,
                self.family,
                self.prior,
                curvature=self.curvature,
                variant=self.variant,
            )
        if name == "ala-refined":
            return ala_refined(
                model, self.cache, self.family, self.prior, k=self.refine_steps
            )
        if name == "la":
            return la_marginal(model, self.cache, self.family, self.prior)
        if name == "exact-gaussian":
            return exact_gaussian_marginal(model, self.cache, self.family, self.prior)
        raise ValueError(f"unknown method {name!r}")

    def log_ml(self, bits) -> float:
        return self.marginal(bits).log_ml

    def log_score(self, bits) -> float:
        value = self.marginal(bits).log_ml
        if self.model_prior is not None:
            value += log_model_prior_unnorm(tuple(bits), self.model_prior)
        return float(value)


class AftScorer:
    """Memoizing per-model scorer for survival models."""

    def __init__(
        self,
        ctx: AftContext,
        prior: ParamPriorSpec,
        model_prior: Optional[ModelPriorSpec] = None,
        method: str = "ala",
    ):
        if method not in ("ala", "la"):
            raise ValueError(f"unknown survival method {method!r}")
        self.ctx = ctx
        self.prior = prior
        self.model_prior = model_prior
        self.method = method
        self._memo: dict[tuple[int, ...], MarginalScore] = {}

    @property
    def design(self) -> DesignMatrix:
        return self.ctx.design

    @property
    def n_groups(self) -> int:
        return self.ctx.design.n_groups

    def marginal(self, bits) -> MarginalScore:
        key = tuple(getattr(bits, "bits", bits))
        found = self._memo.get(key)
        if found is None:
            model = self.ctx.design.model(key)
            if self.method == "ala":
                found = ala_aft(model, self.ctx, self.prior)
            else:
                found = la_aft(model, self.ctx, self.prior)
            self._memo[key] = found
        return found

    def log_ml(self, bits) -> float:
        return self.marginal(bits).log_ml

    def log_score(self, bits) -> float:
        value = self.marginal(bits).log_ml
        if self.model_prior is not None:
            value += log_model_prior_unnorm(tuple(bits), self.model_prior)
        return float(value)
