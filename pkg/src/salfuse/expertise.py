"""Per-model reliability estimation without ground truth.

Two estimators share one output type.  The statistics-based estimator scores
each model by how much more often it fires inside the reference foreground
than outside it (a smoothed likelihood ratio).  The latent-variable
estimator drops the reference entirely and jointly infers model skill,
per-superpixel difficulty, and the hidden labels from the binary maps alone.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import InputError


@dataclass(frozen=True)
class ExpertiseVector:
    """Reliability weights for P models on one image.

    alpha weighs a model's continuous map, beta its binary map.  In stats
    mode both are positive likelihood ratios; in latent mode beta is a real
    skill value (negative for anti-correlated models) with alpha set equal
    to it, and pi / posterior carry the per-superpixel difficulty and
    foreground probability.
    """

    mode: str  # "stats" | "latent" | "uniform"
    alpha: np.ndarray  # (P,)
    beta: np.ndarray  # (P,)
    pi: np.ndarray | None = None  # (N,) difficulty, latent mode only
    posterior: np.ndarray | None = None  # (N,) P(foreground), latent mode only
    converged: bool | None = None


def stats_beta(
    binary_maps: np.ndarray,
    s_ref: np.ndarray,
    lam: float = 0.1,
    smoothing: float = 1e-6,
) -> np.ndarray:
    """Likelihood-ratio expertise of each binary map against the reference.

    The reference foreground is s_ref >= lam.  Every count fraction gets
    additive smoothing so the ratio stays finite and positive even when a
    class is empty.
    """
    maps = _as_binary_stack(binary_maps)
    ref = np.asarray(s_ref, dtype=np.float64)
    if ref.shape != (maps.shape[1],):
        raise InputError("reference length does not match maps")

    fg = ref >= lam
    if not fg.any():
        warnings.warn(
            f"reference map has no foreground at lambda={lam}; "
            "expertise ratios are smoothing-dominated",
            RuntimeWarning,
            stacklevel=2,
        )
    return _smoothed_ratio(maps, fg, smoothing)


def stats_alpha(
    binary_maps: np.ndarray,
    s_ref: np.ndarray,
    thresholds: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    smoothing: float = 1e-6,
) -> np.ndarray:
    """Intensity-map expertise: the beta-style ratio averaged over a sweep
    of reference foreground thresholds."""
    maps = _as_binary_stack(binary_maps)
    ref = np.asarray(s_ref, dtype=np.float64)
    if ref.shape != (maps.shape[1],):
        raise InputError("reference length does not match maps")
    if not thresholds:
        raise InputError("threshold sweep must be nonempty")

    ratios = np.stack(
        [_smoothed_ratio(maps, ref >= t, smoothing) for t in thresholds]
    )
    return ratios.mean(axis=0)


def _smoothed_ratio(maps: np.ndarray, fg: np.ndarray, eps: float) -> np.ndarray:
    n = maps.shape[1]
    p_f = fg.mean()
    p_fbar = 1.0 - p_f
    joint_f = (maps * fg).sum(axis=1) / n
    joint_fbar = (maps * ~fg).sum(axis=1) / n
    given_f = (joint_f + eps) / (p_f + eps)
    given_fbar = (joint_fbar + eps) / (p_fbar + eps)
    return given_f / given_fbar


def _as_binary_stack(binary_maps: np.ndarray) -> np.ndarray:
    maps = np.asarray(binary_maps)
    if maps.ndim != 2 or maps.shape[0] < 1:
        raise InputError("expected a (P, N) stack of binary maps")
    if not np.isin(maps, (0, 1)).all():
        raise InputError("binary maps must contain only 0/1 values")
    return maps.astype(np.float64)


def prob_correct(beta: float, pi: float) -> float:
    """Chance a model of skill beta labels a superpixel of difficulty pi
    correctly: certain at zero difficulty, logistic in beta/pi otherwise."""
    if pi < 0:
        raise InputError("difficulty must be >= 0")
    if pi == 0:
        return 1.0
    return float(expit(beta / pi))


@dataclass(frozen=True)
class EmResult:
    beta: np.ndarray  # (P,) skill, real-valued
    pi: np.ndarray  # (N,) difficulty, > 0
    posterior: np.ndarray  # (N,) P(label = 1)
    converged: bool
    n_rounds: int
    objective: float


def em_fit(
    binary_maps: np.ndarray,
    max_rounds: int = 50,
    tol: float = 1e-6,
    inner_steps: int = 25,
    step_size: float = 0.1,
    prior_mean: float = 1.0,
    prior_std: float = 1.0,
) -> EmResult:
    """Jointly infer model skill, superpixel difficulty, and hidden labels.

    Alternates a posterior pass over the hidden labels with gradient ascent
    on the penalized expected complete-data log-likelihood.  Difficulty is
    optimized through u = ln(1/pi) and both u and beta carry Gaussian
    priors, which keeps the problem well-posed when models are few.  Stops
    when the penalized objective moves less than ``tol`` or after
    ``max_rounds``; if the cap is hit, the best iterate is returned with
    ``converged=False``.
    """
    iota = _as_binary_stack(binary_maps)
    p, n = iota.shape

    beta = np.full(p, prior_mean)
    u = np.full(n, prior_mean)  # 1/pi = exp(u)
    inv_var = 1.0 / (prior_std * prior_std)

    best = None
    prev_objective = None
    converged = False
    n_rounds = 0

    for n_rounds in range(1, max_rounds + 1):
        mu = _posterior(iota, beta, u)
        objective = _penalized_q(iota, mu, beta, u, prior_mean, inv_var)
        if best is None or objective > best[0]:
            best = (objective, beta.copy(), u.copy(), mu.copy())
        if prev_objective is not None and abs(objective - prev_objective) < tol:
            converged = True
            break
        prev_objective = objective

        beta, u = _ascend(
            iota, mu, beta, u, prior_mean, inv_var, inner_steps, step_size
        )

    if converged:
        objective, final_beta, final_u, final_mu = objective, beta, u, mu
    else:
        # Round cap hit: give the last ascent a chance, then keep the best.
        mu = _posterior(iota, beta, u)
        objective = _penalized_q(iota, mu, beta, u, prior_mean, inv_var)
        if objective > best[0]:
            best = (objective, beta, u, mu)
        objective, final_beta, final_u, final_mu = best

    return EmResult(
        beta=final_beta,
        pi=np.exp(-final_u),
        posterior=final_mu,
        converged=converged,
        n_rounds=n_rounds,
        objective=float(objective),
    )


def _posterior(iota: np.ndarray, beta: np.ndarray, u: np.ndarray) -> np.ndarray:
    """P(label = 1) per superpixel under a uniform label prior.

    The two per-label log-likelihoods share every term except the sign of
    z, so their difference collapses to sum_p (2 iota - 1) z.
    """
    z = beta[:, None] * np.exp(u)[None, :]
    return expit(((2.0 * iota - 1.0) * z).sum(axis=0))


def _penalized_q(
    iota: np.ndarray,
    mu: np.ndarray,
    beta: np.ndarray,
    u: np.ndarray,
    prior_mean: float,
    inv_var: float,
) -> float:
    # w ln(sigma(z)) + (1-w) ln(1-sigma(z)) == w z - ln(1 + e^z)
    z = beta[:, None] * np.exp(u)[None, :]
    w = mu[None, :] * iota + (1.0 - mu[None, :]) * (1.0 - iota)
    q = (w * z).sum() - np.logaddexp(0.0, z).sum()
    q += mu.size * np.log(0.5)  # uniform label prior term
    q -= 0.5 * inv_var * np.sum((beta - prior_mean) ** 2)
    q -= 0.5 * inv_var * np.sum((u - prior_mean) ** 2)
    return float(q)


def _ascend(
    iota: np.ndarray,
    mu: np.ndarray,
    beta: np.ndarray,
    u: np.ndarray,
    prior_mean: float,
    inv_var: float,
    inner_steps: int,
    step_size: float,
    max_halvings: int = 30,
) -> tuple[np.ndarray, np.ndarray]:
    current = _penalized_q(iota, mu, beta, u, prior_mean, inv_var)
    for _ in range(inner_steps):
        exp_u = np.exp(u)
        z = beta[:, None] * exp_u[None, :]
        sig = expit(z)
        w = mu[None, :] * iota + (1.0 - mu[None, :]) * (1.0 - iota)
        residual = w - sig
        grad_beta = (residual * exp_u[None, :]).sum(axis=1) - inv_var * (
            beta - prior_mean
        )
        grad_u = (residual * z).sum(axis=0) - inv_var * (u - prior_mean)

        step = step_size
        for _ in range(max_halvings):
            cand_beta = beta + step * grad_beta
            cand_u = u + step * grad_u
            cand_q = _penalized_q(iota, mu, cand_beta, cand_u, prior_mean, inv_var)
            if cand_q >= current:
                beta, u, current = cand_beta, cand_u, cand_q
                break
            step *= 0.5
        else:
            break  # no improving step found; gradient is effectively zero
    return beta, u


def log_weights(ev: ExpertiseVector) -> tuple[np.ndarray, np.ndarray]:
    """Resolve the additive log-domain weights for the fusion update.

    Stats-mode ratios pass through ln(.); latent-mode skills already are
    log-odds of correctness at unit difficulty and are used as-is.
    """
    if ev.mode == "latent":
        return ev.beta.copy(), ev.beta.copy()
    assert (ev.alpha > 0).all() and (ev.beta > 0).all(), (
        "stats-mode expertise must be positive (smoothing guarantees this)"
    )
    return np.log(ev.alpha), np.log(ev.beta)


def estimate(
    binary_maps: np.ndarray,
    s_ref: np.ndarray,
    mode: str = "stats",
    lam: float = 0.1,
    alpha_thresholds: tuple[float, ...] = (
        0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9,
    ),
    smoothing: float = 1e-6,
    em_kwargs: dict | None = None,
) -> ExpertiseVector:
    """Run the configured estimator and package the result."""
    maps = np.asarray(binary_maps)
    p = maps.shape[0]
    if mode == "stats":
        return ExpertiseVector(
            mode="stats",
            alpha=stats_alpha(maps, s_ref, alpha_thresholds, smoothing),
            beta=stats_beta(maps, s_ref, lam, smoothing),
        )
    if mode == "latent":
        result = em_fit(maps, **(em_kwargs or {}))
        return ExpertiseVector(
            mode="latent",
            alpha=result.beta.copy(),
            beta=result.beta,
            pi=result.pi,
            posterior=result.posterior,
            converged=result.converged,
        )
    if mode == "uniform":
        ones = np.ones(p)
        return ExpertiseVector(mode="uniform", alpha=ones, beta=ones.copy())
    raise InputError(f"unknown expertise mode: {mode!r}")
