"""The synchronous fusion engine.

Each generation, every candidate map is rewritten in the logit domain from a
frozen snapshot of the previous generation: the (clamped) reference supplies
the prior log-odds, the model's own continuous value enters with its alpha
weight, and every other model casts a +1/-1 vote from its binarized map,
weighted by its beta.  Thresholds, expertise, and the reference are then
refreshed and the cycle repeats; the final map is the normalized mean of the
evolved candidates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, logit

from .config import FusionConfig
from .errors import InputError
from .expertise import ExpertiseVector, estimate, log_weights
from .knowledge import KnowledgeBundle
from .preprocess import binarize, minmax_normalize, otsu_threshold


@dataclass(frozen=True)
class CandidateStack:
    """P candidate maps over N superpixels, with their binarizations.

    Invariant: binary[p] is exactly maps[p] >= thresholds[p].
    """

    maps: np.ndarray  # (P, N) float64 in [0, 1]
    thresholds: np.ndarray  # (P,) float64
    binary: np.ndarray  # (P, N) bool

    @classmethod
    def from_maps(cls, maps: np.ndarray) -> "CandidateStack":
        arr = np.atleast_2d(np.asarray(maps, dtype=np.float64))
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InputError("candidate stack needs at least one map")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise InputError("candidate maps must lie in [0, 1]")
        gammas = np.array([otsu_threshold(row) for row in arr])
        binary = np.stack([binarize(row, g) for row, g in zip(arr, gammas)])
        return cls(maps=arr, thresholds=gammas, binary=binary)

    @property
    def n_models(self) -> int:
        return self.maps.shape[0]

    @property
    def n_superpixels(self) -> int:
        return self.maps.shape[1]


@dataclass(frozen=True)
class FusionState:
    """One generation of the evolving system."""

    generation: int
    stack: CandidateStack
    s_ref: np.ndarray  # (N,) float64 in [0, 1]
    expertise: ExpertiseVector
    config: FusionConfig


@dataclass(frozen=True)
class FusionResult:
    s_final: np.ndarray  # (N,) float64 in [0, 1]
    trace: np.ndarray  # (T,) mean |delta reference| per generation
    stack: CandidateStack  # final-generation candidates
    s_ref: np.ndarray  # final reference
    expertise: ExpertiseVector | None  # None when generations == 0


def logit_vote_update(
    maps: np.ndarray,
    binary: np.ndarray,
    s_ref: np.ndarray,
    w_alpha: np.ndarray,
    w_beta: np.ndarray,
    clamp: float = 1e-4,
) -> np.ndarray:
    """One synchronous logit-domain rewrite of all maps.

    Every (model, superpixel) cell is recomputed from the same frozen
    inputs, so the result is independent of any iteration order.
    """
    maps = np.asarray(maps, dtype=np.float64)
    votes = np.where(np.asarray(binary), 1.0, -1.0)
    prior = logit(np.clip(s_ref, clamp, 1.0 - clamp))

    total_vote = w_beta @ votes  # (N,) sum over all models
    own_vote = w_beta[:, None] * votes  # remove each model's own vote
    evidence = prior[None, :] + w_alpha[:, None] * maps + (total_vote - own_vote)
    return expit(evidence)


def update_reference(stack: CandidateStack) -> np.ndarray:
    """The reference for the next generation: the plain candidate mean."""
    return stack.maps.mean(axis=0)


def average_baseline(stack: CandidateStack) -> np.ndarray:
    """Normalized elementwise mean of the candidate maps (the AVE method)."""
    return minmax_normalize(update_reference(stack))


def _estimate_expertise(
    stack: CandidateStack, s_ref: np.ndarray, config: FusionConfig
) -> ExpertiseVector:
    return estimate(
        stack.binary.astype(np.int8),
        s_ref,
        mode=config.mode,
        lam=config.foreground_lambda,
        alpha_thresholds=config.alpha_thresholds,
        smoothing=config.smoothing,
        em_kwargs={
            "max_rounds": config.em_max_rounds,
            "tol": config.em_tol,
            "inner_steps": config.em_inner_steps,
            "step_size": config.em_step_size,
            "prior_mean": config.em_prior_mean,
            "prior_std": config.em_prior_std,
        },
    )


def initial_state(
    stack: CandidateStack, s_ref0: np.ndarray, config: FusionConfig
) -> FusionState:
    s_ref0 = np.asarray(s_ref0, dtype=np.float64)
    if s_ref0.shape != (stack.n_superpixels,):
        raise InputError("reference length does not match the candidate stack")
    return FusionState(
        generation=0,
        stack=stack,
        s_ref=s_ref0,
        expertise=_estimate_expertise(stack, s_ref0, config),
        config=config,
    )


def ca_step(state: FusionState) -> FusionState:
    """Advance the system one generation."""
    config = state.config
    w_alpha, w_beta = log_weights(state.expertise)
    new_maps = logit_vote_update(
        state.stack.maps,
        state.stack.binary,
        state.s_ref,
        w_alpha,
        w_beta,
        clamp=config.logit_clamp,
    )
    new_stack = CandidateStack.from_maps(new_maps)
    new_ref = update_reference(new_stack)
    return FusionState(
        generation=state.generation + 1,
        stack=new_stack,
        s_ref=new_ref,
        expertise=_estimate_expertise(new_stack, new_ref, config),
        config=config,
    )


def run_fusion(
    stack: CandidateStack,
    knowledge: KnowledgeBundle,
    config: FusionConfig,
    observer: Callable[[FusionState], None] | None = None,
) -> FusionResult:
    """Run the configured number of generations and fuse.

    The reference starts from the knowledge bundle; with zero generations
    the result degenerates to the plain normalized candidate mean.  The
    trace records the mean absolute reference change at each generation.
    """
    if knowledge.s_ref.shape != (stack.n_superpixels,):
        raise InputError("knowledge bundle does not match the candidate stack")

    if config.generations == 0:
        return FusionResult(
            s_final=average_baseline(stack),
            trace=np.empty(0),
            stack=stack,
            s_ref=np.asarray(knowledge.s_ref, dtype=np.float64),
            expertise=None,
        )

    state = initial_state(stack, knowledge.s_ref, config)
    if observer is not None:
        observer(state)

    trace = np.empty(config.generations)
    for t in range(config.generations):
        previous_ref = state.s_ref
        state = ca_step(state)
        trace[t] = np.abs(state.s_ref - previous_ref).mean()
        if observer is not None:
            observer(state)

    return FusionResult(
        s_final=minmax_normalize(update_reference(state.stack)),
        trace=trace,
        stack=state.stack,
        s_ref=state.s_ref,
        expertise=state.expertise,
    )
