"""Model-space exploration.

Small spaces are enumerated and normalized exactly.  Larger spaces are
explored by a systematic-scan Gibbs sampler over group-inclusion bits that
respects dependency constraints and size caps by construction.  Sampled
supports can be reweighted to the exact restricted posterior, and a cheap
screening pass can shrink the space before a more expensive engine runs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .data_model import ENUMERATION_LIMIT, ConstraintSet, enumerate_models
from .errors import RefuseEnumeration


@dataclass
class PosteriorSummary:
    """Posterior over a model support plus per-group inclusion estimates.

    ``inclusion`` holds the primary estimate (conditional averages when the
    support was sampled); ``inclusion_raw`` the plain sampling frequencies,
    when available.
    """

    models: list[tuple[int, ...]]
    log_scores: np.ndarray
    probabilities: np.ndarray
    inclusion: np.ndarray
    inclusion_raw: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def top(self, k: int = 10) -> list[tuple[tuple[int, ...], float]]:
        order = np.argsort(-self.probabilities)[:k]
        return [(self.models[i], float(self.probabilities[i])) for i in order]

    def probability_of(self, bits) -> float:
        key = tuple(bits)
        for model, prob in zip(self.models, self.probabilities):
            if model == key:
                return float(prob)
        return 0.0


@dataclass
class ImportanceReport:
    """Reweighting of a sampled support to the exact restricted posterior.

    ``weights`` are per-draw ratios of target to proposal probability, both
    renormalized over the sampled support.  ``ess`` is the effective sample
    size implied by their spread across draws; ``degenerate`` flags a
    single model carrying more than half of the total model weight.
    """

    models: list[tuple[int, ...]]
    probabilities: np.ndarray
    frequencies: np.ndarray
    inclusion: np.ndarray
    weights: np.ndarray
    ess: float
    n_draws: int
    max_weight: float
    degenerate: bool

    @property
    def ess_fraction(self) -> float:
        return self.ess / self.n_draws


def _normalize(log_scores: np.ndarray) -> np.ndarray:
    total = logsumexp(log_scores)
    if not np.isfinite(total):
        raise ValueError("every model in the support scored -inf")
    return np.exp(log_scores - total)


def _inclusion_from(models: Sequence[tuple[int, ...]], probs: np.ndarray) -> np.ndarray:
    bits = np.asarray(models, dtype=np.float64)
    return bits.T @ probs


def _resolve_constraints(scorer, constraints: Optional[ConstraintSet]):
    if constraints is not None:
        return constraints
    model_prior = getattr(scorer, "model_prior", None)
    if model_prior is not None:
        return model_prior.constraints
    return None


def enumerate_posterior(
    scorer,
    constraints: Optional[ConstraintSet] = None,
    limit: int = ENUMERATION_LIMIT,
) -> PosteriorSummary:
    """Score every admissible model and normalize exactly."""
    design = scorer.design
    constraints = _resolve_constraints(scorer, constraints)
    models = []
    scores = []
    for model in enumerate_models(
        design.n_groups,
        constraints,
        sizes=design.group_sizes,
        intercept_group=design.intercept_group,
        limit=limit,
    ):
        models.append(model.bits)
        scores.append(scorer.log_score(model.bits))
    log_scores = np.asarray(scores)
    probs = _normalize(log_scores)
    return PosteriorSummary(
        models=models,
        log_scores=log_scores,
        probabilities=probs,
        inclusion=_inclusion_from(models, probs),
        diagnostics={"n_models": len(models)},
    )


def gibbs_models(
    scorer,
    n_scans: int,
    seed: int = 0,
    constraints: Optional[ConstraintSet] = None,
    init: Optional[Sequence[int]] = None,
    burn_frac: float = 0.1,
    debug: bool = False,
) -> PosteriorSummary:
    """Systematic-scan Gibbs over group-inclusion bits.

    Each scan visits every free group once.  A group whose parents are
    inactive, or whose activation would exceed the size cap, has conditional
    on-probability zero.  Switching a parent off also switches off its
    active dependents in the same move, so no intermediate state violates a
    constraint.  Inclusion estimates average the conditional on-probability
    over post-burn-in scans; raw sampling frequencies are kept alongside.
    """
    design = scorer.design
    j_groups = design.n_groups
    constraints = _resolve_constraints(scorer, constraints)
    max_groups = constraints.max_groups if constraints is not None else j_groups
    requires = constraints.requires if constraints is not None else ()
    parents = {j: [] for j in range(j_groups)}
    for child, parent in requires:
        parents[child].append(parent)
    closure = {
        j: tuple(constraints.dependents_closure(j)) if constraints is not None else ()
        for j in range(j_groups)
    }
    intercept = design.intercept_group
    if init is None:
        bits = [0] * j_groups
        if intercept is not None:
            bits[intercept] = 1
    else:
        bits = [1 if b else 0 for b in init]
        if constraints is not None and not constraints.satisfied_by(bits):
            raise ValueError("initial model violates the constraints")
    rng = np.random.Generator(np.random.Philox(seed))
    burn = int(np.ceil(burn_frac * n_scans))
    rb_sums = np.zeros(j_groups)
    raw_sums = np.zeros(j_groups)
    kept = 0
    samples = np.empty((max(n_scans - burn, 0), j_groups), dtype=np.int8)
    violations = 0
    for scan in range(n_scans):
        keep = scan >= burn
        for j in range(j_groups):
            if j == intercept:
                if keep:
                    rb_sums[j] += 1.0
                continue
            active = sum(bits)
            if bits[j]:
                state_on = tuple(bits)
                off = list(bits)
                off[j] = 0
                for dep in closure[j]:
                    off[dep] = 0
                state_off = tuple(off)
            else:
                if any(not bits[parent] for parent in parents[j]) or (
                    active >= max_groups
                ):
                    # activation is inadmissible; the conditional is zero
                    if keep:
                        rb_sums[j] += 0.0
                    continue
                on = list(bits)
                on[j] = 1
                state_on = tuple(on)
                state_off = tuple(bits)
            delta = scorer.log_score(state_off) - scorer.log_score(state_on)
            p_on = 1.0 / (1.0 + np.exp(min(delta, 700.0)))
            chosen = state_on if rng.random() < p_on else state_off
            bits = list(chosen)
            if keep:
                rb_sums[j] += p_on
            if debug and constraints is not None:
                if not constraints.satisfied_by(bits):
                    violations += 1
        if keep:
            samples[kept] = bits
            raw_sums += samples[kept]
            kept += 1
    if kept == 0:
        raise ValueError("no post-burn-in scans; increase n_scans")
    unique: dict[tuple[int, ...], int] = {}
    for row in samples:
        key = tuple(int(b) for b in row)
        unique[key] = unique.get(key, 0) + 1
    models = sorted(unique)
    log_scores = np.asarray([scorer.log_score(m) for m in models])
    probs = _normalize(log_scores)
    return PosteriorSummary(
        models=models,
        log_scores=log_scores,
        probabilities=probs,
        inclusion=rb_sums / kept,
        inclusion_raw=raw_sums / kept,
        samples=samples,
        diagnostics={
            "n_scans": n_scans,
            "burn_scans": burn,
            "seed": seed,
            "n_visited": len(models),
            "constraint_violations": violations,
        },
    )


def importance_reweight(
    scorer, samples: np.ndarray, proposal_scorer=None
) -> ImportanceReport:
    """Reweight sampled models to the exact posterior restricted to their
    support.

    Each distinct sampled model is weighted by its restricted posterior
    probability under ``scorer`` over its probability under the proposal:
    the restricted posterior of ``proposal_scorer`` when given, else the
    empirical draw frequencies.  All diagnostics are computed in log space,
    so near-infinite weight ratios still produce finite effective sample
    sizes and a well-defined degeneracy flag.
    """
    samples = np.asarray(samples)
    n_draws = samples.shape[0]
    if n_draws == 0:
        raise ValueError("need at least one draw")
    counts: dict[tuple[int, ...], int] = {}
    draw_keys: list[tuple[int, ...]] = []
    for row in samples:
        key = tuple(int(b) for b in row)
        draw_keys.append(key)
        counts[key] = counts.get(key, 0) + 1
    models = sorted(counts)
    log_scores = np.asarray([scorer.log_score(m) for m in models])
    total = logsumexp(log_scores)
    if not np.isfinite(total):
        raise ValueError("every model in the support scored -inf")
    log_target = log_scores - total
    counts_arr = np.asarray([counts[m] for m in models], dtype=np.float64)
    freqs = counts_arr / n_draws
    if proposal_scorer is None:
        log_prop = np.log(freqs)
    else:
        prop_scores = np.asarray(
            [proposal_scorer.log_score(m) for m in models]
        )
        log_prop = prop_scores - logsumexp(prop_scores)
    log_w = log_target - log_prop
    index = {m: i for i, m in enumerate(models)}
    log_c = np.log(counts_arr)
    sum_w = logsumexp(log_w + log_c)
    sum_w2 = logsumexp(2.0 * log_w + log_c)
    max_share = float(np.exp(np.max(log_w) - logsumexp(log_w)))
    # Ratios beyond the float range are reported as inf on purpose; the
    # log-space diagnostics above stay finite.
    with np.errstate(over="ignore"):
        weights = np.exp(np.asarray([log_w[index[k]] for k in draw_keys]))
        max_weight = float(np.exp(np.max(log_w)))
    return ImportanceReport(
        models=models,
        probabilities=np.exp(log_target),
        frequencies=freqs,
        inclusion=_inclusion_from(models, np.exp(log_target)),
        weights=weights,
        ess=float(np.exp(2.0 * sum_w - sum_w2)),
        n_draws=n_draws,
        max_weight=max_weight,
        degenerate=max_share > 0.5,
    )


def screen_then_refine(
    screen_scorer,
    refine_scorer,
    threshold: float = 0.5,
    constraints: Optional[ConstraintSet] = None,
    limit: int = ENUMERATION_LIMIT,
) -> PosteriorSummary:
    """Two-stage selection: enumerate with a cheap scorer, drop groups whose
    inclusion falls below ``threshold``, then re-enumerate the survivors
    with the expensive scorer.

    A surviving child keeps its parents; a child whose parent was dropped is
    dropped with it.  Dropped groups are reported with inclusion zero.
    """
    design = screen_scorer.design
    constraints = _resolve_constraints(screen_scorer, constraints)
    first = enumerate_posterior(screen_scorer, constraints, limit)
    keep = {
        j
        for j in range(design.n_groups)
        if first.inclusion[j] >= threshold
    }
    if design.intercept_group is not None:
        keep.add(design.intercept_group)
    if constraints is not None:
        # pull in parents of survivors, then drop orphaned children
        changed = True
        while changed:
            changed = False
            for child, parent in constraints.requires:
                if child in keep and parent not in keep:
                    keep.add(parent)
                    changed = True
    kept = sorted(keep)
    non_intercept = [j for j in kept if j != design.intercept_group]
    if not non_intercept:
        warnings.warn(
            "screening removed every candidate group; "
            "the summary covers the null model only",
            stacklevel=2,
        )
    if len(kept) > limit:
        raise RefuseEnumeration(
            f"{len(kept)} surviving groups still exceed the enumeration limit"
        )
    models = []
    scores = []
    for mask in range(1 << len(kept)):
        bits = [0] * design.n_groups
        for pos, j in enumerate(kept):
            bits[j] = (mask >> (len(kept) - 1 - pos)) & 1
        if design.intercept_group is not None and not bits[design.intercept_group]:
            continue
        if constraints is not None and not constraints.satisfied_by(bits):
            continue
        key = tuple(bits)
        models.append(key)
        scores.append(refine_scorer.log_score(key))
    log_scores = np.asarray(scores)
    probs = _normalize(log_scores)
    return PosteriorSummary(
        models=models,
        log_scores=log_scores,
        probabilities=probs,
        inclusion=_inclusion_from(models, probs),
        diagnostics={
            "kept_groups": tuple(kept),
            "screen_inclusion": first.inclusion,
            "n_models": len(models),
        },
    )
