"""Private hyperparameter selection by random-stopping search over candidates.

Each draw fits a private posterior on the training split and privately
estimates its mean validation log-likelihood on the disjoint validation
split. The search stops after each draw with probability ``gamma`` or after
``T`` draws, whichever comes first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import optimize

from dpgp.data import RegressionDataset
from dpgp.inference import (
    MechanismSetup,
    NoiseModel,
    NotPositiveDefiniteError,
    VariationalPosterior,
    calibrate_mechanism,
    dp_gp_inference,
)
from dpgp.kernels import InducingSet, KernelSpec
from dpgp.mechanisms import CoinPressConfig, PrivacyBudget, coinpress_mean, zcdp_from_approx_dp
from dpgp.prediction import clip_loglik, loglik_bounds, predict, validation_loglik_terms


@dataclass(frozen=True)
class HyperCandidate:
    spec: KernelSpec
    noise: NoiseModel
    id: int


def candidate_grid(noise_sds: Sequence[float], lengthscales: Sequence[float], variance: float = 1.0):
    """Cartesian product of noise levels (outer) and isotropic lengthscales (inner)."""
    out = []
    for sd in noise_sds:
        for ell in lengthscales:
            out.append(HyperCandidate(KernelSpec(variance, ell), NoiseModel(sd), len(out)))
    return out


class BudgetTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionBudget:
    """Total budget and the per-draw budget derived from it.

    ``t0`` solves ``t (1 - log t) = delta_tot``; the per-draw ``delta`` and
    stopping-failure ``delta_2`` follow from it. ``T`` is rounded up, which
    can overshoot ``delta_tot`` by at most one ``sqrt(2 delta)`` term.
    """

    epsilon_tot: float
    delta_tot: float
    gamma: float
    t0: float
    delta: float
    delta_2: float
    epsilon: float
    max_draws: int

    def per_draw(self) -> PrivacyBudget:
        return PrivacyBudget(self.epsilon, self.delta)

    def composed_epsilon(self) -> float:
        return 3 * self.epsilon + 3 * math.sqrt(2 * self.delta)

    def composed_delta(self, exact_t: bool = False) -> float:
        t = math.log(1 / self.delta_2) / self.gamma if exact_t else self.max_draws
        return math.sqrt(2 * self.delta) * t + self.delta_2


def _solve_t0(delta_tot: float) -> float:
    if delta_tot == 1:
        return 1.0
    # t (1 - log t) is strictly increasing on (0, 1); work in log t for tiny roots
    g = lambda s: math.exp(s) * (1 - s) - delta_tot
    s0 = optimize.brentq(g, math.log(1e-300), 0.0, xtol=1e-14, rtol=1e-15, maxiter=500)
    return math.exp(s0)


def solve_budget(epsilon_tot: float, delta_tot: float, gamma: float) -> SelectionBudget:
    if not 0 < delta_tot <= 1:
        raise ValueError(f"delta_tot must lie in (0, 1], got {delta_tot}")
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    t0 = _solve_t0(delta_tot)
    delta = gamma**2 * t0**2 / 2
    delta_2 = math.sqrt(2 * delta) / gamma
    epsilon = epsilon_tot / 3 - math.sqrt(2 * delta)
    if epsilon <= 0:
        raise BudgetTooSmallError("budget too small for three-way split")
    max_draws = math.ceil(math.log(1 / delta_2) / gamma) if delta_2 < 1 else 0
    return SelectionBudget(epsilon_tot, delta_tot, gamma, t0, delta, delta_2, epsilon, max_draws)


@dataclass
class SelectionState:
    v_opt: float = -math.inf
    winner: Optional[VariationalPosterior] = None
    winner_id: Optional[int] = None
    draws_used: int = 0
    history: List[tuple] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.winner is not None


@dataclass(frozen=True)
class CandidateScore:
    posterior: VariationalPosterior
    score: float
    valid: bool
    upper_bound: float


def private_validation_score(
    post: VariationalPosterior,
    candidate: HyperCandidate,
    inducing: InducingSet,
    valid: RegressionDataset,
    r_y: float,
    budget: PrivacyBudget,
    rng: np.random.Generator,
    coinpress: Optional[dict] = None,
):
    """``|D2|`` times a zCDP mean estimate of the clipped validation log-likelihoods.

    Returns ``(score, upper_bound)`` where ``upper_bound = |D2| (C + R)``.
    """
    pred = predict(post, candidate.spec, inducing, valid.x, diag_only=True)
    terms = validation_loglik_terms(pred, valid.y, candidate.noise)
    clipped, center, radius = clip_loglik(terms, r_y, candidate.noise)
    cfg = CoinPressConfig(zcdp_from_approx_dp(budget), center, radius, **(coinpress or {}))
    n = len(valid)
    return n * coinpress_mean(clipped, cfg, rng), n * (center + radius)


def evaluate_candidate(
    candidate: HyperCandidate,
    train: RegressionDataset,
    valid: RegressionDataset,
    inducing: InducingSet,
    r_y: float,
    budget: PrivacyBudget,
    rng: np.random.Generator,
    *,
    c: float = 1.0,
    method="auto",
    rho_pd: float = 0.01,
    setup: Optional[MechanismSetup] = None,
    coinpress: Optional[dict] = None,
) -> CandidateScore:
    """One draw of the joint inference-and-evaluation mechanism for a fixed candidate.

    The training split feeds only the private inference and the validation
    split only the private score, so with disjoint splits the draw is
    ``(epsilon, delta)``-DP in the union.
    """
    post = dp_gp_inference(
        train.x, train.y, inducing, candidate.spec, candidate.noise, c, r_y, budget, rng,
        method=method, rho_pd=rho_pd, setup=setup,
    )
    score, upper = private_validation_score(post, candidate, inducing, valid, r_y, budget, rng, coinpress)
    return CandidateScore(post, score, bool(score <= upper), upper)


def select_hyperparameters(
    candidates: Sequence[HyperCandidate],
    train: RegressionDataset,
    valid: RegressionDataset,
    inducing: InducingSet,
    r_y: float,
    sel: SelectionBudget,
    rng: np.random.Generator,
    *,
    c: float = 1.0,
    method="auto",
    rho_pd: float = 0.01,
    coinpress: Optional[dict] = None,
) -> SelectionState:
    """Random-stopping private selection; ``(epsilon_tot, delta_tot)``-DP overall.

    Draws that fail the upper-bound guard, or whose private inference hits a
    non-positive-definite precision, never become the winner. Ties keep the
    earlier winner. If no draw is accepted the state has ``v_opt = -inf`` and
    no winner.
    """
    if not candidates:
        raise ValueError("need at least one candidate")
    budget = sel.per_draw()
    setups: Dict[int, MechanismSetup] = {}
    state = SelectionState()
    for _ in range(sel.max_draws):
        cand = candidates[int(rng.integers(len(candidates)))]
        if cand.id not in setups:
            setups[cand.id] = calibrate_mechanism(cand.spec, inducing, r_y, budget, c, method)
        state.draws_used += 1
        try:
            res = evaluate_candidate(
                cand, train, valid, inducing, r_y, budget, rng,
                c=c, method=method, rho_pd=rho_pd, setup=setups[cand.id], coinpress=coinpress,
            )
        except NotPositiveDefiniteError:
            state.history.append((cand.id, math.nan, False))
            res = None
        if res is not None:
            state.history.append((cand.id, res.score, res.valid))
            if res.valid and res.score > state.v_opt:
                state.v_opt, state.winner, state.winner_id = res.score, res.posterior, cand.id
        if rng.random() < sel.gamma:
            break
    return state
