"""Exact dynamic programming on the space of laws of a finite mean-field model.

The value recursion is solved over the tree of laws reachable from the
initial one: every feedback map is enumerated at every node (the infimum over
measurable maps collapses to this enumeration for finite grids), children are
computed with :func:`mfctrl.measure.pushforward`, and values are memoized on
quantized weight keys.

Oracles
-------
* :func:`brute_force_value` minimizes the total lifted cost over all feedback
  map sequences directly, with no value caching.
* :func:`classical_factorization_check` compares against per-state backward
  induction when the model has no mean-field interaction.
* :func:`first_order_check` compares against the pairwise tensor recursion
  when the model declares first-order interactions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .measure import DiscreteMeasure, TabularMap, pushforward
from .model import (
    FiniteMFModel,
    lifted_stage_cost,
    lifted_terminal_cost,
    validate,
)

DEFAULT_NODE_BUDGET = 2_000_000
DEFAULT_ENUMERATION_CAP = 10_000_000


class BudgetExceeded(RuntimeError):
    """Raised when a reachable tree or an enumeration outgrows its budget."""


@dataclass
class ValueNode:
    stage: int
    measure: DiscreteMeasure
    value: float
    argmin_policy: Optional[TabularMap]  # None at the terminal stage


@dataclass
class SolveResult:
    v0: float
    optimal_policy_sequence: list
    reachable_tree_size: int
    value_cache: dict

    def node(self, stage: int, mu: DiscreteMeasure, grid) -> ValueNode:
        return self.value_cache[(stage, mu.key_on_grid(grid))]


def _policies(model: FiniteMFModel):
    """All tabular maps, lexicographic in (state index, action index)."""
    tuples = list(itertools.product(range(model.n_actions), repeat=model.n_states))
    return tuples, [model.tabular_policy(t) for t in tuples]


def solve(model: FiniteMFModel, mu0: DiscreteMeasure,
          node_budget: int = DEFAULT_NODE_BUDGET,
          check_model: bool = True) -> SolveResult:
    """Backward value recursion over the tree of laws reachable from ``mu0``.

    Ties between minimizing maps break toward the lexicographically smallest
    map in (state index, action index) order, so outputs are deterministic.

    Raises
    ------
    BudgetExceeded
        If the number of distinct (stage, law) nodes exceeds ``node_budget``.
    ValueError
        If ``check_model`` and the model fails validation.
    """
    if check_model:
        report = validate(model, extra_measures=[mu0])
        if not report.ok:
            raise ValueError(f"invalid model: {report.summary()}")
    kern = model.transition_kernel()
    n = model.horizon
    _, policies = _policies(model)
    cache: dict = {}

    def value(k: int, mu: DiscreteMeasure) -> ValueNode:
        key = (k, mu.key_on_grid(model.states))
        hit = cache.get(key)
        if hit is not None:
            return hit
        if len(cache) >= node_budget:
            bound = sum(min(len(policies) ** j, node_budget) for j in range(n + 1))
            raise BudgetExceeded(
                f"node budget {node_budget} exceeded; the reachable tree needs more "
                f"(worst-case bound {bound} nodes)")
        if k == n:
            node = ValueNode(k, mu, lifted_terminal_cost(model, mu), None)
        else:
            best = np.inf
            best_policy = None
            for policy in policies:
                child = pushforward(mu, policy, kern, k)
                cand = lifted_stage_cost(model, k, mu, policy) + value(k + 1, child).value
                if cand < best:
                    best = cand
                    best_policy = policy
            node = ValueNode(k, mu, float(best), best_policy)
        cache[key] = node
        return node

    root = value(0, mu0)

    seq = []
    mu = mu0
    for k in range(n):
        node = cache[(k, mu.key_on_grid(model.states))]
        seq.append(node.argmin_policy)
        mu = pushforward(mu, node.argmin_policy, kern, k)
    return SolveResult(
        v0=root.value,
        optimal_policy_sequence=seq,
        reachable_tree_size=len(cache),
        value_cache=cache,
    )


def rollforward(model: FiniteMFModel, mu0: DiscreteMeasure, policy_sequence):
    """Total lifted cost and law trajectory of a feedback-map sequence."""
    if len(policy_sequence) != model.horizon:
        raise ValueError(
            f"need {model.horizon} maps, got {len(policy_sequence)}")
    kern = model.transition_kernel()
    mu = mu0
    trajectory = [mu]
    total = 0.0
    for k, policy in enumerate(policy_sequence):
        total += lifted_stage_cost(model, k, mu, policy)
        mu = pushforward(mu, policy, kern, k)
        trajectory.append(mu)
    total += lifted_terminal_cost(model, mu)
    return float(total), trajectory


def brute_force_value(model: FiniteMFModel, mu0: DiscreteMeasure,
                      cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Exact minimum of the lifted cost over all feedback-map sequences.

    Enumerates the full ``M^(S*n)`` product with no caching, so it is an
    oracle independent of :func:`solve`.
    """
    n = model.horizon
    count = model.n_actions ** (model.n_states * n)
    if count > cap:
        raise BudgetExceeded(
            f"{count} policy sequences exceed the enumeration cap {cap}")
    _, policies = _policies(model)
    best = np.inf
    for seq in itertools.product(policies, repeat=n):
        cost, _ = rollforward(model, mu0, list(seq))
        if cost < best:
            best = cost
    return float(best)


# ---------------------------------------------------------------------------
# No-interaction factorization
# ---------------------------------------------------------------------------

@dataclass
class FactorizationReport:
    max_discrepancy: float
    per_stage: dict
    state_values: np.ndarray      # per-state backward table, shape (n+1, S)
    tree_size: int


def classical_state_values(model: FiniteMFModel) -> np.ndarray:
    """Per-state backward induction table for a model with no interaction."""
    if not model.mean_field_free:
        raise ValueError("model does not declare mean_field_free; refusing")
    S, M, n = model.n_states, model.n_actions, model.horizon
    # the callables ignore the measure arguments; any valid laws will do
    mu = DiscreteMeasure.uniform(model.states)
    lam = DiscreteMeasure.uniform(model.actions)
    table = np.zeros((n + 1, S))
    for i in range(S):
        table[n, i] = model.terminal_cost(i, mu)
    for k in range(n - 1, -1, -1):
        for i in range(S):
            best = np.inf
            for a in range(M):
                row = np.asarray(model.kernel(k, i, mu, a, lam), dtype=float)
                cand = model.stage_cost(k, i, mu, a, lam) + row @ table[k + 1]
                best = min(best, cand)
            table[k, i] = best
    return table


def classical_factorization_check(model: FiniteMFModel, mu0: DiscreteMeasure,
                                  node_budget: int = DEFAULT_NODE_BUDGET) -> FactorizationReport:
    """Compare measure-space values with the integrated per-state table.

    For every reachable node ``(k, mu)`` the report records
    ``|v_k(mu) - sum_i w_i vtable_k(x_i)|``; both sides vanish together only
    when the model has no mean-field interaction, which the model must
    declare (via ``mean_field_free``) for this check to run.
    """
    table = classical_state_values(model)
    result = solve(model, mu0, node_budget=node_budget)
    per_stage: dict = {}
    worst = 0.0
    for (k, _key), node in result.value_cache.items():
        w = node.measure.weights_on_grid(model.states)
        disc = abs(node.value - float(w @ table[k]))
        per_stage[k] = max(per_stage.get(k, 0.0), disc)
        worst = max(worst, disc)
    return FactorizationReport(worst, per_stage, table, result.reachable_tree_size)


# ---------------------------------------------------------------------------
# First-order interactions
# ---------------------------------------------------------------------------

@dataclass
class FirstOrderReport:
    max_discrepancy: float
    per_stage: dict
    tree_size: int


def _first_order_guard(model: FiniteMFModel, max_states: int, max_horizon: int,
                       max_entries: int):
    if model.first_order is None:
        raise ValueError("model does not declare a first-order decomposition; refusing")
    S, n = model.n_states, model.horizon
    if S > max_states or n > max_horizon:
        raise BudgetExceeded(
            f"first-order tensors limited to S <= {max_states}, n <= {max_horizon}; "
            f"got S={S}, n={n}")
    entries = S ** (2 ** (n + 1))
    if entries > max_entries:
        raise BudgetExceeded(
            f"stage-0 tensor would hold {entries} entries (cap {max_entries})")


def first_order_value_tensors(model: FiniteMFModel, max_states: int = 3,
                              max_horizon: int = 3,
                              max_entries: int = 1_000_000) -> list:
    """All pairwise value tensors, index ``k`` of the list holding stage ``k``.

    The stage-``k`` tensor has ``2**(n-k+1)`` axes of length ``S``; axes are
    ordered ``(x_1..x_p, y_1..y_p)``.  Each entry minimizes, over all tabular
    maps, the pairwise stage cost of the leading pair plus the contraction of
    the next tensor with one pairwise kernel row per axis.
    """
    _first_order_guard(model, max_states, max_horizon, max_entries)
    fo = model.first_order
    S, M, n = model.n_states, model.n_actions, model.horizon
    maps = list(itertools.product(range(M), repeat=S))

    terminal = np.array([[fo.gtilde(ix, iy) for iy in range(S)] for ix in range(S)])
    tensors = [None] * (n + 1)
    tensors[n] = terminal
    for k in range(n - 1, -1, -1):
        vnext = tensors[k + 1]
        pairs = vnext.ndim
        per_map = []
        for m in maps:
            kern = np.array([[fo.ptilde(k, ix, iy, m[ix], m[iy]) for iy in range(S)]
                             for ix in range(S)])            # (x, y, x')
            fmat = np.array([[fo.ftilde(k, ix, iy, m[ix], m[iy]) for iy in range(S)]
                             for ix in range(S)])            # (x1, y1)
            res = vnext
            for _ in range(pairs):
                # contract the leading next-state axis; appends (x_i, y_i) axes
                res = np.tensordot(res, kern, axes=([0], [2]))
            res = res + fmat.reshape((S, S) + (1,) * (2 * pairs - 2))
            per_map.append(res)
        interleaved = np.min(np.stack(per_map), axis=0)
        perm = list(range(0, 2 * pairs, 2)) + list(range(1, 2 * pairs, 2))
        tensors[k] = np.transpose(interleaved, perm)
    return tensors


def first_order_value_tensor(model: FiniteMFModel, stage: int, **kwargs) -> np.ndarray:
    """Pairwise value tensor at one stage (see :func:`first_order_value_tensors`)."""
    if not 0 <= stage <= model.horizon:
        raise ValueError(f"stage {stage} out of range [0, {model.horizon}]")
    return first_order_value_tensors(model, **kwargs)[stage]


def _integrate_tensor(tensor: np.ndarray, weights: np.ndarray) -> float:
    res = tensor
    while res.ndim > 0:
        res = np.tensordot(res, weights, axes=([res.ndim - 1], [0]))
    return float(res)


def first_order_check(model: FiniteMFModel, mu0: DiscreteMeasure,
                      node_budget: int = DEFAULT_NODE_BUDGET, **kwargs) -> FirstOrderReport:
    """Compare measure-space values against product-measure tensor integrals.

    For every reachable node ``(k, mu)``, records
    ``|v_k(mu) - <vtensor_k, mu tensorized over all axes>|``.
    """
    tensors = first_order_value_tensors(model, **kwargs)
    result = solve(model, mu0, node_budget=node_budget)
    per_stage: dict = {}
    worst = 0.0
    for (k, _key), node in result.value_cache.items():
        w = node.measure.weights_on_grid(model.states)
        disc = abs(node.value - _integrate_tensor(tensors[k], w))
        per_stage[k] = max(per_stage.get(k, 0.0), disc)
        worst = max(worst, disc)
    return FirstOrderReport(worst, per_stage, result.reachable_tree_size)
