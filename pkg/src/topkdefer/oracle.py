"""Bayes-optimal references and closed-form consistency quantities."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import xlogy

from .costs import CostSpec, complementary_costs, expected_cost_vector
from .errors import ValidationError
from .policy import topk_set
from .surrogate import weighted_comp_sum, weighted_comp_sum_grad


def bayes_top1(expected) -> int:
    """Entity with the smallest expected cost (smallest index on ties)."""
    expected = np.asarray(expected, dtype=np.float64)
    if expected.ndim != 1 or expected.size == 0:
        raise ValidationError("expected cost vector must be a non-empty 1-D array")
    return int(np.argmin(expected))


def bayes_topk(expected, k: int) -> np.ndarray:
    """The ``k`` entities of lowest expected cost, cheapest first."""
    expected = np.asarray(expected, dtype=np.float64)
    N = expected.shape[-1]
    if not 1 <= k <= N:
        raise ValueError(f"k={k} outside 1..{N}")
    return np.argsort(expected, axis=-1, kind="stable")[..., :k]


def exhaustive_topk(expected, k: int) -> tuple[int, ...]:
    """Brute-force minimiser of the summed expected cost over all size-k subsets.

    Returns the lexicographically smallest optimal subset (sorted indices).
    """
    expected = np.asarray(expected, dtype=np.float64)
    best, best_cost = None, math.inf
    for subset in itertools.combinations(range(expected.size), k):
        cost = math.fsum(expected[list(subset)])
        if cost < best_cost:
            best, best_cost = subset, cost
    return best


def tau_bar(expected) -> np.ndarray:
    """Expected complementary costs ``sum_{i != j} cbar_i``."""
    return complementary_costs(expected)


class ConditionalGap(NamedTuple):
    value: float
    degenerate: bool


def _power_sum(t: np.ndarray, q: float) -> float:
    # (sum t^q)^(1/q), scaled by max(t) so large q stays finite
    top = t.max()
    return float(top * np.sum((t / top) ** q) ** (1.0 / q))


def minimizability_gap_conditional(tau_bar_, u: float) -> ConditionalGap:
    """Infimum over free score vectors of ``sum_j tau_bar_j * Phi_u(h, ., j)``.

    ``u = 1``: ``||t||_1 * H(t / ||t||_1)``; ``u = 2``: ``||t||_1 - ||t||_inf``;
    ``u in (1, 2)``: ``(||t||_1 - ||t||_q) / (u - 1)`` with ``q = 1/(2-u)``;
    ``u in [0, 1)``: ``((sum t_j^q)^(2-u) - ||t||_1) / (1 - u)``.
    For ``u > 2`` the inner objective is convex in the softmax probabilities, so
    the infimum sits at a vertex and equals ``(||t||_1 - ||t||_inf) / (u - 1)``.
    """
    t = np.asarray(tau_bar_, dtype=np.float64)
    if t.ndim != 1 or t.size == 0 or np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValidationError("tau_bar must be a non-empty vector of finite non-negative reals")
    u = float(u)
    if not np.isfinite(u) or u < 0:
        raise ValidationError(f"u must be finite and >= 0, got {u}")
    l1 = math.fsum(t)
    if l1 == 0.0:
        return ConditionalGap(0.0, True)
    if u == 1.0:
        p = t / l1
        value = -l1 * float(np.sum(xlogy(p, p)))
    elif u == 2.0:
        value = l1 - float(t.max())
    elif u > 2.0:
        value = (l1 - float(t.max())) / (u - 1.0)
    elif u > 1.0:
        value = (l1 - _power_sum(t, 1.0 / (2.0 - u))) / (u - 1.0)
    else:
        q = 1.0 / (2.0 - u)
        value = (float(np.sum(t ** q)) ** (2.0 - u) - l1) / (1.0 - u)
    return ConditionalGap(max(value, 0.0), False)


def numerical_conditional_infimum(tau_bar_, u: float, restarts: int = 5, seed: int = 0,
                                  gtol: float = 1e-10) -> float:
    """Direct minimisation of the conditional surrogate risk over a free score vector.

    Independent check on :func:`minimizability_gap_conditional`; uses L-BFGS with
    analytic gradients from several random starts and keeps the best value.
    """
    t = np.asarray(tau_bar_, dtype=np.float64)
    rng = np.random.default_rng(seed)

    def fun(h):
        return weighted_comp_sum(h, t, u), weighted_comp_sum_grad(h, t, u)

    best = math.inf
    for r in range(restarts):
        h0 = np.zeros(t.size) if r == 0 else rng.normal(scale=2.0, size=t.size)
        res = minimize(fun, h0, jac=True, method="L-BFGS-B",
                       options={"gtol": gtol, "ftol": 1e-15, "maxiter": 20000})
        best = min(best, float(res.fun))
    return best


_GAMMA_U_SUPPORTED = "u must be 0, 1, 2 or lie in (0, 1)"


def gamma_inverse(v: float, u: float, k: int, N: int) -> float:
    """Inverse consistency transform for comp-sum losses, branch by ``u``.

    The ``u in (0, 1)`` branch is evaluated as
    ``k / (v N^v) * [(((1+v)^(1/(1-v)) + (1-v)^(1/(1-v))) / 2)^(1-v) - 1]``,
    with its limits at ``v = 0`` (0) and ``v = 1`` (``k / N``). This form is not
    monotone in ``v`` for ``N >= 5``; see :func:`gamma_inverse_is_monotone`.
    """
    v = float(v)
    u = float(u)
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"v must lie in [0, 1], got {v}")
    if k < 1 or N < 2:
        raise ValueError("need k >= 1 and N >= 2")
    if u == 0.0:
        return k * (1.0 - math.sqrt(1.0 - v * v))
    if u == 1.0:
        return k * (0.5 * (1 + v) * math.log1p(v) + float(xlogy(0.5 * (1 - v), 1 - v)))
    if u == 2.0:
        return k * v / N
    if 0.0 < u < 1.0:
        if v == 0.0:
            return 0.0
        if v == 1.0:
            return k / N
        la = math.log1p(v) / (1.0 - v)
        lb = math.log1p(-v) / (1.0 - v)
        log_mean = np.logaddexp(la, lb) - math.log(2.0)
        return k / (v * N ** v) * math.expm1((1.0 - v) * log_mean)
    raise ValueError(f"unsupported u={u}: {_GAMMA_U_SUPPORTED}")


def gamma_inverse_is_monotone(u: float, k: int, N: int, grid: int = 1001) -> bool:
    vs = np.linspace(0.0, 1.0, grid)
    vals = np.array([gamma_inverse(v, u, k, N) for v in vs])
    return bool(np.all(np.diff(vals) >= -1e-12))


# --- empirical consistency -------------------------------------------------

@dataclass
class ConsistencyReport:
    ks: list[int]
    agreement: dict[int, float]
    excess_true_risk: dict[int, float]
    surrogate_excess: float
    steps: int
    converged: bool
    final_grad_norm: float
    # tabular scorers realise every score vector, so both gaps are zero here;
    # they are kept so the two signed combinations of the bound can be reported
    true_gap: float = 0.0
    surrogate_gap: float = 0.0
    signed_combinations: dict[str, dict[int, float]] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = []
        for k in self.ks:
            out.append(f"k={k} agreement={self.agreement[k]:.4f} "
                       f"excess_true_risk={self.excess_true_risk[k]:.3e}")
        out.append(f"surrogate_excess={self.surrogate_excess:.3e} steps={self.steps} "
                   f"converged={self.converged} grad_inf={self.final_grad_norm:.2e}")
        return out


def empirical_consistency_check(posteriors, expert_errors, spec: CostSpec,
                                ks: Sequence[int], u: float = 1.0, steps: int = 5000,
                                lr: float = 0.05, seed: int = 0,
                                agreement_threshold: float = 0.99,
                                grad_tol: float = 1e-6,
                                schedule: str = "cosine") -> ConsistencyReport:
    """Fit one free score vector per input by minimising the expected surrogate.

    With exact posteriors the conditional surrogate risk of input ``x`` is
    ``sum_j tau_bar_j(x) Phi_u(h_x, ., j)``; full-batch Adam minimises its mean.
    A cosine-decayed step is the default: at a constant step Adam keeps
    oscillating around the minimiser and can misorder near-tied entities.
    The fitted ``topk_set`` is then compared with :func:`bayes_topk`. Failure to
    converge is reported, not raised.
    """
    from .training import Adam  # avoid an import cycle at module load

    if schedule not in ("constant", "cosine"):
        raise ValidationError(f"unknown schedule {schedule!r}")

    expected = expected_cost_vector(posteriors, expert_errors, spec)
    tb = complementary_costs(expected)
    I, N = tb.shape
    rng = np.random.default_rng(seed)
    params = {"table": rng.normal(scale=0.01, size=(I, N))}
    opt = Adam(lr=lr)
    grad = np.zeros((I, N))
    for step in range(steps):
        grad = weighted_comp_sum_grad(params["table"], tb, u)
        step_lr = lr
        if schedule == "cosine":
            step_lr = 0.5 * lr * (1.0 + math.cos(math.pi * step / steps))
        opt.step(params, {"table": grad / I}, step_lr)
    final = float(np.mean(weighted_comp_sum(params["table"], tb, u)))
    grad_norm = float(np.abs(grad).max())

    scores = params["table"]
    agreement, excess = {}, {}
    for k in ks:
        learned = np.sort(topk_set(scores, k), axis=-1)
        oracle = np.sort(bayes_topk(expected, k), axis=-1)
        agreement[k] = float(np.mean(np.all(learned == oracle, axis=-1)))
        incurred = np.take_along_axis(expected, topk_set(scores, k), axis=-1).sum(axis=-1)
        best = np.take_along_axis(expected, bayes_topk(expected, k), axis=-1).sum(axis=-1)
        excess[k] = float(np.mean(incurred - best))
    infima = np.array([minimizability_gap_conditional(row, u).value for row in tb])
    surrogate_excess = final - float(infima.mean())
    converged = np.isfinite(final) and (
        min(agreement.values()) >= agreement_threshold or grad_norm < grad_tol)
    report = ConsistencyReport(
        ks=list(ks), agreement=agreement, excess_true_risk=excess,
        surrogate_excess=surrogate_excess, steps=steps, converged=bool(converged),
        final_grad_norm=grad_norm,
    )
    report.signed_combinations = {
        "gaps_added": {k: excess[k] + report.true_gap for k in ks},
        "gaps_subtracted": {k: excess[k] - report.true_gap for k in ks},
    }
    return report
