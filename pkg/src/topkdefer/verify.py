"""Randomised theory checks run by ``topkdefer verify``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cardinality import CardinalityContext
from .errors import ValidationError
from .oracle import (bayes_topk, exhaustive_topk, minimizability_gap_conditional,
                     numerical_conditional_infimum)
from .policy import full_ranking
from .surrogate import (cardinality_surrogate, cardinality_surrogate_grad, deferral_surrogate,
                        deferral_surrogate_grad, topk_true_loss, upper_bound_rhs)

FAULTS = ("none", "cost-perturbation")


@dataclass(frozen=True)
class CheckResult:
    name: str
    cases: int
    failures: int
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.cases - self.failures}/{self.cases} {self.detail}".rstrip()


def random_instance(rng: np.random.Generator, min_experts: int = 1):
    """Random ``(h, costs, k)`` with ``n <= 8`` labels and ``min_experts <= J <= 6`` experts."""
    n = int(rng.integers(1, 9))
    J = int(rng.integers(min_experts, 7))
    N = n + J
    if N < 2:
        N, J = 2, 2 - n
    h = rng.normal(scale=3.0, size=N)
    costs = rng.uniform(0.0, 1.0, size=N)
    k = int(rng.integers(1, N + 1))
    return h, costs, k


def check_upper_bound(rng, cases: int = 1000, u: float = 1.0, fault: str = "none") -> CheckResult:
    """Top-k true loss never exceeds the k-independent surrogate's upper bound."""
    failures, worst = 0, -np.inf
    for _ in range(cases):
        h, costs, k = random_instance(rng)
        rhs_costs = costs
        if fault == "cost-perturbation":
            # the bound is fed costs that under-report the chosen entities
            rhs_costs = costs.copy()
            rhs_costs[full_ranking(h)[:k]] = 0.0
        gap = topk_true_loss(h, costs, k) - upper_bound_rhs(h, rhs_costs, k, u)
        worst = max(worst, gap)
        failures += gap > 1e-9
    return CheckResult("upper-bound", cases, failures, f"max(loss - rhs)={worst:.3e}")


def check_limit_cases(rng, cases: int = 100) -> CheckResult:
    failures = 0
    for _ in range(cases):
        h, costs, _ = random_instance(rng)
        failures += topk_true_loss(h, costs, 1) != costs[int(np.argmax(h))]
        failures += topk_true_loss(h, costs, h.size) != float(costs[full_ranking(h)].sum())
    return CheckResult("limit-cases", 2 * cases, int(failures))


def check_oracle_equivalence(rng, cases: int = 500, max_n: int = 10) -> CheckResult:
    failures = total = 0
    for _ in range(cases):
        N = int(rng.integers(1, max_n + 1))
        expected = rng.uniform(0.0, 2.0, size=N)
        for k in range(1, N + 1):
            total += 1
            failures += tuple(sorted(bayes_topk(expected, k).tolist())) != exhaustive_topk(expected, k)
    return CheckResult("bayes-oracle", total, failures)


def check_gap_formulas(rng, cases: int = 50, us=(0.5, 1.0, 1.5, 2.0), atol: float = 1e-4) -> CheckResult:
    failures = total = 0
    worst = 0.0
    for u in us:
        for _ in range(cases):
            t = rng.uniform(0.0, 3.0, size=int(rng.integers(2, 7)))
            closed = minimizability_gap_conditional(t, u).value
            numeric = numerical_conditional_infimum(t, u, restarts=3, seed=int(rng.integers(1 << 31)))
            err = abs(closed - numeric)
            worst = max(worst, err)
            total += 1
            failures += err > atol
    return CheckResult("gap-closed-form", total, failures, f"max|closed - numeric|={worst:.2e}")


def _central_diff(f, x, eps: float = 1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def relative_error(a, b) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


def check_gradients(rng, cases: int = 100, us=(0.5, 1.0, 2.0), rtol: float = 1e-5) -> CheckResult:
    failures = total = 0
    worst = 0.0
    for u in us:
        for _ in range(cases):
            h, costs, _ = random_instance(rng)
            h = h / 3.0
            fd = _central_diff(lambda z: deferral_surrogate(z, costs, u), h)
            err = relative_error(deferral_surrogate_grad(h, costs, u), fd)

            n = int(rng.integers(2, 6))
            J = h.size - n if h.size > n else 1
            N = n + J
            hh = rng.normal(size=N)
            agents = np.concatenate([np.arange(n), rng.integers(0, n, size=J)])
            ctx = CardinalityContext(str(rng.choice(["top-k", "majority-vote", "weighted-vote"])),
                                     float(rng.uniform(0, 3)), np.r_[np.zeros(n), rng.uniform(0, .1, J)], n)
            y = int(rng.integers(n))
            rank = full_ranking(hh)
            r = rng.normal(size=N)
            fd = _central_diff(lambda z: cardinality_surrogate(rank, z, y, agents, ctx, hh, u), r)
            err = max(err, relative_error(cardinality_surrogate_grad(rank, r, y, agents, ctx, hh, u), fd))
            worst = max(worst, err)
            total += 1
            failures += err > rtol
    return CheckResult("gradients", total, failures, f"max rel err={worst:.2e}")


def run_all(seed: int = 0, fault: str = "none", u: float = 1.0) -> list[CheckResult]:
    if fault not in FAULTS:
        raise ValidationError(f"unknown fault {fault!r}; expected one of {FAULTS}")
    rng = np.random.default_rng(seed)
    return [
        check_upper_bound(rng, u=u, fault=fault),
        check_limit_cases(rng),
        check_oracle_equivalence(rng),
        check_gap_formulas(rng),
        check_gradients(rng),
    ]
