"""Numerical self-checks run by ``plwk check``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import NoisyObservations, SolverConfig
from ..problems import estimate_tcc_eta
from ..problems.tcc import sample_ball
from ..solver import check_monotonicity, run


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.value:.3e} (threshold {self.threshold:.1e})"


def adjoint_mismatch(problem, n_triples: int = 20, seed: int = 0, radius_fraction: float = 0.25) -> float:
    """Worst relative mismatch of ``<F'(x)h, r>`` against ``<h, F'(x)^* r>``.

    Base points are drawn within ``radius_fraction`` of the domain radius.
    """
    sys = problem.system()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(n_triples):
        i = t % sys.n_equations
        x = sample_ball(sys, radius_fraction * sys.domain_radius, rng)
        h = rng.standard_normal(sys.dim)
        r = rng.standard_normal(sys.apply_forward(i, x).size)
        lhs = sys.data_inner(sys.apply_deriv(i, x, h), r)
        rhs = sys.param_inner(h, sys.apply_adjoint(i, x, r))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return worst


def fd_errors(problem, i: int = 0, seed: int = 0, eps_max: float = 1e-2, eps_min: float = 1e-5):
    """Finite-difference errors ``||(F(x+eh)-F(x))/e - F'(x)h||`` on a halving ladder."""
    sys = problem.system()
    rng = np.random.default_rng(seed)
    x = sample_ball(sys, 0.1 * sys.domain_radius, rng)
    h = rng.standard_normal(sys.dim)
    h /= np.max(np.abs(h))
    fx = sys.apply_forward(i, x)
    dh = sys.apply_deriv(i, x, h)
    eps = []
    e = eps_max
    while e >= eps_min * (1 - 1e-12):
        eps.append(e)
        e /= 2
    eps = np.array(eps)
    errs = np.array([sys.data_norm((sys.apply_forward(i, x + e * h) - fx) / e - dh) for e in eps])
    return eps, errs


def fd_order(problem, i: int = 0, seed: int = 0) -> float:
    eps, errs = fd_errors(problem, i, seed)
    return float(np.polyfit(np.log(eps), np.log(errs), 1)[0])


def self_check(problem, seed: int = 0, tcc_threshold: float = 0.45) -> list:
    v = adjoint_mismatch(problem, seed=seed)
    results = [CheckResult("adjoint identity (rel. error)", v <= 1e-10, v, 1e-10)]
    if problem.name != "linear":
        # a linear map has no Taylor remainder, so the order is undefined there
        v = fd_order(problem, seed=seed)
        results.append(CheckResult("finite-difference order", v >= 0.9, v, 0.9))
    sys = problem.system()
    eta = estimate_tcc_eta(sys, 10, 0.5, np.random.default_rng(seed))
    thr = 1e-12 if problem.name == "linear" else tcc_threshold
    results.append(CheckResult("empirical TCC constant", eta <= thr, eta, thr))
    if problem.name == "linear":
        cfg = SolverConfig(eta=0.0, tau=1.5, max_cycles=20)
        rec = run("PLWK", sys, NoisyObservations.exact(problem.exact_data()), cfg, reference=problem.reference)
        mono = check_monotonicity(rec)
        results.append(CheckResult("monotone error gain (violations)", mono.ok, len(mono.violations), 0))
    return results
