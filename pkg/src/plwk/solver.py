"""Iteration drivers for PLWK, PLWKr and the Landweber-Kaczmarz baselines."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    CycleRow,
    IterationState,
    NoisyObservations,
    OperatorSystem,
    PLWKError,
    RunRecord,
    SolverConfig,
    StepRecord,
    validate_config,
)
from .stepkernel import _finish, compute_omega, plwk_step

log = logging.getLogger(__name__)

METHODS = ("PLWK", "PLWKr", "LWK", "LWKls")

LWK_DEFAULT_MU_SCALE = 0.9
LWKLS_DEFAULT_CAP_SCALE = 1e4


class DegenerateDirection(PLWKError):
    pass


@dataclass(frozen=True)
class Method:
    """Which step rule to run.

    ``mu`` is the fixed LWK step (default ``0.9 / C**2``); ``ls_cap`` bounds
    the LWKls step length (default ``1e4 / C**2``).
    """

    tag: str = "PLWK"
    mu: Optional[float] = None
    ls_cap: Optional[float] = None

    def __post_init__(self):
        if self.tag not in METHODS:
            raise ValueError(f"unknown method {self.tag!r}; choose from {', '.join(METHODS)}")

    def resolved(self, sys: OperatorSystem) -> "Method":
        C2 = sys.derivative_bound**2
        mu = self.mu if self.mu is not None else LWK_DEFAULT_MU_SCALE / C2
        cap = self.ls_cap if self.ls_cap is not None else LWKLS_DEFAULT_CAP_SCALE / C2
        return dataclasses.replace(self, mu=mu, ls_cap=cap)


def cycle_permutation(seed: int, cycle: int, n: int) -> np.ndarray:
    """Shuffled equation order for one cycle.

    Each cycle gets an independent generator keyed by ``(seed, cycle)`` so the
    order of any cycle can be reproduced without replaying earlier ones.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5EED, cycle)))
    return rng.permutation(n)


def select_index(policy: str, k: int, n: int, seed: int = 0) -> int:
    if n < 1:
        raise ValueError("need at least one equation")
    if policy == "cyclic":
        return k % n
    if policy == "randomized":
        return int(cycle_permutation(seed, k // n, n)[k % n])
    raise ValueError(f"unknown index policy {policy!r}")


def lwk_step(sys, state, obs, cfg, i, mu: float, residual=None):
    x = state.x
    solves = 0
    if residual is None:
        residual = sys.apply_forward(i, x) - obs.data[i]
        solves += 1
    rn = sys.data_norm(residual)
    if compute_omega(rn, obs.noise_levels[i], cfg.tau) == 0:
        return x, StepRecord(state.k, i, rn, 0, 1.0, 0.0, 0.0, pde_solves=solves)
    g = sys.apply_adjoint(i, x, residual)
    solves += 1
    x_new = x - mu * g
    _finish(sys, x, x_new)
    return x_new, StepRecord(state.k, i, rn, 1, 1.0, mu, sys.param_norm(x_new - x),
                             grad_norm=sys.param_norm(g), pde_solves=solves)


def line_search_length(sys, i, x, residual, direction) -> tuple:
    """Exact minimizer of ``s -> ||r + s F_i'(x) d||^2``; returns ``(s, F_i'(x) d)``."""
    jd = sys.apply_deriv(i, x, direction)
    jj = sys.data_inner(jd, jd)
    if jj == 0:
        raise DegenerateDirection(f"derivative annihilates the descent direction for equation {i}")
    return -sys.data_inner(residual, jd) / jj, jd


def lwkls_step(sys, state, obs, cfg, i, cap: float, residual=None):
    x = state.x
    solves = 0
    if residual is None:
        residual = sys.apply_forward(i, x) - obs.data[i]
        solves += 1
    rn = sys.data_norm(residual)
    if compute_omega(rn, obs.noise_levels[i], cfg.tau) == 0:
        return x, StepRecord(state.k, i, rn, 0, 1.0, 0.0, 0.0, pde_solves=solves)
    d = -sys.apply_adjoint(i, x, residual)
    s, _ = line_search_length(sys, i, x, residual, d)
    solves += 2
    s = min(s, cap)
    x_new = x + s * d
    _finish(sys, x, x_new)
    return x_new, StepRecord(state.k, i, rn, 1, 1.0, s, sys.param_norm(x_new - x),
                             grad_norm=sys.param_norm(d), pde_solves=solves)


def _residual_norms(sys, x, data) -> np.ndarray:
    return np.array([sys.data_norm(sys.apply_forward(i, x) - data[i]) for i in range(sys.n_equations)])


def run(method: Method | str, sys: OperatorSystem, obs: NoisyObservations, cfg: SolverConfig,
        reference: Optional[np.ndarray] = None, exact_data: Optional[Sequence] = None) -> RunRecord:
    """Iterate from the domain center until the discrepancy stop or a safety cap.

    Per-cycle rows are evaluated at ``x_{cN}``; residual columns use
    ``exact_data`` when supplied and the noisy observations otherwise.
    """
    if isinstance(method, str):
        method = Method(method)
    method = method.resolved(sys)
    if method.tag == "PLWKr":
        cfg = dataclasses.replace(cfg, index_policy="randomized")
    validate_config(cfg, sys)
    n = sys.n_equations
    if len(obs) != n:
        raise ValueError(f"{len(obs)} observations for {n} equations")
    diag_data = obs.data if exact_data is None else exact_data

    x = sys.domain_center.copy()
    steps: list = []
    errors = [] if reference is None else [sys.param_norm(reference - x)]
    cycles: list = []
    cum_solves = 0

    def row(c, skipped):
        res = _residual_norms(sys, x, diag_data)
        err = float("nan") if reference is None else sys.param_norm(reference - x)
        cycles.append(CycleRow(c, err, float(res.sum()), float(res.max()), skipped, cum_solves))

    row(0, 0)
    stop_reason = "max_cycles"
    stop_index = None
    for c in range(cfg.max_cycles):
        skipped = 0
        for j in range(n):
            k = c * n + j
            i = select_index(cfg.index_policy, k, n, cfg.rng_seed)
            state = IterationState(x, k, i)
            if method.tag in ("PLWK", "PLWKr"):
                x, rec = plwk_step(sys, state, obs, cfg, i)
            elif method.tag == "LWK":
                x, rec = lwk_step(sys, state, obs, cfg, i, method.mu)
            else:
                x, rec = lwkls_step(sys, state, obs, cfg, i, method.ls_cap)
            steps.append(rec)
            cum_solves += rec.pde_solves
            skipped += 1 - rec.omega
            if reference is not None:
                errors.append(sys.param_norm(reference - x))
        row(c + 1, skipped)
        if skipped == n:
            stop_reason, stop_index = "converged", c * n
            break
        if cfg.residual_floor is not None and _residual_norms(sys, x, obs.data).sum() < cfg.residual_floor:
            stop_reason, stop_index = "residual_floor", (c + 1) * n
            break
    else:
        stop_index = cfg.max_cycles * n
    log.debug("%s stopped (%s) at k=%s", method.tag, stop_reason, stop_index)

    return RunRecord(
        method=method.tag,
        steps=steps,
        cycles=cycles,
        stop_index=stop_index,
        stop_reason=stop_reason,
        x_final=x,
        step_errors=None if reference is None else np.array(errors),
        initial_error=None if reference is None else errors[0],
        eta=cfg.eta,
        n_equations=n,
        metadata={"mu": method.mu, "ls_cap": method.ls_cap, "exact_data": obs.is_exact,
                  "index_policy": cfg.index_policy, "theta_bounds": cfg.theta.bounds},
    )


@dataclass
class CheckReport:
    name: str
    n_checked: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def first_violation(self):
        return self.violations[0] if self.violations else None

    def __str__(self):
        status = "ok" if self.ok else f"{len(self.violations)} violation(s), first at k={self.first_violation[0]}"
        return f"{self.name}: {self.n_checked} checked, {status}"


def check_monotonicity(record: RunRecord, rel_slack: float = 1e-10) -> CheckReport:
    """Verify the squared-error gain of each active step against the reference.

    Violations are reported, never raised: they indicate that the configured
    eta does not dominate the operator's actual nonlinearity.
    """
    if record.step_errors is None:
        raise ValueError("run was made without a reference solution")
    rep = CheckReport("monotonicity")
    e = record.step_errors
    for rec in record.steps:
        if rec.omega == 0 or rec.grad_norm == 0:
            continue
        rep.n_checked += 1
        gain = rec.theta * (2 - rec.theta) * (rec.p_value / rec.grad_norm) ** 2
        before = e[rec.k] ** 2
        after = e[rec.k + 1] ** 2
        if after + gain > before + rel_slack * before:
            rep.violations.append((rec.k, after + gain, before))
    return rep


def check_summability(record: RunRecord, cfg: SolverConfig, rel_slack: float = 1e-10) -> CheckReport:
    """Prefix-sum bounds on ``sum lambda_k ||F||^2`` and ``sum ||x_{k+1} - x_k||^2`` for exact data."""
    if record.initial_error is None:
        raise ValueError("run was made without a reference solution")
    if not record.metadata.get("exact_data", True):
        raise ValueError("summability bounds apply to exact-data runs only")
    a, b = cfg.theta.bounds
    bound = record.initial_error**2 / (a * (2 - b) * (1 - cfg.eta))
    rep = CheckReport("summability")
    s_lam = 0.0
    s_step = 0.0
    for rec in record.steps:
        s_lam += rec.lam * rec.residual_norm**2
        s_step += rec.step_norm**2
        rep.n_checked += 1
        if s_lam > bound * (1 + rel_slack):
            rep.violations.append((rec.k, "lambda-sum", s_lam, bound))
        if s_step > 4 * s_lam * (1 + rel_slack) + 1e-300:
            rep.violations.append((rec.k, "step-sum", s_step, 4 * s_lam))
    return rep
