"""Linear block system ``A_i x = y_i``: the tangential cone condition holds with eta = 0."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np

from ..core import OperatorSystem
from .base import power_iteration


@dataclass(frozen=True)
class LinearConfig:
    n_blocks: int = 6
    n_unknowns: int = 40
    rows_per_block: int = 8
    cond: float = 1e3
    seed: int = 0
    radius_factor: float = 3.0

    def to_dict(self) -> dict:
        return asdict(self)


class LinearBlockProblem:
    """Row blocks of a matrix with prescribed singular value decay.

    The stacked matrix is ``U diag(s) V^T`` with ``s`` geometric from 1 to
    ``1/cond``; its rows are dealt out into ``n_blocks`` consecutive blocks.
    The true solution is a random unit-variance vector.
    """

    name = "linear"

    def __init__(self, config: LinearConfig | None = None, blocks=None, true_solution=None):
        self.config = config or LinearConfig()
        c = self.config
        if blocks is None:
            rng = np.random.default_rng(np.random.SeedSequence(c.seed, spawn_key=(101,)))
            m = c.n_blocks * c.rows_per_block
            r = min(m, c.n_unknowns)
            U, _ = np.linalg.qr(rng.standard_normal((m, r)))
            V, _ = np.linalg.qr(rng.standard_normal((c.n_unknowns, r)))
            s = np.geomspace(1.0, 1.0 / c.cond, r)
            A = (U * s) @ V.T
            blocks = np.split(A, c.n_blocks)
            true_solution = rng.standard_normal(c.n_unknowns)
        self.blocks = tuple(np.array(b, dtype=float) for b in blocks)
        self.reference = np.asarray(true_solution, dtype=float)
        self.n_equations = len(self.blocks)

    @property
    def dim(self) -> int:
        return self.reference.size

    def initial_guess(self) -> np.ndarray:
        return np.zeros(self.dim)

    def exact_data(self) -> list:
        return [A @ self.reference for A in self.blocks]

    @cached_property
    def derivative_bound(self) -> float:
        rng = np.random.default_rng(np.random.SeedSequence(self.config.seed, spawn_key=(102,)))
        est = max(
            power_iteration(lambda v, A=A: A.T @ (A @ v), self.dim, np.linalg.norm, rng, iters=5000, tol=1e-15)
            for A in self.blocks
        )
        # power iteration approaches sigma_max from below
        return est * (1 + 1e-8)

    @cached_property
    def _system(self) -> OperatorSystem:
        x0 = self.initial_guess()
        rho = self.config.radius_factor * float(np.linalg.norm(self.reference - x0))
        blocks = self.blocks
        return OperatorSystem(
            n_equations=self.n_equations,
            domain_center=x0,
            domain_radius=rho,
            derivative_bound=self.derivative_bound,
            forward=lambda i, x: blocks[i] @ x,
            deriv=lambda i, x, h: blocks[i] @ h,
            adjoint=lambda i, x, r: blocks[i].T @ r,
            name=self.name,
        )

    def system(self) -> OperatorSystem:
        return self._system
