"""Coefficient identification from Dirichlet-to-Neumann data on the unit square.

The forward map sends the interior values of a positive coefficient ``gamma``
to the boundary co-normal fluxes ``gamma du/dnu`` of the solutions of
``-div(gamma grad u) = 0`` for a fixed family of Dirichlet data. The PDE is
discretized by the 5-point stencil on a uniform grid with harmonic averaging
of ``gamma`` across each edge. Boundary values of ``gamma`` are known and held
fixed; only interior nodes are unknowns.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..core import OperatorSystem, PLWKError, SolveFailed
from .base import power_iteration


class GammaOutOfBounds(PLWKError):
    pass


@dataclass(frozen=True)
class Bump:
    cx: float
    cy: float
    amplitude: float
    radius: float


DEFAULT_BUMPS = (Bump(0.35, 0.40, 2.0, 0.15), Bump(0.65, 0.62, 2.0, 0.15))


@dataclass(frozen=True)
class EllipticConfig:
    n: int = 31
    n_experiments: int = 12
    gamma_min: float = 0.1
    gamma_max: float = 10.0
    background: float = 1.0
    bumps: tuple = DEFAULT_BUMPS
    param_norm: str = "h1"
    data_refinement: int = 2
    radius_factor: float = 3.0
    bound_safety: float = 1.25
    seed: int = 0

    def __post_init__(self):
        bumps = tuple(b if isinstance(b, Bump) else Bump(*b) if not isinstance(b, dict) else Bump(**b)
                      for b in self.bumps)
        object.__setattr__(self, "bumps", bumps)
        if self.param_norm not in ("l2", "h1"):
            raise ValueError(f"param_norm must be 'l2' or 'h1', got {self.param_norm!r}")
        if self.n < 3:
            raise ValueError("grid needs at least 3 interior nodes per side")
        if self.data_refinement < 1:
            raise ValueError("data_refinement must be >= 1")
        if not 0 < self.gamma_min < self.gamma_max:
            raise ValueError("need 0 < gamma_min < gamma_max")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bumps"] = [asdict(b) for b in self.bumps]
        return d

    def true_gamma(self, x, y):
        g = np.full(np.broadcast(x, y).shape, self.background, dtype=float)
        for b in self.bumps:
            g = g + b.amplitude * np.exp(-((x - b.cx) ** 2 + (y - b.cy) ** 2) / b.radius**2)
        return g


def arc_length(px, py):
    """Counterclockwise arc length from (0, 0) to a point on the unit square's boundary."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    s = np.full(np.broadcast(px, py).shape, np.nan)
    bottom = (py == 0) & (px < 1)
    right = (px == 1) & (py < 1)
    top = (py == 1) & (px > 0)
    left = (px == 0) & (py > 0)
    s = np.where(left, 4 - py, s)
    s = np.where(top, 3 - px, s)
    s = np.where(right, 1 + py, s)
    s = np.where(bottom, px, s)
    if np.any(np.isnan(s)):
        raise ValueError("point not on the boundary of the unit square")
    return s


def boundary_profile(i: int, positions, n_experiments: int = 12) -> np.ndarray:
    """Dirichlet datum ``U_i`` at boundary points ``positions`` (shape ``(m, 2)``).

    Even indices are ``sin(s (j+1) pi / 2)``, odd ones the cosine, ``j = i // 2``.
    """
    if not 0 <= i < n_experiments:
        raise IndexError(f"experiment index {i} out of range 0..{n_experiments - 1}")
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    s = arc_length(positions[:, 0], positions[:, 1])
    freq = (i // 2 + 1) * np.pi / 2
    return np.sin(s * freq) if i % 2 == 0 else np.cos(s * freq)


class Grid:
    """Node numbering, edges and flux stencils of the ``(n+2) x (n+2)`` grid."""

    def __init__(self, n: int):
        self.n = n
        self.h = 1.0 / (n + 1)
        m = n + 2
        self.m = m
        idx = np.arange(m * m).reshape(m, m)  # idx[a, b]: node at (a h, b h)
        self.idx = idx
        coords = np.arange(m) * self.h
        self.X, self.Y = np.meshgrid(coords, coords, indexing="ij")
        self.x = self.X.ravel()
        self.y = self.Y.ravel()
        interior = np.zeros((m, m), dtype=bool)
        interior[1:-1, 1:-1] = True
        self.interior_mask = interior.ravel()
        self.interior = idx[1:-1, 1:-1].ravel()
        self.boundary = np.flatnonzero(~self.interior_mask)
        # node -> parameter index (interior nodes only)
        self.param_of = np.full(m * m, -1)
        self.param_of[self.interior] = np.arange(self.interior.size)

        p = np.concatenate([idx[:-1, :].ravel(), idx[:, :-1].ravel()])
        q = np.concatenate([idx[1:, :].ravel(), idx[:, 1:].ravel()])
        keep = self.interior_mask[p] | self.interior_mask[q]
        self.ep, self.eq = p[keep], q[keep]
        ne = self.ep.size
        rows = np.repeat(np.arange(ne), 2)
        cols = np.column_stack([self.ep, self.eq]).ravel()
        vals = np.tile([1.0, -1.0], ne)
        self.incidence = sp.csr_matrix((vals, (rows, cols)), shape=(ne, m * m))

        # measurement nodes, counterclockwise from (0,0), corners excluded
        r = np.arange(1, n + 1)
        self.meas = np.concatenate([idx[r, 0], idx[m - 1, r], idx[r[::-1], m - 1], idx[0, r[::-1]]])
        self.meas_pos = np.column_stack([self.x[self.meas], self.y[self.meas]])
        self.flux_stencil = self._flux_stencil()

        ip = self.param_of[self.ep]
        iq = self.param_of[self.eq]
        self._ip_mask = ip >= 0
        self._iq_mask = iq >= 0
        self._ip = ip
        self._iq = iq

    def _flux_stencil(self) -> sp.csr_matrix:
        """One-sided second-order outward normal derivative at measurement nodes."""
        n, m, idx, h = self.n, self.m, self.idx, self.h
        r = np.arange(1, n + 1)
        # (node, first inward neighbour, second inward neighbour) per side
        sides = [
            (idx[r, 0], idx[r, 1], idx[r, 2]),
            (idx[m - 1, r], idx[m - 2, r], idx[m - 3, r]),
            (idx[r[::-1], m - 1], idx[r[::-1], m - 2], idx[r[::-1], m - 3]),
            (idx[0, r[::-1]], idx[1, r[::-1]], idx[2, r[::-1]]),
        ]
        b0 = np.concatenate([s[0] for s in sides])
        b1 = np.concatenate([s[1] for s in sides])
        b2 = np.concatenate([s[2] for s in sides])
        k = np.arange(b0.size)
        rows = np.concatenate([k, k, k])
        cols = np.concatenate([b0, b1, b2])
        vals = np.concatenate([np.full(k.size, 3.0), np.full(k.size, -4.0), np.full(k.size, 1.0)]) / (2 * h)
        return sp.csr_matrix((vals, (rows, cols)), shape=(b0.size, m * m))

    def stiffness(self, gamma_full: np.ndarray):
        """Edge conductances and the full stiffness matrix for ``gamma_full``."""
        gp = gamma_full[self.ep]
        gq = gamma_full[self.eq]
        c = 2 * gp * gq / (gp + gq)
        D = self.incidence
        K = (D.T @ sp.diags(c) @ D).tocsr()
        return c, gp, gq, K

    def neumann_laplacian(self) -> sp.csr_matrix:
        """Graph Laplacian over the interior grid divided by ``h^2``."""
        inner_edges = self._ip_mask & self._iq_mask
        ip, iq = self._ip[inner_edges], self._iq[inner_edges]
        npar = self.interior.size
        ne = ip.size
        rows = np.repeat(np.arange(ne), 2)
        cols = np.column_stack([ip, iq]).ravel()
        vals = np.tile([1.0, -1.0], ne)
        D = sp.csr_matrix((vals, (rows, cols)), shape=(ne, npar))
        return (D.T @ D).tocsr() / self.h**2


class _State:
    __slots__ = ("gamma_full", "c", "dcp", "dcq", "lu", "K_IB", "K_II", "u")

    def __init__(self):
        self.u = {}


class EllipticProblem:
    """Discrete Dirichlet-to-Neumann coefficient identification problem."""

    name = "elliptic"

    def __init__(self, config: EllipticConfig | None = None):
        self.config = config or EllipticConfig()
        c = self.config
        self.grid = Grid(c.n)
        self.n_equations = c.n_experiments
        g = self.grid
        self.gamma_boundary = c.true_gamma(g.x, g.y)[g.boundary]
        self.reference = c.true_gamma(g.x, g.y)[g.interior]
        self.dirichlet = [boundary_profile(i, np.column_stack([g.x[g.boundary], g.y[g.boundary]]), c.n_experiments)
                          for i in range(c.n_experiments)]
        self.data_weight = g.h
        self.param_weight = g.h**2
        npar = g.interior.size
        if c.param_norm == "h1":
            self.gram = (sp.identity(npar, format="csr") + g.neumann_laplacian()).tocsc()
            self._gram_lu = spla.splu(self.gram)
        else:
            self.gram = None
            self._gram_lu = None
        self._cache: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    # ---- geometry -------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.grid.interior.size

    def param_inner(self, a, b) -> float:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.gram is None:
            return float(self.param_weight * (a @ b))
        return float(self.param_weight * (a @ (self.gram @ b)))

    def data_inner(self, a, b) -> float:
        return float(self.data_weight * (np.asarray(a, dtype=float) @ np.asarray(b, dtype=float)))

    def _riesz(self, v: np.ndarray) -> np.ndarray:
        """Map a Euclidean gradient to the gradient in the parameter geometry."""
        v = (self.data_weight / self.param_weight) * v
        if self._gram_lu is None:
            return v
        return self._gram_lu.solve(v)

    # ---- forward machinery ---------------------------------------------
    def full_gamma(self, gamma: np.ndarray) -> np.ndarray:
        g = self.grid
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (g.interior.size,):
            raise ValueError(f"gamma must have {g.interior.size} entries")
        lo, hi = self.config.gamma_min, self.config.gamma_max
        if np.any(gamma < lo) or np.any(gamma > hi) or not np.all(np.isfinite(gamma)):
            raise GammaOutOfBounds(
                f"gamma range [{np.nanmin(gamma):.4g}, {np.nanmax(gamma):.4g}] violates bounds [{lo}, {hi}]"
            )
        full = np.empty(g.m * g.m)
        full[g.interior] = gamma
        full[g.boundary] = self.gamma_boundary
        return full

    def _state(self, gamma: np.ndarray) -> _State:
        return self._state_full(self.full_gamma(gamma))

    def _state_full(self, gamma_full: np.ndarray) -> _State:
        key = gamma_full.tobytes()
        with self._lock:
            st = self._cache.get(key)
            if st is not None:
                self._cache.move_to_end(key)
                return st
        g = self.grid
        if np.any(gamma_full <= 0) or not np.all(np.isfinite(gamma_full)):
            raise GammaOutOfBounds("coefficient must be positive and finite")
        st = _State()
        st.gamma_full = gamma_full
        st.c, gp, gq, K = g.stiffness(gamma_full)
        denom = (gp + gq) ** 2
        st.dcp = 2 * gq**2 / denom
        st.dcq = 2 * gp**2 / denom
        st.K_II = K[g.interior][:, g.interior].tocsc()
        st.K_IB = K[g.interior][:, g.boundary].tocsr()
        try:
            st.lu = spla.splu(st.K_II)
        except RuntimeError as exc:
            raise SolveFailed(f"factorization failed: {exc}") from None
        with self._lock:
            self._cache[key] = st
            while len(self._cache) > 4:
                self._cache.popitem(last=False)
        return st

    def _solve(self, st: _State, rhs: np.ndarray) -> np.ndarray:
        sol = st.lu.solve(rhs)
        res = np.linalg.norm(st.K_II @ sol - rhs)
        if not np.all(np.isfinite(sol)) or res > 1e-10 * max(np.linalg.norm(rhs), 1e-300):
            raise SolveFailed(f"linear solve residual {res:.3g} too large")
        return sol

    def solve_state(self, gamma: np.ndarray, i: int) -> np.ndarray:
        """Full nodal solution ``u`` for experiment ``i``."""
        st = self._state(gamma)
        u = st.u.get(i)
        if u is None:
            u = self._solve_full(st, self.dirichlet[i])
            st.u[i] = u
        return u

    def solve_with_boundary(self, gamma: np.ndarray, boundary_values: np.ndarray) -> np.ndarray:
        return self._solve_full(self._state(gamma), boundary_values)

    def _solve_full(self, st: _State, boundary_values: np.ndarray) -> np.ndarray:
        g = self.grid
        u = np.empty(g.m * g.m)
        u[g.boundary] = boundary_values
        u[g.interior] = self._solve(st, -(st.K_IB @ boundary_values))
        return u

    def elliptic_forward(self, gamma_full: np.ndarray, boundary_values: np.ndarray):
        """Solve with a full nodal coefficient and Dirichlet values on all boundary nodes.

        Returns the nodal solution and the boundary flux at measurement nodes.
        """
        gamma_full = np.asarray(gamma_full, dtype=float)
        u = self._solve_full(self._state_full(gamma_full), np.asarray(boundary_values, dtype=float))
        return u, self.flux(gamma_full, u)

    def flux(self, gamma_full: np.ndarray, u: np.ndarray) -> np.ndarray:
        g = self.grid
        return gamma_full[g.meas] * (g.flux_stencil @ u)

    def forward(self, i: int, gamma: np.ndarray) -> np.ndarray:
        st = self._state(gamma)
        return self.flux(st.gamma_full, self.solve_state(gamma, i))

    def _dK_times_u(self, st: _State, u: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Interior rows of ``(dK/dgamma [h]) u``."""
        g = self.grid
        du = g.incidence @ u
        hp = np.where(g._ip_mask, h[np.maximum(g._ip, 0)], 0.0)
        hq = np.where(g._iq_mask, h[np.maximum(g._iq, 0)], 0.0)
        dc = st.dcp * hp + st.dcq * hq
        return (g.incidence.T @ (dc * du))[g.interior]

    def _dK_times_u_T(self, st: _State, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        g = self.grid
        du = g.incidence @ u
        wf = np.zeros(g.m * g.m)
        wf[g.interior] = w
        e = (g.incidence @ wf) * du
        out = np.zeros(g.interior.size)
        np.add.at(out, g._ip[g._ip_mask], (st.dcp * e)[g._ip_mask])
        np.add.at(out, g._iq[g._iq_mask], (st.dcq * e)[g._iq_mask])
        return out

    def deriv_apply(self, i: int, gamma: np.ndarray, h: np.ndarray) -> np.ndarray:
        g = self.grid
        st = self._state(gamma)
        u = self.solve_state(gamma, i)
        du = np.zeros(g.m * g.m)
        du[g.interior] = -self._solve(st, self._dK_times_u(st, u, np.asarray(h, dtype=float)))
        return st.gamma_full[g.meas] * (g.flux_stencil @ du)

    def deriv_transpose(self, i: int, gamma: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Euclidean transpose of the derivative."""
        g = self.grid
        st = self._state(gamma)
        u = self.solve_state(gamma, i)
        v = (g.flux_stencil.T @ (st.gamma_full[g.meas] * r))[g.interior]
        w = self._solve(st, v)  # K_II is symmetric
        return -self._dK_times_u_T(st, u, w)

    def deriv_adjoint_apply(self, i: int, gamma: np.ndarray, r: np.ndarray) -> np.ndarray:
        return self._riesz(self.deriv_transpose(i, gamma, np.asarray(r, dtype=float)))

    # ---- problem data ---------------------------------------------------
    def initial_guess(self) -> np.ndarray:
        """Discrete harmonic extension of the boundary trace of the true coefficient."""
        ones = np.ones(self.dim)
        return self.solve_with_boundary(ones, self.gamma_boundary)[self.grid.interior]

    @cached_property
    def fine_problem(self) -> "EllipticProblem":
        c = self.config
        r = c.data_refinement
        return EllipticProblem(EllipticConfig(**{**c.to_dict(), "n": r * (c.n + 1) - 1, "data_refinement": 1,
                                                 "param_norm": "l2"}))

    def coarse_data(self) -> list:
        return [self.forward(i, self.reference) for i in range(self.n_equations)]

    def exact_data(self) -> list:
        """Fluxes of the true coefficient computed on the refined grid, sampled at coarse nodes."""
        if self.config.data_refinement == 1:
            return self.coarse_data()
        fine = self.fine_problem
        r = self.config.data_refinement
        fg = fine.grid
        # every r-th fine measurement node coincides with a coarse one
        per_side = fg.n
        pick = []
        for side in range(4):
            base = side * per_side
            pick.extend(base + r * (np.arange(1, self.grid.n + 1)) - 1)
        pick = np.asarray(pick)
        return [fine.forward(i, fine.reference)[pick] for i in range(self.n_equations)]

    # ---- operator system -----------------------------------------------
    @cached_property
    def derivative_bound(self) -> float:
        x0 = self.initial_guess()
        rng = np.random.default_rng(np.random.SeedSequence(self.config.seed, spawn_key=(202,)))
        est = 0.0
        for i in range(self.n_equations):
            est = max(est, power_iteration(lambda v, i=i: self.deriv_adjoint_apply(i, x0, self.deriv_apply(i, x0, v)),
                                           self.dim, self.param_norm, rng, iters=60, tol=1e-8))
        return self.config.bound_safety * est

    def param_norm(self, x) -> float:
        return float(np.sqrt(max(self.param_inner(x, x), 0.0)))

    @cached_property
    def _system(self) -> OperatorSystem:
        x0 = self.initial_guess()
        rho = self.config.radius_factor * self.param_norm(self.reference - x0)
        return OperatorSystem(
            n_equations=self.n_equations,
            domain_center=x0,
            domain_radius=rho,
            derivative_bound=self.derivative_bound,
            forward=self.forward,
            deriv=self.deriv_apply,
            adjoint=self.deriv_adjoint_apply,
            param_inner=self.param_inner,
            data_inner=self.data_inner,
            name=self.name,
        )

    def system(self) -> OperatorSystem:
        return self._system
