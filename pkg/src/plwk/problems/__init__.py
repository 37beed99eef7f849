"""Built-in test problems."""

from __future__ import annotations

import dataclasses

from .elliptic import (
    Bump,
    EllipticConfig,
    EllipticProblem,
    GammaOutOfBounds,
    arc_length,
    boundary_profile,
)
from .linear import LinearBlockProblem, LinearConfig
from .tcc import NoValidPairs, estimate_tcc_eta

PROBLEMS = {
    "linear": (LinearBlockProblem, LinearConfig,
               "random row-block linear system (eta = 0), 6 blocks x 8 rows, 40 unknowns"),
    "elliptic": (EllipticProblem, EllipticConfig,
                 "Dirichlet-to-Neumann coefficient identification, 31x31 grid, 12 experiments"),
}


def list_problems() -> dict:
    return {name: desc for name, (_, _, desc) in PROBLEMS.items()}


def problem_config(name: str, options: dict | None = None):
    """Build the config dataclass of problem ``name`` from string or typed options."""
    if name not in PROBLEMS:
        raise ValueError(f"unknown problem {name!r}; available: {', '.join(PROBLEMS)}")
    _, cfg_cls, _ = PROBLEMS[name]
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cfg_cls)}
    for key, value in (options or {}).items():
        key = key.replace("-", "_")
        if key not in fields:
            raise ValueError(f"problem {name!r} has no option {key!r}")
        default = fields[key].default
        if isinstance(value, str) and not isinstance(default, str):
            if isinstance(default, bool):
                value = value.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                value = int(value)
            elif isinstance(default, float):
                value = float(value)
            elif key == "bumps":
                value = _parse_bumps(value)
        kwargs[key] = value
    return cfg_cls(**kwargs)


def _parse_bumps(text: str) -> tuple:
    """``"cx cy amp radius; cx cy amp radius"`` -> tuple of :class:`Bump`."""
    bumps = []
    for chunk in text.split(";"):
        if chunk.strip():
            bumps.append(Bump(*(float(v) for v in chunk.replace(",", " ").split())))
    return tuple(bumps)


def get_problem(name: str, options: dict | None = None):
    cls = PROBLEMS[name][0] if name in PROBLEMS else None
    cfg = problem_config(name, options)
    return cls(cfg)


def make_exact_data(problem) -> list:
    return problem.exact_data()


def initial_guess(problem):
    return problem.initial_guess()


__all__ = [
    "Bump", "EllipticConfig", "EllipticProblem", "GammaOutOfBounds", "LinearBlockProblem",
    "LinearConfig", "NoValidPairs", "PROBLEMS", "arc_length", "boundary_profile",
    "estimate_tcc_eta", "get_problem", "initial_guess", "list_problems", "make_exact_data",
    "problem_config",
]
