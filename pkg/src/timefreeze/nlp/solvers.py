"""Solver interface: anything taking (SmoothNlp, x0, options) and returning a KktPoint.

Adapters for external solvers register here and must report residuals with
the same definitions as the reference interior-point method (infinity norms
of the Lagrangian gradient, of c(x), and of the bound complementarity).
"""
from __future__ import annotations

from typing import Callable, Dict, Optional, Protocol

import numpy as np

from . import ipm
from .problem import KktPoint, SmoothNlp

__all__ = ["NlpSolver", "available_solvers", "get_solver", "register_solver"]


class NlpSolver(Protocol):
    def __call__(self, nlp: SmoothNlp, x0: np.ndarray, *, tol: float = 1e-8, max_iter: int = 500,
                 warm: Optional[KktPoint] = None, mu_init: Optional[float] = None,
                 options=None) -> KktPoint: ...


_REGISTRY: Dict[str, Callable] = {"ipm": ipm.solve}


def register_solver(name: str, solver: Callable) -> None:
    _REGISTRY[name] = solver


def get_solver(name: str = "ipm") -> Callable:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown NLP solver {name!r}; available: {sorted(_REGISTRY)}") from None


def available_solvers() -> list:
    return sorted(_REGISTRY)
