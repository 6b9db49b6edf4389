"""Solver backends behind a small abstract interface.

The default backend drives HiGHS through scipy.optimize.milp. Backends are
single-threaded from the caller's perspective; parallel evaluation should
use one backend instance per worker.
"""

from __future__ import annotations

import abc
import enum
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .model import LinearModel

INTEGRALITY_TOL = 1e-6


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"        # proven feasible, stopped at a gap
    INFEASIBLE = "infeasible"
    TIME_LIMIT = "time_limit"    # stopped on the clock; incumbent may exist


class BackendError(RuntimeError):
    """Solver-level failure with backend diagnostics."""


@dataclass
class SolutionReport:
    status: SolveStatus
    objective: float | None = None
    bound: float | None = None
    gap: float | None = None
    values: np.ndarray | None = None
    solve_seconds: float = 0.0
    message: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def has_solution(self) -> bool:
        return self.values is not None

    def value(self, idx: int) -> float:
        if self.values is None:
            raise BackendError(f"no incumbent available: {self.message}")
        return float(self.values[idx])


class SolverBackend(abc.ABC):
    name = "abstract"

    @abc.abstractmethod
    def solve(self, model: LinearModel, time_limit: float | None = None,
              gap_tol: float = 1e-6) -> SolutionReport:
        ...


class HighsBackend(SolverBackend):
    """HiGHS via scipy.optimize.milp."""

    name = "highs"

    def solve(self, model: LinearModel, time_limit: float | None = None,
              gap_tol: float = 1e-6) -> SolutionReport:
        start = time.perf_counter()
        if model.num_vars == 0:
            return SolutionReport(
                status=SolveStatus.OPTIMAL, objective=model.objective_constant,
                bound=model.objective_constant, gap=0.0, values=np.zeros(0),
                solve_seconds=time.perf_counter() - start)

        c = model.objective_vector()
        bounds = Bounds(np.array(model.lower), np.array(model.upper))
        integrality = np.array(model.integer, dtype=np.uint8)
        constraints = None
        if model.num_constraints:
            A, lo, hi = model.constraint_arrays()
            constraints = LinearConstraint(A, lo, hi)
        options = {"mip_rel_gap": max(gap_tol, 0.0)}
        if time_limit is not None:
            options["time_limit"] = float(time_limit)

        def run(opts):
            try:
                return milp(c=c, constraints=constraints, bounds=bounds,
                            integrality=integrality, options=opts)
            except Exception as exc:  # scipy-level failure
                raise BackendError(f"highs failed: {exc}") from exc

        res = run(options)
        if res.status == 2:
            # HiGHS presolve occasionally misreports tight big-M models as
            # infeasible; confirm before believing it
            res = run({**options, "presolve": False})
        elapsed = time.perf_counter() - start

        if res.status == 2:
            return SolutionReport(status=SolveStatus.INFEASIBLE,
                                  solve_seconds=elapsed, message=res.message)
        if res.status in (3, 4):
            raise BackendError(f"highs: {res.message}")

        values = None
        objective = None
        max_dev = 0.0
        if res.x is not None:
            values = np.asarray(res.x, dtype=np.float64).copy()
            if integrality.any():
                ints = integrality.astype(bool)
                snapped = np.rint(values[ints])
                max_dev = float(np.max(np.abs(values[ints] - snapped))) if ints.any() else 0.0
                values[ints] = snapped
            objective = float(c @ values) + model.objective_constant

        bound = None
        if res.mip_dual_bound is not None and math.isfinite(res.mip_dual_bound):
            bound = float(res.mip_dual_bound) + model.objective_constant
        gap = None
        if res.mip_gap is not None and math.isfinite(res.mip_gap):
            gap = float(res.mip_gap)
        elif res.status == 0:
            gap = 0.0

        message = res.message
        if max_dev > INTEGRALITY_TOL:
            message += f" [integrality deviation {max_dev:.2e}]"

        if res.status == 0:
            status = SolveStatus.OPTIMAL if (gap or 0.0) <= max(gap_tol, 1e-9) \
                else SolveStatus.FEASIBLE
            return SolutionReport(status=status, objective=objective, bound=bound,
                                  gap=gap, values=values, solve_seconds=elapsed,
                                  message=message)
        # status 1: iteration or time limit
        return SolutionReport(status=SolveStatus.TIME_LIMIT, objective=objective,
                              bound=bound, gap=gap, values=values,
                              solve_seconds=elapsed, message=message)


_BACKENDS = {"highs": HighsBackend}


def default_backend() -> SolverBackend:
    """Backend selected by the RELIEFALLOC_SOLVER environment variable."""
    name = os.environ.get("RELIEFALLOC_SOLVER", "highs").lower()
    try:
        return _BACKENDS[name]()
    except KeyError:
        raise BackendError(
            f"unknown solver backend {name!r}; available: {sorted(_BACKENDS)}") from None


def solve(model: LinearModel, backend: SolverBackend | None = None,
          time_limit: float | None = None, gap_tol: float = 1e-6) -> SolutionReport:
    """Solve a model, returning the incumbent and gap even on a time limit."""
    backend = backend or default_backend()
    return backend.solve(model, time_limit=time_limit, gap_tol=gap_tol)
