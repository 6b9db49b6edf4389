"""Lightweight mixed-integer linear model container.

Builders assemble models here; the backend converts them to solver input.
Constraints are two-sided: lo <= a'x <= hi with either side infinite.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import sparse

INF = math.inf


class LinearModel:
    """Minimization model: c'x + constant over linear constraints and bounds."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.var_names: list[str] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.integer: list[bool] = []
        self.objective: dict[int, float] = {}
        self.objective_constant = 0.0
        self.constraints: list[tuple[dict[int, float], float, float, str]] = []
        self.meta: dict = {}

    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def add_var(self, name: str, lb: float = 0.0, ub: float = INF,
                integer: bool = False, obj: float = 0.0) -> int:
        idx = len(self.var_names)
        self.var_names.append(name)
        self.lower.append(lb)
        self.upper.append(ub)
        self.integer.append(integer)
        if obj:
            self.objective[idx] = self.objective.get(idx, 0.0) + obj
        return idx

    def add_binary(self, name: str) -> int:
        return self.add_var(name, 0.0, 1.0, integer=True)

    def add_constraint(self, coeffs: dict[int, float], lo: float = -INF,
                       hi: float = INF, name: str = ""):
        if lo > hi:
            raise ValueError(f"constraint {name or '?'}: lo > hi")
        self.constraints.append((dict(coeffs), lo, hi, name))

    def add_objective(self, idx: int, coef: float):
        if coef:
            self.objective[idx] = self.objective.get(idx, 0.0) + coef

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.num_vars)
        for idx, coef in self.objective.items():
            c[idx] = coef
        return c

    def constraint_arrays(self):
        """(A csr, lo, hi) for all constraints; A is empty when there are none."""
        rows, cols, vals = [], [], []
        lo = np.empty(self.num_constraints)
        hi = np.empty(self.num_constraints)
        for i, (coeffs, clo, chi, _) in enumerate(self.constraints):
            lo[i], hi[i] = clo, chi
            for j, v in coeffs.items():
                rows.append(i)
                cols.append(j)
                vals.append(v)
        A = sparse.csr_matrix((vals, (rows, cols)),
                              shape=(self.num_constraints, self.num_vars))
        return A, lo, hi

    def write_lp(self, path: str):
        """Export in LP format for external inspection."""
        def term(j, v, first):
            sign = "- " if v < 0 else ("" if first else "+ ")
            return f"{sign}{abs(v):.17g} {self.var_names[j]}"

        lines = [f"\\ {self.name}", "Minimize"]
        obj_terms = [term(j, v, i == 0)
                     for i, (j, v) in enumerate(sorted(self.objective.items()))]
        lines.append(" obj: " + (" ".join(obj_terms) if obj_terms else "0 x_dummy"))
        if not obj_terms and self.num_vars == 0:
            lines[-1] = " obj: 0"
        lines.append("Subject To")
        for i, (coeffs, lo, hi, name) in enumerate(self.constraints):
            label = name or f"c{i}"
            expr = " ".join(term(j, v, k == 0)
                            for k, (j, v) in enumerate(sorted(coeffs.items())))
            if lo == hi:
                lines.append(f" {label}: {expr} = {lo:.17g}")
            else:
                if hi != INF:
                    lines.append(f" {label}_u: {expr} <= {hi:.17g}")
                if lo != -INF:
                    lines.append(f" {label}_l: {expr} >= {lo:.17g}")
        lines.append("Bounds")
        for j, nm in enumerate(self.var_names):
            lb, ub = self.lower[j], self.upper[j]
            if lb == -INF and ub == INF:
                lines.append(f" {nm} free")
            elif ub == INF:
                lines.append(f" {lb:.17g} <= {nm}")
            else:
                lines.append(f" {lb:.17g} <= {nm} <= {ub:.17g}")
        general = [nm for nm, isint in zip(self.var_names, self.integer) if isint]
        if general:
            lines.append("General")
            lines.append(" " + " ".join(general))
        lines.append("End")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
