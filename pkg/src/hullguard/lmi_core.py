"""Block-structured linear matrix inequality problems and a pluggable SDP backend.

Problems are declared as symmetric-matrix / rectangular-matrix / scalar
variables together with affine PSD block constraints (upper triangle only,
mirrored on assembly), affine equalities, and a linear objective to maximize.
Solutions carry a three-way status (optimal / infeasible / numerical_failure)
plus re-substitution residuals, so callers can distinguish a certified
infeasibility from solver trouble.
"""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import cvxpy as cp
import numpy as np

DEFAULT_FEAS_TOL = 1e-7
RESUBSTITUTION_TOL = 1e-6
SOLVER_TOL_ENV_VAR = "HULLGUARD_SOLVER_TOL"


class SdpAssemblyError(ValueError):
    """Malformed problem description: bad dimensions or undeclared variables."""


def feasibility_tolerance(default: float | None = None) -> float:
    """Effective feasibility tolerance, overridable via HULLGUARD_SOLVER_TOL."""
    env = os.environ.get(SOLVER_TOL_ENV_VAR)
    if env is not None:
        try:
            value = float(env)
        except ValueError as exc:
            raise SdpAssemblyError(
                f"{SOLVER_TOL_ENV_VAR} must be a float, got {env!r}"
            ) from exc
        if value <= 0:
            raise SdpAssemblyError(f"{SOLVER_TOL_ENV_VAR} must be positive")
        return value
    return DEFAULT_FEAS_TOL if default is None else default


def declare_variables(specs: Mapping[str, tuple]) -> dict[str, cp.Variable]:
    """Create solver variables from (kind, ...) specs.

    Supported kinds: ("sym", n) symmetric n-by-n, ("mat", rows, cols)
    rectangular, ("psd", n) symmetric PSD, ("scalar",) free scalar,
    ("scalar", "nonneg") nonnegative scalar.
    """
    out: dict[str, cp.Variable] = {}
    for name, spec in specs.items():
        kind = spec[0]
        if kind == "sym":
            out[name] = cp.Variable((spec[1], spec[1]), symmetric=True, name=name)
        elif kind == "psd":
            out[name] = cp.Variable((spec[1], spec[1]), PSD=True, name=name)
        elif kind == "mat":
            out[name] = cp.Variable((spec[1], spec[2]), name=name)
        elif kind == "scalar":
            nonneg = len(spec) > 1 and spec[1] == "nonneg"
            out[name] = cp.Variable(nonneg=nonneg, name=name)
        else:
            raise SdpAssemblyError(f"unknown variable kind {kind!r} for {name!r}")
    return out


def _entry_shape(entry: Any) -> tuple[int, int]:
    if isinstance(entry, (int, float)):
        return (1, 1)
    shape = tuple(entry.shape)
    if len(shape) == 0:
        return (1, 1)
    if len(shape) == 1:
        return (1, shape[0])
    return shape  # type: ignore[return-value]


def _as_expr(entry: Any) -> Any:
    if isinstance(entry, (int, float)):
        return np.array([[float(entry)]])
    if isinstance(entry, np.ndarray):
        return np.atleast_2d(np.asarray(entry, dtype=float))
    if entry.ndim == 0:
        return cp.reshape(entry, (1, 1), order="F")
    if entry.ndim == 1:
        return cp.reshape(entry, (1, entry.shape[0]), order="F")
    return entry


def _check_declared(expr: Any, declared: set, where: str) -> None:
    if isinstance(expr, cp.expressions.expression.Expression):
        for v in expr.variables():
            if id(v) not in declared:
                raise SdpAssemblyError(
                    f"{where} references undeclared variable {v.name()!r}"
                )


@dataclass
class SdpProblem:
    """Immutable assembled problem: solve with :func:`solve_sdp`."""

    variables: dict[str, cp.Variable]
    psd_constraints: list[tuple[str, Any]]
    equalities: list[tuple[str, Any, Any]]
    objective: Any

    def cvxpy_problem(self) -> cp.Problem:
        cons = [blk >> 0 for _, blk in self.psd_constraints]
        cons += [lhs == rhs for _, lhs, rhs in self.equalities]
        obj = cp.Maximize(self.objective if self.objective is not None else 0)
        return cp.Problem(obj, cons)


@dataclass
class SdpSolution:
    """Backend verdict with values and re-substitution residuals."""

    status: str  # optimal | infeasible | numerical_failure
    values: dict[str, np.ndarray | float]
    objective_value: float | None
    residuals: dict[str, float]
    solver: str = ""
    raw_status: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"


def assemble_problem(
    variables: Mapping[str, cp.Variable],
    psd_blocks: Sequence[tuple[str, Sequence[Sequence[Any]]]],
    equalities: Sequence[tuple[str, Any, Any]] = (),
    objective: Any = None,
) -> SdpProblem:
    """Validate and assemble a block SDP.

    Each PSD block is given as its upper triangle, row by row:
    ``[[E00, E01, E02], [E11, E12], [E22]]``; the lower triangle is mirrored
    with transposes so symmetry holds by construction.
    """
    declared = {id(v) for v in variables.values()}
    psd_constraints: list[tuple[str, Any]] = []
    for name, upper in psd_blocks:
        k = len(upper)
        if k == 0:
            raise SdpAssemblyError(f"PSD block {name!r} is empty")
        for i, row in enumerate(upper):
            if len(row) != k - i:
                raise SdpAssemblyError(
                    f"PSD block {name!r} row {i}: expected {k - i} upper-triangle "
                    f"entries, got {len(row)}"
                )
        # diagonal entries fix the block dimensions
        dims = []
        for i in range(k):
            r, c = _entry_shape(upper[i][0])
            if r != c:
                raise SdpAssemblyError(
                    f"PSD block {name!r} diagonal entry {i} is {r}x{c}, not square"
                )
            dims.append(r)
        grid: list[list[Any]] = [[None] * k for _ in range(k)]
        for i in range(k):
            for off, entry in enumerate(upper[i]):
                j = i + off
                r, c = _entry_shape(entry)
                if (r, c) != (dims[i], dims[j]):
                    raise SdpAssemblyError(
                        f"PSD block {name!r} entry ({i},{j}) is {r}x{c}, "
                        f"expected {dims[i]}x{dims[j]}"
                    )
                _check_declared(entry, declared, f"PSD block {name!r} entry ({i},{j})")
                e = _as_expr(entry)
                grid[i][j] = e
                if j != i:
                    grid[j][i] = e.T
        psd_constraints.append((name, cp.bmat(grid)))
    eqs: list[tuple[str, Any, Any]] = []
    for name, lhs, rhs in equalities:
        ls, rs = _entry_shape(lhs), _entry_shape(rhs)
        if ls != rs:
            raise SdpAssemblyError(f"equality {name!r}: {ls} vs {rs}")
        _check_declared(lhs, declared, f"equality {name!r}")
        _check_declared(rhs, declared, f"equality {name!r}")
        eqs.append((name, lhs, rhs))
    if objective is not None:
        _check_declared(objective, declared, "objective")
        if isinstance(objective, cp.expressions.expression.Expression):
            if not objective.is_concave():
                raise SdpAssemblyError("objective must be concave (it is maximized)")
    return SdpProblem(dict(variables), psd_constraints, eqs, objective)


def _symmetrize(value: np.ndarray) -> np.ndarray:
    return (value + value.T) / 2.0


def _extract_values(problem: SdpProblem) -> dict[str, np.ndarray | float]:
    values: dict[str, np.ndarray | float] = {}
    for name, var in problem.variables.items():
        v = var.value
        if v is None:
            continue
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 2 and arr.shape[0] == arr.shape[1] and var.is_symmetric():
            arr = _symmetrize(arr)
        values[name] = float(arr) if arr.ndim == 0 else arr
    return values


def _resubstitution_residuals(problem: SdpProblem) -> dict[str, float]:
    worst_psd = 0.0
    for _, blk in problem.psd_constraints:
        val = np.asarray(blk.value, dtype=float)
        eig_min = float(np.linalg.eigvalsh(_symmetrize(val)).min())
        worst_psd = max(worst_psd, max(0.0, -eig_min))
    worst_eq = 0.0
    for _, lhs, rhs in problem.equalities:
        lv = lhs.value if hasattr(lhs, "value") else lhs
        rv = rhs.value if hasattr(rhs, "value") else rhs
        worst_eq = max(worst_eq, float(np.max(np.abs(np.asarray(lv) - np.asarray(rv)))))
    return {"max_psd_violation": worst_psd, "max_equality_violation": worst_eq}


def _attempt(problem: SdpProblem, solver: str, feas_tol: float, verbose: bool) -> SdpSolution:
    prob = problem.cvxpy_problem()
    kwargs: dict[str, Any] = {}
    if solver == "CLARABEL":
        kwargs["max_iter"] = 400
    elif solver == "SCS":
        kwargs["max_iters"] = 20000
    try:
        prob.solve(solver=solver, verbose=verbose, **kwargs)
    except Exception as exc:  # backend stall or breakdown
        return SdpSolution(
            "numerical_failure", {}, None,
            {"max_psd_violation": np.inf, "max_equality_violation": np.inf},
            solver, f"exception:{type(exc).__name__}",
        )
    raw = prob.status
    if raw in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        residuals = _resubstitution_residuals(problem)
        resub_tol = max(RESUBSTITUTION_TOL, 10.0 * feas_tol)
        ok = (residuals["max_psd_violation"] <= resub_tol
              and residuals["max_equality_violation"] <= resub_tol)
        status = "optimal" if ok else "numerical_failure"
        return SdpSolution(status, _extract_values(problem),
                           float(prob.value), residuals, solver, raw)
    if raw == cp.INFEASIBLE:
        # backends report this status only alongside a dual certificate
        return SdpSolution("infeasible", {}, None,
                           {"max_psd_violation": 0.0, "max_equality_violation": 0.0},
                           solver, raw)
    return SdpSolution("numerical_failure", {}, None,
                       {"max_psd_violation": np.inf, "max_equality_violation": np.inf},
                       solver, raw)


def solve_sdp(
    problem: SdpProblem,
    feas_tol: float | None = None,
    solvers: Sequence[str] = ("CLARABEL", "SCS"),
    verbose: bool = False,
) -> SdpSolution:
    """Solve an assembled problem, falling back across backends on stalls.

    A result is reported optimal only when re-substituting the values into
    every PSD block and equality meets the re-substitution tolerance;
    infeasibility is reported only from a certificate-backed backend status.
    Anything else degrades to numerical_failure rather than guessing.
    """
    tol = feasibility_tolerance(feas_tol)
    last: SdpSolution | None = None
    for solver in solvers:
        sol = _attempt(problem, solver, tol, verbose)
        if sol.status in ("optimal", "infeasible"):
            return sol
        last = sol
    return last if last is not None else SdpSolution(
        "numerical_failure", {}, None,
        {"max_psd_violation": np.inf, "max_equality_violation": np.inf}, "", "no_solver")


def schur_psd_check(
    M11: np.ndarray,
    M12: np.ndarray,
    M22: np.ndarray,
    tol: float = RESUBSTITUTION_TOL,
) -> bool:
    """Check [[M11, M12], [M12^T, M22]] >= -tol*I by two agreeing routes.

    The direct route inspects the eigenvalues of the assembled block; when the
    trailing block is safely positive definite, the complement route checks
    M11 - M12 M22^{-1} M12^T instead and the two verdicts must agree.  A
    singular trailing block degrades to the direct route with a warning.
    """
    M11 = np.atleast_2d(np.asarray(M11, dtype=float))
    M12 = np.atleast_2d(np.asarray(M12, dtype=float))
    M22 = np.atleast_2d(np.asarray(M22, dtype=float))
    block = np.block([[M11, M12], [M12.T, M22]])
    direct = bool(np.linalg.eigvalsh(_symmetrize(block)).min() >= -tol)
    m22_eigs = np.linalg.eigvalsh(_symmetrize(M22))
    scale = max(1.0, float(np.abs(m22_eigs).max()))
    if m22_eigs.min() <= 1e-12 * scale:
        warnings.warn("trailing block is singular; using direct eigenvalue route only",
                      RuntimeWarning, stacklevel=2)
        return direct
    complement = M11 - M12 @ np.linalg.solve(M22, M12.T)
    via_schur = bool(np.linalg.eigvalsh(_symmetrize(complement)).min() >= -tol)
    if via_schur != direct:
        warnings.warn("eigenvalue and complement routes disagree near the tolerance "
                      "boundary; keeping the direct verdict",
                      RuntimeWarning, stacklevel=2)
    return direct
