"""Safe-set synthesis: contractive convex hulls of ellipsoids via SDP.

Four programs plus a single-ellipsoid baseline, all maximizing directional
coverage of the admissible polytope {x : F x <= g}:

- open loop: contraction of the autonomous dynamics through the cyclic
  ellipsoid pairing;
- model-based: state feedback designed jointly (K_i = S_i P_i^{-1});
- certainty equivalence: data-driven with recorded noise, nominal closed
  loop (X1 - W0) Y_j and K_i = U0 Y_i P_i^{-1};
- minimum variance: data-driven without noise measurements; a scalar S-procedure
  parameter tau (scanned over a grid) trades contraction margin against the
  noise amplification of the realized closed loop X1 Y_j, with auxiliary
  eta/zeta/H variables penalizing that amplification in the objective.

Certificates embed the realized closed-loop maps and noise gains needed by
the runtime supervisor, so simulation can replay them without the dataset.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import cvxpy as cp
import numpy as np
from sklearn.base import BaseEstimator

from .geometry import (
    HullPolytope,
    build_hull_polytope,
    cyclic_partner,
    extract_extreme_points,
)
from .lmi_core import (
    SdpSolution,
    assemble_problem,
    declare_variables,
    schur_psd_check,
    solve_sdp,
)
from .systems import TrajectoryDataset, psd_sqrt, validate_data_assumptions

MODES = ("open_loop", "model_csie", "data_ce", "data_minvar", "single_baseline")
MODE_ALIASES = {
    "openloop": "open_loop",
    "model": "model_csie",
    "ce": "data_ce",
    "minvar": "data_minvar",
    "baseline": "single_baseline",
}
CERT_TOL = 1e-6


class InfeasibleSynthesisError(RuntimeError):
    """The program is infeasible (certificate-backed solver verdict)."""

    def __init__(self, message: str, solution: SdpSolution | None = None):
        super().__init__(message)
        self.solution = solution


class SynthesisNumericalError(RuntimeError):
    """The solver stalled or the returned values failed re-substitution."""


class DataAssumptionError(ValueError):
    """The dataset fails the rank conditions required for data-driven modes."""


def canonical_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown synthesis mode {mode!r}; expected one of {MODES}")
    return mode


def noise_concentration_bound(n: int, delta: float) -> float:
    """Sub-Gaussian radius n + 2 sqrt(n log(1/delta)) + 2 log(1/delta)."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    ln = math.log(1.0 / delta)
    return n + 2.0 * math.sqrt(n * ln) + 2.0 * ln


def default_directions(F: np.ndarray, g: np.ndarray, n_v: int) -> np.ndarray:
    """Reference directions aimed at the far corners of the admissible set.

    For planar sets: n_v equally spaced angles starting at the farthest
    polytope vertex.  In higher dimensions: the n_v vertices of largest norm,
    normalized.  Unbounded admissible sets have no vertices to aim at, so
    directions must then be supplied explicitly.
    """
    from .geometry import _polytope_vertices_2d

    F = np.atleast_2d(np.asarray(F, dtype=float))
    n = F.shape[1]
    try:
        if n == 2:
            verts = _polytope_vertices_2d(F, g)
        else:
            from scipy.spatial import HalfspaceIntersection

            hs = HalfspaceIntersection(
                np.column_stack([F, -np.asarray(g, dtype=float).ravel()]), np.zeros(n))
            verts = hs.intersections
    except Exception as exc:
        raise ValueError(
            "cannot derive default directions (admissible set unbounded?); "
            "pass directions explicitly") from exc
    if n == 2:
        far = verts[np.argmax(np.linalg.norm(verts, axis=1))]
        theta0 = math.atan2(far[1], far[0])
        angles = theta0 + 2.0 * np.pi * np.arange(n_v) / n_v
        return np.column_stack([np.cos(angles), np.sin(angles)])
    order = np.argsort(-np.linalg.norm(verts, axis=1))
    picked = verts[order[:n_v]]
    if picked.shape[0] < n_v:
        raise ValueError(f"admissible set has only {picked.shape[0]} vertices "
                         f"for {n_v} requested directions")
    return picked / np.linalg.norm(picked, axis=1, keepdims=True)


@dataclass
class SynthesisConfig:
    """Knobs shared by every synthesis program."""

    lam: float = 0.8
    delta: float = 0.1
    n_v: int = 3
    directions: np.ndarray | None = None
    tau_grid: np.ndarray | None = None
    w_mu: float = 1.0
    w_eta: float = 1.0
    w_zeta: float = 1.0
    min_eigenvalue: float = 0.0
    y_ridge: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("contraction rate must lie in (0, 1]")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("risk level must lie in (0, 1)")
        if self.n_v < 1:
            raise ValueError("need at least one ellipsoid")
        if self.directions is not None:
            d = np.atleast_2d(np.asarray(self.directions, dtype=float))
            norms = np.linalg.norm(d, axis=1)
            if np.any(norms <= 0):
                raise ValueError("directions must be nonzero")
            self.directions = d / norms[:, None]
        if self.tau_grid is not None:
            self.tau_grid = np.asarray(self.tau_grid, dtype=float).ravel()

    def resolved_directions(self, F: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.directions is not None:
            if self.directions.shape[0] < self.n_v:
                raise ValueError(f"{self.directions.shape[0]} directions given "
                                 f"for n_v={self.n_v}")
            return self.directions[: self.n_v]
        return default_directions(F, g, self.n_v)

    def resolved_tau_grid(self) -> np.ndarray:
        if self.tau_grid is not None:
            return self.tau_grid
        return np.linspace(0.05 * self.lam, 0.95 * self.lam, 15)

    def to_dict(self) -> dict:
        return {
            "lam": self.lam,
            "delta": self.delta,
            "n_v": self.n_v,
            "directions": None if self.directions is None else self.directions.tolist(),
            "tau_grid": None if self.tau_grid is None else self.tau_grid.tolist(),
            "w_mu": self.w_mu,
            "w_eta": self.w_eta,
            "w_zeta": self.w_zeta,
            "min_eigenvalue": self.min_eigenvalue,
            "y_ridge": self.y_ridge,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SynthesisConfig":
        payload = dict(payload)
        for key in ("directions", "tau_grid"):
            if payload.get(key) is not None:
                payload[key] = np.array(payload[key], dtype=float)
        return cls(**payload)


@dataclass
class HullCertificate:
    """Feasible point of one synthesis program, with derived gains and maps."""

    mode: str
    P: list[np.ndarray]
    mu: np.ndarray
    config: SynthesisConfig
    objective: float
    directions: np.ndarray
    K: list[np.ndarray] | None = None
    S: list[np.ndarray] | None = None
    Y: list[np.ndarray] | None = None
    H: list[np.ndarray] | None = None
    eta: np.ndarray | None = None
    zeta: np.ndarray | None = None
    tau: float | None = None
    realized_maps: list[np.ndarray] | None = None  # X1 Y_i P_i^{-1}
    nominal_maps: list[np.ndarray] | None = None   # A + B K_i (noise stripped)
    noise_gains: list[float] | None = None         # Tr(Y_i P_i^{-1} Y_i^T)
    residuals: dict = field(default_factory=dict)

    @property
    def n_v(self) -> int:
        return len(self.P)

    @property
    def n(self) -> int:
        return self.P[0].shape[0]

    def supervision_maps(self) -> list[np.ndarray]:
        """Per-ellipsoid mean closed-loop maps for the runtime supervisor."""
        if self.realized_maps is not None:
            return self.realized_maps
        if self.nominal_maps is not None:
            return self.nominal_maps
        raise ValueError(f"{self.mode} certificate carries no closed-loop maps")

    def to_json(self, path: str | Path) -> None:
        def arrs(x):
            return None if x is None else [np.asarray(a).tolist() for a in x]

        payload = {
            "mode": self.mode,
            "objective": self.objective,
            "config": self.config.to_dict(),
            "directions": self.directions.tolist(),
            "P": arrs(self.P),
            "mu": self.mu.tolist(),
            "K": arrs(self.K),
            "S": arrs(self.S),
            "Y": arrs(self.Y),
            "H": arrs(self.H),
            "eta": None if self.eta is None else self.eta.tolist(),
            "zeta": None if self.zeta is None else self.zeta.tolist(),
            "tau": self.tau,
            "realized_maps": arrs(self.realized_maps),
            "nominal_maps": arrs(self.nominal_maps),
            "noise_gains": self.noise_gains,
            "residuals": self.residuals,
        }
        Path(path).write_text(json.dumps(payload, indent=2))

    @classmethod
    def from_json(cls, path: str | Path) -> "HullCertificate":
        payload = json.loads(Path(path).read_text())

        def arrs(key):
            v = payload.get(key)
            return None if v is None else [np.array(a, dtype=float) for a in v]

        def vec(key):
            v = payload.get(key)
            return None if v is None else np.array(v, dtype=float)

        return cls(
            mode=payload["mode"],
            P=arrs("P"),
            mu=np.array(payload["mu"], dtype=float),
            config=SynthesisConfig.from_dict(payload["config"]),
            objective=float(payload["objective"]),
            directions=np.array(payload["directions"], dtype=float),
            K=arrs("K"),
            S=arrs("S"),
            Y=arrs("Y"),
            H=arrs("H"),
            eta=vec("eta"),
            zeta=vec("zeta"),
            tau=payload.get("tau"),
            realized_maps=arrs("realized_maps"),
            nominal_maps=arrs("nominal_maps"),
            noise_gains=payload.get("noise_gains"),
            residuals=payload.get("residuals", {}),
        )


def _col(expr, n: int):
    return cp.reshape(expr, (n, 1), order="F")


def _shared_blocks(Pv, mu, directions, F, g, floor):
    """Containment, direction-magnitude, and conditioning-floor blocks."""
    n = F.shape[1]
    blocks = []
    for i, P in enumerate(Pv):
        for l in range(F.shape[0]):
            blocks.append((f"contain_{i}_{l}",
                           [[P, _col(P @ F[l], n)], [np.array([[g[l] ** 2]])]]))
        blocks.append((f"direction_{i}",
                       [[np.array([[1.0]]), mu[i] * directions[i]], [P]]))
        if floor > 0.0:
            blocks.append((f"floor_{i}", [[P - floor * np.eye(n)]]))
    return blocks


def _extract_list(values, prefix, count):
    return [values[f"{prefix}{i}"] for i in range(count)]


def _solve_or_raise(problem, what: str) -> SdpSolution:
    sol = solve_sdp(problem)
    if sol.status == "infeasible":
        raise InfeasibleSynthesisError(f"{what}: program certified infeasible", sol)
    if sol.status != "optimal":
        raise SynthesisNumericalError(
            f"{what}: solver failed ({sol.solver}:{sol.raw_status}); "
            f"residuals {sol.residuals}")
    return sol


def _as_polytope(polytope) -> tuple[np.ndarray, np.ndarray]:
    F, g = polytope
    return np.atleast_2d(np.asarray(F, dtype=float)), np.asarray(g, dtype=float).ravel()


def synth_open_loop(A: np.ndarray, polytope, config: SynthesisConfig) -> HullCertificate:
    """Largest contractive hull for the autonomous dynamics (no control)."""
    A = np.asarray(A, dtype=float)
    F, g = _as_polytope(polytope)
    n, n_v = A.shape[0], config.n_v
    ds = config.resolved_directions(F, g)
    specs = {f"P{i}": ("sym", n) for i in range(n_v)}
    specs |= {f"mu{i}": ("scalar", "nonneg") for i in range(n_v)}
    v = declare_variables(specs)
    Pv = [v[f"P{i}"] for i in range(n_v)]
    mu = [v[f"mu{i}"] for i in range(n_v)]
    blocks = []
    for i in range(n_v):
        j = cyclic_partner(i, n_v)
        blocks.append((f"contract_{i}", [[Pv[i], A @ Pv[j]], [config.lam * Pv[j]]]))
    blocks += _shared_blocks(Pv, mu, ds, F, g, config.min_eigenvalue)
    problem = assemble_problem(v, blocks, objective=config.w_mu * cp.sum(cp.hstack(mu)))
    sol = _solve_or_raise(problem, "open-loop synthesis")
    P = _extract_list(sol.values, "P", n_v)
    cert = HullCertificate(
        mode="open_loop", P=P,
        mu=np.array([sol.values[f"mu{i}"] for i in range(n_v)]),
        config=config, objective=sol.objective_value, directions=ds,
        nominal_maps=[A.copy() for _ in range(n_v)],
    )
    _self_check(cert, polytope=(F, g), A=A)
    return cert


def synth_model_based(A: np.ndarray, B: np.ndarray, polytope,
                      config: SynthesisConfig) -> HullCertificate:
    """Joint design of shape matrices and per-ellipsoid state feedback."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    F, g = _as_polytope(polytope)
    n, m, n_v = A.shape[0], B.shape[1], config.n_v
    ds = config.resolved_directions(F, g)
    specs = {f"P{i}": ("sym", n) for i in range(n_v)}
    specs |= {f"S{i}": ("mat", m, n) for i in range(n_v)}
    specs |= {f"mu{i}": ("scalar", "nonneg") for i in range(n_v)}
    v = declare_variables(specs)
    Pv = [v[f"P{i}"] for i in range(n_v)]
    Sv = [v[f"S{i}"] for i in range(n_v)]
    mu = [v[f"mu{i}"] for i in range(n_v)]
    blocks = []
    for i in range(n_v):
        j = cyclic_partner(i, n_v)
        blocks.append((f"contract_{i}",
                       [[Pv[i], A @ Pv[j] + B @ Sv[j]], [config.lam * Pv[j]]]))
    blocks += _shared_blocks(Pv, mu, ds, F, g, config.min_eigenvalue)
    problem = assemble_problem(v, blocks, objective=config.w_mu * cp.sum(cp.hstack(mu)))
    sol = _solve_or_raise(problem, "model-based synthesis")
    P = _extract_list(sol.values, "P", n_v)
    S = _extract_list(sol.values, "S", n_v)
    K = [np.linalg.solve(P[i].T, S[i].T).T for i in range(n_v)]
    cert = HullCertificate(
        mode="model_csie", P=P,
        mu=np.array([sol.values[f"mu{i}"] for i in range(n_v)]),
        config=config, objective=sol.objective_value, directions=ds,
        K=K, S=S, nominal_maps=[A + B @ Ki for Ki in K],
    )
    _self_check(cert, polytope=(F, g), A=A, B=B)
    return cert


def _data_products(data: TrajectoryDataset, P, Y, U0, X1, W0=None):
    n_v = len(P)
    K = [U0 @ Y[i] @ np.linalg.inv(P[i]) for i in range(n_v)]
    realized = [X1 @ Y[i] @ np.linalg.inv(P[i]) for i in range(n_v)]
    gains = [float(np.trace(Y[i] @ np.linalg.solve(P[i], Y[i].T))) for i in range(n_v)]
    nominal = None
    if W0 is not None:
        nominal = [(X1 - W0) @ Y[i] @ np.linalg.inv(P[i]) for i in range(n_v)]
    return K, realized, gains, nominal


def _require_data(data: TrajectoryDataset, need_noise: bool, what: str) -> None:
    report = validate_data_assumptions(data)
    if not report["ok"]:
        raise DataAssumptionError(f"{what}: data fail the excitation rank checks: {report}")
    if need_noise and data.W0 is None:
        raise DataAssumptionError(
            f"{what}: recorded noise W0 is required; without it use the "
            "minimum-variance mode")


def synth_data_ce(data: TrajectoryDataset, polytope,
                  config: SynthesisConfig) -> HullCertificate:
    """Certainty-equivalence design from data with recorded noise."""
    _require_data(data, need_noise=True, what="certainty-equivalence synthesis")
    F, g = _as_polytope(polytope)
    n, T, n_v = data.n, data.num_samples, config.n_v
    ds = config.resolved_directions(F, g)
    X0, X1, U0, W0 = data.X0, data.X1, data.U0, data.W0
    specs = {f"P{i}": ("sym", n) for i in range(n_v)}
    specs |= {f"Y{i}": ("mat", T, n) for i in range(n_v)}
    specs |= {f"mu{i}": ("scalar", "nonneg") for i in range(n_v)}
    v = declare_variables(specs)
    Pv = [v[f"P{i}"] for i in range(n_v)]
    Yv = [v[f"Y{i}"] for i in range(n_v)]
    mu = [v[f"mu{i}"] for i in range(n_v)]
    blocks = []
    for i in range(n_v):
        j = cyclic_partner(i, n_v)
        blocks.append((f"contract_{i}",
                       [[Pv[i], (X1 - W0) @ Yv[j]], [config.lam * Pv[j]]]))
    blocks += _shared_blocks(Pv, mu, ds, F, g, config.min_eigenvalue)
    equalities = [(f"data_consistency_{i}", X0 @ Yv[i], Pv[i]) for i in range(n_v)]
    objective = config.w_mu * cp.sum(cp.hstack(mu))
    if config.y_ridge > 0.0:
        objective = objective - config.y_ridge * sum(cp.sum_squares(Yi) for Yi in Yv)
    problem = assemble_problem(v, blocks, equalities, objective)
    sol = _solve_or_raise(problem, "certainty-equivalence synthesis")
    P = _extract_list(sol.values, "P", n_v)
    Y = _extract_list(sol.values, "Y", n_v)
    K, realized, gains, nominal = _data_products(data, P, Y, U0, X1, W0)
    cert = HullCertificate(
        mode="data_ce", P=P,
        mu=np.array([sol.values[f"mu{i}"] for i in range(n_v)]),
        config=config, objective=sol.objective_value, directions=ds,
        K=K, Y=Y, realized_maps=realized, nominal_maps=nominal, noise_gains=gains,
    )
    _self_check(cert, polytope=(F, g), data=data)
    return cert


def synth_data_minvar(data: TrajectoryDataset, polytope, config: SynthesisConfig,
                      Sigma: np.ndarray) -> HullCertificate:
    """Risk-aware design from data without noise measurements.

    For each tau in the grid the program is an SDP; the best feasible
    objective wins and the chosen tau is recorded on the certificate.
    """
    _require_data(data, need_noise=False, what="minimum-variance synthesis")
    F, g = _as_polytope(polytope)
    n, T, n_v = data.n, data.num_samples, config.n_v
    ds = config.resolved_directions(F, g)
    X0, X1, U0 = data.X0, data.X1, data.U0
    Sigma = np.asarray(Sigma, dtype=float)
    Sig_half = psd_sqrt(Sigma)
    delta_n = noise_concentration_bound(n, config.delta)
    grid = config.resolved_tau_grid()
    valid = [float(t) for t in grid if 0.0 < t < config.lam]
    if not valid:
        raise InfeasibleSynthesisError(
            f"no tau in the grid {np.round(grid, 4).tolist()} lies inside "
            f"(0, {config.lam}); the contraction block (lam - tau) P_j needs tau < lam")

    best: tuple[float, float, SdpSolution] | None = None
    statuses: dict[float, str] = {}
    for tau in valid:
        specs = {f"P{i}": ("sym", n) for i in range(n_v)}
        specs |= {f"Y{i}": ("mat", T, n) for i in range(n_v)}
        specs |= {f"H{i}": ("sym", T) for i in range(n_v)}
        specs |= {f"mu{i}": ("scalar", "nonneg") for i in range(n_v)}
        specs |= {f"eta{i}": ("scalar", "nonneg") for i in range(n_v)}
        specs |= {f"zeta{i}": ("scalar",) for i in range(n_v)}
        v = declare_variables(specs)
        Pv = [v[f"P{i}"] for i in range(n_v)]
        Yv = [v[f"Y{i}"] for i in range(n_v)]
        Hv = [v[f"H{i}"] for i in range(n_v)]
        mu = [v[f"mu{i}"] for i in range(n_v)]
        eta = [v[f"eta{i}"] for i in range(n_v)]
        zeta = [v[f"zeta{i}"] for i in range(n_v)]
        blocks = []
        for i in range(n_v):
            j = cyclic_partner(i, n_v)
            blocks.append((f"contract_{i}", [
                [Pv[i], X1 @ Yv[j], eta[j] * Sig_half],
                [(config.lam - tau) * Pv[j], np.zeros((n, n))],
                [(tau / delta_n) * np.eye(n)],
            ]))
            blocks.append((f"amplification_{i}", [[Hv[i], Yv[i]], [Pv[i]]]))
            blocks.append((f"budget_{i}", [[zeta[i] + 1.0, eta[i]], [np.array([[1.0]])]]))
        blocks += _shared_blocks(Pv, mu, ds, F, g, config.min_eigenvalue)
        equalities = [(f"data_consistency_{i}", X0 @ Yv[i], Pv[i]) for i in range(n_v)]
        # Tr(H_i) <= zeta_i folded in as a 1x1 PSD block
        for i in range(n_v):
            blocks.append((f"trace_budget_{i}", [[zeta[i] - cp.trace(Hv[i])]]))
        objective = cp.sum(cp.hstack(
            [config.w_mu * mu[i] - config.w_eta * eta[i] - config.w_zeta * zeta[i]
             for i in range(n_v)]))
        if config.y_ridge > 0.0:
            objective = objective - config.y_ridge * sum(cp.sum_squares(Yi) for Yi in Yv)
        problem = assemble_problem(v, blocks, equalities, objective)
        sol = solve_sdp(problem)
        statuses[tau] = sol.status
        if sol.status == "optimal" and (best is None or sol.objective_value > best[1]):
            best = (tau, sol.objective_value, sol)
    if best is None:
        detail = ", ".join(f"tau={t:.4g}: {s}" for t, s in statuses.items())
        if any(s == "infeasible" for s in statuses.values()):
            raise InfeasibleSynthesisError(
                f"minimum-variance synthesis infeasible over the tau grid ({detail})")
        raise SynthesisNumericalError(
            f"minimum-variance synthesis failed over the tau grid ({detail})")
    tau, _, sol = best
    P = _extract_list(sol.values, "P", n_v)
    Y = _extract_list(sol.values, "Y", n_v)
    K, realized, gains, _ = _data_products(data, P, Y, U0, X1)
    cert = HullCertificate(
        mode="data_minvar", P=P,
        mu=np.array([sol.values[f"mu{i}"] for i in range(n_v)]),
        config=config, objective=sol.objective_value, directions=ds,
        K=K, Y=Y, H=_extract_list(sol.values, "H", n_v),
        eta=np.array([sol.values[f"eta{i}"] for i in range(n_v)]),
        zeta=np.array([sol.values[f"zeta{i}"] for i in range(n_v)]),
        tau=tau, realized_maps=realized, noise_gains=gains,
    )
    _self_check(cert, polytope=(F, g), data=data, Sigma=Sigma)
    return cert


@dataclass
class SynthesisVerdict:
    """Outcome of the single-ellipsoid baseline run."""

    feasible: bool
    certificate: HullCertificate | None
    status: str
    detail: str = ""


def synth_single_baseline(model_or_data, polytope, config: SynthesisConfig) -> SynthesisVerdict:
    """Traditional single contractive-ellipsoid design (one set, self-paired).

    Accepts either a (A, B) pair (state-feedback design), a bare A matrix
    (autonomous), or a TrajectoryDataset with recorded noise.
    """
    cfg = SynthesisConfig(
        lam=config.lam, delta=config.delta, n_v=1,
        directions=None if config.directions is None else config.directions[:1],
        tau_grid=config.tau_grid, w_mu=config.w_mu, w_eta=config.w_eta,
        w_zeta=config.w_zeta, min_eigenvalue=config.min_eigenvalue,
        y_ridge=config.y_ridge)
    try:
        if isinstance(model_or_data, TrajectoryDataset):
            cert = synth_data_ce(model_or_data, polytope, cfg)
        elif isinstance(model_or_data, tuple):
            cert = synth_model_based(model_or_data[0], model_or_data[1], polytope, cfg)
        else:
            cert = synth_open_loop(model_or_data, polytope, cfg)
    except InfeasibleSynthesisError as exc:
        return SynthesisVerdict(False, None, "infeasible", str(exc))
    cert.mode = "single_baseline"
    return SynthesisVerdict(True, cert, "optimal")


def verify_certificate(cert: HullCertificate, polytope, A=None, B=None,
                       data: TrajectoryDataset | None = None, Sigma=None,
                       tol: float = CERT_TOL) -> dict:
    """Re-substitute the certificate into every generating constraint.

    Checks each PSD block through :func:`schur_psd_check` plus eigenvalue
    floors, and the data-consistency equalities.  Returns the residual
    report; `ok` is True when everything holds within `tol`.
    """
    F, g = _as_polytope(polytope)
    n, n_v, lam = cert.n, cert.n_v, cert.config.lam
    worst_psd, worst_eq = 0.0, 0.0
    blocks_checked = 0

    def eig_floor(M):
        return max(0.0, -float(np.linalg.eigvalsh((M + M.T) / 2.0).min()))

    def check2(M11, M12, M22):
        nonlocal worst_psd, blocks_checked
        blocks_checked += 1
        if not schur_psd_check(M11, M12, M22, tol=tol):
            full = np.block([[np.atleast_2d(M11), np.atleast_2d(M12)],
                             [np.atleast_2d(M12).T, np.atleast_2d(M22)]])
            worst_psd = max(worst_psd, eig_floor(full))

    contraction_maps = _contraction_maps(cert, A=A, B=B, data=data)
    for i in range(n_v):
        j = cyclic_partner(i, n_v)
        Pi, Pj = cert.P[i], cert.P[j]
        if cert.mode == "data_minvar":
            Sig_half = psd_sqrt(np.asarray(Sigma, dtype=float))
            delta_n = noise_concentration_bound(n, cert.config.delta)
            tau = float(cert.tau)
            M12 = np.hstack([contraction_maps[j], cert.eta[j] * Sig_half])
            M22 = np.block([
                [(lam - tau) * Pj, np.zeros((n, n))],
                [np.zeros((n, n)), (tau / delta_n) * np.eye(n)],
            ])
            check2(Pi, M12, M22)
            check2(cert.H[i], cert.Y[i], Pi)
            check2(np.array([[cert.zeta[i] + 1.0]]), np.array([[cert.eta[i]]]),
                   np.array([[1.0]]))
            trace_slack = cert.zeta[i] - float(np.trace(cert.H[i]))
            worst_psd = max(worst_psd, max(0.0, -trace_slack))
            blocks_checked += 1
        else:
            check2(Pi, contraction_maps[j], lam * Pj)
        for l in range(F.shape[0]):
            check2(Pi, (Pi @ F[l]).reshape(n, 1), np.array([[g[l] ** 2]]))
        check2(np.array([[1.0]]), (cert.mu[i] * cert.directions[i]).reshape(1, n), Pi)
        if cert.config.min_eigenvalue > 0.0:
            worst_psd = max(worst_psd, eig_floor(Pi - cert.config.min_eigenvalue * np.eye(n)))
            blocks_checked += 1
        if cert.Y is not None and data is not None:
            worst_eq = max(worst_eq, float(np.max(np.abs(data.X0 @ cert.Y[i] - Pi))))
    report = {
        "ok": worst_psd <= tol and worst_eq <= tol,
        "max_psd_violation": worst_psd,
        "max_equality_violation": worst_eq,
        "blocks_checked": blocks_checked,
        "tolerance": tol,
    }
    return report


def _contraction_maps(cert: HullCertificate, A=None, B=None,
                      data: TrajectoryDataset | None = None) -> list[np.ndarray]:
    """The matrix appearing beside P_i in each contraction block, per j."""
    n_v = cert.n_v
    if cert.mode == "open_loop" or (cert.mode == "single_baseline"
                                    and cert.S is None and cert.Y is None):
        if A is None:
            raise ValueError("verification of an open-loop certificate needs A")
        return [np.asarray(A, dtype=float) @ cert.P[j] for j in range(n_v)]
    if cert.mode in ("model_csie", "single_baseline") and cert.S is not None:
        if A is None or B is None:
            raise ValueError("verification of a model-based certificate needs A and B")
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
        return [A @ cert.P[j] + B @ cert.S[j] for j in range(n_v)]
    if data is None:
        raise ValueError(f"verification of a {cert.mode} certificate needs the dataset")
    if cert.mode == "data_ce" or (cert.mode == "single_baseline" and cert.Y is not None):
        return [(data.X1 - data.W0) @ cert.Y[j] for j in range(n_v)]
    if cert.mode == "data_minvar":
        return [data.X1 @ cert.Y[j] for j in range(n_v)]
    raise ValueError(f"cannot derive contraction blocks for mode {cert.mode}")


def _self_check(cert: HullCertificate, polytope, A=None, B=None,
                data: TrajectoryDataset | None = None, Sigma=None) -> None:
    report = verify_certificate(cert, polytope, A=A, B=B, data=data, Sigma=Sigma)
    cert.residuals = report
    if not report["ok"]:
        raise SynthesisNumericalError(
            f"certificate failed re-verification: {report}")


class HullSynthesizer(BaseEstimator):
    """Estimator facade over the synthesis programs.

    After `fit`, exposes `certificate_`, the extreme-point cloud
    (`extreme_points_`, `point_owners_`), and the inner polytope `hull_`.
    """

    def __init__(self, mode: str = "minvar", lam: float = 0.8, delta: float = 0.1,
                 n_v: int = 3, directions=None, tau_grid=None, w_mu: float = 1.0,
                 w_eta: float = 1.0, w_zeta: float = 1.0,
                 min_eigenvalue: float = 0.0, y_ridge: float = 0.0):
        self.mode = mode
        self.lam = lam
        self.delta = delta
        self.n_v = n_v
        self.directions = directions
        self.tau_grid = tau_grid
        self.w_mu = w_mu
        self.w_eta = w_eta
        self.w_zeta = w_zeta
        self.min_eigenvalue = min_eigenvalue
        self.y_ridge = y_ridge

    def build_config(self) -> SynthesisConfig:
        return SynthesisConfig(
            lam=self.lam, delta=self.delta, n_v=self.n_v,
            directions=None if self.directions is None else np.asarray(self.directions, dtype=float),
            tau_grid=None if self.tau_grid is None else np.asarray(self.tau_grid, dtype=float),
            w_mu=self.w_mu, w_eta=self.w_eta, w_zeta=self.w_zeta,
            min_eigenvalue=self.min_eigenvalue, y_ridge=self.y_ridge)

    def fit(self, data: TrajectoryDataset | None = None, polytope=None,
            A=None, B=None, Sigma=None) -> "HullSynthesizer":
        if polytope is None:
            raise ValueError("polytope (F, g) is required")
        mode = canonical_mode(self.mode)
        config = self.build_config()
        if mode == "open_loop":
            cert = synth_open_loop(A, polytope, config)
        elif mode == "model_csie":
            cert = synth_model_based(A, B, polytope, config)
        elif mode == "data_ce":
            cert = synth_data_ce(data, polytope, config)
        elif mode == "data_minvar":
            cert = synth_data_minvar(data, polytope, config, Sigma)
        else:
            source = data if data is not None else (A, B) if B is not None else A
            verdict = synth_single_baseline(source, polytope, config)
            if not verdict.feasible:
                raise InfeasibleSynthesisError(
                    f"single-ellipsoid baseline infeasible: {verdict.detail}")
            cert = verdict.certificate
        self.certificate_ = cert
        self.extreme_points_, self.point_owners_ = extract_extreme_points(cert.P)
        self.hull_ = build_hull_polytope(self.extreme_points_, self.point_owners_)
        return self

    def predict_gauge(self, X: np.ndarray) -> np.ndarray:
        """Hull-polytope gauge per row of X (1 on the boundary)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self.hull_.gauge(x) for x in X])
