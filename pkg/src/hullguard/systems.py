"""Discrete-time LTI systems with polytopic state constraints and trajectory data.

A system is x+ = A x + B u + w with w zero-mean Gaussian, constrained to the
polytope {x : F x <= g}.  Datasets are the standard data matrices (X0, X1, U0,
and optionally the realized noise W0) collected from excited trajectories.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

DIVERGENCE_LIMIT = 1e9


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(M, dtype=float)))))


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition (tolerates zero)."""
    M = np.asarray(M, dtype=float)
    vals, vecs = np.linalg.eigh((M + M.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return vecs @ np.diag(np.sqrt(vals)) @ vecs.T


@dataclass
class LtiSystem:
    """x+ = A x + B u + w, with state constraints F x <= g and Cov(w) = Sigma."""

    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    g: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self) -> None:
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        self.Sigma = np.asarray(self.Sigma, dtype=float)
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.ndim == 1:
            self.B = self.B.reshape(n, 1)
        if self.B.shape[0] != n:
            raise ValueError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.F.shape[1] != n:
            raise ValueError(f"F has {self.F.shape[1]} columns, expected {n}")
        if self.g.shape[0] != self.F.shape[0]:
            raise ValueError(f"g has {self.g.shape[0]} entries for {self.F.shape[0]} rows of F")
        if np.any(self.g <= 0):
            raise ValueError("g must be strictly positive (origin interior to the polytope)")
        if self.Sigma.shape != (n, n):
            raise ValueError(f"Sigma must be {n}x{n}, got {self.Sigma.shape}")
        if not np.allclose(self.Sigma, self.Sigma.T, atol=1e-12):
            raise ValueError("Sigma must be symmetric")
        if np.linalg.eigvalsh((self.Sigma + self.Sigma.T) / 2.0).min() < -1e-12:
            raise ValueError("Sigma must be positive semidefinite")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def num_constraints(self) -> int:
        return self.F.shape[0]

    def noise_sqrt(self) -> np.ndarray:
        return psd_sqrt(self.Sigma)

    def to_json(self, path: str | Path) -> None:
        payload = {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "F": self.F.tolist(),
            "g": self.g.tolist(),
            "Sigma": self.Sigma.tolist(),
        }
        Path(path).write_text(json.dumps(payload, indent=2))

    @classmethod
    def from_json(cls, path: str | Path) -> "LtiSystem":
        payload = json.loads(Path(path).read_text())
        return cls(
            A=np.array(payload["A"], dtype=float),
            B=np.array(payload["B"], dtype=float),
            F=np.array(payload["F"], dtype=float),
            g=np.array(payload["g"], dtype=float),
            Sigma=np.array(payload["Sigma"], dtype=float),
        )


@dataclass
class TrajectoryDataset:
    """Data matrices with samples as columns: X1 = A X0 + B U0 + W0."""

    X0: np.ndarray
    X1: np.ndarray
    U0: np.ndarray
    W0: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.X0 = np.atleast_2d(np.asarray(self.X0, dtype=float))
        self.X1 = np.atleast_2d(np.asarray(self.X1, dtype=float))
        self.U0 = np.atleast_2d(np.asarray(self.U0, dtype=float))
        if self.W0 is not None:
            self.W0 = np.atleast_2d(np.asarray(self.W0, dtype=float))
        T = self.X0.shape[1]
        if self.X1.shape != self.X0.shape:
            raise ValueError(f"X1 shape {self.X1.shape} != X0 shape {self.X0.shape}")
        if self.U0.shape[1] != T:
            raise ValueError(f"U0 has {self.U0.shape[1]} columns, expected {T}")
        if self.W0 is not None and self.W0.shape != self.X0.shape:
            raise ValueError(f"W0 shape {self.W0.shape} != X0 shape {self.X0.shape}")

    @property
    def num_samples(self) -> int:
        return self.X0.shape[1]

    @property
    def n(self) -> int:
        return self.X0.shape[0]

    @property
    def m(self) -> int:
        return self.U0.shape[0]

    def save(self, directory: str | Path) -> None:
        """One CSV per matrix, comma-delimited, rows as matrix rows."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.savetxt(d / "X0.csv", self.X0, delimiter=",")
        np.savetxt(d / "X1.csv", self.X1, delimiter=",")
        np.savetxt(d / "U0.csv", self.U0, delimiter=",")
        if self.W0 is not None:
            np.savetxt(d / "W0.csv", self.W0, delimiter=",")

    @classmethod
    def load(cls, directory: str | Path) -> "TrajectoryDataset":
        d = Path(directory)
        w0_path = d / "W0.csv"
        return cls(
            X0=np.loadtxt(d / "X0.csv", delimiter=",", ndmin=2),
            X1=np.loadtxt(d / "X1.csv", delimiter=",", ndmin=2),
            U0=np.loadtxt(d / "U0.csv", delimiter=",", ndmin=2),
            W0=np.loadtxt(w0_path, delimiter=",", ndmin=2) if w0_path.exists() else None,
        )


def simulate_trajectory(
    system: LtiSystem,
    x0: np.ndarray,
    policy: Callable[[int, np.ndarray], np.ndarray],
    horizon: int,
    rng: np.random.Generator,
    with_noise: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """Roll the closed loop for `horizon` steps.

    Returns (states, inputs, noises, diverged) with states of shape
    (n, horizon+1).  Aborts early once the state infinity norm exceeds the
    divergence limit; the returned arrays are truncated at the abort step.
    """
    n, m = system.n, system.m
    S = system.noise_sqrt() if with_noise else np.zeros((n, n))
    states = np.zeros((n, horizon + 1))
    inputs = np.zeros((m, horizon))
    noises = np.zeros((n, horizon))
    x = np.asarray(x0, dtype=float).ravel()
    if x.shape[0] != n:
        raise ValueError(f"x0 has dimension {x.shape[0]}, expected {n}")
    states[:, 0] = x
    for t in range(horizon):
        u = np.asarray(policy(t, x), dtype=float).ravel()
        if u.shape[0] != m:
            raise ValueError(f"policy returned input of dimension {u.shape[0]}, expected {m}")
        w = S @ rng.standard_normal(n)
        x = system.A @ x + system.B @ u + w
        inputs[:, t] = u
        noises[:, t] = w
        states[:, t + 1] = x
        if np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            return states[:, : t + 2], inputs[:, : t + 1], noises[:, : t + 1], True
    return states, inputs, noises, False


def collect_dataset(
    system: LtiSystem,
    num_samples: int,
    rng: np.random.Generator,
    input_sampler: Callable[[np.random.Generator], np.ndarray],
    restart_sampler: Callable[[np.random.Generator], np.ndarray] | None = None,
    restart_every: int | None = None,
    record_noise: bool = True,
) -> TrajectoryDataset:
    """Collect (X0, X1, U0, W0) by exciting the open loop.

    The state is re-drawn from `restart_sampler` every `restart_every` steps
    so the samples cover the constraint set instead of collapsing toward the
    origin under a stable A.
    """
    n, m = system.n, system.m
    S = system.noise_sqrt()
    X0 = np.zeros((n, num_samples))
    X1 = np.zeros((n, num_samples))
    U0 = np.zeros((m, num_samples))
    W0 = np.zeros((n, num_samples))
    x = np.zeros(n)
    for k in range(num_samples):
        restart_due = (k == 0) if not restart_every else (k % restart_every == 0)
        if restart_sampler is not None and restart_due:
            x = np.asarray(restart_sampler(rng), dtype=float).ravel()
        u = np.asarray(input_sampler(rng), dtype=float).ravel()
        w = S @ rng.standard_normal(n)
        x_next = system.A @ x + system.B @ u + w
        if np.max(np.abs(x_next)) > DIVERGENCE_LIMIT:
            raise RuntimeError("state diverged during data collection")
        X0[:, k], X1[:, k], U0[:, k], W0[:, k] = x, x_next, u, w
        x = x_next
    return TrajectoryDataset(X0, X1, U0, W0 if record_noise else None)


def validate_data_assumptions(dataset: TrajectoryDataset) -> dict:
    """Rank checks required for data-driven synthesis.

    The stacked matrix [U0; X0] must have full row rank n+m (persistent
    excitation) and X0 alone full row rank n (so a right inverse of the state
    data exists).
    """
    n, m, T = dataset.n, dataset.m, dataset.num_samples
    stacked = np.vstack([dataset.U0, dataset.X0])
    state_rank = int(np.linalg.matrix_rank(dataset.X0))
    stacked_rank = int(np.linalg.matrix_rank(stacked))
    report = {
        "num_samples": T,
        "state_rank": state_rank,
        "state_rank_ok": state_rank == n,
        "input_state_rank": stacked_rank,
        "input_state_rank_ok": stacked_rank == n + m,
        "enough_samples": T >= n + m,
    }
    report["ok"] = bool(
        report["state_rank_ok"] and report["input_state_rank_ok"] and report["enough_samples"]
    )
    return report


def right_inverse_states(X0: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Right inverse of the state data: X0 @ Y = I, via the pseudoinverse."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    Y = np.linalg.pinv(X0)
    err = float(np.max(np.abs(X0 @ Y - np.eye(X0.shape[0]))))
    if err > tol:
        raise ValueError(f"X0 admits no right inverse at tolerance {tol} (residual {err:.2e}); "
                         "check the rank of the state data")
    return Y
