"""Runtime safety filter: chance-constrained screening of RL actions.

Given the hull polytope {x : F x <= 1}, the supervisor predicts the mean
successor under the proposed action through the certificate's realized
closed-loop map, tightens every hull row by a risk-dependent back-off
gamma_s = kappa_s sqrt(F_s V_R F_s'), and passes the RL action through
untouched when all tightened rows hold.  Otherwise it blends toward the safe
policy with the smallest interpolation scalar phi that restores all rows,
falling back to the safe policy outright when even phi = 1 fails.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import HullPolytope
from .policies import PartitionedPolicy
from .synthesis import HullCertificate, noise_concentration_bound

PHI_TOL = 1e-6
GAUGE_TOL = 1e-9


@dataclass
class RiskAllocation:
    """Per-row risk budget epsilon_s summing to at most the total epsilon."""

    epsilon: float
    epsilon_s: np.ndarray

    def __post_init__(self) -> None:
        self.epsilon_s = np.asarray(self.epsilon_s, dtype=float).ravel()
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("total risk must lie in (0, 1)")
        if np.any(self.epsilon_s <= 0.0) or np.any(self.epsilon_s >= 1.0):
            raise ValueError("per-row risks must lie in (0, 1)")
        if self.epsilon_s.sum() > self.epsilon + 1e-12:
            raise ValueError(
                f"per-row risks sum to {self.epsilon_s.sum():.4g} > {self.epsilon}")

    @classmethod
    def uniform(cls, epsilon: float, num_rows: int) -> "RiskAllocation":
        return cls(epsilon, np.full(num_rows, epsilon / num_rows))

    @property
    def kappas(self) -> np.ndarray:
        return np.sqrt((1.0 - self.epsilon_s) / self.epsilon_s)


@dataclass
class BPrior:
    """Gaussian prior on the input matrix: nominal B_n with spread Delta_B."""

    B_n: np.ndarray
    Delta_B: np.ndarray

    def __post_init__(self) -> None:
        self.B_n = np.asarray(self.B_n, dtype=float)
        if self.B_n.ndim == 1:
            self.B_n = self.B_n.reshape(-1, 1)
        self.Delta_B = np.asarray(self.Delta_B, dtype=float)
        if self.Delta_B.ndim == 1:
            self.Delta_B = self.Delta_B.reshape(-1, 1)
        if self.Delta_B.shape != self.B_n.shape:
            raise ValueError(f"Delta_B shape {self.Delta_B.shape} != B_n shape "
                             f"{self.B_n.shape}")


@dataclass
class SupervisionOutcome:
    u_applied: np.ndarray
    phi: float
    mode: str  # rl_pass | interpolated | safe_fallback
    margins: np.ndarray
    region: int = -1
    out_of_hull: bool = False


def compute_VR(noise_gain: float, Sigma: np.ndarray, b_prior: BPrior,
               delta_u: np.ndarray) -> np.ndarray:
    """Successor-variance proxy (Tr(G P G') + 1) Sigma + DB du du' DB'."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    du = np.asarray(delta_u, dtype=float).reshape(-1, 1)
    spread = b_prior.Delta_B @ du
    return (noise_gain + 1.0) * Sigma + spread @ spread.T


def tighten_rows(risk: RiskAllocation, V_R: np.ndarray, F: np.ndarray,
                 g: np.ndarray) -> np.ndarray:
    """Per-row back-off gamma_s = kappa_s sqrt(F_s V_R F_s')."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if risk.epsilon_s.shape[0] != F.shape[0]:
        raise ValueError(f"risk allocation covers {risk.epsilon_s.shape[0]} rows, "
                         f"polytope has {F.shape[0]}")
    quad = np.einsum("si,ij,sj->s", F, np.atleast_2d(V_R), F)
    return risk.kappas * np.sqrt(np.clip(quad, 0.0, None))


def criterion_margins(F: np.ndarray, g: np.ndarray, mean_next: np.ndarray,
                      gammas: np.ndarray) -> np.ndarray:
    """Slack of every tightened row: g - gamma - F m (>= 0 means pass)."""
    return np.asarray(g, dtype=float).ravel() - gammas - np.atleast_2d(F) @ np.asarray(
        mean_next, dtype=float).ravel()


def confidence_ellipsoid(cert: HullCertificate, j: int, x: np.ndarray,
                         Sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-step confidence ellipsoid (center, shape V_j) at risk delta.

    The successor lands in {v : (v - c)' V_j^{-1} (v - c) <= 1} with
    probability at least 1 - delta, where c is the realized mean map applied
    to x and V_j inflates the noise covariance by the sub-Gaussian radius and
    the data channel's amplification.
    """
    if cert.realized_maps is None or cert.noise_gains is None:
        raise ValueError("confidence ellipsoids need a data-driven certificate")
    center = cert.realized_maps[j] @ np.asarray(x, dtype=float).ravel()
    radius = noise_concentration_bound(cert.n, cert.config.delta)
    V_j = radius * (cert.noise_gains[j] + 1.0) * np.atleast_2d(np.asarray(Sigma, dtype=float))
    return center, V_j


@dataclass
class Supervisor:
    """Immutable policy bundle evaluated per (state, proposed action)."""

    hull: HullPolytope
    policy: PartitionedPolicy
    maps: list[np.ndarray]        # per-ellipsoid mean closed-loop maps
    noise_gains: list[float]      # per-ellipsoid Tr(G P G')
    Sigma: np.ndarray
    b_prior: BPrior
    risk: RiskAllocation
    fallback_events: int = field(default=0, compare=False)

    @classmethod
    def from_certificate(cls, cert: HullCertificate, policy: PartitionedPolicy,
                         Sigma: np.ndarray, b_prior: BPrior,
                         risk: RiskAllocation | None = None,
                         epsilon: float = 0.1) -> "Supervisor":
        maps = cert.supervision_maps()
        gains = cert.noise_gains if cert.noise_gains is not None else [0.0] * cert.n_v
        if risk is None:
            risk = RiskAllocation.uniform(epsilon, policy.hull.num_facets)
        return cls(policy.hull, policy, maps, list(gains),
                   np.atleast_2d(np.asarray(Sigma, dtype=float)), b_prior, risk)

    def _margins(self, x: np.ndarray, owner: int, u_cand: np.ndarray,
                 u_safe: np.ndarray) -> np.ndarray:
        du = np.asarray(u_cand, dtype=float).ravel() - u_safe
        V_R = compute_VR(self.noise_gains[owner], self.Sigma, self.b_prior, du)
        gammas = tighten_rows(self.risk, V_R, self.hull.F, self.hull.g)
        mean_next = self.maps[owner] @ x + self.b_prior.B_n @ du
        return criterion_margins(self.hull.F, self.hull.g, mean_next, gammas)

    def safety_criterion(self, x: np.ndarray, u_rl: np.ndarray) -> tuple[bool, np.ndarray]:
        """Margins of the tightened hull rows for the proposed action."""
        x = np.asarray(x, dtype=float).ravel()
        rid, _ = self.policy.locate(x, require_inside=False)
        owner = self.policy.regions[rid].owner
        u_safe = self.policy.gains[rid] @ x
        margins = self._margins(x, owner, u_rl, u_safe)
        return bool(margins.min() >= 0.0), margins

    def interpolate_phi(self, x: np.ndarray, u_rl: np.ndarray) -> tuple[float, np.ndarray]:
        """Smallest phi in [0, 1] restoring all rows; assumes phi=1 passes."""
        x = np.asarray(x, dtype=float).ravel()
        rid, _ = self.policy.locate(x, require_inside=False)
        owner = self.policy.regions[rid].owner
        u_safe = self.policy.gains[rid] @ x
        u_rl = np.asarray(u_rl, dtype=float).ravel()

        def passes(phi: float) -> bool:
            u = phi * u_safe + (1.0 - phi) * u_rl
            return float(self._margins(x, owner, u, u_safe).min()) >= 0.0

        lo, hi = 0.0, 1.0
        while hi - lo > PHI_TOL:
            mid = 0.5 * (lo + hi)
            if passes(mid):
                hi = mid
            else:
                lo = mid
        return hi, hi * u_safe + (1.0 - hi) * u_rl

    def step(self, x: np.ndarray, u_rl: np.ndarray) -> SupervisionOutcome:
        x = np.asarray(x, dtype=float).ravel()
        u_rl = np.asarray(u_rl, dtype=float).ravel()
        rid, _ = self.policy.locate(x, require_inside=False)
        owner = self.policy.regions[rid].owner
        u_safe = self.policy.gains[rid] @ x
        if self.hull.gauge(x) > 1.0 + GAUGE_TOL:
            margins = self._margins(x, owner, u_safe, u_safe)
            self.fallback_events += 1
            return SupervisionOutcome(u_safe, 1.0, "safe_fallback", margins,
                                      rid, out_of_hull=True)
        margins0 = self._margins(x, owner, u_rl, u_safe)
        if margins0.min() >= 0.0:
            return SupervisionOutcome(u_rl.copy(), 0.0, "rl_pass", margins0, rid)
        margins1 = self._margins(x, owner, u_safe, u_safe)
        if margins1.min() < 0.0:
            self.fallback_events += 1
            if self.fallback_events == 1:
                warnings.warn("tightened rows are unsatisfiable even for the safe "
                              "action; risk budget too tight for this noise level",
                              RuntimeWarning, stacklevel=2)
            return SupervisionOutcome(u_safe, 1.0, "safe_fallback", margins1, rid)
        phi, u_s = self.interpolate_phi(x, u_rl)
        margins = self._margins(x, owner, u_s, u_safe)
        return SupervisionOutcome(u_s, phi, "interpolated", margins, rid)

    def supervised_policy(self, rl_policy, log: "SupervisionLog | None" = None):
        """Wrap an (t, x) -> u policy so every action is screened."""

        def policy(t: int, x: np.ndarray) -> np.ndarray:
            u_rl = rl_policy(t, x)
            outcome = self.step(x, u_rl)
            if log is not None:
                log.append(t, x, u_rl, outcome)
            return outcome.u_applied

        return policy


class SupervisionLog:
    """Per-step record of supervision decisions, exportable as CSV."""

    def __init__(self) -> None:
        self.rows: list[dict] = []

    def append(self, t: int, x: np.ndarray, u_rl: np.ndarray,
               outcome: SupervisionOutcome) -> None:
        self.rows.append({
            "t": t,
            "x": np.asarray(x, dtype=float).ravel().copy(),
            "u_rl": np.asarray(u_rl, dtype=float).ravel().copy(),
            "u_applied": np.asarray(outcome.u_applied, dtype=float).ravel().copy(),
            "phi": outcome.phi,
            "mode": outcome.mode,
            "min_margin": float(outcome.margins.min()),
        })

    def counts(self) -> dict[str, int]:
        out = {"rl_pass": 0, "interpolated": 0, "safe_fallback": 0}
        for row in self.rows:
            out[row["mode"]] += 1
        return out

    def save(self, path: str | Path) -> None:
        if not self.rows:
            Path(path).write_text("t,phi,mode,min_margin\n")
            return
        n = self.rows[0]["x"].shape[0]
        m = self.rows[0]["u_rl"].shape[0]
        header = (["t"] + [f"x{i}" for i in range(n)] + [f"u_rl{i}" for i in range(m)]
                  + [f"u_applied{i}" for i in range(m)] + ["phi", "mode", "min_margin"])
        lines = [",".join(header)]
        for row in self.rows:
            cells = ([str(row["t"])] + [f"{v:.10g}" for v in row["x"]]
                     + [f"{v:.10g}" for v in row["u_rl"]]
                     + [f"{v:.10g}" for v in row["u_applied"]]
                     + [f"{row['phi']:.8f}", row["mode"], f"{row['min_margin']:.10g}"])
            lines.append(",".join(cells))
        Path(path).write_text("\n".join(lines) + "\n")
