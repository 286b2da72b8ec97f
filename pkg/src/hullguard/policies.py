"""Piecewise-affine safe policy over hull partitions, plus the LQR baseline.

Each partition region is a simplicial cone over one hull facet; its gain
interpolates the per-ellipsoid vertex controls u_i = K_i v_i through the
pseudo-inverse of the vertex matrix, which makes the control continuous
across shared region boundaries and exact at every vertex.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import HullPolytope, PartitionRegion, build_partitions

LOCATE_TOL = 1e-9
RANK_RTOL = 1e-10


class OutOfHullError(ValueError):
    """State lies outside the hull polytope; the supervisor handles this case."""


@dataclass
class PartitionedPolicy:
    """Safe control u = K_p x on the region p whose cone contains x."""

    hull: HullPolytope
    regions: list[PartitionRegion]
    gains: np.ndarray            # (S, m, n)
    vertex_inverses: np.ndarray  # (S, n, n), inverses of the vertex matrices
    vertex_controls: list[np.ndarray]  # (m, n) per region, columns match vertices
    source_mode: str = ""

    @property
    def num_regions(self) -> int:
        return len(self.regions)

    @property
    def n(self) -> int:
        return self.hull.n

    def locate(self, x: np.ndarray, require_inside: bool = True) -> tuple[int, np.ndarray]:
        """Region id and conic coordinates Gamma with V_p Gamma = x.

        Regions are cones, so every direction lands somewhere; with
        `require_inside` the hull gauge is enforced first.  Boundary ties
        resolve to the lowest region id.
        """
        x = np.asarray(x, dtype=float).ravel()
        if require_inside and self.hull.gauge(x) > 1.0 + LOCATE_TOL:
            raise OutOfHullError(f"state with hull gauge {self.hull.gauge(x):.4f} "
                                 "is outside the safe set")
        coords = np.einsum("sij,j->si", self.vertex_inverses, x)
        mins = coords.min(axis=1)
        feasible = mins >= -LOCATE_TOL
        idx = int(np.argmax(feasible)) if feasible.any() else int(np.argmax(mins))
        return idx, coords[idx]

    def __call__(self, t: int, x: np.ndarray) -> np.ndarray:
        return safe_control(self, x)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.vstack([safe_control(self, x) for x in X])

    def to_json(self, path: str | Path, supervision: dict | None = None) -> None:
        payload = {
            "source_mode": self.source_mode,
            "hull": self.hull.to_dict(),
            "regions": [
                {
                    "index": r.index,
                    "vertex_ids": r.vertex_ids.tolist(),
                    "vertices": r.vertices.tolist(),
                    "owner": r.owner,
                    "facet_row": r.facet_row.tolist(),
                    "gain": self.gains[k].tolist(),
                    "vertex_controls": self.vertex_controls[k].tolist(),
                }
                for k, r in enumerate(self.regions)
            ],
        }
        if supervision is not None:
            payload["supervision"] = supervision
        Path(path).write_text(json.dumps(payload, indent=2))

    @classmethod
    def from_json(cls, path: str | Path) -> "PartitionedPolicy":
        payload = json.loads(Path(path).read_text())
        hull = HullPolytope.from_dict(payload["hull"])
        regions, gains, inverses, controls = [], [], [], []
        for r in payload["regions"]:
            V = np.array(r["vertices"], dtype=float)
            K = np.array(r["gain"], dtype=float)
            U = np.array(r["vertex_controls"], dtype=float)
            # reject a tampered or mismatched file before trusting it
            if np.max(np.abs(K @ V - U)) > 1e-8 * max(1.0, np.abs(U).max()):
                raise ValueError(f"region {r['index']}: stored gain does not "
                                 "reproduce the stored vertex controls")
            regions.append(PartitionRegion(
                index=int(r["index"]),
                vertex_ids=np.array(r["vertex_ids"], dtype=int),
                vertices=V,
                owner=int(r["owner"]),
                facet_row=np.array(r["facet_row"], dtype=float),
            ))
            gains.append(K)
            inverses.append(np.linalg.inv(V))
            controls.append(U)
        return cls(hull, regions, np.array(gains), np.array(inverses),
                   controls, payload.get("source_mode", ""))


def load_policy_bundle(path: str | Path) -> tuple[PartitionedPolicy, dict | None]:
    policy = PartitionedPolicy.from_json(path)
    payload = json.loads(Path(path).read_text())
    return policy, payload.get("supervision")


def precompute_partition_gains(
    hull: HullPolytope,
    ellipsoid_gains: list[np.ndarray],
    source_mode: str = "",
    regions: list[PartitionRegion] | None = None,
) -> PartitionedPolicy:
    """Per-region gains K_p = [u_1 ... u_n] V_v S_v^{-1} U_v^T from thin SVD.

    u_k = K_i v_k with K_i the gain of the ellipsoid owning vertex v_k, so
    K_p reproduces every vertex control exactly and adjacent regions agree on
    shared vertices.
    """
    if regions is None:
        regions = build_partitions(hull)
    Ks = [np.atleast_2d(np.asarray(K, dtype=float)) for K in ellipsoid_gains]
    gains, inverses, controls = [], [], []
    for reg in regions:
        V = reg.vertices
        us = np.column_stack([
            Ks[hull.vertex_owners[vid]] @ hull.vertices[vid] for vid in reg.vertex_ids
        ])
        U_, S_, Vt_ = np.linalg.svd(V, full_matrices=False)
        if S_.min() <= RANK_RTOL * S_.max():
            raise ValueError(
                f"region {reg.index}: vertex matrix is rank deficient "
                f"(singular values {S_.tolist()}); the facet is degenerate")
        gains.append(us @ Vt_.T @ np.diag(1.0 / S_) @ U_.T)
        inverses.append(np.linalg.inv(V))
        controls.append(us)
    return PartitionedPolicy(hull, regions, np.array(gains), np.array(inverses),
                             controls, source_mode)


def locate_partition(policy: PartitionedPolicy, x: np.ndarray) -> tuple[int, np.ndarray]:
    return policy.locate(x, require_inside=True)


def safe_control(policy: PartitionedPolicy, x: np.ndarray,
                 require_inside: bool = False) -> np.ndarray:
    """u = K_p x for the region containing x (cones extend beyond the hull)."""
    x = np.asarray(x, dtype=float).ravel()
    idx, _ = policy.locate(x, require_inside=require_inside)
    return policy.gains[idx] @ x


@dataclass
class LqrPolicy:
    """Infinite-horizon LQR standing in for the learned optimal policy."""

    K: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray

    def __call__(self, t: int, x: np.ndarray) -> np.ndarray:
        return self.K @ np.asarray(x, dtype=float).ravel()

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.K.T


def lqr_riccati(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
                tol: float = 1e-12, max_iter: int = 100_000,
                require_stable: bool = True) -> LqrPolicy:
    """Value iteration on the discrete Riccati recursion to its fixed point.

    With `require_stable=False`, marginally stable closed loops are allowed:
    cost weights that leave a state unpenalized (undetectable modes) converge
    to a gain that simply ignores that state.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    converged = False
    for _ in range(max_iter):
        BtP = B.T @ P
        Pn = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
        if np.max(np.abs(Pn - P)) < tol:
            P = Pn
            converged = True
            break
        P = Pn
    if not converged:
        raise RuntimeError(f"Riccati value iteration did not converge in {max_iter} steps")
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    closed = A + B @ K
    rho = float(np.max(np.abs(np.linalg.eigvals(closed))))
    if require_stable and rho >= 1.0:
        raise RuntimeError(f"LQR closed loop is not stable (spectral radius {rho:.4f})")
    return LqrPolicy(K=K, Q=Q, R=R, P=P)
