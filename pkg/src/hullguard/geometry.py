"""Convex-hull-of-ellipsoids geometry: extreme points, polytopes, partitions.

The safe set is the convex hull of n_v ellipsoids E(P_i, 1).  Its extreme
points are found by solving the tangency system phi' P_i phi = 1 over
combinations of ellipsoids with damped Newton iterations; the resulting
vertex cloud yields an inner polytopic approximation (convex hull) whose
facets, coned to the origin, partition the safe set into simplicial regions
for piecewise-affine control.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull


class DegenerateHullError(ValueError):
    """The vertex cloud does not span a full-dimensional polytope around 0."""


def rotational_index(i: int, n_v: int) -> int:
    """Cyclic pairing of ellipsoid i with its predecessor, 1-based on both ends."""
    if not 1 <= i <= n_v:
        raise ValueError(f"index {i} out of range 1..{n_v}")
    return (i + n_v - 2) % n_v + 1


def cyclic_partner(i: int, n_v: int) -> int:
    """0-based convenience wrapper around :func:`rotational_index`."""
    return rotational_index(i + 1, n_v) - 1


def ellipsoid_quadratic(x: np.ndarray, P: np.ndarray) -> float:
    """x' P^{-1} x, the squared ellipsoidal gauge of E(P, 1)."""
    x = np.asarray(x, dtype=float).ravel()
    return float(x @ np.linalg.solve(P, x))


def ellipsoid_membership(x: np.ndarray, P: np.ndarray, tol: float = 1e-9) -> bool:
    return ellipsoid_quadratic(x, P) <= 1.0 + tol


def ellipsoid_boundary_points(P: np.ndarray, num: int = 200, seed: int = 0) -> np.ndarray:
    """`num` points on the boundary of E(P, 1), rows as points."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    vals, vecs = np.linalg.eigh((P + P.T) / 2.0)
    sqrtP = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    if n == 2:
        theta = np.linspace(0.0, 2.0 * np.pi, num, endpoint=False)
        circle = np.column_stack([np.cos(theta), np.sin(theta)])
        return circle @ sqrtP.T
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((num, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z @ sqrtP.T


def gauge_polytope(x: np.ndarray, F: np.ndarray, g: np.ndarray) -> float:
    """Minkowski gauge of {x : F x <= g}: max_l F_l x / g_l, clamped at 0."""
    x = np.asarray(x, dtype=float).ravel()
    ratios = (np.atleast_2d(F) @ x) / np.asarray(g, dtype=float).ravel()
    return float(max(0.0, ratios.max()))


def gauge_hull_ellipsoids(x: np.ndarray, Ps: list[np.ndarray] | np.ndarray) -> float:
    """Exact gauge of conv(E(P_1,1), ..., E(P_k,1)) at x.

    Solved as a small second-order cone program: x = sum z_i with each z_i in
    a_i E_i and sum a_i = t minimized.  The cheap upper bound min_i of the
    ellipsoidal gauges short-circuits when some single ellipsoid already
    certifies the needed level.
    """
    import cvxpy as cp

    x = np.asarray(x, dtype=float).ravel()
    if np.allclose(x, 0.0):
        return 0.0
    n = x.shape[0]
    sqrt_invs = []
    for P in Ps:
        vals, vecs = np.linalg.eigh((np.asarray(P) + np.asarray(P).T) / 2.0)
        sqrt_invs.append(vecs @ np.diag(1.0 / np.sqrt(np.clip(vals, 1e-300, None))) @ vecs.T)
    zs = [cp.Variable(n) for _ in Ps]
    alphas = cp.Variable(len(Ps), nonneg=True)
    cons = [sum(zs) == x]
    cons += [cp.norm(Si @ z, 2) <= a for Si, z, a in zip(sqrt_invs, zs, alphas)]
    prob = cp.Problem(cp.Minimize(cp.sum(alphas)), cons)
    prob.solve(solver="CLARABEL")
    if prob.status not in ("optimal", "optimal_inaccurate"):
        # fall back to the single-ellipsoid upper bound
        return float(min(np.sqrt(max(ellipsoid_quadratic(x, P), 0.0)) for P in Ps))
    return float(prob.value)


def extract_extreme_points(
    Ps: list[np.ndarray] | np.ndarray,
    n_starts: int | None = None,
    max_iter: int = 200,
    tol: float = 1e-12,
    dedup_tol: float = 1e-6,
    seed: int = 10_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate extreme points of the hull of ellipsoids, with owners.

    For every combination of min(n, n_v) ellipsoids, damped Newton iterations
    solve the tangency system phi' P_i phi = 1 (all i in the combination)
    from seeded random starts; each root phi yields candidate points P_i phi
    on the respective ellipsoid boundaries.  Candidates and their mirror
    images are deduplicated, then points strictly inside another ellipsoid
    (hence interior to the hull) are discarded.

    Returns (points, owners): points as rows, owners the generating
    ellipsoid index per point.
    """
    Ps = [np.asarray(P, dtype=float) for P in Ps]
    n_v, n = len(Ps), Ps[0].shape[0]
    if n_starts is None:
        n_starts = max(32, 2 * n * n)
    size = min(n, n_v)
    cands: list[np.ndarray] = []
    owners: list[int] = []
    for ci, combo in enumerate(combinations(range(n_v), size)):
        Pc = [Ps[i] for i in combo]
        Pbar = sum(Pc) / size
        rng = np.random.default_rng(seed + ci)
        for _ in range(n_starts):
            phi = rng.normal(size=n)
            phi = phi / np.sqrt(phi @ Pbar @ phi)
            ok = False
            for _ in range(max_iter):
                r = np.array([phi @ P @ phi - 1.0 for P in Pc])
                if np.max(np.abs(r)) < tol:
                    ok = True
                    break
                J = np.array([2.0 * (P @ phi) for P in Pc])
                try:
                    if size == n:
                        step = np.linalg.solve(J, -r)
                    else:
                        step = np.linalg.lstsq(J, -r, rcond=None)[0]
                except np.linalg.LinAlgError:
                    break
                # halve the step until the residual norm improves
                alpha, r0 = 1.0, np.linalg.norm(r)
                for _ in range(30):
                    trial = phi + alpha * step
                    rn = np.linalg.norm([trial @ P @ trial - 1.0 for P in Pc])
                    if rn < r0:
                        break
                    alpha *= 0.5
                phi = phi + alpha * step
            if not ok:
                continue
            for k, i in enumerate(combo):
                v = Pc[k] @ phi
                for sv in (v, -v):
                    if not any(np.linalg.norm(sv - c) < dedup_tol for c in cands):
                        cands.append(sv)
                        owners.append(i)
    if not cands:
        raise DegenerateHullError("no tangency points found; check the shape matrices")
    points = np.array(cands)
    owner_arr = np.array(owners)
    # prune candidates strictly inside another ellipsoid: interior to the hull
    keep = np.ones(len(points), dtype=bool)
    inv_Ps = [np.linalg.inv(P) for P in Ps]
    for idx, (v, own) in enumerate(zip(points, owner_arr)):
        for j, Pi in enumerate(inv_Ps):
            if j != own and v @ Pi @ v < 1.0 - 1e-9:
                keep[idx] = False
                break
    return points[keep], owner_arr[keep]


@dataclass
class HullPolytope:
    """Inner polytopic approximation {x : F x <= 1} of the hull of ellipsoids."""

    F: np.ndarray            # (q, n), offsets normalized to one
    g: np.ndarray            # (q,), all ones
    vertices: np.ndarray     # (N, n) rows
    vertex_owners: np.ndarray  # (N,) generating ellipsoid per vertex
    simplices: np.ndarray    # (q, n) vertex indices per facet, aligned with F rows
    volume: float

    @property
    def num_facets(self) -> int:
        return self.F.shape[0]

    @property
    def n(self) -> int:
        return self.F.shape[1]

    def gauge(self, x: np.ndarray) -> float:
        return gauge_polytope(x, self.F, self.g)

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return self.gauge(x) <= 1.0 + tol

    def to_dict(self) -> dict:
        return {
            "F": self.F.tolist(),
            "g": self.g.tolist(),
            "vertices": self.vertices.tolist(),
            "vertex_owners": self.vertex_owners.tolist(),
            "simplices": self.simplices.tolist(),
            "volume": self.volume,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "HullPolytope":
        return cls(
            F=np.array(payload["F"], dtype=float),
            g=np.array(payload["g"], dtype=float),
            vertices=np.array(payload["vertices"], dtype=float),
            vertex_owners=np.array(payload["vertex_owners"], dtype=int),
            simplices=np.array(payload["simplices"], dtype=int),
            volume=float(payload["volume"]),
        )


def build_hull_polytope(points: np.ndarray, owners: np.ndarray) -> HullPolytope:
    """Convex hull of the candidate points, facets normalized to F x <= 1.

    Requires the origin strictly inside (true whenever the ellipsoids are
    nondegenerate); otherwise the per-facet normalization is undefined.
    """
    points = np.asarray(points, dtype=float)
    owners = np.asarray(owners, dtype=int)
    n = points.shape[1]
    if points.shape[0] < n + 1:
        raise DegenerateHullError(
            f"{points.shape[0]} points cannot span a full-dimensional hull in R^{n}")
    hull = ConvexHull(points)
    offsets = hull.equations[:, n]
    scale = max(1.0, float(np.abs(hull.equations[:, :n]).max()))
    if np.any(offsets >= -1e-12 * scale):
        raise DegenerateHullError("origin is not strictly inside the hull")
    F = hull.equations[:, :n] / (-offsets)[:, None]
    # keep only true vertices and remap facet indices onto them
    vert_ids = np.array(sorted(set(hull.vertices)))
    remap = {int(old): new for new, old in enumerate(vert_ids)}
    simplices = np.vectorize(remap.__getitem__)(hull.simplices)
    return HullPolytope(
        F=F,
        g=np.ones(F.shape[0]),
        vertices=points[vert_ids],
        vertex_owners=owners[vert_ids],
        simplices=simplices,
        volume=float(hull.volume),
    )


@dataclass
class PartitionRegion:
    """Simplicial cone over one hull facet, apex at the origin."""

    index: int
    vertex_ids: np.ndarray   # (n,) indices into hull.vertices
    vertices: np.ndarray     # (n, n) facet vertices as columns
    owner: int               # ellipsoid owning the facet (majority of vertex owners)
    facet_row: np.ndarray    # (n,) the facet's normalized inequality row


def build_partitions(hull: HullPolytope) -> list[PartitionRegion]:
    """One region per facet: the simplex conv(0, facet vertices), as a cone.

    The facet owner is the most common owner among its vertices (lowest index
    on ties), used downstream to pick the certificate data for the region.
    """
    regions = []
    for k, simp in enumerate(hull.simplices):
        own = np.bincount(hull.vertex_owners[simp]).argmax()
        regions.append(PartitionRegion(
            index=k,
            vertex_ids=np.array(simp, dtype=int),
            vertices=hull.vertices[simp].T.copy(),
            owner=int(own),
            facet_row=hull.F[k].copy(),
        ))
    return regions


def _svg_path(points: np.ndarray, transform) -> str:
    coords = " ".join(f"{transform(p)[0]:.2f},{transform(p)[1]:.2f}" for p in points)
    return coords


def export_hull_svg(
    path: str | Path,
    hull: HullPolytope,
    Ps: list[np.ndarray] | None = None,
    admissible: tuple[np.ndarray, np.ndarray] | None = None,
    partitions: list[PartitionRegion] | None = None,
    trajectories: list[np.ndarray] | None = None,
    size: int = 640,
) -> None:
    """Render a 2D scene: admissible polytope, ellipsoids, hull, partitions."""
    if hull.n != 2:
        raise ValueError("SVG export is implemented for planar scenes only")
    pts = [hull.vertices]
    if admissible is not None:
        F, g = admissible
        pts.append(_polytope_vertices_2d(F, g))
    if trajectories:
        pts.extend(t.T if t.shape[0] == 2 else t for t in trajectories)
    allpts = np.vstack(pts)
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    span = float(max(hi - lo) * 1.15)
    center = (lo + hi) / 2.0

    def tf(p):
        q = (np.asarray(p) - center) / span + 0.5
        return q[0] * size, (1.0 - q[1]) * size

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    if admissible is not None:
        F, g = admissible
        verts = _polytope_vertices_2d(F, g)
        parts.append(f'<polygon points="{_svg_path(verts, tf)}" fill="none" '
                     'stroke="#444" stroke-width="2"/>')
    if Ps is not None:
        for P in Ps:
            ring = ellipsoid_boundary_points(P, num=128)
            parts.append(f'<polygon points="{_svg_path(ring, tf)}" fill="none" '
                         'stroke="#1f77b4" stroke-width="1.2"/>')
    order = _perimeter_order(hull.vertices)
    parts.append(f'<polygon points="{_svg_path(hull.vertices[order], tf)}" '
                 'fill="#2ca02c" fill-opacity="0.12" stroke="#2ca02c" stroke-width="1.5"/>')
    if partitions is not None:
        for reg in partitions:
            for col in range(reg.vertices.shape[1]):
                x1, y1 = tf(np.zeros(2))
                x2, y2 = tf(reg.vertices[:, col])
                parts.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" '
                             f'y2="{y2:.2f}" stroke="#2ca02c" stroke-width="0.5" '
                             'stroke-opacity="0.6"/>')
    if trajectories:
        for traj in trajectories:
            t = traj.T if traj.shape[0] == 2 else traj
            parts.append(f'<polyline points="{_svg_path(t, tf)}" fill="none" '
                         'stroke="#d62728" stroke-width="0.8" stroke-opacity="0.7"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def _perimeter_order(points: np.ndarray) -> np.ndarray:
    angles = np.arctan2(points[:, 1] - points[:, 1].mean(),
                        points[:, 0] - points[:, 0].mean())
    return np.argsort(angles)


def _polytope_vertices_2d(F: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Vertices of {x : F x <= g} in R^2, ordered around the perimeter."""
    from scipy.spatial import HalfspaceIntersection

    F = np.atleast_2d(np.asarray(F, dtype=float))
    g = np.asarray(g, dtype=float).ravel()
    hs = HalfspaceIntersection(np.column_stack([F, -g]), np.zeros(F.shape[1]))
    verts = hs.intersections
    return verts[_perimeter_order(verts)]
