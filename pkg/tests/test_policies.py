"""Piecewise-affine safe policy and the LQR reference policy."""
import json

import numpy as np
import pytest

from hullguard.geometry import PartitionRegion, build_partitions
from hullguard.policies import (
    LqrPolicy,
    OutOfHullError,
    PartitionedPolicy,
    load_policy_bundle,
    locate_partition,
    lqr_riccati,
    precompute_partition_gains,
    safe_control,
)


class TestRiccati:
    def test_scalar_golden_ratio_fixed_point(self):
        pol = lqr_riccati(np.array([[1.0]]), np.array([[1.0]]),
                          np.array([[1.0]]), np.array([[1.0]]))
        golden = (1.0 + np.sqrt(5.0)) / 2.0
        assert pol.P[0, 0] == pytest.approx(golden, abs=1e-9)
        assert pol.K[0, 0] == pytest.approx(-0.618034, abs=1e-6)

    def test_scalar_stable_plant(self):
        # fixed point of p = 1 + 0.25 p - 0.25 p^2/(1+p), i.e. the positive
        # root of p^2 - 0.25 p - 1 = 0
        pol = lqr_riccati(np.array([[0.5]]), np.array([[1.0]]),
                          np.array([[1.0]]), np.array([[1.0]]))
        assert pol.P[0, 0] == pytest.approx(1.132782, abs=1e-6)
        assert pol.K[0, 0] == pytest.approx(-0.265564, abs=1e-6)

    def test_unpenalized_marginal_mode(self):
        A = np.array([[1.0, 0.0], [0.0, 0.5]])
        B = np.array([[0.0], [1.0]])
        Q = np.diag([0.0, 1.0])
        R = np.array([[1.0]])
        with pytest.raises(RuntimeError, match="not stable"):
            lqr_riccati(A, B, Q, R)
        pol = lqr_riccati(A, B, Q, R, require_stable=False)
        closed = A + B @ pol.K
        assert np.max(np.abs(np.linalg.eigvals(closed))) == pytest.approx(1.0)
        assert pol.K[0, 0] == pytest.approx(0.0, abs=1e-9)

    def test_policy_call_and_predict_agree(self):
        pol = lqr_riccati(np.array([[0.5, 0.1], [0.0, 0.3]]),
                          np.array([[0.0], [1.0]]), np.eye(2), np.eye(1))
        x = np.array([1.0, -2.0])
        assert np.allclose(pol(0, x), pol.K @ x)
        X = np.array([[1.0, -2.0], [0.5, 0.5]])
        assert np.allclose(pol.predict(X), X @ pol.K.T)

    def test_vector_valued_b_accepted(self):
        pol = lqr_riccati(np.array([[0.5]]), np.array([1.0]),
                          np.array([[1.0]]), np.array([[1.0]]))
        assert pol.K.shape == (1, 1)


class TestPartitionedPolicy:
    def test_gain_shapes(self, policy_minvar):
        S = policy_minvar.num_regions
        assert policy_minvar.gains.shape == (S, 1, 2)
        assert policy_minvar.vertex_inverses.shape == (S, 2, 2)
        assert len(policy_minvar.vertex_controls) == S

    def test_vertex_controls_reproduced_exactly(self, policy_minvar,
                                                cert_minvar):
        hull = policy_minvar.hull
        for k, reg in enumerate(policy_minvar.regions):
            Kp = policy_minvar.gains[k]
            for col, vid in enumerate(reg.vertex_ids):
                v = hull.vertices[vid]
                target = np.atleast_2d(cert_minvar.K[hull.vertex_owners[vid]]) @ v
                assert np.max(np.abs(Kp @ v - target)) < 1e-10

    def test_adjacent_regions_agree_on_shared_vertices(self, policy_minvar):
        hull = policy_minvar.hull
        for vid in range(hull.vertices.shape[0]):
            v = hull.vertices[vid]
            controls = [policy_minvar.gains[k] @ v
                        for k, reg in enumerate(policy_minvar.regions)
                        if vid in reg.vertex_ids]
            assert len(controls) >= 2  # every vertex is shared in the plane
            for u in controls[1:]:
                assert np.max(np.abs(u - controls[0])) < 1e-8

    def test_uniform_gains_collapse_to_linear(self, pair_hull):
        K0 = np.array([[0.3, -1.1]])
        pol = precompute_partition_gains(pair_hull, [K0, K0])
        for k in range(pol.num_regions):
            assert np.max(np.abs(pol.gains[k] - K0)) < 1e-12

    def test_locate_round_trip(self, policy_minvar):
        rng = np.random.default_rng(11)
        hull = policy_minvar.hull
        for _ in range(25):
            raw = rng.normal(size=2)
            x = 0.8 * raw / max(hull.gauge(raw), 1e-12)
            idx, coords = policy_minvar.locate(x)
            assert np.min(coords) >= -1e-9
            assert np.allclose(policy_minvar.regions[idx].vertices @ coords, x,
                               atol=1e-9)

    def test_control_is_positively_homogeneous(self, policy_minvar):
        rng = np.random.default_rng(12)
        for _ in range(10):
            x = rng.normal(size=2)
            u1 = safe_control(policy_minvar, x)
            u3 = safe_control(policy_minvar, 3.0 * x)
            assert np.allclose(u3, 3.0 * u1, atol=1e-9)

    def test_outside_hull_raises_when_enforced(self, policy_minvar):
        far = 10.0 * policy_minvar.hull.vertices[0]
        with pytest.raises(OutOfHullError, match="outside"):
            locate_partition(policy_minvar, far)
        # the cones extend outward, so the unchecked call still answers
        u = safe_control(policy_minvar, far)
        assert np.all(np.isfinite(u))

    def test_call_and_predict_agree(self, policy_minvar):
        x = 0.5 * policy_minvar.hull.vertices[2]
        assert np.allclose(policy_minvar(7, x), safe_control(policy_minvar, x))
        X = np.vstack([x, -x])
        pred = policy_minvar.predict(X)
        assert pred.shape == (2, 1)
        assert np.allclose(pred[1], safe_control(policy_minvar, -x))

    def test_rank_deficient_region_rejected(self, pair_hull):
        bad = PartitionRegion(index=0, vertex_ids=np.array([0, 0]),
                              vertices=np.column_stack([pair_hull.vertices[0]] * 2),
                              owner=0, facet_row=np.zeros(2))
        with pytest.raises(ValueError, match="rank deficient"):
            precompute_partition_gains(pair_hull, [np.eye(2)[:1], np.eye(2)[:1]],
                                       regions=[bad])


class TestPolicySerialization:
    def test_round_trip(self, tmp_path, policy_minvar):
        path = tmp_path / "policy.json"
        policy_minvar.to_json(path)
        back = PartitionedPolicy.from_json(path)
        assert back.num_regions == policy_minvar.num_regions
        assert back.source_mode == policy_minvar.source_mode
        assert np.allclose(back.gains, policy_minvar.gains, atol=0, rtol=0)
        rng = np.random.default_rng(13)
        for _ in range(10):
            x = rng.normal(size=2)
            assert np.allclose(safe_control(back, x),
                               safe_control(policy_minvar, x), atol=1e-12)

    def test_supervision_payload_round_trip(self, tmp_path, policy_minvar):
        path = tmp_path / "policy.json"
        extra = {"mode": "data_minvar", "delta": 0.1,
                 "maps": [[[0.1, 0.0], [0.0, 0.1]]]}
        policy_minvar.to_json(path, supervision=extra)
        pol, sup = load_policy_bundle(path)
        assert sup == extra
        assert pol.num_regions == policy_minvar.num_regions

    def test_bundle_without_supervision(self, tmp_path, policy_minvar):
        path = tmp_path / "bare.json"
        policy_minvar.to_json(path)
        _, sup = load_policy_bundle(path)
        assert sup is None

    def test_tampered_gain_rejected(self, tmp_path, policy_minvar):
        path = tmp_path / "policy.json"
        policy_minvar.to_json(path)
        payload = json.loads(path.read_text())
        payload["regions"][0]["gain"][0][0] += 0.5
        path.write_text(json.dumps(payload))
        with pytest.raises(ValueError, match="does not reproduce"):
            PartitionedPolicy.from_json(path)
