import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation

from hoicast.errors import DegenerateRotation, NotARotation, ShapeMismatch
from hoicast.geometry import (PointCloud, RigidTransform, apply_rigid,
                              canonicalize_quaternion, contact_from_object,
                              matrix_to_quaternion, matrix_to_rot6d,
                              quaternion_rotate, rot6d_to_matrix,
                              rot6d_to_matrix_torch, transport_contacts_torch)


def random_rotations(n, seed=0):
    return Rotation.random(n, random_state=seed).as_matrix()


class TestRot6dToMatrix:
    def test_identity(self):
        m = rot6d_to_matrix([1, 0, 0, 0, 1, 0])
        np.testing.assert_allclose(m, np.eye(3), atol=1e-12)

    def test_axis_permutation_is_z_rotation(self):
        m = rot6d_to_matrix([0, 1, 0, -1, 0, 0])
        expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], float)
        np.testing.assert_allclose(m, expected, atol=1e-12)

    def test_matches_gram_schmidt_oracle(self):
        a = np.array([2.0, 0.0, 0.0])
        b = np.array([1.0, 1.0, 0.0])
        # independent column-wise Gram-Schmidt
        x = a / np.linalg.norm(a)
        y = b - (x @ b) * x
        y = y / np.linalg.norm(y)
        z = np.cross(x, y)
        expected = np.stack([x, y, z], axis=1)
        np.testing.assert_allclose(rot6d_to_matrix(np.r_[a, b]), expected, atol=1e-12)

    def test_first_column_normalized_input(self):
        arr = np.array([3.0, -1.0, 2.0, 0.5, 0.5, -1.0])
        m = rot6d_to_matrix(arr)
        np.testing.assert_allclose(m[:, 0], arr[:3] / np.linalg.norm(arr[:3]),
                                   atol=1e-12)

    def test_determinant_plus_one_random(self, rng):
        codes = rng.normal(size=(1000, 6))
        mats = rot6d_to_matrix(codes)
        np.testing.assert_allclose(np.linalg.det(mats), 1.0, atol=1e-6)
        eye = np.swapaxes(mats, -1, -2) @ mats
        assert np.abs(eye - np.eye(3)).max() < 1e-6

    def test_degenerate_zero_norm(self):
        with pytest.raises(DegenerateRotation):
            rot6d_to_matrix([0, 0, 0, 0, 1, 0])

    def test_degenerate_parallel(self):
        with pytest.raises(DegenerateRotation):
            rot6d_to_matrix([1, 0, 0, 2, 0, 0])


class TestMatrixToRot6d:
    def test_identity(self):
        np.testing.assert_array_equal(matrix_to_rot6d(np.eye(3)),
                                      [1, 0, 0, 0, 1, 0])

    def test_round_trip_random(self):
        mats = random_rotations(1000, seed=3)
        back = rot6d_to_matrix(matrix_to_rot6d(mats))
        assert np.abs(back - mats).max() < 1e-6

    def test_reflection_rejected(self):
        with pytest.raises(NotARotation):
            matrix_to_rot6d(np.diag([1.0, 1.0, -1.0]))

    def test_non_orthonormal_rejected(self):
        with pytest.raises(NotARotation):
            matrix_to_rot6d(np.eye(3) * 1.01)


class TestApplyRigid:
    def test_identity(self, rng):
        pts = rng.normal(size=(10, 3))
        out = apply_rigid(RigidTransform.identity(), pts)
        np.testing.assert_array_equal(out, pts)

    def test_hand_case(self):
        rot_z_180 = np.diag([-1.0, -1.0, 1.0])
        t = RigidTransform(rot_z_180, np.array([0.0, 0.0, 1.0]))
        out = apply_rigid(t, np.array([[1.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out, [[-1.0, 0.0, 1.0]], atol=1e-12)

    def test_matches_per_point_oracle(self, rng):
        pts = rng.normal(size=(50, 3))
        R = random_rotations(1, seed=5)[0]
        L = rng.normal(size=3)
        out = apply_rigid(RigidTransform(R, L), pts)
        for i in range(50):
            np.testing.assert_allclose(out[i], R @ pts[i] + L, atol=1e-12)

    def test_isometry(self, rng):
        pts = rng.normal(size=(40, 3))
        R = random_rotations(1, seed=9)[0]
        out = apply_rigid(RigidTransform(R, rng.normal(size=3)), pts)
        d_in = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        d_out = np.linalg.norm(out[:, None] - out[None], axis=-1)
        assert np.abs(d_in - d_out).max() < 1e-6

    def test_pointcloud_container(self):
        pc = PointCloud(np.ones((4, 3)))
        out = apply_rigid(RigidTransform.identity(), pc)
        assert isinstance(out, PointCloud)


class TestRigidTransform:
    def test_compose_associative(self, rng):
        ts = [RigidTransform(random_rotations(1, seed=i)[0], rng.normal(size=3))
              for i in range(3)]
        left = ts[0].compose(ts[1]).compose(ts[2])
        right = ts[0].compose(ts[1].compose(ts[2]))
        np.testing.assert_allclose(left.R, right.R, atol=1e-12)
        np.testing.assert_allclose(left.L, right.L, atol=1e-12)

    def test_inverse_composes_to_identity(self, rng):
        t = RigidTransform(random_rotations(1, seed=2)[0], rng.normal(size=3))
        ident = t.compose(t.inverse())
        np.testing.assert_allclose(ident.R, np.eye(3), atol=1e-6)
        np.testing.assert_allclose(ident.L, 0.0, atol=1e-6)

    def test_rejects_reflection(self):
        with pytest.raises(NotARotation):
            RigidTransform(np.diag([1.0, -1.0, 1.0]), np.zeros(3))


class TestContactFromObject:
    def test_identity_bitwise(self, rng):
        rest = rng.normal(size=(7, 3))
        out = contact_from_object(RigidTransform.identity(), rest)
        assert np.array_equal(out, rest)

    def test_pure_translation(self, rng):
        rest = rng.normal(size=(5, 3))
        d = np.array([0.1, -0.2, 0.3])
        out = contact_from_object(RigidTransform(np.eye(3), d), rest)
        np.testing.assert_allclose(out, rest + d, atol=1e-12)


class TestMatrixToQuaternion:
    def test_identity_scalar_first(self):
        np.testing.assert_allclose(matrix_to_quaternion(np.eye(3)),
                                   [1, 0, 0, 0], atol=1e-12)

    def test_half_turn_about_x(self):
        m = np.diag([1.0, -1.0, -1.0])
        q = matrix_to_quaternion(m)
        np.testing.assert_allclose(np.abs(q), [0, 1, 0, 0], atol=1e-12)
        # canonical sign: scalar is zero, first nonzero component positive
        assert q[1] > 0

    def test_unit_norm(self):
        mats = random_rotations(100, seed=11)
        q = matrix_to_quaternion(mats)
        np.testing.assert_allclose(np.linalg.norm(q, axis=-1), 1.0, atol=1e-6)

    def test_action_equivalence(self, rng):
        mats = random_rotations(20, seed=13)
        vecs = rng.normal(size=(20, 3))
        for m, v in zip(mats, vecs):
            q = matrix_to_quaternion(m)
            np.testing.assert_allclose(quaternion_rotate(q, v), m @ v, atol=1e-5)

    def test_rejects_non_rotation(self):
        with pytest.raises(NotARotation):
            matrix_to_quaternion(np.ones((3, 3)))

    def test_canonical_sign(self):
        q = canonicalize_quaternion(np.array([-0.5, 0.5, 0.5, 0.5]))
        assert q[0] >= 0


class TestTorchMirrors:
    def test_rot6d_matches_numpy(self, rng):
        codes = rng.normal(size=(64, 6))
        ours = rot6d_to_matrix_torch(torch.tensor(codes)).numpy()
        ref = rot6d_to_matrix(codes)
        assert np.abs(ours - ref).max() < 1e-10

    def test_transport_matches_numpy(self, rng):
        codes = rng.normal(size=(4, 6))
        centroids = rng.normal(size=(4, 3))
        rest = rng.normal(size=(4, 10, 3))
        out = transport_contacts_torch(torch.tensor(codes), torch.tensor(centroids),
                                       torch.tensor(rest)).numpy()
        for i in range(4):
            pose = RigidTransform(rot6d_to_matrix(codes[i]), centroids[i])
            np.testing.assert_allclose(out[i], apply_rigid(pose, rest[i]), atol=1e-10)

    def test_shape_errors(self):
        with pytest.raises(ShapeMismatch):
            rot6d_to_matrix_torch(torch.zeros(3, 5))


class TestPointCloud:
    def test_requires_points(self):
        with pytest.raises(ShapeMismatch):
            PointCloud(np.zeros((0, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[np.nan, 0.0, 0.0]]))
