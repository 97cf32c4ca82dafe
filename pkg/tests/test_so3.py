import numpy as np
import pytest

from dmpfeedback import so3
from dmpfeedback.errors import ValidationError

from conftest import quat_allclose


def rotation_matrix(q):
    """Independent oracle: unit quaternion [r, x, y, z] to a 3x3 matrix."""
    r, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - r * z), 2 * (x * z + r * y)],
        [2 * (x * y + r * z), 1 - 2 * (x * x + z * z), 2 * (y * z - r * x)],
        [2 * (x * z - r * y), 2 * (y * z + r * x), 1 - 2 * (x * x + y * y)],
    ])


def random_unit_quats(n, seed):
    rng = np.random.default_rng(seed)
    qs = rng.normal(size=(n, 4))
    return np.array([so3.canonicalize(q) for q in qs])


def test_compose_identity_and_inverse():
    rng = np.random.default_rng(1)
    q = so3.canonicalize(rng.normal(size=4))
    assert quat_allclose(so3.compose(so3.identity(), q), q, atol=1e-12)
    assert quat_allclose(so3.compose(q, so3.conjugate(q)), so3.identity(), atol=1e-12)


def test_compose_matches_rotation_matrix_product():
    a = so3.exp_map([np.pi / 4, 0, 0])   # 90 deg about x
    b = so3.exp_map([0, np.pi / 4, 0])   # 90 deg about y
    ab = so3.compose(a, b)
    assert np.allclose(rotation_matrix(ab), rotation_matrix(a) @ rotation_matrix(b),
                       atol=1e-9)


def test_compose_matches_matrix_product_randomized():
    qs = random_unit_quats(200, seed=2)
    for a, b in zip(qs[::2], qs[1::2]):
        err = np.abs(rotation_matrix(so3.compose(a, b))
                     - rotation_matrix(a) @ rotation_matrix(b)).max()
        assert err < 1e-9


def test_compose_associative():
    qs = random_unit_quats(300, seed=3)
    for a, b, c in zip(qs[::3], qs[1::3], qs[2::3]):
        left = so3.compose(so3.compose(a, b), c)
        right = so3.compose(a, so3.compose(b, c))
        assert quat_allclose(left, right, atol=1e-9)


def test_conjugate_cases():
    assert np.allclose(so3.conjugate(so3.identity()), so3.identity())
    assert np.allclose(so3.conjugate([0, 1, 0, 0]), [0, -1, 0, 0])
    q = so3.canonicalize(np.array([0.3, -0.4, 0.5, 0.6]))
    assert np.allclose(so3.conjugate(so3.conjugate(q)), q)


def test_log_map_cases():
    assert np.allclose(so3.log_map(so3.identity()), np.zeros(3))
    assert np.allclose(so3.log_map([0, 1, 0, 0]), [np.pi / 2, 0, 0])


def test_exp_map_cases():
    assert np.allclose(so3.exp_map([0, 0, 0]), so3.identity())
    assert np.allclose(so3.exp_map([np.pi / 2, 0, 0]), [0, 1, 0, 0], atol=1e-12)


def test_exp_log_round_trip_canonical():
    qs = random_unit_quats(1000, seed=4)
    for q in qs:
        assert np.abs(so3.exp_map(so3.log_map(q)) - q).max() < 1e-9


def test_log_exp_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        v = rng.normal(size=3)
        v = v / np.linalg.norm(v) * rng.uniform(1e-6, np.pi / 2 - 1e-6)
        assert np.abs(so3.log_map(so3.exp_map(v)) - v).max() < 1e-9


def test_integrate_zero_rate_is_identity():
    q = so3.canonicalize([0.2, 0.4, -0.1, 0.8])
    assert quat_allclose(so3.integrate(q, np.zeros(3), 0.01), q, atol=1e-12)


def test_integrate_constant_rate_closed_form():
    # pi rad/s about x for 1 s in 1000 steps lands on the 180-degree rotation
    q = so3.identity()
    for _ in range(1000):
        q = so3.integrate(q, [np.pi, 0, 0], 1e-3)
    assert quat_allclose(q, [0, 1, 0, 0], atol=1e-6)


def test_integrate_preserves_norm():
    rng = np.random.default_rng(6)
    q = so3.canonicalize(rng.normal(size=4))
    for _ in range(100):
        # keep |omega| dt under pi/4 per step
        q = so3.integrate(q, rng.normal(size=3), 0.05)
        assert abs(np.linalg.norm(q) - 1.0) < 1e-9


def test_integrate_rejects_bad_dt():
    with pytest.raises(ValidationError):
        so3.integrate(so3.identity(), [1, 0, 0], 0.0)


def test_canonicalize_sign_and_norm():
    q = so3.canonicalize([-2.0, 0.0, 0.0, 0.0])
    assert np.allclose(q, so3.identity())
    with pytest.raises(ValidationError):
        so3.canonicalize([0.0, 0.0, 0.0, 0.0])
