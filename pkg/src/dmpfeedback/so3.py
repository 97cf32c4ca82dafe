"""Unit-quaternion algebra and the SO(3)/so(3) maps.

Quaternions are plain numpy arrays [r, q1, q2, q3] (scalar part first),
serialized in that order everywhere.  `quat`, `canonicalize`, `compose` and
`integrate` return sign-canonical representatives (r >= 0) so that q and -q
collapse onto one element and log_map picks the shortest rotation.  `exp_map`
only normalizes: flipping its sign would break the log/exp round trip for
half-angles beyond pi/2.

log_map returns the half-angle rotation vector; 2*log_map(q) is the full
axis-angle vector used as the attractor error of the orientation dynamics.
All computation is float64.
"""

import numpy as np

from .errors import ValidationError

# below this scalar-part distance from 1 the log factor is replaced by its
# series limit (arccos(r)/sin(arccos(r)) -> 1)
_LOG_SERIES_EPS = 1e-8


def quat(r, q1, q2, q3):
    """Build a canonical unit quaternion from four components."""
    return canonicalize(np.array([r, q1, q2, q3], dtype=float))


def identity():
    return np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q):
    """Scale to unit norm without touching the sign."""
    q = np.asarray(q, dtype=float)
    n = np.sqrt(np.dot(q, q))
    if not np.isfinite(n) or n < 1e-12:
        raise ValidationError(f"degenerate quaternion norm: {q!r}")
    return q / n

def canonicalize(q):
    """Unit norm plus the canonical sign convention r >= 0."""
    q = normalize(q)
    if q[0] < 0.0:
        q = -q
    return q


def compose(a, b):
    """Quaternion product a * b (apply rotation b, then a), canonicalized."""
    ra, xa, ya, za = np.asarray(a, dtype=float)
    mat = np.array([
        [ra, -xa, -ya, -za],
        [xa, ra, -za, ya],
        [ya, za, ra, -xa],
        [za, -ya, xa, ra],
    ])
    return canonicalize(mat @ np.asarray(b, dtype=float))


def conjugate(a):
    """[r, -q]; inverts a unit quaternion."""
    a = np.asarray(a, dtype=float)
    return np.array([a[0], -a[1], -a[2], -a[3]])


def log_map(a):
    """Half-angle rotation vector of a unit quaternion.

    Returns (arccos(r)/sin(arccos(r))) * q with the scalar part clamped to
    [-1, 1]; near the identity the factor degenerates to 0/0 and is replaced
    by its limit 1.
    """
    a = np.asarray(a, dtype=float)
    r = min(1.0, max(-1.0, float(a[0])))
    if r > 1.0 - _LOG_SERIES_EPS:
        return np.array(a[1:4], dtype=float)
    phi = np.arccos(r)
    return (phi / np.sin(phi)) * a[1:4]


def exp_map(v):
    """Unit quaternion [cos|v|, sin|v|/|v| * v] for a half-angle vector v."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"non-finite rotation vector: {v!r}")
    angle = np.sqrt(np.dot(v, v))
    q = np.empty(4)
    q[0] = np.cos(angle)
    # np.sinc(x/pi) == sin(x)/x with the 0-limit handled exactly
    q[1:] = np.sinc(angle / np.pi) * v
    return normalize(q)


def integrate(q, omega, dt):
    """One step of Q <- exp(omega*dt/2) * Q for angular velocity omega."""
    if dt <= 0.0:
        raise ValidationError(f"integration step must be positive, got {dt}")
    omega = np.asarray(omega, dtype=float)
    return compose(exp_map(0.5 * dt * omega), q)


def rotation_distance(a, b):
    """Angle (radians) of the relative rotation between two unit quaternions."""
    return 2.0 * np.linalg.norm(log_map(compose(canonicalize(a), conjugate(canonicalize(b)))))
