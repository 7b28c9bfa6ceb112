"""
Quaternion and rigid-pose algebra.

Numeric helpers work on `Quaternion` / `Pose` / 4x4 numpy matrices. The
`*_tensor` helpers build the same maps out of tape operations so gradients
reach quaternions, translations and points.
"""

import numpy as np

from app.core import tensor as T
from app.core.errors import GeometryError
from app.core.tensor import Tensor
from app.models.pose import Pose, Quaternion, canonical_sign

ORTHONORMAL_TOL = 1e-6


def quat_mul(a: Quaternion, b: Quaternion) -> Quaternion:
    return Quaternion(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )


def quat_inverse(q: Quaternion) -> Quaternion:
    n2 = q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z
    if n2 == 0.0:
        raise GeometryError("zero quaternion has no inverse")
    c = q.conjugate()
    return Quaternion(c.w / n2, c.x / n2, c.y / n2, c.z / n2)


def _rotation_coefficients(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def quat_to_matrix(q: Quaternion) -> np.ndarray:
    """3x3 rotation of the unit quaternion `q` (normalised first)."""
    return _rotation_coefficients(q.normalized().as_array())


def rotate_point(q: Quaternion, t, p) -> np.ndarray:
    """q [0,p] q^-1 + t for one point (3,) or a batch (n,3)."""
    p = np.asarray(p, dtype=np.float64)
    return p @ quat_to_matrix(q).T + np.asarray(t, dtype=np.float64)


def pose_compose(delta: Pose, coarse: Pose) -> Pose:
    q = quat_mul(delta.q, coarse.q)
    t = quat_to_matrix(delta.q) @ coarse.t + delta.t
    return Pose(q, t)


def pose_inverse(p: Pose) -> Pose:
    q_inv = p.q.conjugate()
    return Pose(q_inv, -(quat_to_matrix(q_inv) @ p.t))


def pose_to_matrix(p: Pose) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = quat_to_matrix(p.q)
    m[:3, 3] = p.t
    return m


def check_transform(m, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (4, 4):
        raise GeometryError(f"transform must be 4x4, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise GeometryError("transform has non-finite entries")
    if np.max(np.abs(m[3] - [0.0, 0.0, 0.0, 1.0])) > tol:
        raise GeometryError(f"transform last row is {m[3]}, expected [0 0 0 1]")
    r = m[:3, :3]
    err = np.max(np.abs(r.T @ r - np.eye(3)))
    if err > tol or np.linalg.det(r) < 0:
        raise GeometryError(f"rotation block is not orthonormal (max |RtR - I| = {err:.3g})")
    return m


def matrix_to_quat(r: np.ndarray) -> Quaternion:
    # Shepperd: branch on the largest diagonal term to keep the divisor away from 0
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = (0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s)
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        q = ((r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s)
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        q = ((r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s)
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        q = ((r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s)
    return Quaternion(*(float(v) for v in q))


def matrix_to_pose(m, tol: float = ORTHONORMAL_TOL) -> Pose:
    m = check_transform(m, tol)
    return Pose(matrix_to_quat(m[:3, :3]), m[:3, 3].copy())


def axis_angle_to_quat(axis, angle: float) -> Quaternion:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise GeometryError("rotation axis has zero length")
    s = np.sin(angle / 2) / n
    return Quaternion(float(np.cos(angle / 2)), float(axis[0] * s), float(axis[1] * s), float(axis[2] * s))


def euler_to_quat(yaw: float, pitch: float, roll: float) -> Quaternion:
    """Intrinsic Z-Y-X: yaw about z, then pitch about the new y, then roll about the new x."""
    qz = axis_angle_to_quat((0, 0, 1), yaw)
    qy = axis_angle_to_quat((0, 1, 0), pitch)
    qx = axis_angle_to_quat((1, 0, 0), roll)
    return quat_mul(quat_mul(qz, qy), qx).normalized()


def transform_points(m, points) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    return np.asarray(points, dtype=np.float64) @ m[:3, :3].T + m[:3, 3]


def rotation_angle(r: np.ndarray) -> float:
    """Angle of a rotation matrix in radians (trace formula, clamped)."""
    c = (np.trace(r[:3, :3]) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def quat_angle_between(a: Quaternion, b: Quaternion) -> float:
    d = abs(float(np.dot(a.normalized().as_array(), b.normalized().as_array())))
    return float(2.0 * np.arccos(min(d, 1.0)))


def random_quaternion(rng: np.random.Generator, max_angle: float | None = None) -> Quaternion:
    if max_angle is None:
        return Quaternion.from_array(rng.normal(size=4)).normalized()
    axis = rng.normal(size=3)
    return axis_angle_to_quat(axis, rng.uniform(-max_angle, max_angle))


def random_pose(rng: np.random.Generator, max_angle: float | None = None, max_trans: float = 1.0) -> Pose:
    return Pose(random_quaternion(rng, max_angle), rng.uniform(-max_trans, max_trans, size=3))


# Differentiable versions

def _hamilton_table() -> np.ndarray:
    basis = np.eye(4)
    table = np.zeros((4, 4, 4))
    for i in range(4):
        for j in range(4):
            table[i, j] = quat_mul(Quaternion(*basis[i]), Quaternion(*basis[j])).as_array()
    return table.reshape(16, 4)


def _rotation_table() -> np.ndarray:
    basis = np.eye(4)
    table = np.zeros((4, 4, 9))
    for i in range(4):
        for j in range(4):
            # polarised quadratic form: R(q) = sum_ij q_i q_j S_ij
            qi, qj = basis[i], basis[j]
            table[i, j] = (
                _rotation_coefficients(qi + qj) - _rotation_coefficients(qi) - _rotation_coefficients(qj)
            ).reshape(9) / 2.0
            if i == j:
                table[i, j] = _rotation_coefficients(qi).reshape(9)
    return table.reshape(16, 9)


HAMILTON_TABLE = _hamilton_table()
ROTATION_TABLE = _rotation_table()


def _outer4(a: Tensor, b: Tensor) -> Tensor:
    return T.reshape(T.reshape(a, (4, 1)) * T.reshape(b, (1, 4)), (1, 16))


def hamilton(a: Tensor, b: Tensor) -> Tensor:
    return T.reshape(T.matmul(_outer4(a, b), HAMILTON_TABLE), (4,))


def normalize_quat(q: Tensor) -> Tensor:
    n = T.norm(q, axis=0)
    if n.data == 0.0 or not np.isfinite(n.data):
        raise GeometryError(f"cannot normalise quaternion {q.data}")
    return q / n


def canonical_quat(q: Tensor) -> Tensor:
    """Same sign rule as `Quaternion.canonical`; the flip is a constant factor for the gradient."""
    return q * canonical_sign(q.data)


def rotation_matrix_tensor(q: Tensor) -> Tensor:
    """Rotation matrix of a unit quaternion tensor (quadratic in q)."""
    return T.reshape(T.matmul(_outer4(q, q), ROTATION_TABLE), (3, 3))


def warp_points(q: Tensor, t: Tensor, points: Tensor) -> Tensor:
    """Apply q [0,p] q^-1 + t to every row of `points` (n,3)."""
    r = rotation_matrix_tensor(normalize_quat(q))
    return T.matmul(points, T.transpose(r)) + t


def compose_tensors(dq: Tensor, dt: Tensor, q: Tensor, t: Tensor) -> tuple[Tensor, Tensor]:
    """(dq, dt) applied after (q, t): q' = dq q, t' = dq t dq^-1 + dt."""
    dq = normalize_quat(dq)
    q_new = normalize_quat(hamilton(dq, q))
    t_new = T.reshape(T.matmul(T.reshape(t, (1, 3)), T.transpose(rotation_matrix_tensor(dq))), (3,)) + dt
    return q_new, t_new


def pose_from_tensors(q: Tensor, t: Tensor) -> Pose:
    return Pose(Quaternion.from_array(q.data), t.data.copy())
