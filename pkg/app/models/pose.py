from dataclasses import dataclass, field

import numpy as np

from app.core.errors import GeometryError

# Normalising an already-unit quaternion returns it untouched within this slack
UNIT_SLACK = 4 * np.finfo(np.float64).eps


def canonical_sign(values: np.ndarray) -> float:
    """Sign that makes the first nonzero component of a (w, x, y, z) array positive."""
    nonzero = np.flatnonzero(values)
    if nonzero.size and values[nonzero[0]] < 0:
        return -1.0
    return 1.0


@dataclass(frozen=True)
class Quaternion:
    """Hamilton quaternion, scalar first."""

    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values) -> "Quaternion":
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        if arr.shape != (4,):
            raise GeometryError(f"quaternion needs 4 components, got {arr.shape[0]}")
        return cls(*(float(v) for v in arr))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def normalized(self) -> "Quaternion":
        n = self.norm()
        if n == 0.0 or not np.isfinite(n):
            raise GeometryError(f"cannot normalise quaternion {self.as_array()}")
        if abs(n - 1.0) <= UNIT_SLACK:
            return self
        return Quaternion.from_array(self.as_array() / n)

    def canonical(self) -> "Quaternion":
        """Sign representative of q and -q: w > 0, or the first nonzero of x, y, z when w == 0."""
        if canonical_sign(self.as_array()) < 0:
            return Quaternion(-self.w, -self.x, -self.y, -self.z)
        return self

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)


def _frozen_vector(t) -> np.ndarray:
    arr = np.array(t, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise GeometryError(f"translation needs 3 components, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"translation is not finite: {arr}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    """Unit quaternion (canonical sign) plus translation in meters."""

    q: Quaternion
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = self.q if isinstance(self.q, Quaternion) else Quaternion.from_array(self.q)
        object.__setattr__(self, "q", q.normalized().canonical())
        object.__setattr__(self, "t", _frozen_vector(self.t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Quaternion.identity(), np.zeros(3))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return self.q == other.q and bool(np.array_equal(self.t, other.t))

    def __repr__(self) -> str:
        return f"Pose(q={tuple(self.q.as_array())}, t={tuple(self.t)})"
