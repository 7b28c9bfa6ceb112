from dataclasses import dataclass

import numpy as np

from app.core import tensor as T
from app.core.errors import PointCloudError
from app.core.tensor import Tensor
from app.models.pose import Pose


@dataclass(frozen=True)
class PointCloud:
    """
    Point coordinates (n,3) in meters with optional per-point features (n,c).

    Construction accepts n = 0 so that an empty scan or a fully filtered frame
    can be represented; sampling and neighbour operations reject it.
    """

    coords: Tensor
    features: Tensor | None = None

    def __post_init__(self):
        coords = T.as_tensor(self.coords)
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise PointCloudError(f"coords must be (n,3), got {coords.shape}")
        if not np.all(np.isfinite(coords.data)):
            raise PointCloudError("coords contain non-finite values")
        if self.features is not None:
            features = T.as_tensor(self.features)
            object.__setattr__(self, "features", features)
            if features.ndim != 2 or features.shape[0] != coords.shape[0]:
                raise PointCloudError(
                    f"features {features.shape} do not match {coords.shape[0]} points"
                )

    @classmethod
    def from_array(cls, coords, features=None) -> "PointCloud":
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
        return cls(Tensor(coords), None if features is None else Tensor(features))

    @property
    def xyz(self) -> np.ndarray:
        return self.coords.data

    @property
    def feature_width(self) -> int:
        return 0 if self.features is None else self.features.shape[1]

    def __len__(self) -> int:
        return self.coords.shape[0]

    def select(self, indices) -> "PointCloud":
        """Rows `indices` of coords and features; differentiable."""
        features = None if self.features is None else T.gather_rows(self.features, indices)
        return PointCloud(T.gather_rows(self.coords, indices), features)

    def with_features(self, features: Tensor | None) -> "PointCloud":
        return PointCloud(self.coords, features)

    def with_coords(self, coords: Tensor) -> "PointCloud":
        return PointCloud(coords, self.features)


@dataclass(frozen=True)
class FramePair:
    """Two frames and the pose mapping frame-1 coordinates into frame 2."""

    pc1: PointCloud
    pc2: PointCloud
    gt: Pose
    sequence_id: str = ""
    frame_index: int = 0
