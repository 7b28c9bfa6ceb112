from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from app.core import tensor as T
from app.core.errors import ConfigError, ShapeError
from app.core.tensor import ParameterRegistry, Tensor


@dataclass(frozen=True)
class Mlp:
    """
    Shared MLP: a stack of per-row affine maps with relu between them.

    The same weights apply to every row of the input, which is how a
    1x1 convolution over points is expressed here. `widths` lists the input
    width followed by every layer's output width; parameters are stored as
    `{name}.{i}.w` (in x out) and `{name}.{i}.b` (out).
    """

    name: str
    widths: tuple[int, ...]
    activate_last: bool = True

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ConfigError(f"mlp '{self.name}' needs an input and at least one layer width")
        if any(w < 1 for w in self.widths):
            raise ConfigError(f"mlp '{self.name}' has a non-positive width: {self.widths}")

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    def parameter_names(self) -> list[str]:
        names = []
        for i in range(self.depth):
            names += [f"{self.name}.{i}.w", f"{self.name}.{i}.b"]
        return names

    def init(self, registry: ParameterRegistry, rng: np.random.Generator,
             last_scale: float = 1.0, last_bias: Sequence[float] | None = None) -> None:
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            last = i == self.depth - 1
            # He init for relu layers
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            b = np.zeros(fan_out)
            if last:
                w = w * last_scale
                if last_bias is not None:
                    b = np.asarray(last_bias, dtype=float).reshape(fan_out)
            registry.add(f"{self.name}.{i}.w", w)
            registry.add(f"{self.name}.{i}.b", b)

    def __call__(self, params: Mapping[str, Tensor], x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_width:
            raise ShapeError(
                f"mlp '{self.name}' expects input width {self.in_width}, got shape {x.shape}"
            )
        for i in range(self.depth):
            x = T.matmul(x, params[f"{self.name}.{i}.w"]) + params[f"{self.name}.{i}.b"]
            if i < self.depth - 1 or self.activate_last:
                x = T.relu(x)
        return x
