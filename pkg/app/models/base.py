from pydantic import BaseModel, ConfigDict


class Base(BaseModel):
    """Frozen settings model; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid", frozen=True)
