from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

SPEED_OF_LIGHT = 2.998e8


class DDGrid(BaseModel):
    """Delay-Doppler grid: M delay bins, N Doppler bins, spacing delta_f and symbol time T."""

    M: int = Field(gt=0)
    N: int = Field(gt=0)
    delta_f: float = Field(gt=0)
    T: Optional[float] = None

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="before")
    @classmethod
    def default_symbol_duration(cls, data):
        if isinstance(data, dict) and data.get("T") is None and data.get("delta_f"):
            data = {**data, "T": 1.0 / float(data["delta_f"])}
        return data

    @model_validator(mode="after")
    def check_orthogonality(self):
        if abs(self.T * self.delta_f - 1.0) > 1e-12:
            raise ValueError(f"T * delta_f must equal 1 (got {self.T * self.delta_f!r})")
        return self

    @property
    def size(self) -> int:
        return self.M * self.N

    @property
    def shape(self) -> tuple:
        return (self.M, self.N)

    @property
    def delay_resolution(self) -> float:
        return 1.0 / (self.M * self.delta_f)

    @property
    def doppler_resolution(self) -> float:
        return 1.0 / (self.N * self.T)

    @property
    def bandwidth(self) -> float:
        return self.M * self.delta_f

    @property
    def frame_duration(self) -> float:
        # One transmission block
        return self.N * self.T

    def range_resolution(self, c: float = SPEED_OF_LIGHT) -> float:
        """Two-way (echo) range bin width in metres."""
        return c * self.delay_resolution / 2.0

    def velocity_resolution(self, f_c: float, c: float = SPEED_OF_LIGHT) -> float:
        """Two-way (echo) radial speed bin width in m/s."""
        return c * self.doppler_resolution / (2.0 * f_c)


class CarrierConfig(BaseModel):
    f_c: float = Field(gt=0)
    c: float = Field(default=SPEED_OF_LIGHT, gt=0)

    model_config = ConfigDict(frozen=True)

    @property
    def wavelength(self) -> float:
        return self.c / self.f_c


class ArrayConfig(BaseModel):
    """Half-wavelength ULAs at the BS (transmit and receive) and at each UE."""

    n_tx: int = Field(default=64, ge=1)
    n_rx: int = Field(default=64, ge=1)
    n_ue: int = Field(default=4, ge=1)

    model_config = ConfigDict(frozen=True)
