from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.schemas.grid import SPEED_OF_LIGHT, ArrayConfig, CarrierConfig, DDGrid

Scheme = Literal["proposed", "pilot", "ideal"]
SCHEME_ORDER = ("ideal", "proposed", "pilot")


def _split_csv(value):
    if isinstance(value, str):
        parts = [part.strip() for part in value.split(",")]
        return [part for part in parts if part]
    return value


class TargetSpec(BaseModel):
    position: Tuple[float, float]
    # (min, max) of the uniform speed draw in m/s
    speed: Tuple[float, float] = (10.0, 15.0)
    # Direction of motion in degrees from boresight (+y); None means radial approach towards the BS
    heading_deg: Optional[float] = None
    rcs: float = Field(default=25.0, gt=0)
    is_ue: bool = True

    model_config = ConfigDict(extra="forbid", frozen=True)

    @field_validator("position", "speed", mode="before")
    @classmethod
    def parse_pair(cls, value):
        return _split_csv(value)

    @field_validator("heading_deg", mode="before")
    @classmethod
    def blank_heading(cls, value):
        if isinstance(value, str) and value.strip().lower() in ("", "none", "radial"):
            return None
        return value

    @model_validator(mode="after")
    def check_geometry(self):
        if self.position[0] == 0.0 and self.position[1] == 0.0:
            raise ValueError("target position must not coincide with the BS at the origin")
        if self.position[1] <= 0.0:
            raise ValueError("target must lie in front of the arrays (position y > 0)")
        if self.speed[0] < 0 or self.speed[1] < self.speed[0]:
            raise ValueError(f"speed range must satisfy 0 <= min <= max (got {self.speed})")
        return self


class ScenarioConfig(BaseModel):
    """Full experiment description; every field is also a key of the flat config file."""

    M: int = Field(default=128, ge=2)
    N: int = Field(default=20, ge=2)
    delta_f: float = Field(default=6e3, gt=0)
    f_c: float = Field(default=3e9, gt=0)
    c: float = Field(default=SPEED_OF_LIGHT, gt=0)
    n_tx: int = Field(default=64, ge=1)
    n_rx: int = Field(default=64, ge=1)
    n_ue: int = Field(default=4, ge=1)
    tx_power_dbm: float = 40.0
    snr_grid_db: List[float] = Field(default_factory=lambda: [0.0, 2.0, 4.0, 6.0, 8.0, 10.0], min_length=1)
    snr_mode: Literal["normalized", "link_budget"] = "normalized"
    trials: int = Field(default=20, ge=1)
    blocks_per_trial: int = Field(default=10, ge=1)
    schemes: List[Scheme] = Field(default_factory=lambda: list(SCHEME_ORDER), min_length=1)
    seed: int = Field(default=2024, ge=0, lt=2**64)
    angle_step_deg: float = Field(default=1.0, gt=0)
    angle_sector_deg: float = Field(default=60.0, gt=0, le=90)
    sensing_snr_offset_db: float = 0.0
    pilot_max_delay: int = Field(default=16, ge=0)
    pilot_max_doppler: int = Field(default=2, ge=0)
    pilot_power_fraction: float = Field(default=0.2, gt=0, lt=1)
    pilot_sweep_energy_fraction: float = Field(default=0.2, ge=0, lt=1)
    pilot_threshold: float = Field(default=9.0, gt=0)
    exact_grid: bool = False
    frames_for_crb: int = Field(default=64, ge=1)
    workers: Optional[int] = Field(default=None, ge=1)
    targets: List[TargetSpec] = Field(min_length=1)

    model_config = ConfigDict(extra="forbid")

    @field_validator("snr_grid_db", "schemes", mode="before")
    @classmethod
    def parse_list(cls, value):
        return _split_csv(value)

    @field_validator("schemes")
    @classmethod
    def dedupe_schemes(cls, value):
        return list(dict.fromkeys(value))

    @model_validator(mode="after")
    def check_speeds(self):
        for index, target in enumerate(self.targets):
            if target.speed[1] > self.c / 10:
                raise ValueError(f"target {index}: speed range must lie within [0, c/10]")
        return self

    @property
    def grid(self) -> DDGrid:
        return DDGrid(M=self.M, N=self.N, delta_f=self.delta_f)

    @property
    def carrier(self) -> CarrierConfig:
        return CarrierConfig(f_c=self.f_c, c=self.c)

    @property
    def arrays(self) -> ArrayConfig:
        return ArrayConfig(n_tx=self.n_tx, n_rx=self.n_rx, n_ue=self.n_ue)

    @property
    def tx_power_w(self) -> float:
        return 10 ** ((self.tx_power_dbm - 30.0) / 10.0)

    @property
    def ue_indices(self) -> List[int]:
        return [index for index, target in enumerate(self.targets) if target.is_ue]
