from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.scenario import ScenarioConfig

RECORD_COLUMNS = [
    "trial",
    "block",
    "scheme",
    "snr_db",
    "bits_sent",
    "bit_errors",
    "l_true",
    "l_hat",
    "k_true",
    "k_hat",
    "theta_true_deg",
    "theta_hat_deg",
]


class BlockRecord(BaseModel):
    trial: int = Field(ge=0)
    block: int = Field(ge=0)
    scheme: str
    snr_db: float
    bits_sent: int = Field(ge=0)
    bit_errors: int = Field(ge=0)
    l_true: int = Field(ge=0)
    l_hat: int = Field(ge=0)
    k_true: int = Field(ge=0)
    k_hat: int = Field(ge=0)
    theta_true_deg: float
    theta_hat_deg: float
    position_error_m: float = 0.0
    target: int = 0

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_counts(self):
        if self.bit_errors > self.bits_sent:
            raise ValueError("bit_errors cannot exceed bits_sent")
        return self

    @property
    def sort_key(self) -> tuple:
        return (self.scheme, self.snr_db, self.trial, self.block, self.target)


class TargetSensingReport(BaseModel):
    target: int
    is_ue: bool
    l_true: int
    l_hat: int
    k_true: int
    k_hat: int
    theta_true_deg: float
    theta_hat_deg: float
    eta_hat_s: float
    phi_hat_hz: float
    range_true_m: float
    range_hat_m: float
    radial_speed_true_mps: float
    radial_speed_hat_mps: float
    position_hat_m: List[float]
    position_error_m: float
    peak_magnitude: float
    crb_h: Optional[float] = None


class SensingReport(BaseModel):
    snr_db: float
    seed: int
    range_resolution_m: float
    velocity_resolution_mps: float
    targets: List[TargetSensingReport]


class DesignResult(BaseModel):
    power_allocation: List[float]
    achieved_capacity: float
    achieved_crb: float
    blend: float = Field(ge=0.0, le=1.0)
    p_total: float = Field(gt=0)
    t_crb: float
    status: Literal["feasible"] = "feasible"

    @model_validator(mode="after")
    def check_constraints(self):
        allocation = np.asarray(self.power_allocation, dtype=float)
        if np.any(allocation < 0):
            raise ValueError("power allocation must be nonnegative")
        if abs(allocation.mean() - self.p_total) > 1e-9 * max(1.0, self.p_total):
            raise ValueError("mean per-bin power must equal P_T")
        if self.achieved_crb > self.t_crb:
            raise ValueError("a feasible design must meet the CRB threshold")
        return self


class DesignRequest(BaseModel):
    scenario: ScenarioConfig
    t_crb: float = Field(gt=0)
    snr_db: Optional[float] = None
