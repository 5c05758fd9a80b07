"""
CTMC availability model inputs and outputs. All rates are per hour.
"""
from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Branching(str, Enum):
    SPLIT = "split"        # R exits at mu_r, branching (1 - p_f, p_f)
    LITERAL = "literal"    # R -> A at mu_r and R -> F at p_f * mu_r


class CtmcParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda_c: float = Field(1e-3, ge=0)
    lambda_p: float = Field(1e-2, ge=0)
    mu_r: float = Field(3600.0, gt=0)
    mu_f: float = Field(360.0, gt=0)
    mu_p: float = Field(6.0, gt=0)
    p_f: float = Field(0.01, ge=0, le=1)


class CtmcSolution(BaseModel):
    model_config = ConfigDict(frozen=True)

    pi_A: float
    pi_D: float
    pi_R: float
    pi_F: float
    eca: float

    @model_validator(mode="after")
    def _normalized(self) -> "CtmcSolution":
        total = self.pi_A + self.pi_D + self.pi_R + self.pi_F
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"steady-state probabilities sum to {total}")
        return self


class CompositionMode(str, Enum):
    MULTIPLICATIVE = "multiplicative"
    ADDITIVE = "additive"


class CompositionInputs(BaseModel):
    eps_sc: float = Field(0.0, ge=0, le=1)
    eps_negl: float = Field(0.0, ge=0, le=1)
    p_beh: float = Field(..., ge=0, le=1)
    p_temp: float = Field(..., ge=0, le=1)
    p_content: float = Field(..., ge=0, le=1)
