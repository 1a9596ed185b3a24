"""Versioned checkpoint file of an annealing run."""
from __future__ import annotations

from typing import Any

from pydantic import BaseModel, ConfigDict, Field

from pisr.schemas.common import CandidateModel, LossReportModel

SCHEMA_VERSION = 1


class TraceRow(BaseModel):
    step: int
    temperature: float
    current_total: float
    best_total: float


class CheckpointModel(BaseModel):
    """Everything needed to continue a single-worker annealing run bitwise."""

    model_config = ConfigDict(extra="forbid")

    schema_version: int = SCHEMA_VERSION
    driver: str = "annealing"
    seed: int
    functions: list[str]
    finished: bool = False
    # Number of proposals made so far; the temperature is derived from it.
    schedule_cursor: int = Field(0, ge=0)
    evaluations_used: int = Field(0, ge=0)
    trivial_rejects: int = Field(0, ge=0)
    rng_state: dict[str, Any]
    candidate: CandidateModel
    report: LossReportModel
    current: CandidateModel
    current_report: LossReportModel
    trace: list[TraceRow] = Field(default_factory=list)
