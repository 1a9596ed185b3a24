"""Common Pydantic schemas for candidate and loss-report files.

These models are the JSON shape of every artifact the CLI writes
(`best_candidate.json`, `loss_report.json`) and of the bundled golden
candidate, so both the search and external tooling rely on one layout.
Floats serialise with Python's shortest round-trip repr, which preserves all
17 significant digits.
"""
from __future__ import annotations

import math
from typing import Mapping, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from pisr.core.errors import ExpressionError, UsageError
from pisr.services.expr import expression_from_json, expression_to_json, to_infix
from pisr.services.problem import CandidateSolution, LossReport


class ExpressionModel(BaseModel):
    """One expression in token-string form."""

    postfix: list[str] = Field(..., description="Postfix tokens, e.g. ['x', 'sech']")
    infix: Optional[str] = Field(None, description="Human-readable rendering, ignored on load")


class CandidateModel(BaseModel):
    """Named expressions plus the shared constant vector."""

    model_config = ConfigDict(extra="forbid")

    functions: dict[str, ExpressionModel]
    constants: list[float] = Field(default_factory=list)
    provenance: str = "loaded"

    @classmethod
    def from_candidate(cls, candidate: CandidateSolution) -> "CandidateModel":
        consts = [float(c) for c in candidate.constants]
        functions = {}
        for name, expr in candidate.expressions.items():
            payload = expression_to_json(expr, consts)
            functions[name] = ExpressionModel(postfix=payload["postfix"], infix=to_infix(expr, consts))
        return cls(
            functions=functions,
            constants=consts,
            provenance=candidate.provenance,
        )

    def to_candidate(self) -> CandidateSolution:
        """Rebuild the candidate.

        Raises
        ------
        ExpressionError
            On unknown tokens or a constant slot without a value.
        """
        exprs = {}
        constants = np.asarray(self.constants, dtype=float)
        for name, e in self.functions.items():
            exprs[name], constants = expression_from_json({"postfix": e.postfix, "constants": constants})
        try:
            return CandidateSolution(exprs, constants, self.provenance)
        except UsageError as exc:
            raise ExpressionError(str(exc)) from exc


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


class LossReportModel(BaseModel):
    """SNE per term as top-level keys, next to the MSE table and the total.

    Term keys are the problem's term names (``eq7`` ... ``eq15`` for the
    soliton problem). Rejected reports carry nulls and a reason.
    """

    model_config = ConfigDict(extra="allow")

    mse: dict[str, Optional[float]]
    total: Optional[float]
    count: int
    rejected: bool = False
    reason: Optional[str] = None
    no_data_flag: bool = False

    @classmethod
    def from_report(cls, report: LossReport) -> "LossReportModel":
        return cls(
            **{k: _finite_or_none(v) for k, v in report.terms.items()},
            mse={k: _finite_or_none(v) for k, v in report.mse.items()},
            total=_finite_or_none(report.total),
            count=report.count,
            rejected=report.rejected,
            reason=report.reason,
            no_data_flag=report.no_data,
        )

    @property
    def sne(self) -> dict[str, Optional[float]]:
        extra = self.model_extra or {}
        return {k: extra.get(k) for k in self.mse}

    def to_report(self) -> LossReport:
        if self.rejected:
            return LossReport.rejection(self.mse.keys(), self.count, self.reason or "rejected", self.no_data_flag)
        terms: Mapping[str, float] = {k: (math.nan if v is None else float(v)) for k, v in self.sne.items()}
        return LossReport(terms, self.count, no_data=self.no_data_flag)
