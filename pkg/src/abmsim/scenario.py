"""Scenario files: JSON experiment descriptions validated into typed configs.

A scenario names a model pack, the population and time frame, the ensemble
size and seed, an intervention block and pack parameter overrides.  Unknown
keys are rejected.  Validation problems are reported with the JSON path and,
where it can be found, the line of the offending key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator, model_validator

from .pertussis import PertussisParams
from .population import DemographyParams
from .varicella import HealthEconParams, VaricellaParams

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Raised for unreadable or invalid scenario files; carries per-field diagnostics."""

    def __init__(self, message: str, diagnostics: list[str] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or [message]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class VaricellaIntervention(_Strict):
    """Childhood vaccination programme switched on at ``start`` years after burn-in."""

    vaccination: bool = True
    start: float = Field(0.0, ge=0)
    boosting_durations: list[float] | None = None

    @field_validator("boosting_durations")
    @classmethod
    def _durations(cls, v):
        if v is not None and (not v or any(d < 0 for d in v)):
            raise ValueError("boosting_durations must be a non-empty list of values >= 0")
        return v


class PertussisIntervention(_Strict):
    """Maternal immunization and the sensitivity switches that go with it."""

    maternal_coverage: float = Field(0.5, ge=0, le=1)
    start: float = Field(0.0, ge=0)
    blunting: bool = False
    passive_protection: bool = True
    maternal_antibody_years: float | None = Field(None, gt=0)
    ascertainment: list[float] | None = None

    @field_validator("ascertainment")
    @classmethod
    def _ascertainment(cls, v):
        if v is not None and (not v or any(not 0 <= x <= 1 for x in v)):
            raise ValueError("ascertainment values must lie in [0, 1]")
        return v


class _Common(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    population_size: int = Field(ge=1)
    horizon: float = Field(50.0, gt=0)
    burn_in: float = Field(20.0, ge=0)
    realizations: int = Field(30, ge=1)
    master_seed: int = Field(0, ge=0, lt=2**64)
    demography: DemographyParams | None = None

    @model_validator(mode="after")
    def _frame(self):
        if not self.horizon > self.burn_in:
            raise ValueError("horizon must exceed burn_in")
        return self


class VaricellaScenario(_Common):
    model_pack: Literal["varicella"]
    intervention: VaricellaIntervention = Field(default_factory=VaricellaIntervention)
    params: VaricellaParams = Field(default_factory=VaricellaParams)
    econ: HealthEconParams = Field(default_factory=HealthEconParams)


class PertussisScenario(_Common):
    model_pack: Literal["pertussis"]
    intervention: PertussisIntervention = Field(default_factory=PertussisIntervention)
    params: PertussisParams = Field(default_factory=PertussisParams)

    @model_validator(mode="after")
    def _ascertainment_shape(self):
        a = self.intervention.ascertainment
        if a is not None and len(a) != len(self.params.ascertainment_edges):
            raise ValueError(
                f"intervention.ascertainment needs {len(self.params.ascertainment_edges)} values"
            )
        return self

    def resolved_params(self) -> PertussisParams:
        """Pack parameters with the intervention-block overrides folded in."""
        upd = {}
        iv = self.intervention
        if iv.maternal_antibody_years is not None:
            upd["waning_passive"] = 1.0 / iv.maternal_antibody_years
        if iv.ascertainment is not None:
            upd["ascertainment_values"] = list(iv.ascertainment)
        return self.params.model_copy(update=upd) if upd else self.params


ScenarioConfig = Annotated[Union[VaricellaScenario, PertussisScenario], Field(discriminator="model_pack")]
_ADAPTER = TypeAdapter(ScenarioConfig)


@dataclass(frozen=True)
class _Located:
    path: str
    line: int | None
    message: str

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.path}: {self.message}"


def _key_line(text: str, loc: tuple) -> int | None:
    """Best-effort line of the last string key in ``loc`` within ``text``.

    Keys are searched in order so nested paths resolve to the occurrence
    after their parent.
    """
    pos = 0
    found = None
    for part in loc:
        if not isinstance(part, str):
            continue
        idx = text.find(f'"{part}"', pos)
        if idx < 0:
            continue
        pos = idx
        found = idx
    if found is None:
        return None
    return text.count("\n", 0, found) + 1


def _diagnostics(err: ValidationError, text: str) -> list[str]:
    out = []
    for e in err.errors():
        loc = tuple(e["loc"])
        # the union tag shows up as the first path element; drop it
        if loc and loc[0] in ("varicella", "pertussis"):
            loc = loc[1:]
        path = ".".join(str(p) for p in loc) or "<root>"
        out.append(str(_Located(path, _key_line(text, loc), e["msg"])))
    return out


def parse_scenario_text(text: str) -> VaricellaScenario | PertussisScenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        msg = f"line {exc.lineno}: invalid JSON ({exc.msg}, column {exc.colno})"
        raise ScenarioError(msg) from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a JSON object")
    try:
        return _ADAPTER.validate_python(raw)
    except ValidationError as exc:
        diags = _diagnostics(exc, text)
        raise ScenarioError(f"{len(diags)} problem(s) in scenario", diags) from exc


def parse_scenario(path) -> VaricellaScenario | PertussisScenario:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {p}: {exc.strerror}") from exc
    return parse_scenario_text(text)


def scenario_to_dict(cfg: VaricellaScenario | PertussisScenario) -> dict:
    """Fully resolved configuration (all defaults filled) as plain JSON data."""
    return cfg.model_dump(mode="json")
