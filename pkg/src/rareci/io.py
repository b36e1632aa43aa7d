"""File formats: weights CSV, segments CSV, scenario JSON, coverage CSV."""

from __future__ import annotations

import csv
import json
import math
from importlib import resources
from pathlib import Path
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .core import InputError, WeightSample, validate_weights
from .next_weight import SegmentRecord
from .simulator import STUDY_METHODS, CoverageReport, CoverageRow, SamplingModel, Scenario, TwoStage

WEIGHTS_HEADER = ["weight", "category"]
SEGMENTS_HEADER = ["segment_id", "s_prob", "h_prob", "p_prob", "simulated", "reviewed", "outcome"]


class ConfigError(InputError):
    pass


class MalformedFile(InputError):
    pass


def _reader(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MalformedFile(f"{path}: missing header row")
        header = [h.strip() for h in reader.fieldnames]
        reader.fieldnames = header
        return header, list(reader)


def read_weights_csv(path, miles_normalizer: float = 1.0) -> WeightSample:
    """Load a ``weight,category`` CSV (category column optional)."""
    header, rows = _reader(path)
    if "weight" not in header:
        raise MalformedFile(f"{path}: header must contain 'weight'")
    raw, cats = [], []
    for lineno, row in enumerate(rows, start=2):
        text = (row.get("weight") or "").strip()
        try:
            raw.append(float(text))
        except ValueError:
            raise MalformedFile(f"{path}:{lineno}: weight {text!r} is not a number") from None
        cats.append((row.get("category") or "").strip() or None)
    has_cats = "category" in header and any(c is not None for c in cats)
    return validate_weights(raw, cats if has_cats else None, miles_normalizer)


def write_weights_csv(path, sample: WeightSample) -> None:
    cats = sample.categories or (None,) * sample.n
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(WEIGHTS_HEADER)
        for w, c in zip(sample.weights, cats):
            out.writerow([repr(w), c or ""])


def _flag(text: str, name: str, where: str) -> bool | None:
    text = text.strip()
    if text == "":
        return None
    if text in ("0", "1"):
        return text == "1"
    raise MalformedFile(f"{where}: {name} must be 0, 1 or empty, got {text!r}")


def _prob(text: str, name: str, where: str) -> float | None:
    text = text.strip()
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise MalformedFile(f"{where}: {name} {text!r} is not a number") from None


def read_segments_csv(path) -> list[SegmentRecord]:
    header, rows = _reader(path)
    missing = [h for h in SEGMENTS_HEADER if h not in header]
    if missing:
        raise MalformedFile(f"{path}: missing columns {missing}")
    records = []
    for lineno, row in enumerate(rows, start=2):
        where = f"{path}:{lineno}"
        s = _prob(row["s_prob"], "s_prob", where)
        p = _prob(row["p_prob"], "p_prob", where)
        if s is None or p is None:
            raise MalformedFile(f"{where}: s_prob and p_prob are required")
        records.append(
            SegmentRecord(
                segment_id=row["segment_id"].strip(),
                s_prob=s,
                h_prob=_prob(row["h_prob"], "h_prob", where),
                p_prob=p,
                simulated=bool(_flag(row["simulated"], "simulated", where)),
                reviewed=bool(_flag(row["reviewed"], "reviewed", where)),
                outcome=_flag(row["outcome"], "outcome", where),
            )
        )
    return records


def write_segments_csv(path, records) -> None:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, bool):
            return "1" if v else "0"
        return repr(v) if isinstance(v, float) else str(v)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(SEGMENTS_HEADER)
        for r in records:
            out.writerow([fmt(getattr(r, h)) for h in SEGMENTS_HEADER])


def load_dataset(name: str) -> WeightSample:
    """Bundled weight files: ``toy`` (101 events in two categories) and ``two_category`` (an importance-sampled example)."""
    ref = resources.files("rareci") / "data" / f"{name}.csv"
    if not ref.is_file():
        raise InputError(f"no bundled dataset {name!r}")
    with resources.as_file(ref) as path:
        return read_weights_csv(path)


# scenario configuration


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class BudgetGrid(_Strict):
    start: float = Field(alias="from")
    stop: float = Field(alias="to")
    steps: int = Field(ge=1)

    def values(self) -> list[float]:
        return [float(b) for b in np.linspace(self.start, self.stop, self.steps)]


class SamplingModelConfig(_Strict):
    kind: Literal["power", "sqrt_times_one_minus_r", "r_times_one_plus_r"] = "power"
    gamma: Union[float, list[float], None] = None


class StagesConfig(_Strict):
    kind: Literal["one", "two"] = "one"
    b1: float | None = None
    gamma1: float | None = None
    gamma2: float | None = None


class ScenarioConfig(_Strict):
    lambda_: float = Field(1e5, alias="lambda", ge=0)
    pi: float = Field(1e-3, gt=0, le=1)
    f1: tuple[float, float] = (2.0, 2.0)
    f0: tuple[float, float] = (-2.0, 2.0)
    sampling_model: SamplingModelConfig = SamplingModelConfig(kind="power", gamma=0.5)
    budget: Union[float, list[float], BudgetGrid]
    stages: StagesConfig = StagesConfig()
    alpha: float = Field(0.1, gt=0, lt=1)
    methods: list[str] = list(STUDY_METHODS)
    gamma_hat: Union[Literal["oracle"], float] = "oracle"
    replicates: int = Field(2000, ge=1)
    base_seed: int = 0
    backend: Literal["saddlepoint", "monte_carlo"] = "saddlepoint"
    bootstrap_draws: int = Field(10_000, ge=100)

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, v):
        bad = [m for m in v if m not in STUDY_METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {list(STUDY_METHODS)}")
        return v

    def budgets(self) -> list[float]:
        if isinstance(self.budget, BudgetGrid):
            return self.budget.values()
        if isinstance(self.budget, list):
            return [float(b) for b in self.budget]
        return [float(self.budget)]

    def scenarios(self) -> list[Scenario]:
        """Expand into one :class:`Scenario` per (gamma, budget) cell."""
        two = None
        if self.stages.kind == "two":
            if None in (self.stages.b1, self.stages.gamma1, self.stages.gamma2):
                raise ConfigError("two-stage config needs b1, gamma1 and gamma2")
            two = TwoStage(self.stages.b1, self.stages.gamma1, self.stages.gamma2)
        sm = self.sampling_model
        if sm.kind == "power" and two is None:
            if sm.gamma is None:
                raise ConfigError("power sampling model needs gamma")
            gammas = sm.gamma if isinstance(sm.gamma, list) else [sm.gamma]
            models = [SamplingModel("power", float(g)) for g in gammas]
        else:
            models = [SamplingModel(sm.kind, 0.5 if sm.gamma is None or isinstance(sm.gamma, list) else sm.gamma)]
        cells = []
        for model in models:
            for b in self.budgets():
                cells.append(
                    Scenario(
                        lam=self.lambda_,
                        pi=self.pi,
                        f1=tuple(self.f1),
                        f0=tuple(self.f0),
                        sampling_model=model,
                        budget=b,
                        two_stage=two,
                        alpha=self.alpha,
                        methods=tuple(self.methods),
                        gamma_hat=None if self.gamma_hat == "oracle" else float(self.gamma_hat),
                        replicates=self.replicates,
                        base_seed=self.base_seed,
                        backend=self.backend,
                        bootstrap_draws=self.bootstrap_draws,
                    )
                )
        return cells


def load_scenario_config(path) -> ScenarioConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_scenario_config(doc)


def parse_scenario_config(doc: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def write_report_csv(path, report: CoverageReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.DictWriter(fh, fieldnames=list(CoverageRow.FIELDS))
        out.writeheader()
        for row in report.rows:
            out.writerow(row.as_dict())


def read_report_csv(path) -> CoverageReport:
    header, rows = _reader(path)
    need = ["budget", "gamma", "method", "coverage_error", "mean_width", "replicates"]
    missing = [h for h in need if h not in header]
    if missing:
        raise MalformedFile(f"{path}: missing columns {missing}")
    out = []
    for lineno, row in enumerate(rows, start=2):
        try:
            out.append(
                CoverageRow(
                    budget=float(row["budget"]),
                    gamma=row["gamma"].strip(),
                    method=row["method"].strip(),
                    coverage_error=float(row["coverage_error"]),
                    mean_width=float(row["mean_width"]),
                    replicates=int(row["replicates"]),
                    mean_point_estimate=float(row.get("mean_point_estimate") or math.nan),
                    failures=int(row.get("failures") or 0),
                )
            )
        except (TypeError, ValueError) as exc:
            raise MalformedFile(f"{path}:{lineno}: {exc}") from None
    return CoverageReport(out)
