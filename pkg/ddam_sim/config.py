"""Experiment files: TOML sections validated by pydantic models, with key=value overrides.

Overrides use dotted keys (``sweep.seeds=1,2``). A bare key (``seeds=1,2``) resolves to the
one section that defines it. Overrides are applied to the parsed document before
validation, so they obey the same constraints as the file.
"""

import hashlib
import json
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Literal, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ddam_sim.am_core import LossVariant
from ddam_sim.errors import ConfigurationError
from ddam_sim.protocols import Protocol
from ddam_sim.trees import DEFAULT_NODE_BUDGET

PositiveInt = Annotated[int, Field(ge=1)]
UnitInterval = Annotated[float, Field(ge=0.0, le=1.0)]


class ScenarioKind(str, Enum):
    SYNTHETIC = "synthetic"
    TRAFFIC = "traffic"
    PERIODIC_TRAFFIC = "periodic_traffic"


class Figure(str, Enum):
    FIG3_REGRET_VS_T = "fig3_regret_vs_T"
    FIG4_VS_RHO = "fig4_vs_rho"
    FIG5_VS_Y0 = "fig5_vs_y0"
    FIG7_PL_TRACKING = "fig7_pl_tracking"
    FIG8_DYNREGRET = "fig8_dynregret"
    FIG10_NMSE = "fig10_nmse"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScenarioSection(_Section):
    kind: ScenarioKind = ScenarioKind.SYNTHETIC
    n_agents: PositiveInt = 20
    d_k: PositiveInt = 4
    d_v: PositiveInt = 4
    rho: UnitInterval = 0.75
    noise_var: Annotated[float, Field(ge=0.0)] = 1.0
    drift: Annotated[float | None, Field(gt=0.0, le=1.0)] = None
    B: Annotated[float, Field(gt=0.0, description="Diameter of the memory design domain")] = 60.0
    loss: LossVariant = LossVariant.DELTA_NET
    gating: list[Literal[0, 1]] | None = None
    feature_dim: PositiveInt | None = None
    feature_seed: Annotated[int, Field(ge=0)] = 0
    grad_bound: Annotated[float | None, Field(gt=0.0)] = None
    traffic_path: str | None = None
    ap_ids: list[str] | None = None
    days: PositiveInt = 50
    traffic_noise: Annotated[float, Field(ge=0.0)] = 0.25
    weekly: Annotated[float, Field(ge=0.0, lt=1.0)] = 0.15
    nmse_final: bool = False


class GraphSection(_Section):
    source: Literal["erdos_renyi", "edge_list", "adjacency_csv"] = "erdos_renyi"
    p: Annotated[float, Field(gt=0.0, le=1.0)] = 0.25
    seed: Annotated[int | None, Field(ge=0)] = None
    edges: list[tuple[int, int]] | None = None
    delays: list[Annotated[int, Field(ge=1)]] | None = None
    path: str | None = None
    include: str | None = None
    node_budget: PositiveInt = DEFAULT_NODE_BUDGET

    @model_validator(mode="after")
    def _source_inputs(self) -> "GraphSection":
        if self.source == "edge_list" and not self.edges:
            raise ValueError("graph.source = 'edge_list' needs graph.edges")
        if self.source == "adjacency_csv" and not self.path:
            raise ValueError("graph.source = 'adjacency_csv' needs graph.path")
        if self.delays is not None and (self.edges is None or len(self.delays) != len(self.edges)):
            raise ValueError("graph.delays must have one entry per edge")
        return self


class WeightsSection(_Section):
    source: Literal["dirichlet", "identity", "uniform", "matrix"] = "dirichlet"
    y0: Annotated[float, Field(ge=0.0)] = 2.0
    y1: Annotated[float, Field(ge=0.0)] = 10.0
    matrix: list[list[float]] | None = None

    @model_validator(mode="after")
    def _dirichlet_order(self) -> "WeightsSection":
        if self.source == "dirichlet":
            if self.y1 < self.y0:
                raise ValueError(f"weights.y1 ({self.y1}) must be >= weights.y0 ({self.y0})")
            if self.y0 == 0 and self.y1 == 0:
                raise ValueError("weights.y0 and weights.y1 cannot both be zero")
        if self.source == "matrix" and not self.matrix:
            raise ValueError("weights.source = 'matrix' needs weights.matrix")
        return self


class SweepSection(_Section):
    horizons: Annotated[list[PositiveInt], Field(min_length=1)] = [250, 500, 1000, 1500, 2500]
    rho: list[UnitInterval] | None = None
    y0: list[Annotated[float, Field(ge=0.0)]] | None = None
    omega: list[PositiveInt] | None = None
    seeds: Annotated[list[Annotated[int, Field(ge=0)]], Field(min_length=1)] = [0]
    protocols: Annotated[list[Protocol], Field(min_length=1)] = list(Protocol)

    @model_validator(mode="after")
    def _distinct(self) -> "SweepSection":
        for name in ("horizons", "seeds", "protocols"):
            values = getattr(self, name)
            if len(set(values)) != len(values):
                raise ValueError(f"sweep.{name} contains duplicates")
        return self


class LearningRateSection(_Section):
    mode: Literal["corollary", "fixed"] = "corollary"
    value: Annotated[float | None, Field(gt=0.0)] = None

    @model_validator(mode="after")
    def _fixed_value(self) -> "LearningRateSection":
        if self.mode == "fixed" and self.value is None:
            raise ValueError("learning_rate.mode = 'fixed' needs learning_rate.value")
        return self


class OutputSection(_Section):
    figures: list[Figure] = []
    per_agent: bool = False


class ExperimentConfig(_Section):
    scenario: ScenarioSection = ScenarioSection()
    graph: GraphSection = GraphSection()
    weights: WeightsSection = WeightsSection()
    sweep: SweepSection = SweepSection()
    learning_rate: LearningRateSection = LearningRateSection()
    output: OutputSection = OutputSection()

    @model_validator(mode="after")
    def _cross_section(self) -> "ExperimentConfig":
        sc = self.scenario
        if sc.kind == ScenarioKind.TRAFFIC and not sc.traffic_path:
            raise ValueError("scenario.kind = 'traffic' needs scenario.traffic_path")
        if sc.loss.gated and (sc.gating is None or len(sc.gating) != sc.d_v):
            raise ValueError(f"{sc.loss.value} needs scenario.gating with d_v entries")
        if sc.loss.uses_feature_map and (sc.feature_dim is None or sc.feature_dim % 2):
            raise ValueError(f"{sc.loss.value} needs an even scenario.feature_dim")
        if self.weights.source == "matrix":
            n = len(self.weights.matrix)
            if n != sc.n_agents or any(len(row) != n for row in self.weights.matrix):
                raise ValueError(f"weights.matrix must be {sc.n_agents} x {sc.n_agents}")
        return self

    def config_hash(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_LINE_RE = re.compile(r"line (\d+)")


def _parse_scalar(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_override(item: str) -> tuple[list[str], Any]:
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not key=value")
    key, _, raw = item.partition("=")
    key, raw = key.strip(), raw.strip()
    if not key:
        raise ConfigurationError(f"override {item!r} has an empty key")
    if "," in raw and not raw.startswith(("[", "{", '"', "'")):
        value: Any = [_parse_scalar(part.strip()) for part in raw.split(",") if part.strip()]
    else:
        value = _parse_scalar(raw)
    return key.split("."), value


def _resolve_key(parts: list[str]) -> list[str]:
    if len(parts) > 1:
        return parts
    owners = [
        name
        for name, info in ExperimentConfig.model_fields.items()
        if parts[0] in info.annotation.model_fields
    ]
    if len(owners) != 1:
        where = ", ".join(owners) if owners else "no section"
        raise ConfigurationError(f"override key {parts[0]!r} is ambiguous or unknown ({where})")
    return [owners[0], parts[0]]


def apply_overrides(document: dict, overrides: Sequence[str]) -> dict:
    """Return a copy of the parsed document with every override applied in order."""
    doc = json.loads(json.dumps(document))
    for item in overrides:
        parts, value = parse_override(item)
        parts = _resolve_key(parts)
        node = doc
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"override {item!r} descends into a non-table value")
            node = child
        if isinstance(value, list) and _expects_scalar(parts):
            raise ConfigurationError(f"override {item!r} gives a list for a scalar setting")
        node[parts[-1]] = value
        if _expects_list(parts) and not isinstance(value, list):
            node[parts[-1]] = [value]
    return doc


def _field_annotation(parts: list[str]) -> Any:
    section = ExperimentConfig.model_fields.get(parts[0])
    if section is None or len(parts) != 2:
        return None
    info = section.annotation.model_fields.get(parts[1])
    return None if info is None else info.annotation


def _expects_list(parts: list[str]) -> bool:
    return "list[" in str(_field_annotation(parts))


def _expects_scalar(parts: list[str]) -> bool:
    annotation = _field_annotation(parts)
    return annotation is not None and "list[" not in str(annotation) and "tuple[" not in str(annotation)


def _line_of(text: str, key: str) -> int | None:
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=", re.MULTILINE)
    match = pattern.search(text)
    return text.count("\n", 0, match.start()) + 1 if match else None


def _read_toml(path: Path) -> tuple[dict, str]:
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}", path=str(path))
    text = path.read_text(encoding="utf-8")
    try:
        return tomllib.loads(text), text
    except tomllib.TOMLDecodeError as e:
        found = _LINE_RE.search(str(e))
        raise ConfigurationError(str(e), path=str(path), line=int(found.group(1)) if found else None) from e


def _merge_graph_include(doc: dict, base: Path) -> dict:
    graph = doc.get("graph", {})
    include = graph.get("include")
    if not include:
        return doc
    included, _ = _read_toml((base / include).resolve())
    merged = dict(included.get("graph", {}))
    merged.update({k: v for k, v in graph.items() if k != "include"})
    merged["include"] = include
    if "path" in merged and merged.get("source") == "adjacency_csv":
        merged["path"] = str((base / include).parent / merged["path"])
    doc = dict(doc)
    doc["graph"] = merged
    return doc


def validate_document(doc: dict, path: str | None = None, text: str = "") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as e:
        first = e.errors()[0]
        keys = [str(part) for part in first["loc"] if isinstance(part, str)]
        line = _line_of(text, keys[-1]) if keys and text else None
        where = ".".join(keys) or "config"
        raise ConfigurationError(f"{where}: {first['msg']}", path=path, line=line) from e


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    path = Path(path)
    doc, text = _read_toml(path)
    doc = _merge_graph_include(doc, path.parent)
    doc = apply_overrides(doc, overrides)
    cfg = validate_document(doc, str(path), text)
    sc = cfg.scenario
    if sc.traffic_path and not Path(sc.traffic_path).is_absolute():
        resolved = str((path.parent / sc.traffic_path).resolve())
        cfg = cfg.model_copy(update={"scenario": sc.model_copy(update={"traffic_path": resolved})})
    return cfg
