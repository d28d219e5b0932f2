"""Experiment configuration schema.

A config names a model, an ordered list of stages with their options, and
optional assertions on the collected results. Unknown keys are rejected
before anything is computed.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ModwaveError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Strict):
    name: str
    params: dict[str, Any] = Field(default_factory=dict)


class ProfileStage(_Strict):
    kind: Literal["profile"] = "profile"
    k: float
    amplitude: Union[float, list[float]]
    N: int = 64
    M: Optional[list[float]] = None
    shape: Literal["cos", "sin"] = "cos"
    tol: float = 1e-9


class ContinueStage(_Strict):
    kind: Literal["continue"] = "continue"
    k_target: float
    M_target: Optional[list[float]] = None
    steps: int = 5
    tol: float = 1e-9


class SpectrumStage(_Strict):
    kind: Literal["spectrum"] = "spectrum"
    N_f: int = 24
    n_global: int = 65
    xi_fit: float = 0.1
    n_fit: int = 41
    degree: int = 6


class WhithamStage(_Strict):
    kind: Literal["whitham"] = "whitham"
    deltas: Optional[list[float]] = None
    half_widths: tuple[int, int] = (1, 1)
    route: Literal["auto", "generic", "decoupled"] = "auto"
    coupling_tol: float = 1e-6


class _Domain(_Strict):
    W: int = 64
    N_x: int = 32
    T: float = 500.0
    dt: float = 0.05
    n_saves: int = 20
    window: tuple[float, float] = (50.0, 500.0)
    scheme: Literal["etd2", "etd4"] = "etd2"


class SimulateStage(_Domain):
    kind: Literal["simulate"] = "simulate"
    amplitude: float = 0.01
    width: float = 1.0
    center: Optional[float] = None
    component: int = 0
    phase_amplitude: float = 0.0
    phase_width: float = 5.0


class CompareStage(SimulateStage):
    kind: Literal["compare"] = "compare"
    system: Literal["full_whitham", "quadratic", "decoupled"] = "full_whitham"
    extraction_deltas: Optional[list[float]] = None
    extraction_half_widths: tuple[int, int] = (2, 2)


class DiffwaveStage(_Domain):
    kind: Literal["diffwave"] = "diffwave"
    W: int = 1024
    N_x: int = 8
    amplitude: list[float] = Field(default_factory=lambda: [0.05, 0.03])
    width: float = 0.5
    state: Optional[list[float]] = None


Stage = Annotated[Union[ProfileStage, ContinueStage, SpectrumStage, WhithamStage, SimulateStage,
                        CompareStage, DiffwaveStage], Field(discriminator="kind")]

STAGE_ORDER = ("profile", "continue", "spectrum", "whitham", "simulate", "compare", "diffwave")
NEEDS = {"continue": "profile", "spectrum": "profile", "whitham": "profile", "simulate": "profile",
         "compare": "whitham"}


class Assertion(_Strict):
    key: str  # dotted path into the results, e.g. "whitham.coupling"
    equals: Any = None
    min: Optional[float] = None
    max: Optional[float] = None


class ExperimentConfig(_Strict):
    name: str
    model: ModelConfig
    stages: list[Stage]
    assertions: list[Assertion] = Field(default_factory=list)
    output_dir: Optional[str] = None
    seed: int = 0

    @model_validator(mode="after")
    def _check_order(self):
        kinds = [s.kind for s in self.stages]
        if len(set(kinds)) != len(kinds):
            raise ValueError("each stage kind may appear at most once")
        for kind in kinds:
            need = NEEDS.get(kind)
            if need and need not in kinds:
                raise ValueError(f"stage {kind!r} needs a {need!r} stage")
        if kinds != sorted(kinds, key=STAGE_ORDER.index):
            raise ValueError(f"stages must follow the order {STAGE_ORDER}")
        return self

    def stage(self, kind: str):
        for s in self.stages:
            if s.kind == kind:
                return s
        return None


def bundled_configs() -> list[str]:
    root = resources.files("modwave") / "configs"
    return sorted(p.name.rsplit(".", 1)[0] for p in root.iterdir() if p.name.endswith(".yaml"))


def read_config_data(source: str | Path) -> dict:
    """Load a YAML/JSON config from a path or a bundled name."""
    path = Path(source)
    if not path.exists():
        bundled = resources.files("modwave") / "configs" / f"{source}.yaml"
        if not bundled.is_file():
            raise FileNotFoundError(f"no config file or bundled config named {source!r}")
        return yaml.safe_load(bundled.read_text())
    return yaml.safe_load(path.read_text())  # JSON is a subset of YAML


def validate_config(data: dict) -> ExperimentConfig:
    """Schema validation; errors name the offending key."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        parts = []
        for err in exc.errors():
            loc = ".".join(str(x) for x in err["loc"])
            parts.append(f"{loc}: {err['msg']}")
        raise ModwaveError("invalid-config", "; ".join(parts)) from None


def load_config(source: str | Path) -> ExperimentConfig:
    return validate_config(read_config_data(source))


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``path=value`` overrides; a numeric path segment indexes a list,
    and a stage kind selects that stage (e.g. ``simulate.W=128``)."""
    data = yaml.safe_load(yaml.safe_dump(data))
    for item in overrides:
        if "=" not in item:
            raise ModwaveError("invalid-config", f"override {item!r} is not of the form key=value")
        path, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        keys = path.split(".")
        node = data
        if keys[0] in STAGE_ORDER:
            matches = [s for s in data.get("stages", []) if s.get("kind") == keys[0]]
            if not matches:
                raise ModwaveError("invalid-config", f"no stage {keys[0]!r} to override")
            node, keys = matches[0], keys[1:]
        for key in keys[:-1]:
            node = node[int(key)] if isinstance(node, list) else node.setdefault(key, {})
        last = keys[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    return data
