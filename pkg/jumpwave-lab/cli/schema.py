"""Experiment configuration: YAML text validated into pydantic models."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

import orjson
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.errors import ConfigurationError
from core.grid import Grid
from core.medium import Branch, BoundaryRegion, Domain, InterfaceSpec, MediumSpec, PiecewiseCoefficient, Region


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BranchConfig(_Model):
    value: float = Field(gt=0)
    gradient: List[float] = Field(default_factory=list)
    anchor: List[float] = Field(default_factory=list)

    def build(self) -> Branch:
        return Branch(self.value, tuple(self.gradient), tuple(self.anchor))


def _branch(value: Union[float, BranchConfig]) -> Branch:
    if isinstance(value, BranchConfig):
        return value.build()
    return Branch(float(value))


class DomainConfig(_Model):
    kind: Literal["interval", "rectangle"]
    bounds: List[Tuple[float, float]]


class InterfaceConfig(_Model):
    kind: Literal["point", "graph"]
    position: Optional[float] = None
    nodes: List[Tuple[float, float]] = Field(default_factory=list)


class MediumConfig(_Model):
    domain: DomainConfig
    interface: InterfaceConfig
    c_minus: Union[float, BranchConfig]
    c_plus: Union[float, BranchConfig]
    c_min: Optional[float] = None
    c_max: Optional[float] = None
    tangential: Union[float, BranchConfig] = 1.0
    tangential_bounds: Tuple[float, float] = (1.0, 1.0)

    def build(self) -> MediumSpec:
        minus, plus = _branch(self.c_minus), _branch(self.c_plus)
        lo = min(minus.value, plus.value)
        hi = max(minus.value, plus.value)
        coefficient = PiecewiseCoefficient(
            minus,
            plus,
            float(self.c_min if self.c_min is not None else 0.5 * lo),
            float(self.c_max if self.c_max is not None else 2.0 * hi),
        )
        medium = MediumSpec(
            domain=Domain(self.domain.kind, tuple(tuple(b) for b in self.domain.bounds)),
            interface=InterfaceSpec(self.interface.kind, self.interface.position, tuple(self.interface.nodes)),
            coefficient=coefficient,
            tangential=_branch(self.tangential),
            tangential_bounds=self.tangential_bounds,
        )
        return medium.validate()


class GridConfig(_Model):
    resolution: float = Field(gt=0)
    cfl_fraction: float = Field(default=0.9, gt=0, le=1)

    def build(self, medium: MediumSpec) -> Grid:
        return Grid.from_resolution(medium.domain.bounds, self.resolution)


class ObservationConfig(_Model):
    """Either boxes (interior set ω) or a domain face (boundary set Γ)."""

    boxes: List[List[Tuple[float, float]]] = Field(default_factory=list)
    face: Optional[Literal["x_lo", "x_hi", "y_lo", "y_hi"]] = None
    span: Optional[Tuple[float, float]] = None

    @model_validator(mode="after")
    def _one_kind(self) -> "ObservationConfig":
        if bool(self.boxes) == (self.face is not None):
            raise ValueError("give either boxes or a face")
        return self

    def build(self) -> Union[Region, BoundaryRegion]:
        if self.face is not None:
            return BoundaryRegion(self.face, self.span)
        return Region(tuple(tuple(tuple(b) for b in box) for box in self.boxes))


class ModeInit(_Model):
    kind: Literal["mode"] = "mode"
    k: int = Field(ge=1)
    amplitude: float = 1.0


class PacketInit(_Model):
    kind: Literal["packet"] = "packet"
    center: List[float]
    direction: List[float]
    wavenumber: float = Field(ge=0)
    width: float = Field(gt=0)


class RandomInit(_Model):
    kind: Literal["random"] = "random"
    modes: int = Field(default=10, ge=1)


InitConfig = Annotated[Union[ModeInit, PacketInit, RandomInit], Field(discriminator="kind")]


class ModeEnsemble(_Model):
    kind: Literal["modes"] = "modes"
    ks: List[int] = Field(min_length=1)


class RandomEnsemble(_Model):
    kind: Literal["random"] = "random"
    count: int = Field(ge=1)
    modes: int = Field(default=10, ge=1)


EnsembleConfig = Annotated[Union[ModeEnsemble, RandomEnsemble], Field(discriminator="kind")]


class HumConfig(_Model):
    penalty: Optional[float] = Field(default=None, gt=0)
    cg_tol: float = Field(default=1e-8, gt=0)
    max_iter: int = Field(default=200, ge=1)


class WeightConfig(_Model):
    alpha_minus: float
    alpha_plus: float
    beta: float
    convexification: float = 0.0
    center: List[float]


class SimulateTask(_Model):
    name: Literal["simulate"]
    init: InitConfig
    T: float = Field(gt=0)
    dt: Optional[float] = Field(default=None, gt=0)
    snapshot_every: Optional[int] = Field(default=None, ge=1)
    probes: List[List[float]] = Field(default_factory=list)
    transmission: bool = False


class DistanceTask(_Model):
    name: Literal["distance"]
    pairs: List[Tuple[List[float], List[float]]] = Field(default_factory=list)
    sources: Optional[ObservationConfig] = None
    connectivity: Literal[8, 16] = 8
    refine: bool = True

    @model_validator(mode="after")
    def _needs_source(self) -> "DistanceTask":
        if not self.pairs and self.sources is None:
            raise ValueError("distance task needs pairs or a field source")
        if self.sources is not None and self.sources.face is not None:
            raise ValueError("distance field sources are boxes")
        return self


class SpectrumTask(_Model):
    name: Literal["spectrum"]
    k: int = Field(ge=1)


class ObserveTask(_Model):
    name: Literal["observe"]
    init: InitConfig
    region: ObservationConfig
    T: float = Field(gt=0)


class UcCheckTask(_Model):
    name: Literal["uc-check"]
    ensemble: EnsembleConfig
    region: ObservationConfig
    T: float = Field(gt=0)
    mus: List[float] = Field(min_length=1)
    kappa: float = Field(gt=0)
    probe: Optional[PacketInit] = None


class StabilityTask(_Model):
    name: Literal["stability"]
    ensemble: EnsembleConfig
    region: ObservationConfig
    T: float = Field(gt=0)


class SemiglobalTask(_Model):
    name: Literal["semiglobal"]
    ensemble: EnsembleConfig
    region: ObservationConfig
    T: float = Field(gt=0)
    mus: List[float] = Field(min_length=1)
    kappa: float = Field(gt=0)
    eta: float = Field(gt=0)


class HumTask(_Model):
    name: Literal["hum"]
    init: InitConfig
    region: ObservationConfig
    T: float = Field(gt=0)
    eps_ctl: float = Field(gt=0, le=1)
    hum: HumConfig = Field(default_factory=HumConfig)


class CostCurveTask(_Model):
    name: Literal["cost-curve"]
    init: InitConfig
    region: ObservationConfig
    T: float = Field(gt=0)
    eps: List[float] = Field(min_length=1)
    hum: HumConfig = Field(default_factory=HumConfig)


class CarlemanRegionsTask(_Model):
    name: Literal["carleman-regions"]
    point: List[float]
    eps: float = Field(gt=0)
    xi_prime: Tuple[float, float, int] = (-4.0, 4.0, 81)
    xi_t: Tuple[float, float, int] = (-4.0, 4.0, 81)
    ratio_samples: int = Field(default=10_000, ge=16)


class CarlemanWeightsTask(_Model):
    name: Literal["carleman-weights"]
    weight: WeightConfig
    eps: float = Field(gt=0)
    mu: float = Field(gt=1)
    mu0: float = Field(gt=1)
    eta: float = Field(gt=0)
    R: Optional[float] = Field(default=None, gt=0)
    profile_samples: int = Field(default=201, ge=3)


class CarlemanCertifyTask(_Model):
    name: Literal["carleman-certify"]
    weight: WeightConfig
    delta: float = Field(gt=0)
    taus: List[float] = Field(min_length=1)
    count: int = Field(default=20, ge=1)
    radius: float = Field(gt=0)
    r0: float = Field(gt=0)
    time_window: Tuple[float, float, int]


class TrappingTask(_Model):
    name: Literal["trapping"]
    angle: float = Field(ge=0)
    frequency: float = Field(gt=0)
    width: float = Field(gt=0)
    degrees: bool = True


TaskConfig = Annotated[
    Union[
        SimulateTask,
        DistanceTask,
        SpectrumTask,
        ObserveTask,
        UcCheckTask,
        StabilityTask,
        SemiglobalTask,
        HumTask,
        CostCurveTask,
        CarlemanRegionsTask,
        CarlemanWeightsTask,
        CarlemanCertifyTask,
        TrappingTask,
    ],
    Field(discriminator="name"),
]


class ExperimentConfig(_Model):
    medium: MediumConfig
    grid: GridConfig
    task: TaskConfig
    output: str = "out"
    seed: int = 0
    plots: Optional[bool] = None

    def digest(self) -> str:
        return hashlib.sha256(orjson.dumps(self.model_dump(mode="json"), option=orjson.OPT_SORT_KEYS)).hexdigest()

    def echo(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=True)


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a mapping")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        errors = [
            f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}" for error in exc.errors(include_url=False)
        ]
        raise ConfigurationError("config failed validation", errors=errors) from exc


def load_config(path: Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text)
