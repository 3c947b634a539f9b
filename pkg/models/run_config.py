"""
Run Configuration Schema
The pydantic models below are the single schema of the JSON run configuration.
"""
import json
from typing import List, Optional, Literal, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from config import Config
from models.domain import (
    Activation, DataAtomSet, InitialWeightAtomSet, SimConfig, TestFunctional, EventSpec, OptimizerConfig,
)
from utils.logger import logger

EXPERIMENTS = ("simulate", "meanfield", "lln", "rate_I", "rate_J", "importance", "decay", "check")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending path"""


class DataAtomModel(BaseModel):
    z: List[float] = Field(min_length=1)
    y: float
    p: float = Field(ge=0.0)


class WeightAtomModel(BaseModel):
    c: float
    w: List[float] = Field(min_length=1)
    p: float = Field(ge=0.0)


def _check_normalized(probs: List[float], name: str):
    total = float(np.sum(probs))
    if abs(total - 1.0) > Config.NORMALIZATION_TOL:
        raise ValueError(f"{name} probabilities sum to {total:.17g}, not 1 (normalization)")


class ModelSection(BaseModel):
    activation: str = "tanh"
    data_atoms: List[DataAtomModel] = Field(min_length=1)
    weight_atoms: List[WeightAtomModel] = Field(min_length=1)

    @field_validator("activation")
    @classmethod
    def activation_satisfies_cont(cls, value: str) -> str:
        kind = value.lower()
        if kind in Config.REJECTED_ACTIVATIONS:
            raise ValueError(Config.REJECTED_ACTIVATIONS[kind])
        if kind not in Config.ACTIVATION_CONSTANTS:
            raise ValueError(f"(CONT) unknown activation '{value}'")
        return kind

    @field_validator("data_atoms", "weight_atoms")
    @classmethod
    def normalized(cls, atoms: list) -> list:
        _check_normalized([a.p for a in atoms], "atom")
        return atoms

    @model_validator(mode="after")
    def consistent(self) -> "ModelSection":
        d_in = len(self.data_atoms[0].z)
        if any(len(a.z) != d_in for a in self.data_atoms):
            raise ValueError("data atoms have inputs of different dimensions")
        if any(len(a.w) != d_in for a in self.weight_atoms):
            raise ValueError(f"weight atoms must have w of dimension {d_in}")
        return self


class SimSection(BaseModel):
    n: int = Field(ge=1)
    T: float = Field(gt=0.0)


class MeanFieldSection(BaseModel):
    dt: float = Field(default=Config.DEFAULT_DT, gt=0.0, le=Config.MAX_DT)
    tol: float = Field(default=Config.DEFAULT_PICARD_TOL, gt=0.0)
    max_iter: int = Field(default=Config.DEFAULT_PICARD_MAX_ITER, ge=1)
    damping: float = Field(default=Config.DEFAULT_DAMPING, ge=0.0, lt=1.0)


class TiltSection(BaseModel):
    blocks: int = Field(default=1, ge=1)
    tail_carries_pi: Literal[True] = True


class FunctionalSection(BaseModel):
    kind: Literal["constant", "tanh_marginal", "tanh_window"] = "tanh_marginal"
    a: float = 1.0
    v: List[float] = Field(default_factory=lambda: [1.0], min_length=1)
    b: float = 0.0
    t: Optional[float] = None  # defaults to the horizon T
    window: Optional[Tuple[float, float]] = None


class EventSection(BaseModel):
    threshold: Optional[float] = None
    shift: float = 0.1  # threshold = theta*(f) + shift when no threshold is given
    direction: Literal["geq", "leq"] = "geq"


class LabSection(BaseModel):
    replicas: int = Field(default=32, ge=1)
    n_list: List[int] = Field(default_factory=lambda: [64, 256, 1024], min_length=1)
    method: Literal["naive", "tilted"] = "tilted"

    @field_validator("n_list")
    @classmethod
    def increasing(cls, value: List[int]) -> List[int]:
        if any(n < 1 for n in value) or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("n_list must be increasing positive integers")
        return value


class OptimizerSection(BaseModel):
    outer_iterations: int = Field(default=Config.OPT_OUTER_ITERATIONS, ge=1)
    inner_iterations: int = Field(default=Config.OPT_INNER_ITERATIONS, ge=1)
    initial_penalty: float = Field(default=Config.OPT_INITIAL_PENALTY, gt=0.0)
    fd_step: float = Field(default=Config.OPT_FD_STEP, gt=0.0)
    feasibility_tol: float = Field(default=Config.OPT_FEASIBILITY_TOL, gt=0.0)
    picard_tol: float = Field(default=1e-10, gt=0.0)


class RunConfig(BaseModel):
    experiment: Literal["simulate", "meanfield", "lln", "rate_I", "rate_J", "importance", "decay", "check"]
    model: ModelSection
    sim: SimSection
    meanfield: MeanFieldSection = Field(default_factory=MeanFieldSection)
    tilt: TiltSection = Field(default_factory=TiltSection)
    functional: FunctionalSection = Field(default_factory=FunctionalSection)
    event: EventSection = Field(default_factory=EventSection)
    lab: LabSection = Field(default_factory=LabSection)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    output_dir: Optional[str] = None
    seed: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def functional_inside_horizon(self) -> "RunConfig":
        f = self.functional
        if f.t is not None and not 0.0 <= f.t <= self.sim.T:
            raise ValueError(f"functional time {f.t} outside [0, T={self.sim.T}]")
        if f.kind == "tanh_window":
            if f.window is None or not 0.0 <= f.window[0] <= f.window[1] <= self.sim.T:
                raise ValueError("tanh_window needs a window inside [0, T]")
        return self

    # =========================================================================
    # DOMAIN VALUES
    # =========================================================================

    @property
    def d_in(self) -> int:
        return len(self.model.data_atoms[0].z)

    def activation(self) -> Activation:
        consts = Config.ACTIVATION_CONSTANTS[self.model.activation]
        return Activation(kind=self.model.activation, c_sigma=consts["c_sigma"], l_sigma=consts["l_sigma"])

    def data_atom_set(self) -> DataAtomSet:
        atoms = self.model.data_atoms
        return DataAtomSet(z=np.array([a.z for a in atoms]), y=np.array([a.y for a in atoms]),
                           probs=np.array([a.p for a in atoms]))

    def weight_atom_set(self) -> InitialWeightAtomSet:
        atoms = self.model.weight_atoms
        return InitialWeightAtomSet(atoms=np.array([[a.c] + list(a.w) for a in atoms]),
                                    probs=np.array([a.p for a in atoms]))

    def sim_config(self, n: Optional[int] = None) -> SimConfig:
        return SimConfig(n=n or self.sim.n, T=self.sim.T, d_in=self.d_in, seed=self.seed or 0)

    def functional_spec(self) -> TestFunctional:
        f = self.functional
        return TestFunctional(kind=f.kind, a=f.a, v=tuple(f.v), b=f.b,
                              t=self.sim.T if f.t is None else f.t,
                              window=None if f.window is None else (float(f.window[0]), float(f.window[1])),
                              name=f.kind)

    def event_spec(self, reference: Optional[float] = None) -> EventSpec:
        """Event at the given threshold, else at theta*(f) +/- shift"""
        threshold = self.event.threshold
        if threshold is None:
            if reference is None:
                raise ValueError("event threshold needs the LLN reference value")
            sign = 1.0 if self.event.direction == "geq" else -1.0
            threshold = reference + sign * self.event.shift
        return EventSpec(functional=self.functional_spec(), threshold=threshold, direction=self.event.direction)

    def optimizer_config(self) -> OptimizerConfig:
        o = self.optimizer
        return OptimizerConfig(blocks=self.tilt.blocks, outer_iterations=o.outer_iterations,
                               initial_penalty=o.initial_penalty, inner_iterations=o.inner_iterations,
                               fd_step=o.fd_step, feasibility_tol=o.feasibility_tol, dt=self.meanfield.dt,
                               picard_tol=o.picard_tol, picard_max_iter=self.meanfield.max_iter,
                               damping=self.meanfield.damping)


def _error_path(loc: tuple) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def parse_config(text: str) -> RunConfig:
    """Validated RunConfig from a JSON document"""
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"<root>: malformed JSON ({e.msg} at line {e.lineno})") from e
    try:
        cfg = RunConfig.model_validate(document)
    except ValidationError as e:
        messages = [f"{_error_path(err['loc'])}: {err['msg']}" for err in e.errors()]
        raise ConfigError("Configuration errors:\n  - " + "\n  - ".join(messages)) from e
    if cfg.seed is None:
        logger.warning("⚠️ No seed in config, defaulting to 0")
        cfg.seed = 0
    return cfg


def config_schema() -> str:
    return json.dumps(RunConfig.model_json_schema(), indent=2, sort_keys=True)


def canonical_config(cfg: RunConfig) -> dict:
    """Config document used for the manifest hash; output_dir is excluded"""
    return cfg.model_dump(mode="json", exclude={"output_dir"})
