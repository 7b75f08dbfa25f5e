"""Experiment configuration records and their YAML form."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

import yaml


class ExperimentKind(str, enum.Enum):
    OU_BRIDGE_STUDY = "OuBridgeStudy"
    SV_STUDY = "SvStudy"
    SURVIVAL_STUDY = "SurvivalStudy"
    SCALING_STUDY = "ScalingStudy"
    MESH_STUDY = "MeshStudy"
    GRAD_CHECK = "GradCheck"


@dataclass
class SamplerConfig:
    """One kernel in a study.

    ``h`` may be a list with one step per sweep case.  ``tune`` replaces the
    step by a pilot-tuned value aimed at ``target`` acceptance.
    """

    algorithm: str
    h: Union[float, list, None] = None
    n_leapfrog: int = 1
    tune: bool = False
    target: Optional[float] = None
    label: Optional[str] = None
    iterations: Optional[int] = None  # overrides the study-wide count

    def step_for(self, case: int):
        if isinstance(self.h, (list, tuple)):
            return float(self.h[case])
        return None if self.h is None else float(self.h)

    @property
    def name(self) -> str:
        return self.label or self.algorithm


@dataclass
class ScalingConfig:
    algorithms: list = field(default_factory=lambda: ["rwm_adv", "mala_adv", "hmc_adv"])
    exponents: list = field(default_factory=lambda: [2, 1])
    c: dict = field(default_factory=lambda: {"rwm_adv": 1.0, "mala_adv": 1.0, "hmc_adv": 2.5})
    ells: list = field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0])
    kappa: float = 2.0
    replicates: int = 10000
    n_modes: int = 2048


@dataclass
class ExperimentConfig:
    """Everything needed to rerun a study bit-for-bit.

    ``sweep`` lists parameter overrides (one study case each); ``steps`` lists
    mesh sizes for a mesh study.  ``monitor_times`` are physical times; by
    default every interior node of the coarsest grid is monitored.
    ``warm_start > 0`` starts every chain from the end of a pCN pre-run of
    that many iterations (step ``warm_start_h``) instead of a prior draw.
    """

    kind: ExperimentKind
    model: str = "ou_bridge"
    theta: dict = field(default_factory=dict)
    horizon: float = 1.0
    step: float = 0.02
    samplers: list = field(default_factory=list)
    iterations: int = 10000
    burn_in: int = 1000
    thin: int = 1
    replicates: int = 1
    seed: int = 0
    out_dir: str = "results"
    sweep: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    monitor_times: Optional[list] = None
    tune_iterations: int = 1000
    data: dict = field(default_factory=dict)
    scaling: Optional[ScalingConfig] = None
    strict_grid: bool = False
    warm_start: int = 0
    warm_start_h: float = 0.2

    def __post_init__(self):
        self.kind = ExperimentKind(self.kind)
        self.samplers = [s if isinstance(s, SamplerConfig) else SamplerConfig(**s) for s in self.samplers]
        if isinstance(self.scaling, dict):
            self.scaling = ScalingConfig(**self.scaling)
        if self.iterations < self.burn_in:
            raise ValueError("iterations must be at least burn_in")
        for s in self.samplers:
            if isinstance(s.h, (list, tuple)) and len(s.h) != max(1, len(self.sweep)):
                raise ValueError(f"sampler {s.name}: need one step per sweep case")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    def config_hash(self) -> str:
        """Digest of every setting that affects results (the output folder excluded)."""
        d = self.to_dict()
        d.pop("out_dir", None)
        text = json.dumps(d, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def load_config(path) -> ExperimentConfig:
    """Read a YAML experiment file; unknown keys are an error."""
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    return ExperimentConfig(**raw)


def dump_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
