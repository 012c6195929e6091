"""Pipeline configuration: a strict JSON schema mapped onto dataclasses.

Top-level keys (all optional except where a stage needs them)::

    {
      "seed": 0,
      "paths":    {"work_dir": "work", "manifest": null, "segments": null},
      "synth":    {...SynthSpec fields...},
      "features": {"cmvn": true, "splice": 5},
      "dpgmm":    {"alpha": 1.0, "sweeps": 100, "init_clusters": 10,
                   "kappa0": 0.01, "a0": 1.0},
      "filter":   {"P": 1.0, "P_grid": null},
      "hmm":      {"iterations": 5, "num_components": 1},
      "mtl":      {"shared_dims": [...], "bottleneck_dim": 40, "post_dims": [...],
                   "learning_rate": 0.008, "batch_size": 256, "max_epochs": 20,
                   "cv_fraction": 0.05, "patience": 1, "init_scale": 4.0,
                   "networks": [{"name": "...", "tasks": [{"source": "...", ...}]}]},
      "extract":  {"networks": null, "concat": []},
      "abx":      {"conditions": ["within", "across"], "aggregation": "two-level",
                   "features": ["raw", "input", "bnf"]}
    }

Task sources are ``dpgmm``, ``dpgmm-hmm-phone``, ``dpgmm-hmm-state`` (each
needs ``language``) and ``external`` (needs ``path`` to a frame-label CSV).
Unknown keys anywhere are rejected.
"""
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .label_filter import parse_p_grid
from .synth import SynthSpec

TASK_SOURCES = ("dpgmm", "dpgmm-hmm-phone", "dpgmm-hmm-state", "external")


class ConfigError(ValueError):
    """Invalid or inconsistent pipeline configuration (CLI exit code 2)."""


def _strict(cls, d, where):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class Paths:
    work_dir: str = "work"
    manifest: str = None
    segments: str = None


@dataclass
class FeatureConfig:
    cmvn: bool = True
    splice: int = 5


@dataclass
class DpgmmSection:
    alpha: float = 1.0
    sweeps: int = 100
    init_clusters: int = 10
    kappa0: float = 1e-2
    a0: float = 1.0


@dataclass
class FilterSection:
    P: float = 1.0
    P_grid: object = None  # "a:b:step" or a list of values

    def values(self):
        if self.P_grid is None:
            return [float(self.P)]
        if isinstance(self.P_grid, str):
            return parse_p_grid(self.P_grid)
        return [float(p) for p in self.P_grid]


@dataclass
class HmmSection:
    iterations: int = 5
    num_components: int = 1


@dataclass
class TaskSpec:
    source: str
    language: str = None
    path: str = None
    name: str = None

    @property
    def task_id(self):
        if self.name:
            return self.name
        if self.source == "external":
            return f"external:{Path(self.path).stem}" + (f":{self.language}" if self.language else "")
        return f"{self.source}:{self.language}"


@dataclass
class NetworkSpec:
    name: str
    tasks: list


@dataclass
class MtlSection:
    shared_dims: list = field(default_factory=lambda: [1024] * 5)
    bottleneck_dim: int = 40
    post_dims: list = field(default_factory=lambda: [1024])
    learning_rate: float = 0.008
    batch_size: int = 256
    max_epochs: int = 20
    cv_fraction: float = 0.05
    patience: int = 1
    init_scale: float = 4.0
    networks: list = field(default_factory=list)


@dataclass
class ExtractSection:
    networks: list = None
    concat: list = field(default_factory=list)


@dataclass
class AbxSection:
    conditions: list = field(default_factory=lambda: ["within", "across"])
    aggregation: str = "two-level"
    features: list = field(default_factory=lambda: ["raw", "input", "bnf"])


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    synth: SynthSpec = None
    features: FeatureConfig = field(default_factory=FeatureConfig)
    dpgmm: DpgmmSection = field(default_factory=DpgmmSection)
    filter: FilterSection = field(default_factory=FilterSection)
    hmm: HmmSection = field(default_factory=HmmSection)
    mtl: MtlSection = field(default_factory=MtlSection)
    extract: ExtractSection = field(default_factory=ExtractSection)
    abx: AbxSection = field(default_factory=AbxSection)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        sections = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - sections)
        if unknown:
            raise ConfigError(f"unknown top-level keys {unknown}")
        synth = None
        if d.get("synth") is not None:
            try:
                synth = SynthSpec.from_dict(d["synth"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"synth: {exc}") from None
        mtl = _strict(MtlSection, d.get("mtl"), "mtl")
        nets = []
        for i, n in enumerate(mtl.networks):
            net = _strict(NetworkSpec, n, f"mtl.networks[{i}]")
            net.tasks = [_strict(TaskSpec, t, f"mtl.networks[{i}].tasks[{j}]")
                         for j, t in enumerate(net.tasks or [])]
            nets.append(net)
        mtl.networks = nets
        cfg = cls(
            seed=d.get("seed", 0),
            paths=_strict(Paths, d.get("paths"), "paths"),
            synth=synth,
            features=_strict(FeatureConfig, d.get("features"), "features"),
            dpgmm=_strict(DpgmmSection, d.get("dpgmm"), "dpgmm"),
            filter=_strict(FilterSection, d.get("filter"), "filter"),
            hmm=_strict(HmmSection, d.get("hmm"), "hmm"),
            mtl=mtl,
            extract=_strict(ExtractSection, d.get("extract"), "extract"),
            abx=_strict(AbxSection, d.get("abx"), "abx"),
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d)

    def validate(self):
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.features.splice < 0:
            raise ConfigError("features.splice must be >= 0")
        try:
            ps = self.filter.values()
        except ValueError as exc:
            raise ConfigError(f"filter: {exc}") from None
        if not ps or any(not 0.0 < p <= 1.0 for p in ps):
            raise ConfigError("filter P values must lie in (0, 1]")
        if self.dpgmm.sweeps < 0 or self.dpgmm.alpha <= 0 or self.dpgmm.init_clusters < 1:
            raise ConfigError("dpgmm: need sweeps >= 0, alpha > 0, init_clusters >= 1")
        if self.hmm.iterations < 1 or self.hmm.num_components < 1:
            raise ConfigError("hmm: iterations and num_components must be >= 1")
        m = self.mtl
        if m.bottleneck_dim < 1 or any(d < 1 for d in [*m.shared_dims, *m.post_dims]):
            raise ConfigError("mtl: layer sizes must be positive")
        if not m.init_scale > 0 or not m.learning_rate > 0:
            raise ConfigError("mtl: init_scale and learning_rate must be positive")
        names = [n.name for n in m.networks]
        if len(set(names)) != len(names):
            raise ConfigError("mtl: network names must be unique")
        for n in m.networks:
            for t in n.tasks:
                if t.source not in TASK_SOURCES:
                    raise ConfigError(f"mtl: unknown task source {t.source!r}")
                if t.source == "external" and not t.path:
                    raise ConfigError("mtl: external tasks need a path")
                if t.source != "external" and not t.language:
                    raise ConfigError(f"mtl: {t.source} tasks need a language")
        for c in self.abx.conditions:
            if c not in ("within", "across"):
                raise ConfigError(f"abx: unknown condition {c!r}")
        if self.abx.aggregation not in ("two-level", "flat"):
            raise ConfigError("abx.aggregation must be 'two-level' or 'flat'")
        for f in self.abx.features:
            if f not in ("raw", "input", "bnf"):
                raise ConfigError(f"abx.features: unknown feature set {f!r}")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()
