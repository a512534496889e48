"""Run configuration: dataclasses plus strict YAML parsing.

The config file is a nested key/value document. Unknown keys are rejected
outright so hyperparameter typos fail loudly instead of silently falling
back to defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import yaml

from .errors import ConfigError
from .kernels import KernelFamily


@dataclass
class SswimConfig:
    """Every tunable of the training algorithm, with shipped defaults."""

    subbatch: int = 1000            # initialization batch size
    sigma_min: float = 5.0          # hidden support lower bound (timesteps)
    sigma_max: float = 50.0         # hidden support upper bound
    sigma_cycle: int = 10           # hidden support cycle length
    weight_criterion: str = "dot"   # dist | dot | random
    normalizer: str = "ms"          # ms | fl
    mu_target: float = 0.5
    std_target: float = 0.5
    z_target: float = 1.0
    epsilon: float = 1e-6           # sampling-ratio denominator bound
    min_norm: float = 1e-6          # per-channel minimum L2 norm filter
    sc_epsilon: float = 1e-9        # silence-correction headroom
    metric_mode: str = "entropy"    # entropy | fixed
    metric_in: str = "l2"           # used when metric_mode = fixed
    metric_out: str = "l2"
    metric_candidates: tuple = ("l2", "cos", "mag", "phase", "band:1:8")
    min_entropy: float | None = None
    lift_support: float | None = None   # defaults to sigma_min when unset
    delay_aggregation: str = "median"   # median | min
    support_min: float = 1.0
    support_max: float | None = None    # defaults to 2 * horizon when unset
    support_alpha: float = 1.5
    support_count: int = 30
    lambda_count: int = 32
    lambda_min: float = 1e-5
    lambda_max: float = 0.5
    batch_size: int = 256
    max_retries: int = 8

    def __post_init__(self):
        if self.weight_criterion not in ("dist", "dot", "random"):
            raise ConfigError(f"unknown weight criterion: {self.weight_criterion!r}")
        if self.normalizer not in ("ms", "fl"):
            raise ConfigError(f"unknown normalizer: {self.normalizer!r}")
        if self.metric_mode not in ("entropy", "fixed"):
            raise ConfigError(f"unknown metric mode: {self.metric_mode!r}")
        if self.delay_aggregation not in ("median", "min"):
            raise ConfigError(f"unknown delay aggregation: {self.delay_aggregation!r}")
        if self.subbatch < 2:
            raise ConfigError("subbatch must be at least 2")
        self.metric_candidates = tuple(self.metric_candidates)


@dataclass
class ModelArch:
    """Network architecture: hidden widths and kernel family names."""

    hidden: tuple = (250,)
    pspk: str = "hat"
    rfk: str = "exp"
    output_pspk: str | None = None   # defaults to the hidden family

    def __post_init__(self):
        self.hidden = tuple(int(n) for n in self.hidden)
        if not self.hidden or any(n < 1 for n in self.hidden):
            raise ConfigError("hidden layer widths must be positive")
        for name in (self.pspk, self.rfk, self.output_pspk):
            if name is not None and name not in KernelFamily._value2member_map_:
                raise ConfigError(f"unknown kernel family: {name!r}")
        if self.output_pspk is None:
            self.output_pspk = self.pspk


@dataclass
class DatasetConfig:
    csv: str | None = None
    synth_kind: str | None = None    # multisine | arnoise
    variables: int = 1
    steps: int = 0
    synth_seed: int = 0
    noise_sigma: float = 0.05
    observation: int = 0
    horizon: int = 0
    stride: int = 1
    ratios: tuple = (0.7, 0.2, 0.1)

    def __post_init__(self):
        if (self.csv is None) == (self.synth_kind is None):
            raise ConfigError("dataset needs exactly one of 'csv' or 'synth'")
        if self.csv is not None and not os.path.exists(self.csv):
            raise ConfigError(f"dataset csv does not exist: {self.csv}")
        if self.observation < 1 or self.horizon < 1:
            raise ConfigError("dataset needs positive 'observation' and 'horizon'")
        self.ratios = tuple(float(r) for r in self.ratios)


@dataclass
class AblationConfig:
    criteria: tuple = ("dot",)
    normalizers: tuple = ("ms",)
    neuron_counts: tuple = (250,)

    def __post_init__(self):
        self.criteria = tuple(self.criteria)
        self.normalizers = tuple(self.normalizers)
        self.neuron_counts = tuple(int(n) for n in self.neuron_counts)


@dataclass
class RunConfig:
    dataset: DatasetConfig = None
    arch: ModelArch = field(default_factory=ModelArch)
    sswim: SswimConfig = field(default_factory=SswimConfig)
    seeds: tuple = (1,)
    out_dir: str = "results"
    threads: int = 1
    ablation: AblationConfig | None = None

    def __post_init__(self):
        if self.dataset is None:
            raise ConfigError("a run config needs a 'dataset' section")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _dataclass_section(cls, section: dict, where: str):
    names = [f.name for f in fields(cls)]
    _check_keys(section, names, where)
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {where} section: {exc}") from exc


def _parse_dataset(section: dict) -> DatasetConfig:
    section = dict(section)
    if "synth" in section:
        synth = section.pop("synth")
        _check_keys(synth, ("kind", "variables", "steps", "seed", "noise_sigma"), "dataset.synth")
        section["synth_kind"] = synth.get("kind")
        section["variables"] = synth.get("variables", 1)
        section["steps"] = synth.get("steps", 0)
        section["synth_seed"] = synth.get("seed", 0)
        if "noise_sigma" in synth:
            section["noise_sigma"] = synth["noise_sigma"]
    return _dataclass_section(DatasetConfig, section, "dataset")


def parse_run_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(doc, ("dataset", "architecture", "sswim", "run", "ablation"), "config")
    if "dataset" not in doc:
        raise ConfigError("config needs a 'dataset' section")
    dataset = _parse_dataset(doc["dataset"])
    arch = _dataclass_section(ModelArch, doc.get("architecture", {}), "architecture")
    sswim_cfg = _dataclass_section(SswimConfig, doc.get("sswim", {}), "sswim")
    run = dict(doc.get("run", {}))
    _check_keys(run, ("seeds", "out_dir", "threads"), "run")
    ablation = None
    if "ablation" in doc:
        ablation = _dataclass_section(AblationConfig, doc["ablation"], "ablation")
    return RunConfig(
        dataset=dataset,
        arch=arch,
        sswim=sswim_cfg,
        seeds=tuple(run.get("seeds", (1,))),
        out_dir=run.get("out_dir", "results"),
        threads=int(run.get("threads", 1)),
        ablation=ablation,
    )


def load_run_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file does not exist: {path}")
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return parse_run_config(doc)
