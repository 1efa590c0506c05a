"""Experiment configuration: TOML documents with dotted key paths.

Every key can be written either inside a table or as a flat path::

    # fig1.toml
    problem.eta = 0.01
    federation.attack = "shb"

    [algorithm]
    gamma = 0.1
    alpha = "inf"      # disables clipping

Command-line overrides use the same paths: ``--set algorithm.gamma=0.01``.
Override values are parsed as TOML scalars/arrays, falling back to a bare
string.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..aggregation import RULES, AggregatorSpec
from ..attacks import KINDS as ATTACK_KINDS, AttackSpec
from ..compression import KINDS as COMPRESSOR_KINDS, CompressorSpec
from ..problem import SPLIT_MODES

OUTPUT_ENV = "BYZPP_OUTPUT_DIR"
METHODS = ("marina_pp", "momentum_heuristic", "reference_gd")


class ConfigError(ValueError):
    pass


@dataclass
class ProblemConfig:
    objective: str = "logistic"  # logistic | quadratic
    dataset: str = "synthetic"  # "synthetic" or a LIBSVM file path
    n_samples: int = 250  # synthetic only
    n_features: int = 20  # synthetic only; padding for LIBSVM files
    data_seed: int = 0
    flip: float = 0.05  # synthetic label noise
    max_rows: int | None = None  # truncate a LIBSVM file
    eta: float = 0.01
    split: str = "homogeneous"
    # quadratic: A = diag(eigenvalues), b = linear term
    eigenvalues: list[float] = field(default_factory=lambda: [1.0, 4.0])
    b: list[float] = field(default_factory=lambda: [1.0, 2.0])


@dataclass
class FederationConfig:
    n: int = 20
    byzantine: int = 5
    attack: str = "shb"
    alie_z: float = 1.0


@dataclass
class AlgorithmConfig:
    method: str = "marina_pp"
    gamma: float = 0.1
    b: int = 32
    p: float | str = "auto"  # "auto" -> min(1, b / m)
    alpha: float | str = 1.0  # "inf" disables clipping
    participation: float = 0.2  # C = max(1, round(participation * n)) unless C is set
    C: int | None = None
    Chat: int | None = None  # None -> n
    delta: float = 0.25
    rounds: int = 100_000
    max_epochs: float | None = 300.0
    aggregator: str = "cm"
    bucket_size: int = 2
    trim: float = 0.1
    krum_byzantine: int | None = None
    compressor: str = "identity"
    K: int | None = None  # RandK sparsity
    beta: float = 0.9


@dataclass
class SweepConfig:
    gamma: list[float] = field(default_factory=lambda: [0.1, 0.01, 0.001])
    alpha: list[float | str] = field(default_factory=lambda: [0.1, 1.0, 10.0])


@dataclass
class RunConfig:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    output: str = "results"
    name: str = "experiment"
    record_time: bool = False
    solver_tol: float = 1e-12


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    run: RunConfig = field(default_factory=RunConfig)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    # -- derived values -----------------------------------------------------

    def alpha_value(self) -> float:
        return parse_alpha(self.algorithm.alpha)

    def cohort_sizes(self) -> tuple[int, int]:
        a, n = self.algorithm, self.federation.n
        C = a.C if a.C is not None else max(1, int(round(a.participation * n)))
        Chat = a.Chat if a.Chat is not None else n
        return C, Chat

    def dataset_path(self) -> Path | None:
        if self.problem.dataset == "synthetic":
            return None
        p = Path(self.problem.dataset)
        return p if p.is_absolute() else self.base_dir / p

    def output_dir(self) -> Path:
        env = os.environ.get(OUTPUT_ENV)
        if env:
            return Path(env)
        p = Path(self.run.output)
        return p if p.is_absolute() else self.base_dir / p

    def aggregator_spec(self) -> AggregatorSpec:
        a = self.algorithm
        return AggregatorSpec(a.aggregator, a.bucket_size, a.delta, a.krum_byzantine, a.trim)

    def attack_spec(self) -> AttackSpec:
        return AttackSpec(self.federation.attack, self.federation.alie_z)

    def compressor_spec(self, d: int) -> CompressorSpec | None:
        a = self.algorithm
        if a.compressor == "identity":
            return None
        return CompressorSpec(a.compressor, d, a.K)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def validate(self) -> "ExperimentConfig":
        """Check every sub-config before any computation starts."""
        p, fed, a = self.problem, self.federation, self.algorithm
        _choice("problem.objective", p.objective, ("logistic", "quadratic"))
        _choice("problem.split", p.split, SPLIT_MODES)
        _choice("federation.attack", fed.attack, ATTACK_KINDS)
        _choice("algorithm.method", a.method, METHODS)
        _choice("algorithm.aggregator", a.aggregator, RULES)
        _choice("algorithm.compressor", a.compressor, COMPRESSOR_KINDS)
        if p.eta < 0:
            raise ConfigError("problem.eta must be nonnegative")
        if p.objective == "quadratic" and len(p.eigenvalues) != len(p.b):
            raise ConfigError("problem.eigenvalues and problem.b differ in length")
        path = self.dataset_path()
        if path is not None and not path.is_file():
            raise ConfigError(f"dataset file not found: {path}")
        if fed.n < 1 or fed.byzantine < 0 or 2 * fed.byzantine >= fed.n:
            raise ConfigError("need n >= 1 and 0 <= byzantine < n/2")
        if not self.run.seeds:
            raise ConfigError("run.seeds is empty")
        try:
            self.alpha_value()
            for al in self.sweep.alpha:
                parse_alpha(al)
            C, Chat = self.cohort_sizes()
            from ..algorithms import MarinaPpConfig, MomentumHeuristicConfig
            from ..sampling import ParticipationConfig

            self.aggregator_spec()
            self.attack_spec()
            if a.compressor != "identity":
                self.compressor_spec(self._dim_hint())
            if a.method == "marina_pp":
                MarinaPpConfig(gamma=a.gamma, b=a.b, p=0.5 if a.p == "auto" else float(a.p), alpha=self.alpha_value(), C=C, Chat=Chat, K=a.rounds, delta=a.delta)
                ParticipationConfig(fed.n, fed.n - fed.byzantine, C, Chat, 0.5 if a.p == "auto" else float(a.p), a.delta)
            elif a.method == "momentum_heuristic":
                MomentumHeuristicConfig(gamma=a.gamma, beta=a.beta, alpha=self.alpha_value(), C=C, b=a.b, K=a.rounds, delta=a.delta)
                if not 1 <= C <= fed.n:
                    raise ConfigError("cohort size out of range")
            elif a.gamma <= 0:
                raise ConfigError("algorithm.gamma must be positive")
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def _dim_hint(self) -> int:
        if self.problem.objective == "quadratic":
            return len(self.problem.b)
        return self.problem.n_features


def parse_alpha(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "+inf", "infinity", "none", "off"):
            return math.inf
        value = float(value)
    value = float(value)
    if not value > 0:
        raise ConfigError("clipping multiplier must be positive or 'inf'")
    return value


def _choice(key: str, value, allowed) -> None:
    if value not in allowed:
        raise ConfigError(f"{key}={value!r} not one of {tuple(allowed)}")


_SECTIONS = {
    "problem": ProblemConfig,
    "federation": FederationConfig,
    "algorithm": AlgorithmConfig,
    "sweep": SweepConfig,
    "run": RunConfig,
}


def _parse_override_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    doc = copy.deepcopy(doc)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key.path=value")
        parts = key.strip().split(".")
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a scalar")
        node[parts[-1]] = _parse_override_value(raw.strip())
    return doc


def from_dict(doc: Mapping[str, Any], base_dir: Path | str = ".") -> ExperimentConfig:
    cfg = ExperimentConfig(base_dir=Path(base_dir))
    for section, value in doc.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section {section!r}")
        if not isinstance(value, Mapping):
            raise ConfigError(f"section {section!r} must be a table")
        target = getattr(cfg, section)
        known = {f.name for f in fields(target)}
        for key, v in value.items():
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}")
            setattr(target, key, v)
    return cfg


def load_config(path: str | os.PathLike | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a config file (or defaults when ``path`` is None) and apply overrides."""
    doc: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        base = path.parent
    doc = apply_overrides(doc, overrides or [])
    return from_dict(doc, base)
