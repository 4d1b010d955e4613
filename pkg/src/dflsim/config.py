"""Run configuration: typed experiment description plus strict JSON parsing.

The JSON schema is documented in the README; unknown keys are rejected at
every level so a typo fails fast instead of silently using a default.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

from .attacks import ALIE, AttackKind, Gaussian, SignFlip
from .baselines import BaselineKind, DFedAvg, Flame, Krum, Median, MultiKrum, TrimmedMean
from .data import IID, Dirichlet, HeterogeneityScheme, LabelSkew, scheme_to_json
from .reweight import AccClip, CRSKind, LossClip, TargetMetricKind, TempSoftmax


class ConfigError(ValueError):
    """Configuration file does not match the schema."""


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    feature_dim: int = 64
    n_per_class: int = 200
    spread: float = 1.0
    seed: int = 7
    test_n_per_class: int = 100


@dataclass(frozen=True)
class IdxSpec:
    train_images: str
    train_labels: str
    test_images: str | None = None
    test_labels: str | None = None
    subsample_fraction: float | None = None
    subsample_seed: int = 0


DatasetSource = Union[SyntheticSpec, IdxSpec]


@dataclass(frozen=True)
class TopologyShape:
    num_benign: int = 10
    num_malicious: int = 2
    edge_prob: float = 0.7
    max_retries: int = 1000


@dataclass(frozen=True)
class DFedReweightingSpec:
    tpm: TargetMetricKind
    crs: CRSKind


AggregatorSpec = Union[DFedReweightingSpec, BaselineKind]


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    knowledge: str = "omniscient"  # or "neighborhood"


@dataclass(frozen=True)
class RunConfig:
    name: str
    dataset: DatasetSource
    scheme: HeterogeneityScheme
    aggregator: AggregatorSpec
    topology: TopologyShape = TopologyShape()
    rounds: int = 500
    learning_rate: float = 0.01
    batch_size: int = 32
    local_steps: int = 1
    attack: AttackSpec | None = None
    aux_fraction: float = 0.2
    seeds: tuple = (43, 44, 45, 46)
    eval_every: int = 10
    eval_mode: str = "auto"  # "local", "global", or "auto"
    export_weights: bool = False
    outdir: str | None = None

    def __post_init__(self):
        if self.rounds < 0:
            raise ConfigError("rounds must be nonnegative")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.local_steps < 1:
            raise ConfigError("local_steps must be positive")
        if not 0 < self.aux_fraction < 1:
            raise ConfigError("aux_fraction must lie strictly between 0 and 1")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be positive")
        if self.eval_mode not in ("local", "global", "auto"):
            raise ConfigError("eval_mode must be 'local', 'global', or 'auto'")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def resolved_eval_mode(self) -> str:
        """'auto' means: fairness (local aux) without an attack, global test with one."""
        if self.eval_mode != "auto":
            return self.eval_mode
        return "global" if self.attack is not None else "local"


def _expect_keys(obj: dict, allowed: set, required: set, path: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{path}: missing required key(s) {sorted(missing)}")


def _parse_dataset(obj, path: str) -> DatasetSource:
    _expect_keys(obj, {"synthetic", "idx"}, set(), path)
    if len(obj) != 1:
        raise ConfigError(f"{path}: exactly one of 'synthetic' or 'idx' is required")
    if "synthetic" in obj:
        spec = obj["synthetic"]
        _expect_keys(
            spec,
            {"num_classes", "feature_dim", "n_per_class", "spread", "seed", "test_n_per_class"},
            set(),
            f"{path}.synthetic",
        )
        return SyntheticSpec(**spec)
    spec = obj["idx"]
    _expect_keys(
        spec,
        {"train_images", "train_labels", "test_images", "test_labels",
         "subsample_fraction", "subsample_seed"},
        {"train_images", "train_labels"},
        f"{path}.idx",
    )
    return IdxSpec(**spec)


def _parse_scheme(obj, path: str) -> HeterogeneityScheme:
    if obj == "iid":
        return IID()
    if isinstance(obj, dict) and set(obj) == {"dirichlet"}:
        _expect_keys(obj["dirichlet"], {"alpha"}, {"alpha"}, f"{path}.dirichlet")
        return Dirichlet(float(obj["dirichlet"]["alpha"]))
    if isinstance(obj, dict) and set(obj) == {"label_skew"}:
        _expect_keys(obj["label_skew"], {"h"}, {"h"}, f"{path}.label_skew")
        return LabelSkew(int(obj["label_skew"]["h"]))
    raise ConfigError(f"{path}: expected 'iid', {{'dirichlet': ...}}, or {{'label_skew': ...}}")


def _parse_crs(obj, path: str) -> CRSKind:
    if obj == "loss_clip":
        return LossClip()
    if obj == "acc_clip":
        return AccClip()
    if isinstance(obj, dict) and set(obj) == {"temp_softmax"}:
        _expect_keys(obj["temp_softmax"], {"temperature"}, {"temperature"}, f"{path}.temp_softmax")
        return TempSoftmax(float(obj["temp_softmax"]["temperature"]))
    raise ConfigError(
        f"{path}: expected 'loss_clip', 'acc_clip', or {{'temp_softmax': ...}}"
    )


_BASELINES = {
    "dfedavg": lambda spec: DFedAvg(),
    "median": lambda spec: Median(),
    "krum": lambda spec: Krum(f=int(spec.get("f", 2))),
    "multi_krum": lambda spec: MultiKrum(f=int(spec.get("f", 2)), m=int(spec.get("m", 2))),
    "trimmed_mean": lambda spec: TrimmedMean(f=int(spec.get("f", 2))),
    "flame": lambda spec: Flame(
        beta=float(spec.get("beta", 1.0)), include_self=bool(spec.get("include_self", True))
    ),
}

_BASELINE_KEYS = {
    "dfedavg": set(),
    "median": set(),
    "krum": {"f"},
    "multi_krum": {"f", "m"},
    "trimmed_mean": {"f"},
    "flame": {"beta", "include_self"},
}


def _parse_aggregator(obj, path: str) -> AggregatorSpec:
    _expect_keys(obj, {"dfed_reweighting", "baseline"}, set(), path)
    if len(obj) != 1:
        raise ConfigError(f"{path}: exactly one of 'dfed_reweighting' or 'baseline' is required")
    if "dfed_reweighting" in obj:
        spec = obj["dfed_reweighting"]
        _expect_keys(spec, {"tpm", "crs"}, {"tpm", "crs"}, f"{path}.dfed_reweighting")
        try:
            tpm = TargetMetricKind(spec["tpm"])
        except ValueError:
            raise ConfigError(
                f"{path}.dfed_reweighting.tpm: expected 'accuracy' or 'loss'"
            ) from None
        return DFedReweightingSpec(tpm, _parse_crs(spec["crs"], f"{path}.dfed_reweighting.crs"))
    spec = obj["baseline"]
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{path}.baseline: expected an object with a 'kind' key")
    kind = spec["kind"]
    if kind not in _BASELINES:
        raise ConfigError(f"{path}.baseline.kind: unknown baseline {kind!r}")
    _expect_keys(spec, {"kind"} | _BASELINE_KEYS[kind], {"kind"}, f"{path}.baseline")
    return _BASELINES[kind](spec)


def parse_attack_spec(obj, path: str) -> AttackSpec | None:
    if obj is None:
        return None
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError(f"{path}: expected null or an object with a 'kind' key")
    kind = obj["kind"]
    knowledge = obj.get("knowledge", "omniscient")
    if knowledge not in ("omniscient", "neighborhood"):
        raise ConfigError(f"{path}.knowledge: expected 'omniscient' or 'neighborhood'")
    if kind == "gaussian":
        _expect_keys(obj, {"kind", "sigma", "knowledge"}, {"kind"}, path)
        return AttackSpec(Gaussian(sigma=float(obj.get("sigma", 30.0))), knowledge)
    if kind == "sign_flip":
        _expect_keys(obj, {"kind", "factor", "knowledge"}, {"kind"}, path)
        return AttackSpec(SignFlip(factor=float(obj.get("factor", -10.0))), knowledge)
    if kind == "alie":
        _expect_keys(obj, {"kind", "z", "knowledge"}, {"kind"}, path)
        z = obj.get("z")
        return AttackSpec(ALIE(z=None if z is None else float(z)), knowledge)
    raise ConfigError(f"{path}.kind: unknown attack {kind!r}")


_TOP_LEVEL_KEYS = {
    "name", "dataset", "scheme", "topology", "rounds", "learning_rate", "batch_size",
    "local_steps", "aggregator", "attack", "aux_fraction", "seeds", "eval_every",
    "eval_mode", "export_weights", "outdir",
}


def parse_config(doc: dict) -> RunConfig:
    """Validate a JSON document and build a RunConfig; raises ConfigError."""
    _expect_keys(doc, _TOP_LEVEL_KEYS, {"name", "dataset", "scheme", "aggregator"}, "config")
    topo = doc.get("topology", {})
    _expect_keys(
        topo, {"num_benign", "num_malicious", "edge_prob", "max_retries"}, set(), "config.topology"
    )
    try:
        return RunConfig(
            name=str(doc["name"]),
            dataset=_parse_dataset(doc["dataset"], "config.dataset"),
            scheme=_parse_scheme(doc["scheme"], "config.scheme"),
            aggregator=_parse_aggregator(doc["aggregator"], "config.aggregator"),
            topology=TopologyShape(**topo),
            rounds=int(doc.get("rounds", 500)),
            learning_rate=float(doc.get("learning_rate", 0.01)),
            batch_size=int(doc.get("batch_size", 32)),
            local_steps=int(doc.get("local_steps", 1)),
            attack=parse_attack_spec(doc.get("attack"), "config.attack"),
            aux_fraction=float(doc.get("aux_fraction", 0.2)),
            seeds=tuple(doc.get("seeds", (43, 44, 45, 46))),
            eval_every=int(doc.get("eval_every", 10)),
            eval_mode=str(doc.get("eval_mode", "auto")),
            export_weights=bool(doc.get("export_weights", False)),
            outdir=doc.get("outdir"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)


def config_to_json_dict(config: RunConfig) -> dict:
    """Canonical JSON echo of a parsed config (written next to run outputs)."""
    if isinstance(config.dataset, SyntheticSpec):
        ds = {"synthetic": {
            "num_classes": config.dataset.num_classes,
            "feature_dim": config.dataset.feature_dim,
            "n_per_class": config.dataset.n_per_class,
            "spread": config.dataset.spread,
            "seed": config.dataset.seed,
            "test_n_per_class": config.dataset.test_n_per_class,
        }}
    else:
        ds = {"idx": {k: v for k, v in {
            "train_images": config.dataset.train_images,
            "train_labels": config.dataset.train_labels,
            "test_images": config.dataset.test_images,
            "test_labels": config.dataset.test_labels,
            "subsample_fraction": config.dataset.subsample_fraction,
            "subsample_seed": config.dataset.subsample_seed,
        }.items() if v is not None}}

    agg = config.aggregator
    if isinstance(agg, DFedReweightingSpec):
        if isinstance(agg.crs, TempSoftmax):
            crs = {"temp_softmax": {"temperature": agg.crs.temperature}}
        elif isinstance(agg.crs, LossClip):
            crs = "loss_clip"
        else:
            crs = "acc_clip"
        agg_doc = {"dfed_reweighting": {"tpm": agg.tpm.value, "crs": crs}}
    elif isinstance(agg, DFedAvg):
        agg_doc = {"baseline": {"kind": "dfedavg"}}
    elif isinstance(agg, Median):
        agg_doc = {"baseline": {"kind": "median"}}
    elif isinstance(agg, Krum):
        agg_doc = {"baseline": {"kind": "krum", "f": agg.f}}
    elif isinstance(agg, MultiKrum):
        agg_doc = {"baseline": {"kind": "multi_krum", "f": agg.f, "m": agg.m}}
    elif isinstance(agg, TrimmedMean):
        agg_doc = {"baseline": {"kind": "trimmed_mean", "f": agg.f}}
    elif isinstance(agg, Flame):
        agg_doc = {"baseline": {"kind": "flame", "beta": agg.beta,
                                "include_self": agg.include_self}}
    else:
        raise TypeError(f"unknown aggregator {agg!r}")

    if config.attack is None:
        attack_doc = None
    elif isinstance(config.attack.kind, Gaussian):
        attack_doc = {"kind": "gaussian", "sigma": config.attack.kind.sigma,
                      "knowledge": config.attack.knowledge}
    elif isinstance(config.attack.kind, SignFlip):
        attack_doc = {"kind": "sign_flip", "factor": config.attack.kind.factor,
                      "knowledge": config.attack.knowledge}
    else:
        attack_doc = {"kind": "alie", "z": config.attack.kind.z,
                      "knowledge": config.attack.knowledge}

    return {
        "name": config.name,
        "dataset": ds,
        "scheme": scheme_to_json(config.scheme),
        "topology": {
            "num_benign": config.topology.num_benign,
            "num_malicious": config.topology.num_malicious,
            "edge_prob": config.topology.edge_prob,
            "max_retries": config.topology.max_retries,
        },
        "rounds": config.rounds,
        "learning_rate": config.learning_rate,
        "batch_size": config.batch_size,
        "local_steps": config.local_steps,
        "aggregator": agg_doc,
        "attack": attack_doc,
        "aux_fraction": config.aux_fraction,
        "seeds": list(config.seeds),
        "eval_every": config.eval_every,
        "eval_mode": config.eval_mode,
        "export_weights": config.export_weights,
        "outdir": config.outdir,
    }
