"""Experiment orchestration: topology, partitions, synchronous learning rounds,
attacks, metric recording, and run artifacts.

A round is: benign clients take local SGD steps, malicious clients fabricate
payloads, every benign client aggregates its closed neighborhood (reweighting
or a baseline aggregator) and adopts the result. Rounds are bulk-synchronous;
all randomness is drawn from streams keyed (seed, node, round, purpose), so a
run is a pure function of its config regardless of worker count.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .analysis import RoundMetrics, accuracy_variance, mean_accuracy
from .attacks import ALIE, AdversaryView, Gaussian, SignFlip, alie_update, gaussian_update, sign_flip_update
from .baselines import (
    CandidateSet,
    DFedAvg,
    Flame,
    Krum,
    Median,
    MultiKrum,
    TrimmedMean,
    dfedavg,
    flame_weighted,
    krum,
    median_agg,
    multi_krum,
    trimmed_mean,
)
from .config import (
    ConfigError,
    DFedReweightingSpec,
    RunConfig,
    SyntheticSpec,
    config_to_json_dict,
)
from .core_learning import Dataset, Minibatch, ParamVector, batch_gradient, evaluate_accuracy, evaluate_mean_loss, sgd_step
from .data import (
    IID,
    Dirichlet,
    LabelSkew,
    gen_synthetic_blobs,
    load_idx,
    partition_dirichlet,
    partition_iid,
    partition_label_skew,
    split_auxiliary,
)
from .reweight import dfedreweighting_round_weights, reweight_aggregate
from .topology import TopologyConfig, TopologyGraph, generate, neighbors

log = logging.getLogger(__name__)

METRICS_COLUMNS = ["round", "seed", "client", "acc", "loss", "mean_acc", "var"]


class SimulationError(RuntimeError):
    """A run failed mid-flight; the message carries seed/round context."""


@dataclass
class ClientState:
    node_id: int
    role: str  # "benign" | "malicious"
    model: ParamVector
    train: Dataset | None
    aux: Dataset | None


@dataclass
class NetworkState:
    """One seed's mutable world: graph, clients, and data provenance."""

    config: RunConfig
    seed: int
    graph: TopologyGraph
    clients: dict
    train_data: Dataset
    test_data: Dataset | None
    plan: object
    aux_split: object
    round_index: int = 0
    last_weights: dict = field(default_factory=dict)

    def benign_ids(self) -> list:
        return sorted(self.graph.benign)

    def malicious_ids(self) -> list:
        return sorted(self.graph.malicious)


def build_dataset(config: RunConfig) -> tuple:
    """Materialize (train, test-or-None) from the config's dataset source."""
    ds = config.dataset
    if isinstance(ds, SyntheticSpec):
        train = gen_synthetic_blobs(
            ds.num_classes, ds.feature_dim, ds.n_per_class, ds.spread, ds.seed
        )
        # Held-out test blobs share the class means; seed+1 keeps draws disjoint.
        test = gen_synthetic_blobs(
            ds.num_classes, ds.feature_dim, ds.test_n_per_class, ds.spread, ds.seed + 1
        )
        return train, test
    train = load_idx(ds.train_images, ds.train_labels)
    if ds.subsample_fraction is not None:
        train = _stratified_subsample(train, ds.subsample_fraction, ds.subsample_seed)
    test = None
    if ds.test_images is not None and ds.test_labels is not None:
        test = load_idx(ds.test_images, ds.test_labels, num_classes=train.num_classes)
    return train, test


def _stratified_subsample(data: Dataset, fraction: float, seed: int) -> Dataset:
    if not 0 < fraction <= 1:
        raise ConfigError("subsample_fraction must lie in (0, 1]")
    gen = rng.stream(seed, purpose="idx-subsample")
    keep = []
    for c in range(data.num_classes):
        idx = np.flatnonzero(data.labels == c)
        take = max(1, int(round(fraction * len(idx)))) if len(idx) else 0
        if take:
            keep.extend(int(i) for i in gen.permutation(idx)[:take])
    return data.subset(sorted(keep))


def _partition(data: Dataset, config: RunConfig, seed: int):
    scheme = config.scheme
    n = config.topology.num_benign
    if isinstance(scheme, IID):
        return partition_iid(data, n, seed)
    if isinstance(scheme, Dirichlet):
        return partition_dirichlet(data, n, scheme.alpha, seed)
    if isinstance(scheme, LabelSkew):
        return partition_label_skew(data, n, scheme.h, seed)
    raise ConfigError(f"unknown heterogeneity scheme {scheme!r}")


def build_network(config: RunConfig, seed: int) -> NetworkState:
    """Topology, partition, aux split, and zero-initialized client models."""
    train, test = build_dataset(config)
    if config.resolved_eval_mode() == "global" and test is None:
        raise ConfigError("global evaluation requires a test dataset (idx test paths)")
    graph = generate(
        TopologyConfig(
            num_benign=config.topology.num_benign,
            num_malicious=config.topology.num_malicious,
            edge_prob=config.topology.edge_prob,
            seed=seed,
            max_retries=config.topology.max_retries,
        )
    )
    plan = _partition(train, config, seed)
    aux_split = split_auxiliary(train, plan, config.aux_fraction, seed)
    template = ParamVector.zeros(train.num_classes, train.feature_dim)
    clients = {}
    for node_id in range(graph.n):
        if node_id in graph.benign:
            clients[node_id] = ClientState(
                node_id,
                "benign",
                template,
                train.subset(aux_split.train_indices[node_id]),
                train.subset(aux_split.aux_indices[node_id]),
            )
        else:
            # Malicious nodes hold no data; their stored model never trains.
            clients[node_id] = ClientState(node_id, "malicious", template, None, None)
    return NetworkState(config, seed, graph, clients, train, test, plan, aux_split)


def _local_half_step(state: NetworkState, node_id: int, t: int) -> ParamVector:
    client = state.clients[node_id]
    gen = rng.stream(state.seed, node_id, t, "minibatch")
    model = client.model
    n = len(client.train)
    batch_size = min(state.config.batch_size, n)
    for _ in range(state.config.local_steps):
        batch = Minibatch(gen.choice(n, size=batch_size, replace=False))
        grad = batch_gradient(model, client.train, batch)
        model = sgd_step(model, grad, state.config.learning_rate)
    return model


def _adversary_view(state: NetworkState, node_id: int, halves: dict) -> AdversaryView:
    if state.config.attack.knowledge == "neighborhood":
        visible = [
            halves[i] for i in sorted(neighbors(state.graph, node_id)) if i in state.graph.benign
        ]
    else:
        visible = [halves[i] for i in state.benign_ids()]
    return AdversaryView(
        benign_models=tuple(visible),
        own_model=state.clients[node_id].model,
        num_nodes=state.graph.n,
        num_malicious=len(state.graph.malicious),
    )


def _attack_payload(state: NetworkState, node_id: int, halves: dict, t: int) -> ParamVector:
    kind = state.config.attack.kind
    view = _adversary_view(state, node_id, halves)
    if isinstance(kind, Gaussian):
        gen = rng.stream(state.seed, node_id, t, "attack")
        return gaussian_update(view.own_model.shape, kind.sigma, gen)
    if isinstance(kind, SignFlip):
        # A dataless Byzantine node has no trained local model to flip, so it
        # flips its running estimate of the benign consensus.
        if view.benign_models:
            stacked = np.stack([m.values for m in view.benign_models])
            reference = view.own_model.replace_values(stacked.mean(axis=0))
        else:
            reference = view.own_model
        return sign_flip_update(reference, kind.factor)
    if isinstance(kind, ALIE):
        return alie_update(view, kind.z)
    raise ConfigError(f"unknown attack kind {kind!r}")


def _aggregate_one(state: NetworkState, node_id: int, incoming: dict):
    """Aggregate one benign client's closed neighborhood.

    Returns (new model, weight row or None). incoming maps every node id to
    the model it broadcast this round (half-step or attack payload).
    """
    own_pair = (node_id, incoming[node_id])
    received = [
        (i, incoming[i]) for i in sorted(neighbors(state.graph, node_id))
    ]
    agg = state.config.aggregator
    if isinstance(agg, DFedReweightingSpec):
        weights = dfedreweighting_round_weights(
            agg.tpm, agg.crs, received, own_pair, state.clients[node_id].aux
        )
        members = sorted([own_pair] + received, key=lambda pair: pair[0])
        new_model = reweight_aggregate(members, weights)
        row = dict(zip(weights.ids, (float(w) for w in weights.weights)))
        return new_model, row
    candidates = CandidateSet(tuple(sorted([own_pair] + received, key=lambda p: p[0])))
    if isinstance(agg, DFedAvg):
        return dfedavg(candidates), None
    if isinstance(agg, Median):
        return median_agg(candidates), None
    if isinstance(agg, Krum):
        return krum(candidates, agg.f), None
    if isinstance(agg, MultiKrum):
        return multi_krum(candidates, agg.f, agg.m), None
    if isinstance(agg, TrimmedMean):
        return trimmed_mean(candidates, agg.f), None
    if isinstance(agg, Flame):
        return flame_weighted(own_pair[1], received, agg.beta, agg.include_self), None
    raise ConfigError(f"unknown aggregator {agg!r}")


def _map_ordered(fn, items, executor):
    if executor is None:
        return [fn(x) for x in items]
    return list(executor.map(fn, items))


def run_round(state: NetworkState, t: int, executor: ThreadPoolExecutor | None = None) -> NetworkState:
    """Advance the network one synchronous learning round."""
    benign = state.benign_ids()
    halves = dict(
        zip(benign, _map_ordered(lambda k: _local_half_step(state, k, t), benign, executor))
    )
    incoming = dict(halves)
    if state.config.attack is not None:
        for m in state.malicious_ids():
            incoming[m] = _attack_payload(state, m, halves, t)
    else:
        for m in state.malicious_ids():
            incoming[m] = state.clients[m].model

    results = _map_ordered(lambda k: _aggregate_one(state, k, incoming), benign, executor)
    state.last_weights = {}
    for node_id, (new_model, weight_row) in zip(benign, results):
        if not new_model.is_finite():
            raise SimulationError(
                f"non-finite aggregate for client {node_id} at round {t} "
                f"(seed {state.seed}); weights={weight_row}"
            )
        state.clients[node_id].model = new_model
        if weight_row is not None:
            state.last_weights[node_id] = weight_row
    state.round_index = t
    return state


def evaluate_network(state: NetworkState, t: int) -> RoundMetrics:
    """Per-benign-client accuracy/loss on the mode's evaluation set."""
    mode = state.config.resolved_eval_mode()
    accs, losses = [], []
    for node_id in state.benign_ids():
        client = state.clients[node_id]
        eval_set = client.aux if mode == "local" else state.test_data
        accs.append(evaluate_accuracy(client.model, eval_set))
        losses.append(evaluate_mean_loss(client.model, eval_set))
    return RoundMetrics(
        round_index=t,
        client_ids=tuple(state.benign_ids()),
        accuracies=tuple(accs),
        losses=tuple(losses),
        mean_accuracy=mean_accuracy(accs),
        accuracy_variance=accuracy_variance([a * 100.0 for a in accs]),
        weight_snapshot=dict(state.last_weights) if state.last_weights else None,
    )


@dataclass
class RunSummary:
    config: RunConfig
    per_seed_final: dict
    mean_acc: float
    var_points: float
    rounds_evaluated: dict
    wall_clock_sec: float
    source_fingerprint: str

    def to_json_dict(self) -> dict:
        return {
            "config": config_to_json_dict(self.config),
            "per_seed": {
                str(seed): {
                    "final_accuracies": {str(k): v for k, v in final["acc"].items()},
                    "final_losses": {str(k): v for k, v in final["loss"].items()},
                    "mean_acc": final["mean_acc"],
                    "var_points": final["var_points"],
                }
                for seed, final in self.per_seed_final.items()
            },
            "cross_seed": {"mean_acc": self.mean_acc, "var_points": self.var_points},
            "wall_clock_sec": self.wall_clock_sec,
            "source_fingerprint": self.source_fingerprint,
        }


def source_fingerprint() -> str:
    """sha256 over the package sources, for run provenance."""
    pkg_dir = Path(__file__).parent
    digest = hashlib.sha256()
    for path in sorted(pkg_dir.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()[:16]


def _eval_rounds(config: RunConfig) -> list:
    rounds = {0, config.rounds}
    rounds.update(t for t in range(1, config.rounds + 1) if t % config.eval_every == 0)
    return sorted(rounds)


def _fmt(x: float) -> str:
    return repr(float(x))


def resolve_outdir(config: RunConfig, override: str | None = None) -> Path:
    base = override or config.outdir or os.environ.get("DFLSIM_OUTDIR") or "runs"
    return Path(base) / config.name


def run_experiment(
    config: RunConfig,
    parallel: int = 1,
    outdir: str | None = None,
    quiet: bool = True,
) -> RunSummary:
    """Execute the full multi-seed experiment and write run artifacts.

    Writes config.json, topology.json, metrics.csv, summary.json, and
    (when export_weights is set) weights_round_<t>.csv under the run
    directory. Returns the cross-seed summary.
    """
    start = time.perf_counter()
    run_dir = resolve_outdir(config, outdir)
    run_dir.mkdir(parents=True, exist_ok=True)
    eval_rounds = set(_eval_rounds(config))

    executor = ThreadPoolExecutor(max_workers=parallel) if parallel > 1 else None
    metrics_rows = []
    topo_docs = {}
    per_seed_final = {}
    weight_files = {}
    try:
        for seed in config.seeds:
            try:
                state = build_network(config, seed)
            except Exception as exc:
                raise SimulationError(f"setup failed for seed {seed}: {exc}") from exc
            topo_docs[str(seed)] = state.graph.to_json_dict()
            last_metrics = None
            for t in range(0, config.rounds + 1):
                if t > 0:
                    try:
                        run_round(state, t, executor)
                    except SimulationError:
                        raise
                    except Exception as exc:
                        raise SimulationError(
                            f"round {t} failed for seed {seed}: {exc}"
                        ) from exc
                if t in eval_rounds:
                    metrics = evaluate_network(state, t)
                    last_metrics = metrics
                    for node_id, acc, loss in zip(
                        metrics.client_ids, metrics.accuracies, metrics.losses
                    ):
                        metrics_rows.append(
                            [t, seed, node_id, _fmt(acc), _fmt(loss),
                             _fmt(metrics.mean_accuracy), _fmt(metrics.accuracy_variance)]
                        )
                    if config.export_weights and metrics.weight_snapshot:
                        weight_files.setdefault(t, []).extend(
                            [seed, client, member, _fmt(w)]
                            for client, row in sorted(metrics.weight_snapshot.items())
                            for member, w in sorted(row.items())
                        )
                    if not quiet:
                        print(
                            f"[seed {seed}] round {t}: mean_acc={metrics.mean_accuracy:.4f} "
                            f"var={metrics.accuracy_variance:.3f}"
                        )
            per_seed_final[seed] = {
                "acc": dict(zip(last_metrics.client_ids, last_metrics.accuracies)),
                "loss": dict(zip(last_metrics.client_ids, last_metrics.losses)),
                "mean_acc": last_metrics.mean_accuracy,
                "var_points": last_metrics.accuracy_variance,
            }
    finally:
        if executor is not None:
            executor.shutdown()

    summary = RunSummary(
        config=config,
        per_seed_final=per_seed_final,
        mean_acc=mean_accuracy([f["mean_acc"] for f in per_seed_final.values()]),
        var_points=mean_accuracy([f["var_points"] for f in per_seed_final.values()]),
        rounds_evaluated={seed: sorted(eval_rounds) for seed in config.seeds},
        wall_clock_sec=time.perf_counter() - start,
        source_fingerprint=source_fingerprint(),
    )

    with open(run_dir / "config.json", "w") as f:
        json.dump(config_to_json_dict(config), f, indent=2, sort_keys=True)
    with open(run_dir / "topology.json", "w") as f:
        json.dump({"seeds": topo_docs}, f, indent=2, sort_keys=True)
    with open(run_dir / "metrics.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_COLUMNS)
        writer.writerows(metrics_rows)
    for t, rows in sorted(weight_files.items()):
        with open(run_dir / f"weights_round_{t}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["seed", "client", "member", "weight"])
            writer.writerows(rows)
    with open(run_dir / "summary.json", "w") as f:
        json.dump(summary.to_json_dict(), f, indent=2, sort_keys=True)
    return summary
