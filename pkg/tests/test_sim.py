import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest

from dflsim import rng
from dflsim.config import parse_config
from dflsim.core_learning import Dataset, Minibatch, ParamVector, batch_gradient, sgd_step
from dflsim.sim import (
    ClientState,
    NetworkState,
    SimulationError,
    _attack_payload,
    build_network,
    evaluate_network,
    run_experiment,
    run_round,
)
from dflsim.topology import TopologyGraph


def tiny_config(**overrides):
    doc = {
        "name": overrides.pop("name", "tiny"),
        "dataset": {"synthetic": {"num_classes": 3, "feature_dim": 6, "n_per_class": 30,
                                   "spread": 0.5, "seed": 5, "test_n_per_class": 20}},
        "scheme": "iid",
        "topology": {"num_benign": 3, "num_malicious": 0, "edge_prob": 1.0},
        "rounds": 5,
        "aggregator": {"baseline": {"kind": "dfedavg"}},
        "attack": None,
        "seeds": [43],
        "eval_every": 5,
    }
    doc.update(overrides)
    return parse_config(doc)


def graph_without_edges(num_benign):
    adj = np.zeros((num_benign, num_benign), dtype=bool)
    return TopologyGraph(num_benign, adj, frozenset(range(num_benign)), frozenset())


def complete_graph(n, benign, malicious):
    adj = ~np.eye(n, dtype=bool)
    return TopologyGraph(n, adj, frozenset(benign), frozenset(malicious))


def manual_state(config, graph, clients, train, test=None):
    return NetworkState(config, seed=config.seeds[0], graph=graph, clients=clients,
                        train_data=train, test_data=test, plan=None, aux_split=None)


class TestRunRound:
    def test_identical_data_complete_graph_consensus(self):
        config = tiny_config()
        data = Dataset(np.random.default_rng(0).standard_normal((20, 6)),
                       np.random.default_rng(1).integers(0, 3, 20), 3)
        template = ParamVector.zeros(3, 6)
        clients = {
            k: ClientState(k, "benign", template, data, data) for k in (0, 1)
        }
        state = manual_state(config, complete_graph(2, [0, 1], []), clients, data)
        for t in range(1, 6):
            run_round(state, t)
            np.testing.assert_array_equal(
                state.clients[0].model.values, state.clients[1].model.values
            )

    def test_isolated_client_round_is_plain_sgd(self):
        for aggregator in (
            {"baseline": {"kind": "dfedavg"}},
            {"dfed_reweighting": {"tpm": "accuracy",
                                  "crs": {"temp_softmax": {"temperature": 0.1}}}},
        ):
            config = tiny_config(aggregator=aggregator)
            gen = np.random.default_rng(2)
            data = Dataset(gen.standard_normal((40, 6)), gen.integers(0, 3, 40), 3)
            template = ParamVector.zeros(3, 6)
            clients = {
                k: ClientState(k, "benign", template, data, data) for k in (0, 1)
            }
            state = manual_state(config, graph_without_edges(2), clients, data)
            run_round(state, 1)

            manual = template
            stream = rng.stream(config.seeds[0], 0, 1, "minibatch")
            batch = Minibatch(stream.choice(40, size=32, replace=False))
            manual = sgd_step(manual, batch_gradient(manual, data, batch),
                              config.learning_rate)
            np.testing.assert_array_equal(state.clients[0].model.values, manual.values)

    def test_iid_complete_graph_models_equal_after_every_round(self):
        config = tiny_config(rounds=4)
        state = build_network(config, seed=43)
        for t in range(1, 5):
            run_round(state, t)
            reference = state.clients[0].model.values
            for k in state.benign_ids()[1:]:
                np.testing.assert_array_equal(state.clients[k].model.values, reference)

    def test_nonfinite_aggregate_aborts_with_context(self):
        config = tiny_config()
        gen = np.random.default_rng(3)
        data = Dataset(gen.standard_normal((10, 6)), gen.integers(0, 3, 10), 3)
        bad = ParamVector(np.full(3 * 6 + 3, np.nan), 3, 6)
        clients = {
            0: ClientState(0, "benign", ParamVector.zeros(3, 6), data, data),
            1: ClientState(1, "benign", bad, data, data),
        }
        state = manual_state(config, complete_graph(2, [0, 1], []), clients, data)
        with pytest.raises(SimulationError, match="non-finite"):
            run_round(state, 1)

    def test_round_replay_independent_of_executor(self):
        config = tiny_config(rounds=3)
        state_seq = build_network(config, seed=43)
        state_par = build_network(config, seed=43)
        with ThreadPoolExecutor(max_workers=4) as pool:
            for t in range(1, 4):
                run_round(state_seq, t)
                run_round(state_par, t, pool)
        for k in state_seq.benign_ids():
            np.testing.assert_array_equal(
                state_seq.clients[k].model.values, state_par.clients[k].model.values
            )


class TestBaselineDispatch:
    @pytest.mark.parametrize(
        "kind",
        [
            {"kind": "dfedavg"},
            {"kind": "median"},
            {"kind": "krum", "f": 2},
            {"kind": "multi_krum", "f": 2, "m": 2},
            {"kind": "trimmed_mean", "f": 2},
            {"kind": "flame", "beta": 1.0},
        ],
    )
    def test_each_baseline_matches_direct_aggregation(self, kind):
        from dflsim.baselines import (
            CandidateSet,
            dfedavg,
            flame_weighted,
            krum,
            median_agg,
            multi_krum,
            trimmed_mean,
        )
        from dflsim.sim import _local_half_step

        config = tiny_config(
            topology={"num_benign": 6, "num_malicious": 0, "edge_prob": 1.0},
            aggregator={"baseline": kind},
            dataset={"synthetic": {"num_classes": 3, "feature_dim": 6, "n_per_class": 60,
                                    "spread": 0.5, "seed": 5, "test_n_per_class": 20}},
        )
        # identical streams make the half-steps of a twin network bit-equal
        twin = build_network(config, seed=43)
        halves = {k: _local_half_step(twin, k, 1) for k in twin.benign_ids()}

        state = build_network(config, seed=43)
        run_round(state, 1)
        members = tuple(sorted(halves.items()))
        candidates = CandidateSet(members)
        if kind["kind"] == "dfedavg":
            expected = dfedavg(candidates)
        elif kind["kind"] == "median":
            expected = median_agg(candidates)
        elif kind["kind"] == "krum":
            expected = krum(candidates, 2)
        elif kind["kind"] == "multi_krum":
            expected = multi_krum(candidates, 2, 2)
        elif kind["kind"] == "trimmed_mean":
            expected = trimmed_mean(candidates, 2)
        else:
            expected = flame_weighted(halves[0], members[1:], 1.0)
        np.testing.assert_array_equal(state.clients[0].model.values, expected.values)


class TestAttackDispatch:
    def attack_state(self, attack, knowledge="omniscient"):
        config = tiny_config(
            topology={"num_benign": 3, "num_malicious": 1, "edge_prob": 1.0},
            attack=dict(attack, knowledge=knowledge),
        )
        return build_network(config, seed=43)

    def test_sign_flip_payload_flips_benign_mean(self):
        state = self.attack_state({"kind": "sign_flip", "factor": -10.0})
        halves = {k: state.clients[k].model.replace_values(
            np.full_like(state.clients[k].model.values, k + 1.0))
            for k in state.benign_ids()}
        payload = _attack_payload(state, 3, halves, t=1)
        np.testing.assert_allclose(payload.values, -10.0 * 2.0 * np.ones_like(payload.values))

    def test_gaussian_payload_replays(self):
        state = self.attack_state({"kind": "gaussian", "sigma": 30.0})
        halves = {k: state.clients[k].model for k in state.benign_ids()}
        a = _attack_payload(state, 3, halves, t=4)
        b = _attack_payload(state, 3, halves, t=4)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.values.std() > 20.0

    def test_alie_payload_uses_benign_statistics(self):
        state = self.attack_state({"kind": "alie", "z": 1.0})
        halves = {
            0: ParamVector(np.zeros(21), 3, 6),
            1: ParamVector(np.full(21, 2.0), 3, 6),
            2: ParamVector(np.full(21, 4.0), 3, 6),
        }
        payload = _attack_payload(state, 3, halves, t=1)
        mu, sigma = 2.0, float(np.std([0.0, 2.0, 4.0]))
        np.testing.assert_allclose(payload.values, mu - sigma, atol=1e-12)

    def test_malicious_clients_hold_no_data(self):
        state = self.attack_state({"kind": "gaussian"})
        for m in state.malicious_ids():
            assert state.clients[m].train is None
            assert state.clients[m].aux is None

    def test_neighborhood_knowledge_restricts_view(self):
        config = tiny_config(
            topology={"num_benign": 3, "num_malicious": 1, "edge_prob": 1.0},
            attack={"kind": "sign_flip", "factor": -1.0, "knowledge": "neighborhood"},
        )
        state = build_network(config, seed=43)
        # disconnect malicious node 3 from benign 0
        adj = state.graph.adjacency.copy()
        adj[3, 0] = adj[0, 3] = False
        state.graph = TopologyGraph(4, adj, state.graph.benign, state.graph.malicious)
        halves = {k: state.clients[k].model.replace_values(
            np.full(21, float(k))) for k in state.benign_ids()}
        payload = _attack_payload(state, 3, halves, t=1)
        # mean over visible benign {1, 2} only, flipped by -1
        np.testing.assert_allclose(payload.values, -1.5, atol=1e-12)


class TestEvaluation:
    def test_eval_mode_auto_resolution(self):
        assert tiny_config().resolved_eval_mode() == "local"
        attacked = tiny_config(
            topology={"num_benign": 3, "num_malicious": 1, "edge_prob": 1.0},
            attack={"kind": "gaussian"},
        )
        assert attacked.resolved_eval_mode() == "global"

    def test_round_metrics_accounting(self):
        config = tiny_config(rounds=2)
        state = build_network(config, seed=43)
        run_round(state, 1)
        metrics = evaluate_network(state, 1)
        assert metrics.mean_accuracy == pytest.approx(
            float(np.mean(metrics.accuracies))
        )
        assert metrics.accuracy_variance == pytest.approx(
            float(np.var([a * 100 for a in metrics.accuracies]))
        )

    def test_zero_rounds_reports_initial_metrics(self, tmp_path):
        config = tiny_config(rounds=0, name="t0")
        summary = run_experiment(config, outdir=str(tmp_path))
        rows = (tmp_path / "t0" / "metrics.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 3  # header + one row per benign client at round 0
        assert all(r.split(",")[0] == "0" for r in rows[1:])
        # zero-init model predicts class 0 everywhere
        assert summary.mean_acc == pytest.approx(1.0 / 3.0, abs=0.2)


class TestRunExperiment:
    def test_artifacts_written(self, tmp_path):
        config = tiny_config(name="artifacts", rounds=2, eval_every=1)
        run_experiment(config, outdir=str(tmp_path))
        run_dir = tmp_path / "artifacts"
        for name in ("config.json", "topology.json", "metrics.csv", "summary.json"):
            assert (run_dir / name).exists(), name

    def test_summary_recomputable_from_per_client_values(self, tmp_path):
        config = tiny_config(name="recompute", rounds=3, seeds=[43, 44])
        summary = run_experiment(config, outdir=str(tmp_path))
        per_seed_means = []
        for seed, final in summary.per_seed_final.items():
            accs = [final["acc"][k] for k in sorted(final["acc"])]
            assert final["mean_acc"] == pytest.approx(float(np.mean(accs)))
            per_seed_means.append(final["mean_acc"])
        assert summary.mean_acc == pytest.approx(float(np.mean(per_seed_means)))

    def test_determinism_across_runs_and_workers(self, tmp_path):
        config = tiny_config(name="det", rounds=4, eval_every=2)
        run_experiment(config, parallel=1, outdir=str(tmp_path / "a"))
        run_experiment(config, parallel=4, outdir=str(tmp_path / "b"))
        bytes_a = (tmp_path / "a" / "det" / "metrics.csv").read_bytes()
        bytes_b = (tmp_path / "b" / "det" / "metrics.csv").read_bytes()
        assert bytes_a == bytes_b

    def test_data_conservation_through_run(self, tmp_path):
        config = tiny_config(name="conserve", rounds=3)
        state = build_network(config, seed=43)
        before = sorted(i for idx in state.plan.client_indices for i in idx)
        for t in range(1, 4):
            run_round(state, t)
        after = sorted(i for idx in state.plan.client_indices for i in idx)
        assert before == after
        # client datasets were never replaced or resized
        for k in state.benign_ids():
            total = len(state.clients[k].train) + len(state.clients[k].aux)
            assert total == len(state.plan.client_indices[k])

    def test_weight_export_gated_by_eval_every(self, tmp_path):
        config = tiny_config(
            name="weights",
            rounds=4,
            eval_every=2,
            export_weights=True,
            aggregator={"dfed_reweighting": {"tpm": "accuracy",
                                             "crs": {"temp_softmax": {"temperature": 0.5}}}},
        )
        run_experiment(config, outdir=str(tmp_path))
        run_dir = tmp_path / "weights"
        assert (run_dir / "weights_round_2.csv").exists()
        assert (run_dir / "weights_round_4.csv").exists()
        assert not (run_dir / "weights_round_3.csv").exists()
        header = (run_dir / "weights_round_2.csv").read_text().splitlines()[0]
        assert header == "seed,client,member,weight"

    def test_summary_json_matches_returned_summary(self, tmp_path):
        config = tiny_config(name="roundtrip", rounds=2)
        summary = run_experiment(config, outdir=str(tmp_path))
        doc = json.loads((tmp_path / "roundtrip" / "summary.json").read_text())
        assert doc["cross_seed"]["mean_acc"] == summary.mean_acc
        assert doc["cross_seed"]["var_points"] == summary.var_points

    def test_outdir_precedence(self, tmp_path, monkeypatch):
        from dflsim.sim import resolve_outdir

        monkeypatch.setenv("DFLSIM_OUTDIR", str(tmp_path / "env"))
        config = tiny_config(name="prec", outdir=str(tmp_path / "cfg"))
        assert resolve_outdir(config, str(tmp_path / "flag")) == tmp_path / "flag" / "prec"
        assert resolve_outdir(config) == tmp_path / "cfg" / "prec"
        no_cfg = tiny_config(name="prec")
        assert resolve_outdir(no_cfg) == tmp_path / "env" / "prec"
        monkeypatch.delenv("DFLSIM_OUTDIR")
        assert resolve_outdir(no_cfg) == Path("runs") / "prec"

    def test_reweighting_snapshot_rows_normalized(self, tmp_path):
        config = tiny_config(
            name="snap",
            rounds=2,
            aggregator={"dfed_reweighting": {"tpm": "loss", "crs": "loss_clip"}},
        )
        state = build_network(config, seed=43)
        run_round(state, 1)
        assert set(state.last_weights) == set(state.benign_ids())
        for client, row in state.last_weights.items():
            assert sum(row.values()) == pytest.approx(1.0, abs=1e-9)
            assert all(w >= 0 for w in row.values())
