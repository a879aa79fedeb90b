import numpy as np
import pytest

from conftest import blobs
from etreelearn.clustering import ClusterSet
from etreelearn.dataset import NodePartition, partition_iid, partition_noniid_classes_per_node
from etreelearn.model import TrainConfig
from etreelearn.sim import (
    CSV_COLUMNS,
    EventLoop,
    MetricsLog,
    SimConfig,
    SimError,
    communication_cost,
    run,
    run_etree,
    run_federated,
    run_gossip,
    run_grouped,
    run_individual,
)
from etreelearn.topology import (
    Router,
    TopologyGraph,
    all_pairs_min_delay,
    generate_fully_connected_topology,
    generate_random_topology,
)
from etreelearn.tree import attach_public_nodes, build_etree

TC = TrainConfig(learning_rate=0.1, batch_size=5)


@pytest.fixture(scope="module")
def data():
    train = blobs(40, 3, 4, seed=0)
    test = blobs(20, 3, 4, seed=0)
    return train, test


def make(protocol, graph, train, test, part, tree=None, **kw):
    kw.setdefault("train_cfg", TC)
    kw.setdefault("budget_ms", 3000.0)
    return SimConfig(protocol, graph, train, test, part, tree=tree, **kw)


def same_traces(a: MetricsLog, b: MetricsLog):
    assert [(r.round, r.sim_time_ms, r.accuracy, r.loss) for r in a.records] == \
        [(r.round, r.sim_time_ms, r.accuracy, r.loss) for r in b.records]
    for ma, mb in zip(a.models, b.models):
        assert len(ma) == len(mb)
        assert all(x.same_as(y) for x, y in zip(ma, mb))


def test_event_loop_orders_by_time_then_priority_then_fifo():
    loop = EventLoop(10.0)
    seen = []
    loop.at(5.0, "x", seen.append, "late")
    loop.at(1.0, "sample", seen.append, "sample", priority=1)
    loop.at(1.0, "x", seen.append, "first")
    loop.at(1.0, "x", seen.append, "second")
    loop.at(11.0, "x", seen.append, "beyond budget")
    loop.run()
    assert seen == ["first", "second", "sample", "late"]


def test_event_loop_refuses_the_past():
    loop = EventLoop(10.0)
    loop.at(2.0, "x", lambda: loop.at(1.0, "y", lambda: None))
    with pytest.raises(SimError, match="past"):
        loop.run()


def test_config_validation(data):
    train, test = data
    g = generate_fully_connected_topology(4)
    part = partition_iid(train, 4)
    with pytest.raises(SimError):
        make("flood", g, train, test, part)
    with pytest.raises(SimError):
        make("federated", g, train, test, part, client_fraction=0.0)
    with pytest.raises(SimError):
        make("federated", g, train, test, part, compute_time_ms=0.0)
    with pytest.raises(SimError):
        make("etree", g, train, test, part)
    with pytest.raises(SimError):
        make("federated", g, train, test, partition_iid(train, 3))


def test_collapsed_tree_matches_federated(data):
    train, test = data
    g = generate_fully_connected_topology(10, 40.0)
    part = partition_noniid_classes_per_node(train, 10, 2, seed=1)
    tree = build_etree(all_pairs_min_delay(g), [1], [1])
    et = run(make("etree", g, train, test, part, tree, keep_models=True, seed=3))
    fl = run(make("federated", g, train, test, part, keep_models=True, seed=3))
    assert len(et.records) > 5
    same_traces(et, fl)
    assert et.total_hops == fl.total_hops


def test_singleton_groups_match_individual(data):
    train, test = data
    g = generate_random_topology(10, 15, seed=2)
    d = all_pairs_min_delay(g)
    part = partition_iid(train, 10, seed=2)
    singles = ClusterSet(tuple((i,) for i in range(10)), tuple(range(10)))
    tree = build_etree(d, [10], [1], leaf_clustering=singles)
    gr = run(make("grouped", g, train, test, part, tree, delays=d, keep_models=True, seed=4))
    ind = run(make("individual", g, train, test, part, delays=d, keep_models=True, seed=4))
    same_traces(gr, ind)
    assert gr.total_hops == 0


def test_single_device_tree_is_individual_training(data):
    train, test = data
    g = TopologyGraph.from_edges(1, [])
    part = NodePartition((np.arange(train.size),))
    tree = build_etree(np.zeros((1, 1)), [1], [1])
    et = run(make("etree", g, train, test, part, tree, keep_models=True, compute_time_ms=50.0))
    ind = run(make("individual", g, train, test, part, keep_models=True, compute_time_ms=50.0))
    by_time = {r.sim_time_ms: m for r, m in zip(et.records, et.models)}
    for r, m in zip(ind.records, ind.models):
        assert by_time[r.sim_time_ms][0].same_as(m[0])


def test_one_client_federation_is_individual_training(data):
    train, test = data
    g = TopologyGraph.from_edges(1, [])
    part = NodePartition((np.arange(train.size),))
    fl = run(make("federated", g, train, test, part, keep_models=True))
    ind = run(make("individual", g, train, test, part, keep_models=True))
    by_time = {r.sim_time_ms: m for r, m in zip(fl.records, fl.models)}
    for r, m in zip(ind.records, ind.models):
        assert by_time[r.sim_time_ms][0].same_as(m[0])


def test_individual_training_sends_nothing(data):
    train, test = data
    g = generate_random_topology(6, 8, seed=0)
    lg = run(make("individual", g, train, test, partition_iid(train, 6)))
    assert communication_cost(lg) == 0
    assert [r.sim_time_ms for r in lg.records] == [1000.0 * k for k in range(4)]


def test_star_federated_round_costs_eight_hops(data):
    train, test = data
    g = TopologyGraph.from_edges(5, [(0, k, 10.0) for k in range(1, 5)])
    lg = run(make("federated", g, train, test, partition_iid(train, 5), compute_time_ms=5.0, budget_ms=26.0))
    assert [r.round for r in lg.records] == [0, 1]
    assert lg.records[1].sim_time_ms == 25.0
    assert lg.records[1].cum_hops == 8
    assert lg.total_hops == 8


def test_federated_hops_are_route_lengths(data):
    train, test = data
    g = generate_random_topology(12, 20, seed=5)
    d = all_pairs_min_delay(g)
    lg = run(make("federated", g, train, test, partition_iid(train, 12), delays=d))
    from etreelearn.clustering import center_node

    master = center_node(range(12), d)
    per_round = 2 * sum(Router(g, d).hops(master, c) for c in range(12))
    hops = [r.cum_hops for r in lg.records]
    assert all(b - a == per_round for a, b in zip(hops, hops[1:]))


def test_partial_client_selection(data):
    train, test = data
    g = generate_fully_connected_topology(10, 10.0)
    lg = run(make("federated", g, train, test, partition_iid(train, 10), client_fraction=0.3))
    ups = lg.updates_at
    hops = [r.cum_hops for r in lg.records]
    assert len(ups) > 3 and all(b - a == 3 for a, b in zip(ups, ups[1:]))
    # the master may be among the three, and its own update travels nowhere
    assert {b - a for a, b in zip(hops, hops[1:])} <= {4, 6}


def test_etree_round_consumes_one_delta_per_leaf_and_frequency(data):
    train, test = data
    g = generate_random_topology(20, 40, seed=6)
    d = all_pairs_min_delay(g)
    part = partition_iid(train, 20, seed=6)
    tree = build_etree(d, [4], [3], seed=6)
    lg = run(make("etree", g, train, test, part, tree, delays=d, budget_ms=6000.0))
    steps = [b - a for a, b in zip(lg.updates_at, lg.updates_at[1:])]
    assert len(steps) >= 2 and set(steps) == {20 * 3}


def test_public_nodes_add_one_delta_per_extra_parent(data):
    train, test = data
    g = generate_random_topology(20, 40, seed=7)
    d = all_pairs_min_delay(g)
    part = partition_iid(train, 20, seed=7)
    tree = build_etree(d, [4], [2], seed=7)
    pubs = [v for v in range(20) if v not in tree.layers[1]][:2]
    tree = attach_public_nodes(tree, pubs)
    lg = run(make("etree", g, train, test, part, tree, delays=d, budget_ms=6000.0))
    steps = {b - a for a, b in zip(lg.updates_at, lg.updates_at[1:])}
    assert steps == {2 * (20 + 2 * 3)}


def test_four_layer_tree_runs(data):
    train, test = data
    g = generate_random_topology(30, 60, seed=8)
    d = all_pairs_min_delay(g)
    tree = build_etree(d, [6, 2], [2, 2], seed=8)
    lg = run(make("etree", g, train, test, partition_iid(train, 30), tree, delays=d, budget_ms=8000.0))
    steps = {b - a for a, b in zip(lg.updates_at, lg.updates_at[1:])}
    assert steps == {30 * 2 * 2}
    assert lg.final_accuracy > 0.9


def test_gossip_zero_budget_reports_zero_models(data):
    train, test = data
    g = generate_random_topology(5, 6, seed=0)
    lg = run(make("gossip", g, train, test, partition_iid(train, 5), budget_ms=0.0))
    assert len(lg.records) == 1 and lg.total_hops == 0
    assert lg.records[0].accuracy == pytest.approx(1 / 3)


def test_gossip_pair_with_identical_data_tracks_individual_training(data):
    train, test = data
    g = TopologyGraph.from_edges(2, [(0, 1, 10.0)])
    half = np.arange(0, train.size, 2)
    part = NodePartition((half, half.copy()))
    # full batches make the update independent of shuffling up to summation order
    full_batch = TrainConfig(learning_rate=0.1, batch_size=train.size)
    gos = run(make("gossip", g, train, test, part, train_cfg=full_batch, keep_models=True))
    ind = run(make("individual", g, train, test, part, train_cfg=full_batch, keep_models=True))
    assert [(r.round, r.sim_time_ms) for r in gos.records] == [(r.round, r.sim_time_ms) for r in ind.records]
    for ra, rb, ma, mb in zip(gos.records, ind.records, gos.models, ind.models):
        assert ra.loss == pytest.approx(rb.loss, rel=1e-9)
        for x, y in zip(ma, mb):
            np.testing.assert_allclose(x.weights, y.weights, rtol=1e-9, atol=1e-12)
    assert gos.total_hops > 0


def test_gossip_counts_one_hop_per_message(data):
    train, test = data
    g = generate_random_topology(8, 12, seed=9)
    lg = run(make("gossip", g, train, test, partition_iid(train, 8), budget_ms=1000.0, compute_time_ms=100.0))
    # every device sends to each neighbour after each of its updates; arrivals after the budget do not count
    sent = 10 * 2 * g.edge_count
    assert 0 < lg.total_hops <= sent


def test_grouped_reports_mean_over_groups(data):
    train, test = data
    g = generate_random_topology(12, 20, seed=10)
    d = all_pairs_min_delay(g)
    tree = build_etree(d, [3], [1], seed=10)
    lg = run(make("grouped", g, train, test, partition_iid(train, 12), tree, delays=d, keep_models=True))
    assert all(len(m) == 3 for m in lg.models)


@pytest.mark.parametrize("protocol", ["etree", "federated", "gossip", "individual", "grouped"])
def test_runs_are_byte_identical(data, protocol):
    train, test = data
    g = generate_random_topology(10, 15, seed=11)
    d = all_pairs_min_delay(g)
    part = partition_noniid_classes_per_node(train, 10, 2, seed=11)
    tree = build_etree(d, [3], [2], seed=11)
    a = run(make(protocol, g, train, test, part, tree, delays=d, seed=5)).to_csv()
    b = run(make(protocol, g, train, test, part, tree, delays=d, seed=5)).to_csv()
    c = run(make(protocol, g, train, test, part, tree, delays=d, seed=6)).to_csv()
    assert a == b
    assert a.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert a != c


@pytest.mark.parametrize("runner", [run_etree, run_federated, run_gossip, run_individual, run_grouped])
def test_trace_invariants(data, runner):
    train, test = data
    g = generate_random_topology(10, 15, seed=12)
    d = all_pairs_min_delay(g)
    tree = build_etree(d, [3], [2], seed=12)
    protocol = runner.__name__.removeprefix("run_")
    lg = runner(make(protocol, g, train, test, partition_iid(train, 10), tree, delays=d))
    rounds = [r.round for r in lg.records]
    times = [r.sim_time_ms for r in lg.records]
    hops = [r.cum_hops for r in lg.records]
    assert rounds == sorted(set(rounds)) and rounds[0] == 0
    assert times == sorted(times) and times[-1] <= 3000.0
    assert hops == sorted(hops) and hops[-1] <= lg.total_hops
    assert all(0.0 <= r.accuracy <= 1.0 for r in lg.records)


def test_csv_round_trip(tmp_path, data):
    train, test = data
    g = generate_random_topology(6, 8, seed=13)
    lg = run(make("federated", g, train, test, partition_iid(train, 6)))
    lg.write_csv(tmp_path / "fl.csv")
    back = MetricsLog.read_csv(tmp_path / "fl.csv")
    assert back.records == lg.records
    assert back.to_csv() == lg.to_csv()
