"""Graph loading, metrics, population assignment, seeding, and diffusion."""

import itertools

import numpy as np
import pytest

import choicespread as cs
from choicespread.networks import (NetworkError, network_from_edges)
from conftest import (complete_graph, cycle_graph, make_random_graph,
                      path_graph, star_graph)


def brute_force_final_adopters(net, node_tau, seeds):
    """Independent fixed-point oracle: re-applies the adoption operator on
    plain Python sets, recomputing every node from scratch each pass."""
    neigh = {int(net.node_ids[i]): set(int(net.node_ids[j])
                                       for j in net.neighbors(i))
             for i in range(net.n_nodes)}
    tau = {int(net.node_ids[i]): node_tau[i] for i in range(net.n_nodes)}
    adopted = set(int(s) for s in seeds)
    while True:
        new = set()
        for v, nb in neigh.items():
            if v in adopted or not nb:
                continue
            hits = sum(1 for u in nb if u in adopted)
            if hits >= 1 and hits / len(nb) >= tau[v]:
                new.add(v)
        if not new:
            return adopted
        adopted |= new


def brute_force_transitivity(net):
    """Closed connected triples over all centered pairs."""
    adj = {i: set(int(j) for j in net.neighbors(i)) for i in range(net.n_nodes)}
    triples = closed = 0
    for center, nb in adj.items():
        for a, b in itertools.combinations(sorted(nb), 2):
            triples += 1
            if b in adj[a]:
                closed += 1
    return closed / triples if triples else 0.0


def uniform_pool(label, n_agents, tau_value, product_ids=("p",)):
    tau = np.full((n_agents, len(product_ids)), float(tau_value))
    return cs.ThresholdMatrix(label, [f"{label}{i}" for i in range(n_agents)],
                              list(product_ids), tau)


class TestLoadNetwork:
    def test_basic_two_edges(self, tmp_path):
        f = tmp_path / "net.txt"
        f.write_text("1 2\n2 3\n")
        net = cs.load_network(str(f))
        assert net.n_nodes == 3 and net.n_edges == 2

    def test_self_loop_dropped(self, tmp_path, caplog):
        f = tmp_path / "net.txt"
        f.write_text("1 1\n1 2\n")
        with caplog.at_level("INFO"):
            net = cs.load_network(str(f))
        assert net.n_nodes == 2 and net.n_edges == 1
        assert any("self-loops" in m for m in caplog.messages)

    def test_duplicates_and_comments(self, tmp_path):
        f = tmp_path / "net.txt"
        f.write_text("# header\n1,2\n2 1\n2 3\n")
        net = cs.load_network(str(f))
        assert net.n_edges == 2

    def test_counts_match_independent_dedup_script(self, tmp_path):
        # oracle: line-by-line parse with its own set-based dedup
        rng = np.random.default_rng(0)
        lines = []
        for _ in range(300):
            a, b = rng.integers(0, 40, size=2)
            lines.append(f"{a} {b}")
        f = tmp_path / "community.txt"
        f.write_text("\n".join(lines) + "\n")

        nodes, edges = set(), set()
        for line in lines:
            a, b = map(int, line.split())
            nodes.update((a, b))
            if a != b:
                edges.add((min(a, b), max(a, b)))
        net = cs.load_network(str(f))
        assert net.n_nodes == len(nodes)
        assert net.n_edges == len(edges)

    def test_unreadable_file(self):
        with pytest.raises(NetworkError):
            cs.load_network("/nonexistent/edges.txt")

    def test_empty_file_rejected(self, tmp_path):
        f = tmp_path / "net.txt"
        f.write_text("# nothing\n")
        with pytest.raises(NetworkError):
            cs.load_network(str(f))


class TestNetworkMetrics:
    def test_triangle(self):
        net = network_from_edges([(0, 1), (1, 2), (0, 2)])
        assert cs.network_metrics(net)["global_transitivity"] == 1.0

    def test_path_has_zero_transitivity(self):
        assert cs.network_metrics(path_graph(3))["global_transitivity"] == 0.0

    def test_four_clique_minus_edge(self):
        # triangles 2, connected triples 8 -> 3*2/8
        net = network_from_edges([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)])
        m = cs.network_metrics(net)
        assert m["global_transitivity"] == pytest.approx(0.75)
        assert sorted(m["degrees"]) == [2, 2, 3, 3]

    def test_matches_brute_force_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            net = make_random_graph(12, 0.3, rng)
            got = cs.network_metrics(net)["global_transitivity"]
            assert got == pytest.approx(brute_force_transitivity(net))


class TestStratifiedSample:
    @staticmethod
    def _net_with(size, kind):
        """size divisible by 12; kind selects transitivity 0 / 0.6 / 1.0."""
        if kind == 0:
            return path_graph(size)
        if kind == 1:  # components of triangle+pendant: transitivity 3/5
            edges = []
            for base in range(0, size, 4):
                a, b, c, d = base, base + 1, base + 2, base + 3
                edges += [(a, b), (b, c), (a, c), (a, d)]
            return network_from_edges(edges)
        edges = []  # disjoint triangles: transitivity 1
        for base in range(0, size, 3):
            a, b, c = base, base + 1, base + 2
            edges += [(a, b), (b, c), (a, c)]
        return network_from_edges(edges)

    def test_85_networks_yield_18(self):
        sizes = {0: 12, 1: 48, 2: 204}
        nets = {}
        for i in range(85):
            size_group, trans_group = i % 3, (i // 3) % 3
            nets[f"n{i:02d}"] = self._net_with(sizes[size_group], trans_group)
        selected = cs.stratified_network_sample(nets, seed=1)
        assert len(selected) == 18
        assert len(set(selected)) == 18

    def test_single_network_selected(self, caplog):
        nets = {"only": path_graph(5)}
        with caplog.at_level("INFO"):
            selected = cs.stratified_network_sample(nets, seed=0)
        assert selected == ["only"]
        assert sum("empty" in m for m in caplog.messages) == 8

    def test_nine_networks_one_per_cell_all_selected(self):
        sizes = {0: 12, 1: 48, 2: 204}
        nets = {f"n{s}{t}": self._net_with(sizes[s], t)
                for s in range(3) for t in range(3)}
        selected = cs.stratified_network_sample(nets, seed=3)
        assert sorted(selected) == sorted(nets)

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        nets = {f"g{i}": make_random_graph(10 + i, 0.3, rng) for i in range(12)}
        assert cs.stratified_network_sample(nets, seed=5) == \
            cs.stratified_network_sample(nets, seed=5)


class TestAssignPopulation:
    def test_q_zero_all_human(self):
        net = path_graph(10)
        a = cs.assign_population(net, uniform_pool("human", 4, 0.5),
                                 uniform_pool("artificial", 4, 0.1), 0.0, seed=0)
        assert not a.is_artificial.any()

    def test_q_one_all_artificial(self):
        net = path_graph(10)
        a = cs.assign_population(net, uniform_pool("human", 4, 0.5),
                                 uniform_pool("artificial", 4, 0.1), 1.0, seed=0)
        assert a.is_artificial.all()

    def test_half_q_exact_count_positions_vary(self):
        net = path_graph(20)
        hp = uniform_pool("human", 4, 0.5)
        ap = uniform_pool("artificial", 4, 0.1)
        a1 = cs.assign_population(net, hp, ap, 0.5, seed=1)
        a2 = cs.assign_population(net, hp, ap, 0.5, seed=2)
        assert a1.is_artificial.sum() == a2.is_artificial.sum() == 10
        assert not np.array_equal(a1.is_artificial, a2.is_artificial)

    def test_coupled_across_q_for_fixed_seed(self):
        net = path_graph(30)
        hp = uniform_pool("human", 5, 0.5)
        ap = uniform_pool("artificial", 5, 0.1)
        prev = np.zeros(30, dtype=bool)
        for q in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
            a = cs.assign_population(net, hp, ap, q, seed=9)
            assert (prev & ~a.is_artificial).sum() == 0  # nested artificial sets
            prev = a.is_artificial
        b = cs.assign_population(net, hp, ap, 0.4, seed=9)
        c = cs.assign_population(net, hp, ap, 0.8, seed=9)
        assert np.array_equal(b.human_index, c.human_index)
        assert np.array_equal(b.artificial_index, c.artificial_index)

    def test_empty_needed_pool_rejected(self):
        net = path_graph(4)
        empty = cs.ThresholdMatrix("artificial", [], ["p"], np.zeros((0, 1)))
        with pytest.raises(NetworkError):
            cs.assign_population(net, uniform_pool("human", 2, 0.5), empty,
                                 0.5, seed=0)


class TestSelectSeeds:
    def test_one_percent_of_100(self):
        net = path_graph(100)
        assert len(cs.select_seeds(net, "random", 0.01, seed=0)) == 1

    def test_floor_protection_small_network(self):
        net = path_graph(10)
        assert len(cs.select_seeds(net, "random", 0.01, seed=0)) == 1

    def test_star_degree_policy_picks_hub(self):
        net = star_graph(7)
        assert cs.select_seeds(net, "degree", 0.1, seed=0) == frozenset({0})

    def test_degree_ties_break_by_node_id(self):
        net = cycle_graph(6)  # all degree 2
        assert cs.select_seeds(net, "degree", 0.5, seed=0) == frozenset({0, 1, 2})

    def test_random_deterministic_given_seed(self):
        net = path_graph(50)
        assert cs.select_seeds(net, "random", 0.2, seed=3) == \
            cs.select_seeds(net, "random", 0.2, seed=3)

    def test_invalid_policy(self):
        with pytest.raises(NetworkError):
            cs.select_seeds(path_graph(5), "betweenness", 0.1, seed=0)


class TestRunDiffusion:
    def test_hand_simulated_path(self):
        net = network_from_edges([(1, 2), (2, 3)])
        res = cs.diffuse(net, np.array([0.0, 0.5, 1.0]), {1})
        assert [sorted(s) for s in res.adopters_per_step] == [[1], [1, 2], [1, 2, 3]]
        assert res.steps_to_fixation == 2
        assert res.adoption_rate == 1.0

    def test_all_never_stays_at_seeds(self):
        net = cycle_graph(8)
        res = cs.diffuse(net, np.full(8, np.inf), {0, 3})
        assert res.final_adopters == frozenset({0, 3})
        assert res.adoption_rate == 2 / 8

    def test_isolated_zero_threshold_node_never_adopts(self):
        net = network_from_edges([(0, 1)], extra_nodes=[2])
        res = cs.diffuse(net, np.zeros(3), {0})
        assert 2 not in res.final_adopters
        assert res.final_adopters == frozenset({0, 1})

    def test_adopter_sets_nested_and_bounded(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            net = make_random_graph(25, 0.15, rng)
            tau = rng.choice([0.0, 0.2, 0.34, 0.5, 0.9, 1.0, np.inf], size=25)
            seeds = {int(net.node_ids[rng.integers(25)])}
            res = cs.diffuse(net, tau, seeds)
            assert len(res.adopters_per_step) <= 26
            for a, b in zip(res.adopters_per_step, res.adopters_per_step[1:]):
                assert a < b  # strictly growing until fixation

    def test_equals_brute_force_on_small_graphs(self):
        rng = np.random.default_rng(12)
        fixtures = [path_graph(5), cycle_graph(6), star_graph(7),
                    complete_graph(5)]
        fixtures += [make_random_graph(n, 0.35, rng) for n in (4, 6, 8, 10)]
        for net in fixtures:
            for _ in range(3):
                tau = rng.choice([0.0, 0.25, 0.4, 0.5, 0.75, 1.0, np.inf],
                                 size=net.n_nodes)
                for seed_node in net.node_ids:
                    got = cs.diffuse(net, tau, {int(seed_node)}).final_adopters
                    ref = brute_force_final_adopters(net, tau, {int(seed_node)})
                    assert set(got) == ref

    def test_deterministic_pure_function(self):
        rng = np.random.default_rng(13)
        net = make_random_graph(30, 0.2, rng)
        tau = rng.uniform(0, 1, size=30)
        a = cs.diffuse(net, tau, {0, 5})
        b = cs.diffuse(net, tau, {0, 5})
        assert a.adopters_per_step == b.adopters_per_step

    def test_pointwise_lowering_never_shrinks(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            net = make_random_graph(30, 0.15, rng)
            tau = rng.uniform(0, 1.2, size=30)
            tau[rng.random(30) < 0.1] = np.inf
            seeds = {int(n) for n in
                     rng.choice(net.node_ids, size=2, replace=False)}
            base = cs.diffuse(net, tau, seeds).final_adopters
            lowered = tau.copy()
            mask = rng.random(30) < 0.3
            lowered[mask] = np.where(np.isinf(lowered[mask]), 1.0,
                                     lowered[mask] * rng.uniform(0, 1))
            more = cs.diffuse(net, lowered, seeds).final_adopters
            assert base <= more

    def test_run_diffusion_via_assignment(self):
        net = path_graph(6)
        hp = uniform_pool("human", 3, 0.9)
        ap = uniform_pool("artificial", 3, 0.0)
        assign = cs.assign_population(net, hp, ap, 1.0, seed=0)
        res = cs.run_diffusion(net, assign, "p", {0})
        assert res.adoption_rate == 1.0
        res2 = cs.run_diffusion(
            net, assign,
            {"human": np.full(3, 0.9), "artificial": np.full(3, 0.0)}, {0})
        assert res2.adoption_rate == 1.0

    def test_missing_threshold_rejected(self):
        net = path_graph(4)
        with pytest.raises(NetworkError):
            cs.diffuse(net, np.zeros(3), {0})
        with pytest.raises(NetworkError):
            cs.diffuse(net, np.array([0.0, np.nan, 0.0, 0.0]), {0})
