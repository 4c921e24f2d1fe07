import numpy as np
import pytest

from advloss.attack import AttackSpec
from advloss.errors import ConfigError
from advloss.expr import MAX_DEPTH, ONE, P, Q, ZERO, Leaf, iter_paths, op, parse, random_tree, to_text
from advloss.losses import get_loss
from advloss.numerics import OpKind
from advloss.riskeval import approx_risk
from advloss.search import (SearchConfig, crossover, evaluate, fitness_slice, is_feasible,
                            make_probe, mutate, ramped_half_and_half, read_search_log, run_search,
                            tournament_indices, tournament_select, write_search_log)


def test_config_defaults_snapshot():
    c = SearchConfig()
    snapshot = (c.generations, c.max_depth, c.population_size, c.tournament_size,
                c.crossover_rate, c.mutation_rate)
    assert snapshot == (50, 25, 100, 3, 0.5, 0.3)
    assert c.fitness_samples == 1000
    assert c.attack.steps == 10 and c.attack.norm == "linf"


@pytest.mark.parametrize("bad", [
    dict(crossover_rate=1.5), dict(mutation_rate=-0.1), dict(population_size=0),
    dict(tournament_size=0), dict(population_size=2, tournament_size=3), dict(max_depth=26),
    dict(fitness_samples=0), dict(generations=-1),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SearchConfig(**bad)


class FixedDraws:
    def __init__(self, draws):
        self.draws = np.array(draws)

    def integers(self, low, high, size):
        return self.draws.reshape(size)


def test_tournament_full_set_picks_best(rng):
    pop = ["a", "b", "c"]
    assert tournament_select(pop, [0.2, 0.5, 0.9], 1, 3, FixedDraws([[0, 1, 2]])) == ["c"]
    assert list(tournament_indices([0.7, 0.7, 0.1], 2, 3, FixedDraws([[1, 0, 2], [2, 0, 1]]))) == [1, 0]
    sel = tournament_select(pop, [0.2, 0.5, 0.9], 5000, 3, rng)
    assert sel.count("c") / 5000 == pytest.approx(1 - (2 / 3) ** 3, abs=0.02)


def test_tournament_size_one_is_uniform(rng):
    picks = tournament_indices(np.arange(10.0), 100000, 1, rng)
    counts = np.bincount(picks, minlength=10)
    chi2 = np.sum((counts - 10000) ** 2 / 10000)
    assert chi2 < 27.88  # 99.9% point of chi-square with 9 dof


def test_equal_fitness_is_uniform(rng):
    picks = tournament_indices(np.full(10, 0.3), 100000, 3, rng)
    counts = np.bincount(picks, minlength=10)
    assert np.sum((counts - 10000) ** 2 / 10000) < 27.88


def test_crossover_examples(rng):
    a, b = crossover(P, Q, rng)
    assert (a, b) == (Q, P)
    t = parse("(add (neg p) (exp q))")
    for _ in range(50):
        c1, c2 = crossover(t, t, rng)
        if c1 == t:
            continue
        assert c1.size + c2.size == 2 * t.size
    for _ in range(200):
        x = random_tree(rng, 1, 5, "grow")
        y = random_tree(rng, 1, 5, "grow")
        c1, c2 = crossover(x, y, rng, max_depth=MAX_DEPTH)
        assert c1.size + c2.size == x.size + y.size


def _chain(depth):
    t = P
    for _ in range(depth - 1):
        t = op(OpKind.NEG, t)
    return t


def test_depth_guard(rng):
    deep = _chain(25)
    bushy = random_tree(rng, 4, 4, "full")
    tripped = 0
    for _ in range(200):
        c1, c2 = crossover(deep, bushy, rng)
        assert c1.depth <= 25 and c2.depth <= 25
        if c1 == deep:
            tripped += 1
    assert tripped > 0
    for _ in range(200):
        m = mutate(deep, rng)
        assert m.depth <= 25
    # replacing any node of a depth-25 chain below the root with a depth>1 tree trips the guard
    assert sum(mutate(deep, rng) == deep for _ in range(300)) > 0


def test_mutate_leaf_becomes_fresh_tree():
    rng_a = np.random.default_rng(8)
    rng_b = np.random.default_rng(8)
    m = mutate(P, rng_a)
    rng_b.integers(1)  # the node choice
    assert m == random_tree(rng_b, 1, 4, "grow")


def test_mutation_sweep_depth(rng):
    t = random_tree(rng, 2, 6, "full")
    for _ in range(10000):
        t = mutate(t, rng)
        assert t.depth <= MAX_DEPTH
        for _, s in iter_paths(t):
            if isinstance(s, Leaf):
                assert s in (P, Q, ZERO, ONE)


def test_ramped_half_and_half(rng):
    pop = ramped_half_and_half(rng, 40, 2, 6)
    assert len(pop) == 40
    assert all(2 <= t.depth <= 6 for t in pop)
    assert {t.depth for t in pop[::2]} >= {2, 6}


def test_probe_feasibility():
    probe = make_probe(np.random.default_rng(0), 8, 3)
    assert probe.p.shape == (8, 3)
    assert is_feasible(parse("(log (add p (neg p)))"), probe)
    assert not is_feasible(parse("(exp (exp (exp p)))"), probe)


def test_fitness_examples(std_model, blobs_eval):
    probe = make_probe(np.random.default_rng(0), 8, 3)
    spec = AttackSpec(epsilon=0.09, seed=17)
    f, ok = evaluate(parse("(exp (exp (exp p)))"), std_model, blobs_eval, spec, probe)
    assert (f, ok) == (0.0, False)
    f, ok = evaluate(parse("(log (add p (neg p)))"), std_model, blobs_eval, spec, probe)
    assert ok and 0.0 <= f <= 1.0
    ce_tree = parse("(neg (sum (mul q (log (softmax p)))))")
    f, ok = evaluate(ce_tree, std_model, blobs_eval, spec, probe)
    assert ok
    assert f == approx_risk(std_model, get_loss("ce"), blobs_eval, spec).r_double_prime


def test_fitness_slice_fixed(blobs_train):
    a = fitness_slice(blobs_train, 100, np.random.default_rng(4))
    b = fitness_slice(blobs_train, 100, np.random.default_rng(4))
    np.testing.assert_array_equal(a.features, b.features)
    assert fitness_slice(blobs_train, 10 ** 6, np.random.default_rng(4)) is blobs_train


def small_config(**kw):
    base = dict(generations=4, population_size=12, fitness_samples=64,
                attack=AttackSpec(epsilon=0.09, steps=5), seed=3)
    base.update(kw)
    return SearchConfig(**base)


def test_generations_zero(std_model, blobs_train):
    states = []
    res = run_search(small_config(generations=0), std_model, blobs_train, callback=states.append)
    assert len(res.log) == 1 and len(states) == 1
    assert res.best_fitness == states[0].fitness.max()


def test_run_invariants(std_model, blobs_train):
    states = []
    cfg = small_config(generations=6)
    res = run_search(cfg, std_model, blobs_train, callback=states.append)
    assert [s.generation for s in states] == list(range(7))
    hof = [s.hall_of_fame[1] for s in states]
    assert hof == sorted(hof) and hof == res.hof_history
    for s in states:
        assert len(s.population) == cfg.population_size
        assert np.all((s.fitness >= 0) & (s.fitness <= 1))
        assert np.all(s.fitness[~s.valid] == 0.0)
        assert all(t.depth <= 25 for t in s.population)
    assert res.best_fitness == max(hof)
    assert res.lineage["master_seed"] == 3


def test_run_deterministic_across_workers(std_model, blobs_train):
    a = run_search(small_config(), std_model, blobs_train)
    b = run_search(small_config(), std_model, blobs_train, workers=3)
    assert a.log == b.log
    assert to_text(a.best_tree) == to_text(b.best_tree)


def test_log_round_trip(tmp_path, std_model, blobs_train):
    cfg = small_config(generations=2)
    res = run_search(cfg, std_model, blobs_train)
    path = tmp_path / "log.csv"
    write_search_log(cfg, res.log, path)
    header, rows = read_search_log(path)
    assert header["population_size"] == "12" and header["crossover_rate"] == "0.500000"
    assert [r["generation"] for r in rows] == [0, 1, 2]
    for got, want in zip(rows, res.log):
        assert got["best_expression"] == want["best_expression"]
        assert parse(got["best_expression"]) is not None
        assert got["best_fitness"] == pytest.approx(want["best_fitness"], abs=5e-7)


def test_default_header_echo(tmp_path):
    path = tmp_path / "log.csv"
    write_search_log(SearchConfig(), [], path)
    header, rows = read_search_log(path)
    assert rows == []
    assert (header["generations"], header["population_size"], header["tournament_size"],
            header["crossover_rate"], header["mutation_rate"], header["max_depth"]) == \
        ("50", "100", "3", "0.500000", "0.300000", "25")
