"""Genetic-programming search for surrogate losses that maximise R''.

One generation: evaluate every tree, update the hall of fame, hold
``population_size`` tournaments, pair the winners for one-point crossover,
then apply subtree mutation independently to each child. There is no
elitism; the hall of fame keeps the best tree ever evaluated.

Fitness of a tree is the attack's R'' on a fixed slice of the data, or
exactly 0 if the tree is numerically infeasible on a small probe batch.
"""
import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import expr
from .attack import AttackSpec
from .errors import AdvLossError, ConfigError
from .expr import MAX_DEPTH, iter_paths, random_tree, replace_at
from .losses import SurrogateLoss
from .numerics import quiet
from .riskeval import approx_risk

log = logging.getLogger(__name__)

LOG_FIELDS = ("generation", "best_fitness", "mean_fitness", "invalid_count", "best_expression")


@dataclass(frozen=True)
class SearchConfig:
    generations: int = 50
    max_depth: int = 25
    population_size: int = 100
    tournament_size: int = 3
    crossover_rate: float = 0.5
    mutation_rate: float = 0.3
    fitness_samples: int = 1000
    attack: AttackSpec = field(default_factory=AttackSpec)
    seed: int = 0
    init_min_depth: int = 2
    init_max_depth: int = 6
    mutation_depth: int = 4
    probe_size: int = 8

    def __post_init__(self):
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if not 1 <= self.max_depth <= MAX_DEPTH:
            raise ConfigError(f"max_depth must be in [1, {MAX_DEPTH}]")
        if self.population_size < 1 or self.tournament_size < 1 or self.fitness_samples < 1:
            raise ConfigError("population_size, tournament_size and fitness_samples must be >= 1")
        if self.tournament_size > self.population_size:
            raise ConfigError("tournament_size cannot exceed population_size")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 1 <= self.init_min_depth <= self.init_max_depth <= self.max_depth:
            raise ConfigError("need 1 <= init_min_depth <= init_max_depth <= max_depth")

    def header(self):
        """Flat key/value view written at the top of the search log."""
        out = {}
        for f in fields(self):
            if f.name == "attack":
                a = self.attack
                out.update(norm=a.norm, epsilon=a.epsilon, steps=a.steps, step_size=a.alpha,
                           random_start=a.random_start)
            else:
                out[f.name] = getattr(self, f.name)
        return out


@dataclass
class SearchState:
    generation: int
    population: list
    fitness: np.ndarray
    valid: np.ndarray
    hall_of_fame: tuple = None  # (tree, fitness)


@dataclass
class SearchResult:
    best_tree: object
    best_fitness: float
    log: list
    hof_history: list
    lineage: dict

    @property
    def best_loss(self):
        return SurrogateLoss("searched", tree=self.best_tree)

    @property
    def best_expression(self):
        return expr.to_text(self.best_tree)


# --------------------------------------------------------------------------
# genetic operators

def tournament_indices(fitness, k, tournament_size, rng):
    """Winner indices of ``k`` tournaments; a tie goes to the contender drawn first."""
    fitness = np.asarray(fitness)
    draws = rng.integers(0, len(fitness), size=(k, tournament_size))
    # argmax returns the first maximum, i.e. the earliest draw among equals
    return draws[np.arange(k), np.argmax(fitness[draws], axis=1)]


def tournament_select(population, fitness, k, tournament_size, rng):
    """``k`` tournament winners, drawn with replacement."""
    return [population[i] for i in tournament_indices(fitness, k, tournament_size, rng)]


def crossover(a, b, rng, max_depth=MAX_DEPTH):
    """Swap one uniformly chosen subtree of each parent.

    A child deeper than ``max_depth`` is replaced by its own parent.
    """
    paths_a = [p for p, _ in iter_paths(a)]
    paths_b = [p for p, _ in iter_paths(b)]
    pa = paths_a[rng.integers(len(paths_a))]
    pb = paths_b[rng.integers(len(paths_b))]
    sa, sb = expr.subtree_at(a, pa), expr.subtree_at(b, pb)
    c1 = replace_at(a, pa, sb)
    c2 = replace_at(b, pb, sa)
    return (c1 if c1.depth <= max_depth else a), (c2 if c2.depth <= max_depth else b)


def mutate(tree, rng, max_depth=MAX_DEPTH, mutation_depth=4):
    """Replace one uniformly chosen subtree with a fresh ``grow`` tree."""
    paths = [p for p, _ in iter_paths(tree)]
    path = paths[rng.integers(len(paths))]
    fresh = random_tree(rng, 1, mutation_depth, "grow")
    child = replace_at(tree, path, fresh)
    return child if child.depth <= max_depth else tree


def ramped_half_and_half(rng, n, min_depth=2, max_depth=6):
    """Depths cycle through [min_depth, max_depth]; methods alternate per cycle."""
    n_depths = max_depth - min_depth + 1
    pop = []
    for i in range(n):
        d = min_depth + i % n_depths
        method = "full" if (i // n_depths) % 2 == 0 else "grow"
        pop.append(random_tree(rng, min(min_depth, d), d, method))
    return pop


# --------------------------------------------------------------------------
# fitness

def make_probe(rng, size, num_classes):
    p = rng.uniform(-10.0, 10.0, size=(size, num_classes))
    labels = rng.integers(0, num_classes, size=size)
    return expr.make_context(p, labels)


def is_feasible(tree, probe):
    """False when the tree's loss or gradient on ``probe`` is not finite."""
    try:
        with quiet():
            value, grad = expr.value_and_grad(tree, probe)
    except AdvLossError:
        return False
    return bool(np.isfinite(value) and np.all(np.isfinite(grad)))


def evaluate(tree, model, data_slice, spec, probe):
    """Return ``(fitness, valid)``; infeasible trees score exactly 0."""
    if not is_feasible(tree, probe):
        return 0.0, False
    report = approx_risk(model, SurrogateLoss("candidate", tree=tree), data_slice, spec)
    return float(report.r_double_prime), True


def fitness(tree, model, data_slice, spec, probe):
    return evaluate(tree, model, data_slice, spec, probe)[0]


_WORKER = {}


def _worker_init(model, data_slice, spec, probe):
    _WORKER.update(model=model, data=data_slice, spec=spec, probe=probe)


def _worker_eval(tree):
    w = _WORKER
    return evaluate(tree, w["model"], w["data"], w["spec"], w["probe"])


# --------------------------------------------------------------------------
# driver

def _streams(seed):
    ss = np.random.SeedSequence(seed)
    breed, slice_, probe, attack = ss.spawn(4)
    attack_seed = int(attack.generate_state(1)[0])
    lineage = {
        "master_seed": seed,
        "breed_spawn_key": breed.spawn_key,
        "slice_spawn_key": slice_.spawn_key,
        "probe_spawn_key": probe.spawn_key,
        "attack_seed": attack_seed,
    }
    return (np.random.default_rng(breed), np.random.default_rng(slice_),
            np.random.default_rng(probe), attack_seed, lineage)


def fitness_slice(dataset, n, rng):
    if n >= len(dataset):
        return dataset
    return dataset.subset(np.sort(rng.choice(len(dataset), size=n, replace=False)))


def run_search(config, model, dataset, workers=1, callback=None):
    """Evolve surrogate losses; returns a :class:`SearchResult`.

    ``callback(state)`` is called after each generation is evaluated.
    """
    rng, slice_rng, probe_rng, attack_seed, lineage = _streams(config.seed)
    data = fitness_slice(dataset, config.fitness_samples, slice_rng)
    spec = config.attack.replace(seed=attack_seed)
    probe = make_probe(probe_rng, config.probe_size, dataset.num_classes)
    cache = {}
    pool = None
    if workers > 1:
        pool = ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                   initargs=(model, data, spec, probe))

    def evaluate_all(population):
        texts = [expr.to_text(t) for t in population]
        todo = {}
        for text, tree in zip(texts, population):
            if text not in cache and text not in todo:
                todo[text] = tree
        if pool is not None and todo:
            results = pool.map(_worker_eval, list(todo.values()), chunksize=max(1, len(todo) // (4 * workers)))
        else:
            results = (evaluate(t, model, data, spec, probe) for t in todo.values())
        for text, res in zip(todo, results):
            cache[text] = res
        fit = np.array([cache[t][0] for t in texts])
        valid = np.array([cache[t][1] for t in texts])
        return fit, valid

    log_rows, hof_history = [], []
    hof = None

    def record(gen, population, fit, valid):
        nonlocal hof
        i = int(np.argmax(fit))
        if hof is None or fit[i] > hof[1]:
            hof = (population[i], float(fit[i]))
        hof_history.append(hof[1])
        row = {
            "generation": gen,
            "best_fitness": float(fit[i]),
            "mean_fitness": float(np.mean(fit)),
            "invalid_count": int(np.sum(~valid)),
            "best_expression": expr.to_text(population[i]),
        }
        log_rows.append(row)
        log.info("gen %d best %.6f mean %.6f invalid %d hof %.6f", gen, row["best_fitness"],
                 row["mean_fitness"], row["invalid_count"], hof[1])
        if callback is not None:
            callback(SearchState(gen, list(population), fit, valid, hof))

    try:
        population = ramped_half_and_half(rng, config.population_size,
                                          config.init_min_depth, config.init_max_depth)
        fit, valid = evaluate_all(population)
        record(0, population, fit, valid)
        for gen in range(1, config.generations + 1):
            offspring = tournament_select(population, fit, config.population_size,
                                          config.tournament_size, rng)
            for i in range(1, len(offspring), 2):
                if rng.random() < config.crossover_rate:
                    offspring[i - 1], offspring[i] = crossover(offspring[i - 1], offspring[i], rng,
                                                               config.max_depth)
            for i in range(len(offspring)):
                if rng.random() < config.mutation_rate:
                    offspring[i] = mutate(offspring[i], rng, config.max_depth, config.mutation_depth)
            population = offspring
            fit, valid = evaluate_all(population)
            record(gen, population, fit, valid)
    finally:
        if pool is not None:
            pool.shutdown()
    return SearchResult(hof[0], hof[1], log_rows, hof_history, lineage)


# --------------------------------------------------------------------------
# log files

def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_search_log(config, rows, path):
    with open(path, "w", newline="") as fh:
        for key, value in config.header().items():
            fh.write(f"# {key}={_fmt(value)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in LOG_FIELDS])


def read_search_log(path):
    """Return ``(header dict of strings, list of typed rows)``."""
    header, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                key, _, value = line[2:].rstrip("\n").partition("=")
                header[key] = value
            else:
                lines.append(line)
    rows = []
    for r in csv.DictReader(lines):
        rows.append({
            "generation": int(r["generation"]),
            "best_fitness": float(r["best_fitness"]),
            "mean_fitness": float(r["mean_fitness"]),
            "invalid_count": int(r["invalid_count"]),
            "best_expression": r["best_expression"],
        })
    return header, rows
