"""Age-Fitness-Pareto Optimization over CPPN genomes.

Selection works on two objectives, displacement (maximized) and age
(minimized).  Fronts are stratified by dominance count: front N holds the
individuals dominated by exactly N others.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from .cppn import CppnGenome, mutate, random_genome
from .errors import DomainError

SAMPLING_EPSILON = 1e-12
HISTORY_COLUMNS = ("generation", "best_fitness_cm", "mean_fitness_cm", "best_id")


@dataclass
class Individual:
    genome: CppnGenome
    age: int = 0
    fitness: Optional[float] = None
    id: int = 0
    parent_id: Optional[int] = None

    def to_dict(self) -> dict:
        return {"id": self.id, "parent_id": self.parent_id, "age": self.age,
                "fitness": self.fitness, "genome": self.genome.to_dict()}

    @classmethod
    def from_dict(cls, data) -> "Individual":
        return cls(CppnGenome.from_dict(data["genome"]), int(data["age"]),
                   data["fitness"], int(data["id"]), data["parent_id"])


@dataclass
class Population:
    members: list
    generation: int = 0
    capacity: int = 50
    role: str = "controller"
    next_id: int = 0

    def new_id(self) -> int:
        self.next_id += 1
        return self.next_id - 1

    def best(self) -> Individual:
        # ties go to the lowest id so the choice never depends on list order
        return max(self.members, key=lambda m: (m.fitness, -m.id))

    def fitnesses(self) -> np.ndarray:
        return np.array([m.fitness for m in self.members], dtype=float)


def _require_fitness(ind: Individual) -> float:
    if ind.fitness is None:
        raise DomainError(f"individual {ind.id} has not been evaluated")
    return ind.fitness


def dominates(a: Individual, b: Individual) -> bool:
    fa, fb = _require_fitness(a), _require_fitness(b)
    return fa >= fb and a.age <= b.age and (fa > fb or a.age < b.age)


def dominance_counts(members) -> np.ndarray:
    """Number of members dominating each member."""
    f = np.array([_require_fitness(m) for m in members], dtype=float)
    a = np.array([m.age for m in members])
    ge = (f[:, None] >= f[None, :]) & (a[:, None] <= a[None, :])
    strict = (f[:, None] > f[None, :]) | (a[:, None] < a[None, :])
    return (ge & strict).sum(axis=0)


def pareto_fronts(members) -> list:
    """Members grouped by dominance count, lowest count first."""
    members = list(members)
    if not members:
        return []
    counts = dominance_counts(members)
    return [[m for m, c in zip(members, counts) if c == n] for n in np.unique(counts)]


class _SafeEvaluator:
    """Wraps an evaluator so exceptions and non-finite values score 0."""

    def __init__(self, evaluator):
        self.evaluator = evaluator

    def __call__(self, genome) -> float:
        try:
            value = float(self.evaluator(genome))
        except Exception:
            return 0.0
        return value if math.isfinite(value) and value > 0 else 0.0


def evaluate_members(members: Iterable[Individual], evaluator, cache: Optional[dict] = None,
                     map_fn: Callable = map) -> None:
    """Fill in missing fitness values, evaluating each distinct genome once."""
    cache = {} if cache is None else cache
    pending = [m for m in members if m.fitness is None]
    todo = {}
    for m in pending:
        key = m.genome.content_hash
        if key not in cache and key not in todo:
            todo[key] = m.genome
    safe = _SafeEvaluator(evaluator)
    for key, value in zip(todo, map_fn(safe, list(todo.values()))):
        cache[key] = value
    for m in pending:
        m.fitness = cache[m.genome.content_hash]


def select(pool: list, capacity: int, rng: np.random.Generator, audit: Optional[list] = None) -> list:
    """Admit whole fronts while they fit, then sample the next by fitness."""
    survivors = []
    fronts = pareto_fronts(pool)
    partial = None
    for n, front in enumerate(fronts):
        room = capacity - len(survivors)
        if room <= 0:
            break
        if len(front) <= room:
            survivors.extend(front)
            continue
        w = np.array([m.fitness for m in front], dtype=float) + SAMPLING_EPSILON
        picks = rng.choice(len(front), size=room, replace=False, p=w / w.sum())
        survivors.extend(front[k] for k in sorted(picks))
        partial = n
        break
    if audit is not None:
        kept = {m.id for m in survivors}
        audit.append({
            "pool_size": len(pool),
            "fronts": [[m.id for m in fr] for fr in fronts],
            "partial_front": partial,
            "survivors": sorted(kept),
        })
    return sorted(survivors, key=lambda m: m.id)


def evolve_step(population: Population, rng: np.random.Generator, evaluator,
                cache: Optional[dict] = None, map_fn: Callable = map,
                audit: Optional[list] = None) -> Population:
    """One generation: mutate, age, inject, evaluate, select."""
    parents = population.members
    offspring = [
        Individual(mutate(p.genome, rng), p.age, None, population.new_id(), p.id)
        for p in parents
    ]
    pool = [Individual(m.genome, m.age, m.fitness, m.id, m.parent_id) for m in parents]
    pool += offspring
    for m in pool:
        m.age += 1
    pool.append(Individual(random_genome(population.role, rng), 0, None, population.new_id()))
    evaluate_members(pool, evaluator, cache, map_fn)
    survivors = select(pool, population.capacity, rng, audit)
    return Population(survivors, population.generation + 1, population.capacity,
                      population.role, population.next_id)


def initial_population(capacity: int, role: str, rng: np.random.Generator) -> Population:
    pop = Population([], 0, capacity, role, 0)
    pop.members = [Individual(random_genome(role, rng), 0, None, pop.new_id())
                   for _ in range(capacity)]
    return pop


def history_row(population: Population) -> dict:
    best = population.best()
    return {
        "generation": population.generation,
        "best_fitness_cm": float(best.fitness),
        "mean_fitness_cm": float(population.fitnesses().mean()),
        "best_id": best.id,
    }


def write_history_csv(path, history: list) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["generation"], repr(row["best_fitness_cm"]),
                        repr(row["mean_fitness_cm"]), row["best_id"]])
    return path


def read_history_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        return [{"generation": int(r["generation"]),
                 "best_fitness_cm": float(r["best_fitness_cm"]),
                 "mean_fitness_cm": float(r["mean_fitness_cm"]),
                 "best_id": int(r["best_id"])} for r in csv.DictReader(fh)]


def save_checkpoint(path, population: Population, rng: np.random.Generator,
                    history: list = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "generation": population.generation,
        "capacity": population.capacity,
        "role": population.role,
        "next_id": population.next_id,
        "members": [m.to_dict() for m in population.members],
        "rng_state": rng.bit_generator.state,
        "history": list(history),
    }
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_checkpoint(path) -> tuple:
    """Return ``(population, rng, history)`` from a checkpoint file."""
    doc = json.loads(Path(path).read_text())
    pop = Population([Individual.from_dict(m) for m in doc["members"]], doc["generation"],
                     doc["capacity"], doc["role"], doc["next_id"])
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng_state"]
    return pop, rng, list(doc.get("history", []))


@dataclass
class RunResult:
    population: Population
    history: list
    audit: list = field(default_factory=list)

    @property
    def best(self) -> Individual:
        return self.population.best()


def run(generations: int, evaluator, seed=0, capacity: int = 50, role: str = "controller",
        map_fn: Callable = map, log_path=None, checkpoint_path=None,
        resume_from=None, keep_audit: bool = False) -> RunResult:
    """Evolve a seeded random population for ``generations`` steps.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``.  With
    ``resume_from`` the population, RNG and history come from a checkpoint
    and evolution continues up to ``generations`` in total.
    """
    if generations < 0:
        raise DomainError("generations must be non-negative")
    cache = {}
    audit = [] if keep_audit else None
    if resume_from is not None:
        pop, rng, history = load_checkpoint(resume_from)
    else:
        rng = np.random.default_rng(seed)
        pop = initial_population(capacity, role, rng)
        evaluate_members(pop.members, evaluator, cache, map_fn)
        history = [history_row(pop)]
    while pop.generation < generations:
        pop = evolve_step(pop, rng, evaluator, cache, map_fn, audit)
        history.append(history_row(pop))
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, pop, rng, history)
    if log_path is not None:
        write_history_csv(log_path, history)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, pop, rng, history)
    return RunResult(pop, history, audit or [])
