"""NSGA-II search over multiplier slot sequences, and the permutation study.

Genomes are explicit 198-slot sequences over an allowed set of config types.
Objectives are minimised.  Fitness values are cached by genome multiset
(slot order ignored) unless ``order_free=False``.
"""
from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import booth, hardware
from .cnn import N_SLOTS, AssignmentSequence

# accuracy ranking of the uniform approximate configs, best first
RANKING = ("PMCSI", "NMSI", "NMCSI", "NMNI", "PMSI", "PMCI", "PMNI", "NMCI")

Objectives = tuple[float, ...]
Fitness = Callable[[AssignmentSequence], Sequence[float]]


class FitnessError(RuntimeError):
    pass


def allowed_types(k: int) -> tuple[str, ...]:
    if not 1 <= k <= len(RANKING):
        raise ValueError(f"K must be in 1..{len(RANKING)}, got {k}")
    return RANKING[:k]


@dataclass(frozen=True)
class OptimizerParams:
    k: int = 3
    population: int = 50
    generations: int = 40
    crossover_rate: float = 0.9
    mutation_rate: float = 2 / N_SLOTS
    seed: int = 0
    eval_subset: int = 500
    allowed: tuple[str, ...] | None = None  # overrides the top-K set (length 1 allowed)
    order_free: bool = True  # cache fitness by multiset
    workers: int = 1

    def __post_init__(self):
        if self.allowed is None:
            if not 2 <= self.k <= len(RANKING):
                raise ValueError(f"K must be in 2..{len(RANKING)}, got {self.k}")
        else:
            names = tuple(booth.get_config(c).name for c in self.allowed)
            if not names or len(set(names)) != len(names):
                raise ValueError("allowed set must be non-empty and free of duplicates")
            object.__setattr__(self, "allowed", names)
        if self.population < 2:
            raise ValueError("population must be at least 2")
        if self.generations < 0:
            raise ValueError("generations must be non-negative")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.eval_subset < 1 or self.workers < 1:
            raise ValueError("eval_subset and workers must be positive")

    @property
    def types(self) -> tuple[str, ...]:
        return self.allowed if self.allowed is not None else allowed_types(self.k)


@dataclass
class Individual:
    genome: tuple[str, ...]
    objectives: Objectives
    rank: int = -1
    crowding: float = 0.0

    @property
    def sequence(self) -> AssignmentSequence:
        return AssignmentSequence(self.genome)

    def to_dict(self, names: Sequence[str] = ("area", "pdp", "accuracy_loss")) -> dict:
        d = {"slots": list(self.genome)}
        d.update({n: v for n, v in zip(names, self.objectives)})
        return d


@dataclass
class ParetoFront:
    members: list[Individual]
    types: tuple[str, ...]
    n_evaluations: int
    history: list[Objectives] = field(default_factory=list)  # best value per objective, per generation


# --------------------------------------------------------------------------
# sorting and crowding


def dominates(p: Sequence[float], q: Sequence[float]) -> bool:
    return all(a <= b for a, b in zip(p, q)) and any(a < b for a, b in zip(p, q))


def fast_nondominated_sort(objectives: Sequence[Sequence[float]]) -> list[list[int]]:
    """Fronts as ascending index lists; front 0 is the non-dominated set."""
    n = len(objectives)
    dominated_by = [[] for _ in range(n)]
    count = [0] * n
    for p in range(n):
        for q in range(p + 1, n):
            if dominates(objectives[p], objectives[q]):
                dominated_by[p].append(q)
                count[q] += 1
            elif dominates(objectives[q], objectives[p]):
                dominated_by[q].append(p)
                count[p] += 1
    fronts = []
    current = [i for i in range(n) if count[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for p in current:
            for q in dominated_by[p]:
                count[q] -= 1
                if count[q] == 0:
                    nxt.append(q)
        current = sorted(nxt)
    return fronts


def crowding_distance(objectives: Sequence[Sequence[float]]) -> list[float]:
    """Crowding distance of each point in one front.

    Per objective, points at the extreme values get infinity and the others
    add ``(next larger value - next smaller value) / range``.  Neighbours are
    taken over distinct values, so tied points score alike and the result
    does not depend on input order; an objective with zero range adds
    nothing.
    """
    n = len(objectives)
    if n == 0:
        raise ValueError("empty front")
    dist = [0.0] * n
    for m in range(len(objectives[0])):
        vals = [float(o[m]) for o in objectives]
        uniq = sorted(set(vals))
        lo, hi = uniq[0], uniq[-1]
        if hi == lo:
            continue
        pos = {v: i for i, v in enumerate(uniq)}
        for i, v in enumerate(vals):
            j = pos[v]
            if j == 0 or j == len(uniq) - 1:
                dist[i] = math.inf
            else:
                dist[i] += (uniq[j + 1] - uniq[j - 1]) / (hi - lo)
    return dist


def _assign(pop: list[Individual]) -> list[list[int]]:
    fronts = fast_nondominated_sort([ind.objectives for ind in pop])
    for r, front in enumerate(fronts):
        cd = crowding_distance([pop[i].objectives for i in front])
        for i, d in zip(front, cd):
            pop[i].rank = r
            pop[i].crowding = d
    return fronts


# --------------------------------------------------------------------------
# evolution


class _Evaluator:
    def __init__(self, fitness: Fitness, types: tuple[str, ...], order_free: bool, workers: int):
        self.fitness = fitness
        self.types = types
        self.order_free = order_free
        self.workers = workers
        self.cache: dict[tuple, Objectives] = {}
        self.n_evaluations = 0

    def key(self, genome: np.ndarray) -> tuple:
        if self.order_free:
            return tuple(np.bincount(genome, minlength=len(self.types)).tolist())
        return tuple(genome.tolist())

    def names(self, genome: np.ndarray) -> tuple[str, ...]:
        return tuple(self.types[g] for g in genome)

    def _call(self, genome: np.ndarray) -> Objectives:
        names = self.names(genome)
        obj = tuple(float(v) for v in self.fitness(AssignmentSequence(names)))
        if not obj or not all(math.isfinite(v) for v in obj):
            counts = dict(zip(self.types, np.bincount(genome, minlength=len(self.types)).tolist()))
            raise FitnessError(f"fitness returned {obj} for genome with type counts {counts}")
        return obj

    def __call__(self, genomes: list[np.ndarray]) -> list[Individual]:
        todo: dict[tuple, np.ndarray] = {}
        for g in genomes:
            k = self.key(g)
            if k not in self.cache and k not in todo:
                todo[k] = g  # first genome seen represents its multiset
        if todo:
            if self.workers > 1:
                from concurrent.futures import ThreadPoolExecutor

                with ThreadPoolExecutor(self.workers) as pool:
                    results = list(pool.map(self._call, todo.values()))
            else:
                results = [self._call(g) for g in todo.values()]
            self.cache.update(zip(todo.keys(), results))
            self.n_evaluations += len(todo)
        return [Individual(self.names(g), self.cache[self.key(g)]) for g in genomes]


def _better(a: Individual, b: Individual) -> bool:
    return (a.rank, -a.crowding) < (b.rank, -b.crowding)


def _tournament(pop: list[Individual], rng: np.random.Generator) -> int:
    i, j = rng.integers(0, len(pop), size=2)
    if _better(pop[j], pop[i]) or (not _better(pop[i], pop[j]) and j < i):
        return int(j)
    return int(i)


def _mutate(g: np.ndarray, n_types: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    hit = rng.random(g.size) < rate
    if n_types > 1 and hit.any():
        # move to a different allowed type
        g = g.copy()
        g[hit] = (g[hit] + rng.integers(1, n_types, size=int(hit.sum()))) % n_types
    return g


def _initial_genome(n_types: int, rng: np.random.Generator) -> np.ndarray:
    # each genome draws its own type mixture from a flat Dirichlet, so the
    # first population spans all compositions instead of clustering at 1/K
    mix = rng.dirichlet(np.ones(n_types))
    return rng.choice(n_types, size=N_SLOTS, p=mix)


def _select(pop: list[Individual], genomes: list[np.ndarray], size: int):
    fronts = _assign(pop)
    chosen: list[int] = []
    for front in fronts:
        if len(chosen) + len(front) <= size:
            chosen.extend(front)
        else:
            rest = sorted(front, key=lambda i: (-pop[i].crowding, i))
            chosen.extend(rest[: size - len(chosen)])
            break
    chosen.sort()
    new_pop = [pop[i] for i in chosen]
    _assign(new_pop)
    return new_pop, [genomes[i] for i in chosen]


def evolve(params: OptimizerParams, fitness: Fitness) -> ParetoFront:
    """Standard NSGA-II with (mu + lambda) elitist selection.

    Seed-reproducible; results do not depend on ``params.workers``.
    """
    types = params.types
    n_types = len(types)
    rng = np.random.default_rng(params.seed)
    ev = _Evaluator(fitness, types, params.order_free, params.workers)
    size = params.population

    genomes = [_initial_genome(n_types, rng) for _ in range(size)]
    pop = ev(genomes)
    _assign(pop)
    history = [tuple(min(v) for v in zip(*(ind.objectives for ind in pop)))]

    for _ in range(params.generations):
        children: list[np.ndarray] = []
        while len(children) < size:
            g1 = genomes[_tournament(pop, rng)]
            g2 = genomes[_tournament(pop, rng)]
            if rng.random() < params.crossover_rate:
                take = rng.random(N_SLOTS) < 0.5
                c1, c2 = np.where(take, g1, g2), np.where(take, g2, g1)
            else:
                c1, c2 = g1.copy(), g2.copy()
            children.append(_mutate(c1, n_types, params.mutation_rate, rng))
            children.append(_mutate(c2, n_types, params.mutation_rate, rng))
        children = children[:size]
        pop, genomes = _select(pop + ev(children), genomes + children, size)
        history.append(tuple(min(v) for v in zip(*(ind.objectives for ind in pop))))

    front, seen = [], set()
    for ind in pop:
        if ind.rank == 0 and ind.genome not in seen:
            seen.add(ind.genome)
            front.append(ind)
    return ParetoFront(front, types, ev.n_evaluations, history)


# --------------------------------------------------------------------------
# fitness functions and candidate choice


def hardware_fitness(table: hardware.CostTable | None = None, area_mode: str = hardware.AREA_DISTINCT) -> Fitness:
    """(area, pdp) of a sequence: the hardware objectives alone."""
    table = table or hardware.default_table()

    def fit(seq: AssignmentSequence) -> tuple[float, float]:
        pdp, area = table.aggregate_cost(seq, area_mode)
        return area, pdp

    return fit


def full_fitness(
    accuracy: Callable[[AssignmentSequence], float],
    baseline_accuracy: float,
    table: hardware.CostTable | None = None,
    area_mode: str = hardware.AREA_DISTINCT,
) -> Fitness:
    """(area, pdp, accuracy loss in points against ``baseline_accuracy``)."""
    hw = hardware_fitness(table, area_mode)

    def fit(seq: AssignmentSequence) -> tuple[float, float, float]:
        return (*hw(seq), baseline_accuracy - accuracy(seq))

    return fit


def exact_baseline_pdp(table: hardware.CostTable | None = None) -> float:
    table = table or hardware.default_table()
    return table.aggregate_cost(AssignmentSequence.uniform("exact"))[0]


def pick_candidate(front: Sequence[Individual], baseline_pdp: float | None = None) -> Individual:
    """Lowest accuracy loss among members cheaper than the all-exact PDP.

    Objectives are read as (area, pdp, accuracy_loss).  Ties go to lower
    PDP, then lower area.  If no member beats the baseline the whole front
    is considered.
    """
    if not front:
        raise ValueError("empty front")
    if baseline_pdp is None:
        baseline_pdp = exact_baseline_pdp()
    pool = [ind for ind in front if ind.objectives[1] < baseline_pdp] or list(front)
    return min(pool, key=lambda ind: (ind.objectives[2], ind.objectives[1], ind.objectives[0]))


# --------------------------------------------------------------------------
# permutation study


@dataclass
class PermutationStudy:
    source: AssignmentSequence
    variants: list[AssignmentSequence]
    accuracies: list[float]

    @property
    def max_accuracy(self) -> float:
        return max(self.accuracies)

    def rows(self) -> list[tuple[AssignmentSequence, float]]:
        return list(zip(self.variants, self.accuracies))


def permute_variants(seq: AssignmentSequence, n_variants: int, seed: int) -> list[AssignmentSequence]:
    """``n_variants`` seeded uniform shuffles (Fisher-Yates) of ``seq``."""
    if n_variants < 0:
        raise ValueError("n_variants must be non-negative")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_variants):
        slots = list(seq.slots)
        for i in range(len(slots) - 1, 0, -1):
            j = int(rng.integers(0, i + 1))
            slots[i], slots[j] = slots[j], slots[i]
        out.append(AssignmentSequence(tuple(slots)))
    return out


def permute_study(
    seq: AssignmentSequence, n_variants: int, seed: int, evaluator: Callable[[AssignmentSequence], float]
) -> PermutationStudy:
    variants = permute_variants(seq, n_variants, seed)
    return PermutationStudy(seq, variants, [float(evaluator(v)) for v in variants])
