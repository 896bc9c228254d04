"""Predamage optimization, the damage x recovery grid and its statistics."""

from __future__ import annotations

import contextlib
import csv
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import afpo
from .cppn import CppnGenome, Shape, express_controller, express_shape
from .errors import DomainError, MorphovoxError
from .morphology import (PAPER_QUADRUPED, DamageScenario, QuadrupedSpec, apply_damage,
                         build_quadruped, isometric_scale, resting_volume)
from .physics import SimParams, instantaneous_rest_length, simulate
from .stats import bonferroni, bootstrap_ci, rank_sum_test

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("scenario", "option", "lineage", "predamage_cm", "best_postdamage_cm",
                   "relative_performance", "damaged_baseline_cm", "history_cm")


class RecoveryOption(str, Enum):
    CONTROLLER_READAPTATION = "controller_readaptation"
    SHAPESHIFTING = "shapeshifting"

    @classmethod
    def parse(cls, value) -> "RecoveryOption":
        try:
            return cls(value)
        except ValueError:
            raise DomainError(f"unknown recovery option {value!r}") from None


def derive_seed(master_seed: int, *labels) -> np.random.SeedSequence:
    """Seed sequence for a labelled sub-run, independent of scheduling."""
    words = [int(master_seed)]
    for label in labels:
        text = label.value if isinstance(label, Enum) else str(label)
        words.append(zlib.crc32(text.encode()))
    return np.random.SeedSequence(words)


class ControllerEvaluator:
    """Displacement of a controller genome on a fixed body and shape."""

    def __init__(self, structure, shape: Shape, params: SimParams):
        self.structure, self.shape, self.params = structure, shape, params

    def controller(self, genome: CppnGenome):
        return express_controller(genome, self.structure, self.params.actuation_amplitude,
                                  self.params.actuation_frequency)

    def __call__(self, genome: CppnGenome) -> float:
        return simulate(self.structure, self.shape, self.controller(genome),
                        self.params).net_displacement


class ShapeEvaluator:
    """Displacement of a shape genome driven by a frozen controller."""

    def __init__(self, structure, controller, params: SimParams):
        self.structure, self.controller, self.params = structure, controller, params

    def __call__(self, genome: CppnGenome) -> float:
        return simulate(self.structure, express_shape(genome, self.structure),
                        self.controller, self.params).net_displacement


@contextlib.contextmanager
def evaluation_map(threads: int = 1):
    """``map`` for evaluations; a process pool when ``threads`` > 1."""
    if threads <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=threads) as pool:
        yield lambda fn, items: pool.map(fn, items, chunksize=max(1, len(items) // (4 * threads)))


@dataclass
class Champion:
    lineage: int
    genome: CppnGenome
    displacement: float
    history: list = field(default_factory=list)


def optimize_predamage_controllers(n_seeds: int, generations: int,
                                   params: SimParams = SimParams(),
                                   body: QuadrupedSpec = PAPER_QUADRUPED,
                                   population: int = 50, master_seed: int = 0,
                                   out_dir=None, map_fn: Callable = map) -> list:
    """Evolve one controller lineage per seed on the intact, nominal body.

    Lineages are numbered from 1.  With ``out_dir`` each lineage writes
    ``predamage_<k>.csv`` and a ``predamage_<k>.json`` checkpoint.
    """
    if n_seeds < 1:
        raise DomainError("n_seeds must be at least 1")
    structure = build_quadruped(body)
    evaluator = ControllerEvaluator(structure, Shape.nominal(structure), params)
    champions = []
    for lineage in range(1, n_seeds + 1):
        log_path = ckpt = None
        if out_dir is not None:
            log_path = Path(out_dir) / f"predamage_{lineage}.csv"
            ckpt = Path(out_dir) / f"predamage_{lineage}.json"
        result = afpo.run(generations, evaluator, derive_seed(master_seed, "predamage", lineage),
                          population, "controller", map_fn, log_path, ckpt)
        best = result.best
        champions.append(Champion(lineage, best.genome, float(best.fitness), result.history))
    return champions


@dataclass
class RecoveryRecord:
    scenario: DamageScenario
    option: RecoveryOption
    controller_lineage: int
    predamage_displacement: float
    postdamage_history: list
    relative_performance: float
    damaged_baseline: float = float("nan")

    @property
    def best_postdamage(self) -> float:
        return self.postdamage_history[-1]

    def relative_history(self) -> list:
        return [h / self.predamage_displacement for h in self.postdamage_history]


def _relative(value: float, denominator: float) -> float:
    return value / denominator if denominator > 0 else 0.0


def run_recovery_cell(champion: Champion, scenario, option, generations: int,
                      params: SimParams = SimParams(),
                      body: QuadrupedSpec = PAPER_QUADRUPED, population: int = 50,
                      master_seed: int = 0, map_fn: Callable = map,
                      log_path=None) -> RecoveryRecord:
    """Damage the champion's body and re-optimize one parameter set.

    ``postdamage_history[g]`` is the best displacement in the recovering
    population at generation g (generation 0 is fresh random genomes).  The
    unmodified champion's displacement on the damaged body is kept as
    ``damaged_baseline``; with no generations it is the recovered value.
    """
    scenario = DamageScenario.parse(scenario)
    option = RecoveryOption.parse(option)
    intact = build_quadruped(body)
    controller = express_controller(champion.genome, intact, params.actuation_amplitude,
                                    params.actuation_frequency)
    structure, shape, controller = apply_damage(intact, Shape.nominal(intact), controller,
                                                scenario, body)
    baseline = simulate(structure, shape, controller, params).net_displacement
    if option is RecoveryOption.SHAPESHIFTING:
        evaluator, role = ShapeEvaluator(structure, controller, params), "shape"
    else:
        evaluator, role = ControllerEvaluator(structure, shape, params), "controller"
    if generations == 0:
        history = [baseline]
        best = baseline
        if log_path is not None:
            afpo.write_history_csv(log_path, [{"generation": 0, "best_fitness_cm": baseline,
                                               "mean_fitness_cm": baseline, "best_id": -1}])
    else:
        seed = derive_seed(master_seed, scenario, option, champion.lineage)
        result = afpo.run(generations, evaluator, seed, population, role, map_fn, log_path)
        history = [row["best_fitness_cm"] for row in result.history]
        best = history[-1]
    return RecoveryRecord(scenario, option, champion.lineage, champion.displacement, history,
                          _relative(best, champion.displacement), baseline)


def run_recovery_grid(champions: Sequence[Champion], scenarios: Iterable, options: Iterable,
                      generations: int, params: SimParams = SimParams(),
                      body: QuadrupedSpec = PAPER_QUADRUPED, population: int = 50,
                      master_seed: int = 0, out_dir=None, map_fn: Callable = map,
                      failures: Optional[list] = None) -> list:
    """Every (scenario, option, lineage) cell; failed cells are logged and skipped."""
    scenarios = [DamageScenario.parse(s) for s in scenarios]
    options = [RecoveryOption.parse(o) for o in options]
    if not champions or not scenarios or not options:
        raise DomainError("grid needs champions, scenarios and options")
    records = []
    for scenario in scenarios:
        for option in options:
            for champ in champions:
                log_path = None
                if out_dir is not None:
                    log_path = (Path(out_dir) / "cells"
                                / f"{scenario.value}__{option.value}__{champ.lineage}.csv")
                try:
                    records.append(run_recovery_cell(champ, scenario, option, generations,
                                                     params, body, population, master_seed,
                                                     map_fn, log_path))
                except MorphovoxError as exc:
                    log.error("cell %s/%s/%d failed: %s", scenario.value, option.value,
                              champ.lineage, exc)
                    if failures is not None:
                        failures.append((scenario.value, option.value, champ.lineage, str(exc)))
    return records


def write_grid_summary(path, records: Sequence[RecoveryRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in records:
            w.writerow([r.scenario.value, r.option.value, r.controller_lineage,
                        repr(r.predamage_displacement), repr(r.best_postdamage),
                        repr(r.relative_performance), repr(r.damaged_baseline),
                        ";".join(repr(h) for h in r.postdamage_history)])
    return path


def read_grid_summary(path) -> list:
    records = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            history = [float(v) for v in row["history_cm"].split(";") if v]
            records.append(RecoveryRecord(
                DamageScenario.parse(row["scenario"]), RecoveryOption.parse(row["option"]),
                int(row["lineage"]), float(row["predamage_cm"]), history,
                float(row["relative_performance"]), float(row["damaged_baseline_cm"]),
            ))
    return records


def stats_report(records: Sequence[RecoveryRecord], level: float = 0.99,
                 resamples: int = 5000, seed: int = 0, comparisons: Optional[int] = None) -> list:
    """Per scenario: shapeshifting vs readaptation rank-sum test plus CIs.

    The Bonferroni factor defaults to the number of scenarios present.
    """
    if not records:
        raise DomainError("no records")
    scenarios = list(dict.fromkeys(r.scenario for r in records))
    m = comparisons or len(scenarios)
    rows = []
    for scenario in scenarios:
        row = {"scenario": scenario.value}
        samples = {}
        for option in RecoveryOption:
            vals = [r.relative_performance for r in records
                    if r.scenario is scenario and r.option is option]
            samples[option] = vals
            key = option.value
            if vals:
                lo, hi = bootstrap_ci(vals, level, resamples, derive_seed(seed, scenario, option))
                row.update({f"{key}_n": len(vals), f"{key}_mean": float(np.mean(vals)),
                            f"{key}_median": float(np.median(vals)),
                            f"{key}_ci_low": lo, f"{key}_ci_high": hi})
            else:
                row.update({f"{key}_n": 0, f"{key}_mean": None, f"{key}_median": None,
                            f"{key}_ci_low": None, f"{key}_ci_high": None})
        shape = samples[RecoveryOption.SHAPESHIFTING]
        ctrl = samples[RecoveryOption.CONTROLLER_READAPTATION]
        if shape and ctrl:
            u, p = rank_sum_test(shape, ctrl)
            row.update({"U": u, "p_raw": p, "p_bonferroni": bonferroni(p, m)})
        else:
            row.update({"U": None, "p_raw": None, "p_bonferroni": None})
        rows.append(row)
    return rows


def stats_columns() -> list:
    cols = ["scenario", "U", "p_raw", "p_bonferroni"]
    for option in RecoveryOption:
        cols += [f"{option.value}_{k}" for k in ("n", "mean", "median", "ci_low", "ci_high")]
    return cols


def write_rows_csv(path, rows: Sequence[dict], columns: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow(["" if row.get(c) is None else
                        (repr(row[c]) if isinstance(row[c], float) else row[c])
                        for c in columns])
    return path


@dataclass
class SizeControlReport:
    factor: float
    amplitude_original: float
    amplitude_enlarged: float
    volume_original: float
    volume_enlarged: float
    original: list
    enlarged: list
    shapeshifting_four_legs: list

    @property
    def volume_ratio(self) -> float:
        return self.volume_enlarged / self.volume_original

    def rows(self) -> list:
        out = []
        for group, vals in (("original", self.original), ("enlarged", self.enlarged),
                            ("shapeshifting_four_legs", self.shapeshifting_four_legs)):
            out += [{"group": group, "lineage": k + 1, "displacement_cm": v}
                    for k, v in enumerate(vals)]
        return out


def oscillation_amplitude(b: float, params: SimParams) -> float:
    """Peak deviation of a voxel's rest length from ``b`` over one cycle."""
    quarter = 1.0 / (4.0 * params.actuation_frequency)
    return instantaneous_rest_length(b, 0.0, quarter, params) - b


def size_control_experiment(params: SimParams = SimParams(),
                            body: QuadrupedSpec = PAPER_QUADRUPED, factor: float = 2.0,
                            n_seeds: int = 1, generations: int = 0, population: int = 50,
                            master_seed: int = 0, original: Optional[Sequence[float]] = None,
                            shapeshifting: Optional[Sequence[float]] = None,
                            map_fn: Callable = map) -> SizeControlReport:
    """Controllers evolved on the isometrically enlarged body, next to the
    original body's predamage displacements and the four-leg shapeshifting
    results (cm).  Missing comparison groups are computed here."""
    structure = build_quadruped(body)
    nominal = Shape.nominal(structure)
    _, big = isometric_scale(structure, nominal, factor)
    evaluator = ControllerEvaluator(structure, big, params)
    enlarged = []
    for lineage in range(1, n_seeds + 1):
        res = afpo.run(generations, evaluator, derive_seed(master_seed, "enlarged", lineage),
                       population, "controller", map_fn)
        enlarged.append(float(res.best.fitness))
    champions = None
    if original is None or shapeshifting is None:
        champions = optimize_predamage_controllers(n_seeds, generations, params, body,
                                                   population, master_seed, map_fn=map_fn)
    if original is None:
        original = [c.displacement for c in champions]
    if shapeshifting is None:
        recs = run_recovery_grid(champions, [DamageScenario.FOUR_LEGS],
                                 [RecoveryOption.SHAPESHIFTING], generations, params, body,
                                 population, master_seed, map_fn=map_fn)
        shapeshifting = [r.best_postdamage for r in recs]
    mean_b = float(np.mean(list(big.rest_length.values())))
    return SizeControlReport(
        factor=factor,
        amplitude_original=oscillation_amplitude(1.0, params),
        amplitude_enlarged=oscillation_amplitude(mean_b, params),
        volume_original=resting_volume(nominal),
        volume_enlarged=resting_volume(big),
        original=list(original),
        enlarged=enlarged,
        shapeshifting_four_legs=list(shapeshifting),
    )
