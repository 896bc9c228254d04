"""Command-line entry point: ``morphovox <subcommand> [options]``.

Exit status is 0 on success, 1 for invalid input (bad flags, config,
genome or structure) and 2 for runtime failures (I/O, diverged runs).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import afpo
from .config import RunConfig, parse_config, write_manifest
from .cppn import CppnGenome, Shape, express_controller, express_shape, random_genome
from .errors import MorphovoxError, SimulationDiverged
from .experiments import (Champion, RecoveryOption, evaluation_map, optimize_predamage_controllers,
                          read_grid_summary, run_recovery_cell, run_recovery_grid,
                          size_control_experiment, stats_columns, stats_report,
                          write_grid_summary, write_rows_csv)
from .morphology import DamageScenario, apply_damage, build_quadruped, damage_cells
from .physics import simulate, write_frames_csv, write_obj_sequence

log = logging.getLogger("morphovox")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(MorphovoxError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = _parse_value(value)
    flag_keys = {"seed": "master_seed", "out": "output_dir", "threads": "threads",
                 "seeds": "seeds", "population": "population", "dt": "sim.dt",
                 "generations": "generations.pre", "post_generations": "generations.post",
                 "stride": "frame_stride"}
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = value
    return out


def _manifest_near(*paths) -> Optional[Path]:
    """A manifest.json in (or beside) one of ``paths``, if any."""
    for p in paths:
        if not p:
            continue
        p = Path(p)
        for d in (p, p.parent) if p.is_dir() else (p.parent,):
            if (d / "manifest.json").exists():
                return d / "manifest.json"
    return None


def _config(args) -> RunConfig:
    path = getattr(args, "config", None)
    if path is None and getattr(args, "profile", None) is None:
        # results directories describe themselves
        summary = args.summary if args.command == "stats" else None
        path = _manifest_near(summary, getattr(args, "genome", None))
    return parse_config(path, getattr(args, "profile", None), _overrides(args))


def _emit(doc, path: Optional[str] = None) -> None:
    text = json.dumps(doc, indent=2)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    print(text)


def _structure_doc(structure, **extra) -> dict:
    doc = {"n_voxels": len(structure), **extra}
    doc.update(structure.to_dict())
    return doc


def _dump_structure(structure, args, **extra) -> None:
    if args.format == "text":
        sys.stdout.write(structure.text_grid())
    else:
        print(json.dumps(_structure_doc(structure, **extra)))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "structure.json").write_text(json.dumps(_structure_doc(structure, **extra), indent=1))
        (out / "structure.txt").write_text(structure.text_grid())


def cmd_build_robot(args) -> int:
    cfg = _config(args)
    _dump_structure(build_quadruped(cfg.body), args)
    return EXIT_OK


def cmd_damage(args) -> int:
    cfg = _config(args)
    intact = build_quadruped(cfg.body)
    scenario = DamageScenario.parse(args.scenario)
    damaged, _, _ = apply_damage(intact, scenario=scenario, spec=cfg.body)
    _dump_structure(damaged, args, scenario=scenario.value,
                    removed=len(damage_cells(scenario, cfg.body)))
    return EXIT_OK


def _load_genomes(path) -> list:
    """Champion genomes from a champions file, AFPO checkpoint or bare genome."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict) and "champions" in doc:
        return [(c["lineage"], CppnGenome.from_dict(c["genome"]), c["displacement"])
                for c in doc["champions"]]
    if isinstance(doc, dict) and "members" in doc:
        pop, _, _ = afpo.load_checkpoint(path)
        best = pop.best()
        return [(1, best.genome, best.fitness)]
    return [(1, CppnGenome.from_dict(doc), None)]


def _pick(genomes, lineage: Optional[int]):
    if lineage is None:
        return genomes[0]
    for entry in genomes:
        if entry[0] == lineage:
            return entry
    raise UsageError(f"lineage {lineage} not found")


def _trajectory(cfg: RunConfig, args):
    intact = build_quadruped(cfg.body)
    ctrl_genome = None
    if args.genome:
        ctrl_genome = _pick(_load_genomes(args.genome), args.lineage)[1]
    elif args.random_controller is not None:
        ctrl_genome = random_genome("controller", np.random.default_rng(args.random_controller))
    controller = None
    if ctrl_genome is not None:
        controller = express_controller(ctrl_genome, intact, cfg.sim.actuation_amplitude,
                                        cfg.sim.actuation_frequency)
    structure, shape, controller = apply_damage(intact, Shape.nominal(intact), controller,
                                                args.scenario, cfg.body)
    if args.shape_genome:
        shape = express_shape(_pick(_load_genomes(args.shape_genome), None)[1], structure)
    stride = cfg.frame_stride or None
    if args.frames_csv or getattr(args, "obj_dir", None):
        stride = stride or max(1, int(round(1.0 / (30 * cfg.sim.dt))))
    return structure, simulate(structure, shape, controller, cfg.sim, frame_stride=stride)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    _, summary = _trajectory(cfg, args)
    if summary.frames is not None:
        if args.frames_csv:
            write_frames_csv(args.frames_csv, summary.frames)
        if args.obj_dir:
            write_obj_sequence(args.obj_dir, summary.frames)
    _emit(summary.to_dict(), args.summary)
    return EXIT_OK


def cmd_export_trajectory(args) -> int:
    cfg = _config(args)
    if not args.genome:
        raise UsageError("export-trajectory needs --genome (champions file or checkpoint)")
    _, summary = _trajectory(cfg, args)
    files = write_obj_sequence(args.obj_dir, summary.frames)
    if args.frames_csv:
        write_frames_csv(args.frames_csv, summary.frames)
    _emit({**summary.to_dict(), "obj_files": len(files), "obj_dir": str(args.obj_dir)})
    return EXIT_OK


def _write_champions(path: Path, champions) -> None:
    doc = {"champions": [{"lineage": c.lineage, "displacement": c.displacement,
                          "genome": c.genome.to_dict()} for c in champions]}
    path.write_text(json.dumps(doc, indent=1))


def _read_champions(path) -> list:
    return [Champion(lin, g, float(d)) for lin, g, d in _load_genomes(path)]


def cmd_evolve(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    write_manifest(cfg, out, {"command": "evolve"})
    with evaluation_map(cfg.n_threads) as map_fn:
        champions = optimize_predamage_controllers(
            cfg.seeds, cfg.generations_pre, cfg.sim, cfg.body, cfg.population,
            cfg.master_seed, out, map_fn)
    _write_champions(out / "champions.json", champions)
    _emit({"champions": [{"lineage": c.lineage, "displacement_cm": c.displacement}
                         for c in champions], "output_dir": str(out)})
    return EXIT_OK


def _champions_for(cfg: RunConfig, args, out: Path, map_fn) -> list:
    if getattr(args, "champions", None):
        return _read_champions(args.champions)
    champions = optimize_predamage_controllers(cfg.seeds, cfg.generations_pre, cfg.sim,
                                               cfg.body, cfg.population, cfg.master_seed,
                                               out, map_fn)
    _write_champions(out / "champions.json", champions)
    return champions


def cmd_recover(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    write_manifest(cfg, out, {"command": "recover", "scenario": args.scenario,
                              "option": args.option, "lineage": args.lineage})
    champ = _pick([(c.lineage, c) for c in _read_champions(args.champions)], args.lineage)[1]
    scenario = DamageScenario.parse(args.scenario)
    option = RecoveryOption.parse(args.option)
    with evaluation_map(cfg.n_threads) as map_fn:
        rec = run_recovery_cell(champ, scenario, option, cfg.generations_post, cfg.sim,
                                cfg.body, cfg.population, cfg.master_seed, map_fn,
                                out / "cells" / f"{scenario.value}__{option.value}__{champ.lineage}.csv")
    write_grid_summary(out / "grid_summary.csv", [rec])
    _emit({"scenario": scenario.value, "option": option.value, "lineage": champ.lineage,
           "predamage_cm": rec.predamage_displacement, "best_postdamage_cm": rec.best_postdamage,
           "relative_performance": rec.relative_performance,
           "damaged_baseline_cm": rec.damaged_baseline})
    return EXIT_OK


def _write_stats(cfg: RunConfig, records, path: Path) -> list:
    rows = stats_report(records, resamples=cfg.bootstrap_resamples, seed=cfg.master_seed)
    write_rows_csv(path, rows, stats_columns())
    return rows


def cmd_grid(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    write_manifest(cfg, out, {"command": "grid"})
    failures = []
    with evaluation_map(cfg.n_threads) as map_fn:
        champions = _champions_for(cfg, args, out, map_fn)
        records = run_recovery_grid(champions, cfg.scenarios, cfg.options, cfg.generations_post,
                                    cfg.sim, cfg.body, cfg.population, cfg.master_seed, out,
                                    map_fn, failures)
    write_grid_summary(out / "grid_summary.csv", records)
    if failures:
        (out / "failures.json").write_text(json.dumps(failures, indent=1))
    rows = _write_stats(cfg, records, out / "stats_report.csv") if records else []
    _emit({"records": len(records), "failures": len(failures), "scenarios": len(rows),
           "output_dir": str(out)})
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = _config(args)
    path = Path(args.summary)
    if path.is_dir():
        path = path / "grid_summary.csv"
    if not path.exists():
        raise UsageError(f"summary file {path} does not exist")
    records = read_grid_summary(path)
    if not records:
        raise UsageError(f"{path}: no records")
    report = Path(args.report) if args.report else path.with_name("stats_report.csv")
    rows = _write_stats(cfg, records, report)
    _emit({"report": str(report), "rows": rows})
    return EXIT_OK


def cmd_size_control(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    write_manifest(cfg, out, {"command": "size-control"})
    with evaluation_map(cfg.n_threads) as map_fn:
        rep = size_control_experiment(cfg.sim, cfg.body, cfg.size_factor, cfg.seeds,
                                      cfg.generations_pre, cfg.population, cfg.master_seed,
                                      map_fn=map_fn)
    write_rows_csv(out / "size_control.csv", rep.rows(), ["group", "lineage", "displacement_cm"])
    _emit({"volume_ratio": rep.volume_ratio, "amplitude_original_cm": rep.amplitude_original,
           "amplitude_enlarged_cm": rep.amplitude_enlarged})
    return EXIT_OK


def _common(p: argparse.ArgumentParser, out: bool = True) -> None:
    p.add_argument("--profile", choices=("paper", "desk"), help="parameter profile")
    p.add_argument("--config", help="TOML config file or JSON manifest")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. sim.dt=0.0002 (repeatable)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="evaluation worker processes")
    p.add_argument("--dt", type=float, help="integration step (s)")
    if out:
        p.add_argument("--out", help="output directory")


def _sim_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--genome", help="controller genome, champions file or checkpoint")
    p.add_argument("--lineage", type=int, help="lineage to take from a champions file")
    p.add_argument("--random-controller", type=int, metavar="SEED",
                   help="use a random controller genome from this seed")
    p.add_argument("--shape-genome", help="shape genome file")
    p.add_argument("--scenario", default="none", help="damage applied before simulating")
    p.add_argument("--stride", type=int, help="sample a frame every this many steps")
    p.add_argument("--frames-csv", help="write sampled particle positions here")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="morphovox", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-robot", help="dump the quadruped structure")
    _common(p)
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.set_defaults(func=cmd_build_robot)

    p = sub.add_parser("damage", help="dump a damaged quadruped")
    _common(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.set_defaults(func=cmd_damage)

    p = sub.add_parser("simulate", help="evaluate one controller")
    _common(p, out=False)
    _sim_args(p)
    p.add_argument("--obj-dir", help="write an OBJ sequence here")
    p.add_argument("--summary", help="also write the summary JSON here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evolve", help="predamage controller optimization")
    _common(p)
    p.add_argument("--seeds", type=int, help="number of lineages")
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("recover", help="one damage/recovery cell")
    _common(p)
    p.add_argument("--champions", required=True, help="champions.json or checkpoint")
    p.add_argument("--lineage", type=int)
    p.add_argument("--scenario", required=True)
    p.add_argument("--option", required=True, choices=[o.value for o in RecoveryOption])
    p.add_argument("--population", type=int)
    p.add_argument("--post-generations", type=int)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("grid", help="full damage x option x lineage grid")
    _common(p)
    p.add_argument("--champions", help="reuse predamage champions instead of evolving")
    p.add_argument("--seeds", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--post-generations", type=int)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("stats", help="CIs and rank-sum tests from a grid summary")
    _common(p, out=False)
    p.add_argument("--summary", required=True, help="grid_summary.csv or its directory")
    p.add_argument("--report", help="output CSV (default: next to the summary)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("export-trajectory", help="replay a champion to an OBJ sequence")
    _common(p, out=False)
    _sim_args(p)
    p.add_argument("--obj-dir", required=True)
    p.set_defaults(func=cmd_export_trajectory)

    p = sub.add_parser("size-control", help="isometric enlargement comparison")
    _common(p)
    p.add_argument("--seeds", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.set_defaults(func=cmd_size_control)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        return args.func(args)
    except SimulationDiverged as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except (MorphovoxError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - last-resort diagnostic
        log.error("unexpected failure: %r", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
