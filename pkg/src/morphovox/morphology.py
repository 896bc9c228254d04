"""Quadruped construction, amputations, isometric scaling and the
pressure-vessel design relation."""

from __future__ import annotations

import dataclasses
import json
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional

from .errors import DomainError, StructureError
from .physics import MAX_REST_LENGTH

_FACE_NEIGHBOURS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


@dataclass(frozen=True)
class VoxelStructure:
    """Occupied integer lattice sites (non-negative, face-connected)."""

    occupied: frozenset
    lattice_pitch: float = 1.0

    def __init__(self, occupied: Iterable, lattice_pitch: float = 1.0,
                 check: bool = True):
        cells = frozenset(tuple(int(c) for c in v) for v in occupied)
        object.__setattr__(self, "occupied", cells)
        object.__setattr__(self, "lattice_pitch", float(lattice_pitch))
        if check:
            if not cells:
                raise StructureError("structure is empty")
            if any(len(c) != 3 for c in cells):
                raise StructureError("voxel coordinates must be 3-tuples")
            if any(min(c) < 0 for c in cells):
                raise StructureError("voxel coordinates must be non-negative")
            if not is_connected(cells):
                raise StructureError("structure is not face-connected")

    def __len__(self) -> int:
        return len(self.occupied)

    def __iter__(self):
        return iter(sorted(self.occupied))

    def __contains__(self, item) -> bool:
        return tuple(item) in self.occupied

    @property
    def bounds(self):
        xs, ys, zs = zip(*self.occupied)
        return (min(xs), min(ys), min(zs)), (max(xs), max(ys), max(zs))

    def to_dict(self) -> dict:
        return {"occupied": [list(c) for c in sorted(self.occupied)],
                "lattice_pitch": self.lattice_pitch}

    @classmethod
    def from_dict(cls, data: Mapping) -> "VoxelStructure":
        return cls(data["occupied"], data.get("lattice_pitch", 1.0))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def text_grid(self) -> str:
        """One block per z layer (bottom first); ``#`` occupied, ``.`` empty."""
        (x0, y0, z0), (x1, y1, z1) = self.bounds
        blocks = []
        for z in range(z0, z1 + 1):
            rows = [f"z={z}"]
            for y in range(y1, y0 - 1, -1):
                rows.append("".join("#" if (x, y, z) in self.occupied else "."
                                    for x in range(x0, x1 + 1)))
            blocks.append("\n".join(rows))
        return "\n\n".join(blocks) + "\n"


def is_connected(cells) -> bool:
    cells = set(cells)
    if not cells:
        return False
    start = next(iter(cells))
    seen = {start}
    queue = deque([start])
    while queue:
        x, y, z = queue.popleft()
        for dx, dy, dz in _FACE_NEIGHBOURS:
            nb = (x + dx, y + dy, z + dz)
            if nb in cells and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(cells)


class DamageScenario(str, Enum):
    NONE = "none"
    HALF_LEG = "half_leg"
    ONE_LEG = "one_leg"
    TWO_ADJACENT_LEGS = "two_adjacent_legs"
    TWO_DIAGONAL_LEGS = "two_diagonal_legs"
    THREE_LEGS = "three_legs"
    FOUR_LEGS = "four_legs"
    QUARTER_BODY = "quarter_body"
    HALF_BODY = "half_body"
    THREE_QUARTER_BODY = "three_quarter_body"

    @classmethod
    def parse(cls, value) -> "DamageScenario":
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise DomainError(f"unknown damage scenario {value!r} (expected one of {names})")


DAMAGE_SCENARIOS = [s for s in DamageScenario if s is not DamageScenario.NONE]


@dataclass(frozen=True)
class QuadrupedSpec:
    """Torso block with a leg block hanging under each torso corner.

    The body's long axis is x; legs are indexed 0..3 as
    (x-, y-), (x+, y-), (x-, y+), (x+, y+).
    """

    torso: tuple = (6, 6, 3)
    leg: tuple = (2, 2, 2)

    def __post_init__(self):
        tx, ty, tz = self.torso
        lx, ly, lz = self.leg
        if min(self.torso) < 1 or min(self.leg) < 1:
            raise DomainError("torso and leg dimensions must be positive")
        if 2 * lx > tx or 2 * ly > ty:
            raise DomainError("legs do not fit under the torso corners")

    @property
    def n_voxels(self) -> int:
        tx, ty, tz = self.torso
        lx, ly, lz = self.leg
        return tx * ty * tz + 4 * lx * ly * lz

    def torso_cells(self) -> set:
        tx, ty, tz = self.torso
        lz = self.leg[2]
        return {(x, y, z + lz) for x in range(tx) for y in range(ty) for z in range(tz)}

    def leg_cells(self, index: int) -> set:
        tx, ty, _ = self.torso
        lx, ly, lz = self.leg
        x0 = 0 if index in (0, 2) else tx - lx
        y0 = 0 if index in (0, 1) else ty - ly
        return {(x0 + x, y0 + y, z) for x in range(lx) for y in range(ly) for z in range(lz)}


PAPER_QUADRUPED = QuadrupedSpec()
DESK_QUADRUPED = QuadrupedSpec(torso=(4, 4, 2), leg=(2, 2, 1))


def build_quadruped(spec: QuadrupedSpec = PAPER_QUADRUPED) -> VoxelStructure:
    cells = spec.torso_cells()
    for k in range(4):
        cells |= spec.leg_cells(k)
    return VoxelStructure(cells)


def _half_leg(spec: QuadrupedSpec, index: int) -> set:
    leg = spec.leg_cells(index)
    lx, ly, lz = spec.leg
    if lz >= 2:
        # lowest half of the leg's layers
        return {c for c in leg if c[2] < lz // 2}
    # single-layer legs: cut the outer half of the footprint along x
    xs = sorted({c[0] for c in leg})
    keep_inner = xs[: len(xs) // 2] if index in (1, 3) else xs[len(xs) - len(xs) // 2:]
    return {c for c in leg if c[0] not in keep_inner}


def damage_cells(scenario, spec: QuadrupedSpec = PAPER_QUADRUPED) -> set:
    """Voxels removed by ``scenario`` from the canonical quadruped."""
    scenario = DamageScenario.parse(scenario)
    tx, ty, _ = spec.torso
    legs = {
        DamageScenario.ONE_LEG: (0,),
        DamageScenario.TWO_ADJACENT_LEGS: (0, 2),
        DamageScenario.TWO_DIAGONAL_LEGS: (0, 3),
        DamageScenario.THREE_LEGS: (0, 1, 2),
        DamageScenario.FOUR_LEGS: (0, 1, 2, 3),
    }
    if scenario is DamageScenario.NONE:
        return set()
    if scenario is DamageScenario.HALF_LEG:
        return _half_leg(spec, 0)
    if scenario in legs:
        cut = set()
        for k in legs[scenario]:
            cut |= spec.leg_cells(k)
        return cut
    hx, hy = tx // 2, ty // 2
    torso = spec.torso_cells()
    if scenario is DamageScenario.QUARTER_BODY:
        return {c for c in torso if c[0] < hx and c[1] < hy} | spec.leg_cells(0)
    if scenario is DamageScenario.HALF_BODY:
        return {c for c in torso if c[1] < hy} | spec.leg_cells(0) | spec.leg_cells(1)
    # three quarters: keep the (x+, y+) quadrant and its leg
    kept = {c for c in torso if c[0] >= hx and c[1] >= hy} | spec.leg_cells(3)
    return (torso | spec.leg_cells(0) | spec.leg_cells(1) | spec.leg_cells(2)
            | spec.leg_cells(3)) - kept


def _restrict(mapping, cells):
    if mapping is None:
        return None
    for attr in ("rest_length", "phase"):
        inner = getattr(mapping, attr, None)
        if inner is not None:
            kept = {c: v for c, v in inner.items() if c in cells}
            return dataclasses.replace(mapping, **{attr: kept})
    return {c: v for c, v in mapping.items() if c in cells}


def apply_damage(structure: VoxelStructure, shape=None, controller=None,
                 scenario="none", spec: QuadrupedSpec = PAPER_QUADRUPED,
                 cells: Optional[Iterable] = None):
    """Remove the scenario's voxels (or an explicit ``cells`` set).

    Returns ``(structure, shape, controller)`` restricted to the survivors;
    ``shape``/``controller`` may be None.
    """
    cut = set(tuple(c) for c in cells) if cells is not None else damage_cells(scenario, spec)
    survivors = structure.occupied - cut
    if not survivors:
        raise StructureError("damage removes every voxel")
    if not is_connected(survivors):
        raise StructureError(f"damage {scenario!s} disconnects the structure")
    damaged = VoxelStructure(survivors, structure.lattice_pitch)
    return damaged, _restrict(shape, survivors), _restrict(controller, survivors)


def removed_fraction(scenario, spec: QuadrupedSpec = PAPER_QUADRUPED) -> float:
    return len(damage_cells(scenario, spec)) / spec.n_voxels


def isometric_scale(structure: VoxelStructure, shape, factor: float):
    """Multiply every rest length by ``factor``; the lattice is unchanged."""
    lengths = getattr(shape, "rest_length", shape)
    if factor <= 0:
        raise DomainError("scale factor must be positive")
    scaled = {c: b * factor for c, b in lengths.items()}
    worst = max(scaled.values())
    if worst > MAX_REST_LENGTH + 1e-12:
        raise DomainError(f"scaled rest length {worst:.4g} cm exceeds {MAX_REST_LENGTH} cm")
    if hasattr(shape, "rest_length"):
        scaled = dataclasses.replace(shape, rest_length=scaled)
    return structure, scaled


def resting_volume(shape) -> float:
    """Sum of b^3 over voxels (cm^3)."""
    lengths = getattr(shape, "rest_length", shape)
    return float(sum(b**3 for b in lengths.values()))


def pressure_vessel_pressure(E: float, eps: float, t0: float, r0: float, delta: float) -> float:
    """Internal pressure of a thin spherical vessel in free expansion.

    Evaluated as 2 E eps t0 (1 - delta) / (r0 - eps), with E in Pa and the
    wall thickness ``t0`` and radius ``r0`` in m.
    """
    if E < 0 or t0 < 0:
        raise DomainError("modulus and wall thickness must be non-negative")
    if r0 <= eps:
        raise DomainError(f"radius r0={r0} must exceed the strain eps={eps}")
    return 2.0 * E * eps * t0 * (1.0 - delta) / (r0 - eps)
