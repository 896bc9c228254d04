"""Beam-mass simulation of voxel lattices.

Every voxel is a particle at its lattice site; face-adjacent voxels share a
beam whose rest length is the mean of the two voxels' configured lengths.
Public quantities use cm, g and s.  :class:`SimParams` keeps the material
constants in SI and converts them on the way into the kernels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import DomainError, SimulationDiverged, StructureError

LATTICE_DIRECTIONS = ((1, 0, 0), (0, 1, 0), (0, 0, 1))
MIN_REST_LENGTH = 0.25
MAX_REST_LENGTH = 2.0

# cross-section of a 1 cm voxel; beams scale it with their rest length
_AREA = 1.0
_SECOND_MOMENT = _AREA**2 / 12.0
_TORSION_CONSTANT = 0.1406 * _AREA**2


@dataclass(frozen=True)
class SimParams:
    """Simulation constants.

    ``dt``, durations and ``actuation_frequency`` are in s / Hz,
    ``actuation_amplitude`` in cm; material and contact constants are SI.
    ``global_velocity_damping`` is the fraction of (angular) velocity
    removed every step.
    """

    dt: float = 0.000151
    gravity: float = 9.81
    eval_duration: float = 4.0
    settle_duration: float = 0.5
    actuation_amplitude: float = 0.145
    actuation_frequency: float = 5.0
    youngs_modulus: float = 1.0e5
    poisson_ratio: float = 0.35
    material_density: float = 1000.0
    beam_damping_ratio: float = 1.0
    global_velocity_damping: float = 0.0
    ground: bool = True
    ground_stiffness: float = 1.0e3
    ground_damping_ratio: float = 1.0
    static_friction: float = 1.0
    kinetic_friction: float = 0.8

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if not self.actuation_frequency > 0:
            raise DomainError("actuation_frequency must be positive")
        if self.actuation_amplitude < 0:
            raise DomainError("actuation_amplitude must be non-negative")
        if self.eval_duration < 0 or self.settle_duration < 0:
            raise DomainError("durations must be non-negative")
        cycles = self.eval_duration * self.actuation_frequency
        if abs(cycles - round(cycles)) > 1e-9:
            raise DomainError(
                f"eval_duration {self.eval_duration} s is not a whole number "
                f"of {self.actuation_frequency} Hz cycles"
            )
        if not 0 <= self.kinetic_friction <= self.static_friction:
            raise DomainError("friction coefficients must satisfy 0 <= mu_k <= mu_s")
        if not 0 <= self.global_velocity_damping < 1:
            raise DomainError("global_velocity_damping must lie in [0, 1)")

    def replace(self, **changes) -> "SimParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    # cgs views used by the kernels
    @property
    def particle_mass(self) -> float:
        """Mass of one voxel in g (density times a 1 cm^3 nominal volume)."""
        return self.material_density * 1e-3

    @property
    def particle_inertia(self) -> float:
        return self.particle_mass / 6.0

    @property
    def _moduli(self):
        e = self.youngs_modulus * 10.0  # Pa -> dyne/cm^2
        g = e / (2.0 * (1.0 + self.poisson_ratio))
        return e * _AREA, e * _SECOND_MOMENT, g * _TORSION_CONSTANT


@dataclass
class SimState:
    """Particle and beam arrays for one lattice.

    ``coords`` lists the voxel coordinates in particle order.  Particles
    carry position (cm), velocity (cm/s), orientation quaternion (w, x, y,
    z) and angular velocity (rad/s).  Every particle has the same mass (g);
    rotational inertia (g cm^2) grows with the square of the voxel's length.
    """

    coords: list
    position: np.ndarray
    velocity: np.ndarray
    orientation: np.ndarray
    angular_velocity: np.ndarray
    mass: float
    inertia: np.ndarray
    rest_length: np.ndarray
    beam_i: np.ndarray
    beam_j: np.ndarray
    beam_axis: np.ndarray
    time: float = 0.0
    step: int = 0

    @property
    def n_particles(self) -> int:
        return self.position.shape[0]

    @property
    def n_beams(self) -> int:
        return self.beam_i.shape[0]

    @property
    def beam_rest_length(self) -> np.ndarray:
        return 0.5 * (self.rest_length[self.beam_i] + self.rest_length[self.beam_j])

    def center_of_mass(self) -> np.ndarray:
        return self.position.mean(axis=0)

    def kinetic_energy(self) -> float:
        lin = 0.5 * self.mass * float(np.sum(self.velocity**2))
        rot = 0.5 * float(np.sum(self.inertia[:, None] * self.angular_velocity**2))
        return lin + rot

    def copy(self) -> "SimState":
        return SimState(
            coords=list(self.coords),
            position=self.position.copy(),
            velocity=self.velocity.copy(),
            orientation=self.orientation.copy(),
            angular_velocity=self.angular_velocity.copy(),
            mass=self.mass,
            inertia=self.inertia.copy(),
            rest_length=self.rest_length.copy(),
            beam_i=self.beam_i,
            beam_j=self.beam_j,
            beam_axis=self.beam_axis,
            time=self.time,
            step=self.step,
        )


@dataclass
class TrajectorySummary:
    start_com: np.ndarray
    end_com: np.ndarray
    net_displacement: float
    frames: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "start_com": [float(v) for v in self.start_com],
            "end_com": [float(v) for v in self.end_com],
            "net_displacement": float(self.net_displacement),
        }


def xi(b: float) -> float:
    """Amplitude damping factor, 0 at b = 0.25 cm rising to 1 at b >= 1 cm."""
    if b < 0:
        raise DomainError(f"rest length must be non-negative, got {b}")
    return min(1.0, max(0.0, (4.0 * b - 1.0) / 3.0))


def instantaneous_rest_length(b: float, phi: float, t: float,
                              params: SimParams = SimParams()) -> float:
    """Configured length of a voxel with resting length ``b`` and phase ``phi``."""
    if t < 0:
        raise DomainError(f"time must be non-negative, got {t}")
    if not MIN_REST_LENGTH <= b <= MAX_REST_LENGTH:
        raise DomainError(f"rest length {b} outside [0.25, 2.0] cm")
    if not -2 * math.pi <= phi <= 2 * math.pi:
        raise DomainError(f"phase {phi} outside [-2pi, 2pi]")
    f = params.actuation_frequency
    return b + params.actuation_amplitude * math.sin(2 * math.pi * f * t + phi) * xi(b)


def _coords_of(structure) -> list:
    occupied = getattr(structure, "occupied", structure)
    return sorted(tuple(int(c) for c in v) for v in occupied)


def face_adjacent_pairs(coords: Sequence[tuple]) -> list:
    """(i, j, axis) for every pair of face neighbours, with i the lower site."""
    index = {c: k for k, c in enumerate(coords)}
    pairs = []
    for k, (x, y, z) in enumerate(coords):
        for axis, (dx, dy, dz) in enumerate(LATTICE_DIRECTIONS):
            other = index.get((x + dx, y + dy, z + dz))
            if other is not None:
                pairs.append((k, other, axis))
    return pairs


def _values_for(coords, mapping, what) -> np.ndarray:
    if mapping is None:
        return None
    keys = set(tuple(k) for k in mapping)
    if keys != set(coords):
        raise StructureError(f"{what} keys do not match the structure voxels")
    return np.array([float(mapping[c]) for c in coords])


def build_lattice(structure, shape: Mapping, params: SimParams = SimParams()) -> SimState:
    """Place one particle per voxel and one beam per face-adjacent pair.

    Particles start on the 1 cm lattice, lifted so the lowest collision
    sphere just touches the ground.
    """
    coords = _coords_of(structure)
    if not coords:
        raise StructureError("cannot build a lattice from an empty structure")
    rest = _values_for(coords, getattr(shape, "rest_length", shape), "shape")
    pos = np.array(coords, dtype=float)
    # collision spheres start at the nominal 1 cm size
    pos[:, 2] += 0.5 - pos[:, 2].min()
    pairs = face_adjacent_pairs(coords)
    bi = np.array([p[0] for p in pairs], dtype=np.int64)
    bj = np.array([p[1] for p in pairs], dtype=np.int64)
    ax = np.array([p[2] for p in pairs], dtype=np.int64)
    n = len(coords)
    quat = np.zeros((n, 4))
    quat[:, 0] = 1.0
    return SimState(
        coords=coords,
        position=pos,
        velocity=np.zeros((n, 3)),
        orientation=quat,
        angular_velocity=np.zeros((n, 3)),
        mass=params.particle_mass,
        inertia=particle_inertia(rest, bi, bj, params),
        rest_length=rest,
        beam_i=bi,
        beam_j=bj,
        beam_axis=ax,
    )


def particle_inertia(rest: np.ndarray, beam_i: np.ndarray, beam_j: np.ndarray,
                     params: SimParams = SimParams()) -> np.ndarray:
    """Rotational inertia (g cm^2) of every particle.

    A voxel of length b has inertia m b^2 / 6; a particle is never lighter
    than a voxel the size of its longest beam, which keeps the rotation of
    a small voxel wedged between large ones from outrunning the time step.
    """
    size = np.array(rest, dtype=float)
    mean = 0.5 * (size[beam_i] + size[beam_j])
    np.maximum.at(size, beam_i, mean)
    np.maximum.at(size, beam_j, mean)
    return params.particle_inertia * size**2


def _phases(state: SimState, controller) -> np.ndarray:
    if controller is None:
        return np.zeros(state.n_particles)
    return _values_for(state.coords, getattr(controller, "phase", controller), "controller")


def _advance(state: SimState, phase: np.ndarray, params: SimParams, n_steps: int,
             actuate: bool, act_step0: int) -> np.ndarray:
    ka, kb, kt = params._moduli
    contact = np.zeros((state.n_particles, 3))
    ramp = 0.5 * params.settle_duration
    bad = _kernels.integrate(
        state.position, state.velocity, state.orientation, state.angular_velocity,
        state.rest_length, phase, state.beam_i, state.beam_j, state.beam_axis,
        state.mass, params.particle_inertia, state.step, n_steps, params.dt, act_step0,
        actuate, ramp, params.actuation_amplitude, params.actuation_frequency,
        params.gravity * 100.0, ka, kb, kt, params.beam_damping_ratio,
        params.global_velocity_damping, params.ground,
        params.ground_stiffness * 1e3, params.ground_damping_ratio,
        params.static_friction, params.kinetic_friction, contact,
    )
    if bad >= 0:
        t = (state.step + bad) * params.dt
        raise SimulationDiverged(t)
    state.step += n_steps
    state.time = state.step * params.dt
    return contact


def step(state: SimState, controller=None, params: SimParams = SimParams(),
         actuate: bool = True, t_act0: float = 0.0) -> SimState:
    """Return the state one time step later; the input is left untouched."""
    new = state.copy()
    _advance(new, _phases(new, controller), params, 1, actuate,
             int(round(t_act0 / params.dt)))
    return new


def contact_forces(state: SimState, params: SimParams = SimParams(),
                   load: Optional[np.ndarray] = None,
                   lengths: Optional[np.ndarray] = None) -> np.ndarray:
    """Ground reaction on every particle in dyne.

    Without ``load`` this is the reaction the integrator applies during the
    next unactuated step from ``state``.  With an explicit non-contact
    ``load`` the contact acts on the velocity that load would produce in
    one step; ``lengths`` then set the collision-sphere radii (default:
    resting).
    """
    n = state.n_particles
    if load is None:
        return _advance(state.copy(), np.zeros(n), params, 1, False, 0)
    if lengths is None:
        lengths = state.rest_length
    predicted = state.velocity + np.asarray(load, dtype=float) * params.dt / state.mass
    out = np.zeros((n, 3))
    _kernels.ground_forces(
        state.position, predicted, np.zeros((n, 3)),
        np.asarray(lengths, dtype=float), state.mass, params.dt,
        params.ground_stiffness * 1e3, params.ground_damping_ratio,
        params.static_friction, params.kinetic_friction, out,
    )
    return out


def internal_forces(state: SimState, params: SimParams = SimParams(),
                    lengths: Optional[np.ndarray] = None):
    """Beam forces (dyne) and torques (dyne cm) on every particle."""
    n = state.n_particles
    force = np.zeros((n, 3))
    torque = np.zeros((n, 3))
    ka, kb, kt = params._moduli
    if lengths is None:
        lengths = state.rest_length
    _kernels.beam_forces(
        state.position, state.orientation, state.rest_length,
        np.asarray(lengths, dtype=float), state.beam_i, state.beam_j,
        state.beam_axis, ka, kb, kt, force, torque,
    )
    return force, torque


def mechanical_energy(state: SimState, params: SimParams = SimParams()) -> float:
    """Kinetic + gravitational + elastic + ground-penalty energy (erg)."""
    ka, kb, kt = params._moduli
    elastic = _kernels.elastic_energy(
        state.position, state.orientation, state.rest_length, state.rest_length,
        state.beam_i, state.beam_j, state.beam_axis, ka, kb, kt,
    )
    g = params.gravity * 100.0
    grav = state.mass * g * float(state.position[:, 2].sum())
    ground = 0.0
    if params.ground:
        pen = np.clip(0.5 * state.rest_length - state.position[:, 2], 0.0, None)
        ground = 0.5 * params.ground_stiffness * 1e3 * float(np.sum(pen**2))
    return state.kinetic_energy() + grav + elastic + ground


def _steps(duration: float, dt: float) -> int:
    return int(round(duration / dt))


def simulate(structure, shape, controller, params: SimParams = SimParams(),
             frame_stride: Optional[int] = None) -> TrajectorySummary:
    """Settle the body with actuation off, then actuate for ``eval_duration``.

    The displacement is the horizontal distance travelled by the centre of
    mass during the actuated phase.  With ``frame_stride`` the particle
    positions are sampled every that many steps (settle and actuated phases).
    """
    state = build_lattice(structure, shape, params)
    phase = _phases(state, controller)
    frames = [] if frame_stride else None

    def run(n_steps, actuate, act_step0):
        if frames is None:
            _advance(state, phase, params, n_steps, actuate, act_step0)
            return
        done = 0
        while done < n_steps:
            chunk = min(frame_stride, n_steps - done)
            _advance(state, phase, params, chunk, actuate, act_step0)
            done += chunk
            if done % frame_stride == 0 or done == n_steps:
                frames.append(state.position.copy())

    if frames is not None:
        frames.append(state.position.copy())
    run(_steps(params.settle_duration, params.dt), False, 0)
    start = state.center_of_mass()
    run(_steps(params.eval_duration, params.dt), True, state.step)
    end = state.center_of_mass()
    disp = float(np.hypot(end[0] - start[0], end[1] - start[1]))
    return TrajectorySummary(
        start_com=start,
        end_com=end,
        net_displacement=disp,
        frames=None if frames is None else np.array(frames),
    )


def write_frames_csv(path, frames: np.ndarray) -> Path:
    """Write sampled positions with columns frame, particle_id, x, y, z."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "particle_id", "x", "y", "z"])
        for f, frame in enumerate(frames):
            for p, (x, y, z) in enumerate(frame):
                w.writerow([f, p, repr(float(x)), repr(float(y)), repr(float(z))])
    return path


_CUBE_CORNERS = np.array(
    [[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)]
)
_CUBE_FACES = (
    (1, 3, 7, 5), (2, 6, 8, 4), (1, 5, 6, 2),
    (3, 4, 8, 7), (1, 2, 4, 3), (5, 7, 8, 6),
)


def write_obj_sequence(directory, frames: np.ndarray, size: float = 1.0) -> list:
    """One OBJ file per frame with a cube of edge ``size`` around each particle."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for f, frame in enumerate(frames):
        path = directory / f"frame_{f:05d}.obj"
        lines = []
        for p, centre in enumerate(frame):
            for corner in _CUBE_CORNERS * size + centre:
                lines.append("v %.6f %.6f %.6f" % tuple(corner))
        for p in range(len(frame)):
            off = 8 * p
            for face in _CUBE_FACES:
                lines.append("f " + " ".join(str(off + k) for k in face))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written
