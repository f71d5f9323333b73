"""Firespot propagation and ground-truth intensity fields.

A fire is a swarm of spots advected by an elliptical wind-driven spread model:
each spot moves along its azimuth at a rate set by the fuel coefficient and
wind speed, spawns direction-perturbed children as it burns, and decays as its
fuel is exhausted.  Rendering a swarm over a horizon of unit time steps gives
a normalized space-time intensity field on the unit square, which the belief
and evaluation layers treat as ground truth.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class FireModelConfig:
    """Fixed physical knobs of the spread and render model."""

    spatial_scale: float = 0.01     # field units per velocity unit per step
    render_radius: float = 0.03     # Gaussian splat radius in field units
    spot_cap: int = 200             # per-fire spot budget
    ramp_steps: float = 5.0         # steps for a new spot to reach peak intensity
    fuel_time_base: float = 200.0   # T_fuel = fuel_time_base / fuel_coefficient
    branch_sigma: float = math.pi / 8.0  # azimuth noise for spawned children


DEFAULT_FIRE_MODEL = FireModelConfig()


@dataclass(frozen=True)
class EnvCharacteristics:
    """Hidden per-episode environment draw: fuel, wind, and ignition layout."""

    fuel_coefficient: float
    wind_speed: float
    wind_azimuth: float
    fire_origins: tuple  # ((x, y), ignition_step) pairs
    seed: int

    def __post_init__(self):
        if not self.fuel_coefficient > 0:
            raise ValueError(f"fuel coefficient must be positive, got {self.fuel_coefficient}")
        if self.wind_speed < 0:
            raise ValueError(f"wind speed must be non-negative, got {self.wind_speed}")
        if not 0 <= self.wind_azimuth < TWO_PI:
            raise ValueError(f"wind azimuth must lie in [0, 2*pi), got {self.wind_azimuth}")
        for pos, t in self.fire_origins:
            x, y = pos
            if not (0 <= x <= 1 and 0 <= y <= 1):
                raise ValueError(f"fire origin {pos} outside the unit square")
            if t < 0 or int(t) != t:
                raise ValueError(f"ignition step must be a non-negative integer, got {t}")


@dataclass(frozen=True)
class RandomizationSpec:
    """Ranges for domain-randomized environment sampling."""

    fuel_range: tuple = (1.0, 10.0)
    wind_speed: float = 5.0
    fire_count_range: tuple = (1, 3)
    horizon: int = 257

    def __post_init__(self):
        lo, hi = self.fuel_range
        if not (0 < lo <= hi):
            raise ValueError(f"fuel range must satisfy 0 < lo <= hi, got {self.fuel_range}")
        nlo, nhi = self.fire_count_range
        if not (1 <= nlo <= nhi):
            raise ValueError(f"fire count range must satisfy 1 <= lo <= hi, got {self.fire_count_range}")
        if self.wind_speed < 0:
            raise ValueError(f"wind speed must be non-negative, got {self.wind_speed}")
        if self.horizon < 2:
            raise ValueError(f"horizon must be at least 2 steps, got {self.horizon}")


@dataclass(frozen=True)
class FireSpot:
    """Read-only view of one spot."""

    position: np.ndarray
    age: float
    intensity: float
    azimuth: float
    fire_id: int
    active: bool


@dataclass
class FireState:
    """Spot swarm at one simulator step, stored as parallel arrays."""

    time: int
    characteristics: EnvCharacteristics
    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    ages: np.ndarray = field(default_factory=lambda: np.zeros(0))
    azimuths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fire_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def spots(self) -> list[FireSpot]:
        intens = spot_intensities(self)
        return [FireSpot(self.positions[i].copy(), float(self.ages[i]), float(intens[i]),
                         float(self.azimuths[i]), int(self.fire_ids[i]), bool(self.active[i]))
                for i in range(len(self.ages))]


def length_to_breadth(wind_speed: float) -> float:
    """Elliptical length-to-breadth ratio of the fire front for a wind speed."""
    if wind_speed < 0:
        raise ValueError(f"wind speed must be non-negative, got {wind_speed}")
    u = wind_speed
    return 0.936 * math.exp(0.256 * u) + 0.461 * math.exp(-0.154 * u) - 0.391


def spread_rate(fuel_coefficient: float, wind_speed: float) -> float:
    """Backing-front spread rate C(F, U) in velocity units."""
    if not fuel_coefficient > 0:
        raise ValueError(f"fuel coefficient must be positive, got {fuel_coefficient}")
    lb = length_to_breadth(wind_speed)
    gb = lb * lb - 1.0
    return fuel_coefficient * (1.0 - lb / (lb + math.sqrt(gb)))


def spread_direction(azimuth: float) -> np.ndarray:
    """Unit step direction for an azimuth measured clockwise from +y."""
    return np.array([math.sin(azimuth), math.cos(azimuth)])


def fuel_time(fuel_coefficient: float, model: FireModelConfig = DEFAULT_FIRE_MODEL) -> float:
    return model.fuel_time_base / fuel_coefficient


def spot_intensities(state: FireState,
                     model: FireModelConfig = DEFAULT_FIRE_MODEL) -> np.ndarray:
    """Unnormalized intensity of every spot: ramp to peak, decay, then zero.

    A spot ramps linearly to 1 over ``ramp_steps``, decays exponentially with
    time constant T_fuel afterwards, and is extinguished outright once its age
    exceeds T_fuel or it has left the domain.
    """
    t_fuel = fuel_time(state.characteristics.fuel_coefficient, model)
    ages = state.ages
    ramp = np.minimum(1.0, ages / model.ramp_steps)
    decay = np.exp(-np.maximum(0.0, ages - model.ramp_steps) / t_fuel)
    out = ramp * decay
    out[ages > t_fuel] = 0.0
    out[~state.active] = 0.0
    return out


def make_initial_state(char: EnvCharacteristics) -> FireState:
    """Spots for every origin igniting at step 0."""
    state = FireState(time=0, characteristics=char)
    return _ignite(state, 0)


def _ignite(state: FireState, at_time: int) -> FireState:
    new = [np.asarray(pos, dtype=float) for pos, t in state.characteristics.fire_origins
           if t == at_time]
    if not new:
        return state
    n = len(new)
    existing = {int(f) for f in state.fire_ids}
    next_id = max(existing) + 1 if existing else 0
    return replace(
        state,
        positions=np.concatenate([state.positions, np.array(new).reshape(n, 2)]),
        ages=np.concatenate([state.ages, np.zeros(n)]),
        azimuths=np.concatenate([state.azimuths,
                                 np.full(n, state.characteristics.wind_azimuth)]),
        fire_ids=np.concatenate([state.fire_ids,
                                 np.arange(next_id, next_id + n, dtype=np.int64)]),
        active=np.concatenate([state.active, np.ones(n, dtype=bool)]),
    )


def step_fire(state: FireState, dt: int, rng: np.random.Generator,
              model: FireModelConfig = DEFAULT_FIRE_MODEL) -> FireState:
    """Advance the swarm one (or more) unit steps: move, clamp, spawn, ignite.

    Active spots advance ``spread_rate * dt * spatial_scale`` along their own
    azimuth; spots that exit the unit square are clamped to the boundary and
    deactivated; every still-burning spot spawns one child with a
    Gaussian-perturbed azimuth, up to the per-fire spot cap.  Spots are never
    removed, so the spot count never decreases.
    """
    if dt <= 0:
        raise ValueError(f"dt must be a positive number of steps, got {dt}")
    if int(dt) != dt:
        raise ValueError(f"dt must be an integral number of steps, got {dt}")
    char = state.characteristics
    rate = spread_rate(char.fuel_coefficient, char.wind_speed)
    t_fuel = fuel_time(char.fuel_coefficient, model)

    positions = state.positions.copy()
    ages = state.ages + dt
    azimuths = state.azimuths.copy()
    fire_ids = state.fire_ids.copy()
    active = state.active.copy()

    step_vec = np.stack([np.sin(azimuths), np.cos(azimuths)], axis=-1)
    positions[active] += rate * dt * model.spatial_scale * step_vec[active]

    escaped = active & np.any((positions < 0.0) | (positions > 1.0), axis=-1)
    positions = np.clip(positions, 0.0, 1.0)
    active &= ~escaped
    exhausted = ages > t_fuel
    active &= ~exhausted

    # Branching: each surviving spot seeds one child at its position, oldest
    # spots first, while its fire remains under the cap.
    parent_idx = np.flatnonzero(active)
    if parent_idx.size:
        pieces = []
        for fid, have in zip(*np.unique(fire_ids, return_counts=True)):
            room = model.spot_cap - int(have)
            if room > 0:
                pieces.append(parent_idx[fire_ids[parent_idx] == fid][:room])
        chosen = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)
        if chosen.size:
            chosen = np.sort(chosen)
            noise = rng.normal(0.0, model.branch_sigma, size=chosen.size)
            positions = np.concatenate([positions, positions[chosen]])
            ages = np.concatenate([ages, np.zeros(chosen.size)])
            azimuths = np.concatenate([azimuths, azimuths[chosen] + noise])
            fire_ids = np.concatenate([fire_ids, fire_ids[chosen]])
            active = np.concatenate([active, np.ones(chosen.size, dtype=bool)])

    out = FireState(time=state.time + int(dt), characteristics=char,
                    positions=positions, ages=ages, azimuths=azimuths,
                    fire_ids=fire_ids, active=active)
    return _ignite(out, out.time)


@dataclass(frozen=True)
class GroundTruthField:
    """Per-episode intensity frames on the unit square, max-normalized to [0, 1]."""

    resolution: int
    horizon: int
    frames: np.ndarray  # (horizon, resolution, resolution), axis 1 = x, axis 2 = y
    characteristics: EnvCharacteristics

    def grid_coords(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.resolution)


def render_frame(state: FireState, resolution: int,
                 model: FireModelConfig = DEFAULT_FIRE_MODEL) -> np.ndarray:
    """Rasterize a swarm: per cell, the max Gaussian splat over all spots."""
    coords = np.linspace(0.0, 1.0, resolution)
    frame = np.zeros((resolution, resolution))
    intens = spot_intensities(state, model)
    live = intens > 0.0
    if not np.any(live):
        return frame
    px = state.positions[live, 0]
    py = state.positions[live, 1]
    iv = intens[live]
    dx2 = (coords[:, None] - px[None, :]) ** 2       # (R, m)
    dy2 = (coords[:, None] - py[None, :]) ** 2
    denom = 2.0 * model.render_radius ** 2
    splat = iv[None, None, :] * np.exp(-(dx2[:, None, :] + dy2[None, :, :]) / denom)
    return splat.max(axis=-1)


def simulate_field(char: EnvCharacteristics, horizon: int, resolution: int,
                   model: FireModelConfig = DEFAULT_FIRE_MODEL) -> GroundTruthField:
    """Run the swarm for ``horizon`` steps and render+normalize every frame.

    The branching noise stream is derived from ``char.seed``, so the field is
    a pure function of the characteristics.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1 frame, got {horizon}")
    if resolution < 2:
        raise ValueError(f"resolution must be at least 2, got {resolution}")
    rng = np.random.default_rng(char.seed)
    state = make_initial_state(char)
    frames = np.empty((horizon, resolution, resolution))
    frames[0] = render_frame(state, resolution, model)
    for t in range(1, horizon):
        state = step_fire(state, 1, rng, model)
        frames[t] = render_frame(state, resolution, model)
    peak = frames.max()
    if peak > 0.0:
        frames = frames / peak
    return GroundTruthField(resolution=resolution, horizon=horizon,
                            frames=frames, characteristics=char)


def intensity_at(fld: GroundTruthField, location, t) -> float:
    """Bilinear sample of the frame at integer step ``t``."""
    x, y = float(location[0]), float(location[1])
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError(f"query location ({x}, {y}) outside the unit square")
    if t != int(t) or not (0 <= t < fld.horizon):
        raise ValueError(f"query step {t} outside the field horizon [0, {fld.horizon})")
    frame = fld.frames[int(t)]
    n = fld.resolution - 1
    u, v = x * n, y * n
    i = min(int(u), n - 1)
    j = min(int(v), n - 1)
    fu, fv = u - i, v - j
    return float((1 - fu) * (1 - fv) * frame[i, j] + fu * (1 - fv) * frame[i + 1, j]
                 + (1 - fu) * fv * frame[i, j + 1] + fu * fv * frame[i + 1, j + 1])


def sample_environment(rng: np.random.Generator,
                       spec: RandomizationSpec = RandomizationSpec()) -> EnvCharacteristics:
    """Domain-randomized environment draw.

    Draw order is fixed (fuel, azimuth, fire count, origin positions, ignition
    steps, simulator seed) so a seeded generator reproduces the draw exactly.
    Ignition steps fall in the first half of the horizon.
    """
    fuel = float(rng.uniform(*spec.fuel_range))
    azimuth = float(rng.uniform(0.0, TWO_PI))
    lo, hi = spec.fire_count_range
    count = int(rng.integers(lo, hi + 1))
    positions = rng.uniform(0.0, 1.0, size=(count, 2))
    times = rng.integers(0, max(1, spec.horizon // 2), size=count)
    seed = int(rng.integers(0, 2 ** 63 - 1))
    origins = tuple(((float(p[0]), float(p[1])), int(t))
                    for p, t in zip(positions, times))
    return EnvCharacteristics(fuel_coefficient=fuel, wind_speed=spec.wind_speed,
                              wind_azimuth=azimuth, fire_origins=origins, seed=seed)


# ---------------------------------------------------------------------------
# ground-truth field dumps

_FIELD_MAGIC = b"EFLD"
_FIELD_VERSION = 1


def save_field(path, fld: GroundTruthField) -> None:
    """Write a field dump: header then row-major float32 frames.

    Layout, little-endian: magic ``EFLD``, u32 version, u32 resolution, u32
    horizon, f64 fuel coefficient, f64 wind speed, f64 wind azimuth, i64 seed,
    u32 origin count, per origin (f64 x, f64 y, u32 ignition step), then
    horizon * resolution^2 float32 values ordered (step, x index, y index).
    """
    char = fld.characteristics
    with open(path, "wb") as fh:
        fh.write(_FIELD_MAGIC)
        fh.write(struct.pack("<III", _FIELD_VERSION, fld.resolution, fld.horizon))
        fh.write(struct.pack("<dddq", char.fuel_coefficient, char.wind_speed,
                             char.wind_azimuth, char.seed))
        fh.write(struct.pack("<I", len(char.fire_origins)))
        for (x, y), t in char.fire_origins:
            fh.write(struct.pack("<ddI", x, y, t))
        fh.write(fld.frames.astype("<f4").tobytes())


def load_field(path) -> GroundTruthField:
    with open(path, "rb") as fh:
        if fh.read(4) != _FIELD_MAGIC:
            raise ValueError(f"{path}: not a ground-truth field dump")
        version, resolution, horizon = struct.unpack("<III", fh.read(12))
        if version != _FIELD_VERSION:
            raise ValueError(f"{path}: field dump version {version} is not supported")
        fuel, wind, azimuth, seed = struct.unpack("<dddq", fh.read(32))
        (count,) = struct.unpack("<I", fh.read(4))
        origins = []
        for _ in range(count):
            x, y, t = struct.unpack("<ddI", fh.read(20))
            origins.append(((x, y), t))
        char = EnvCharacteristics(fuel_coefficient=fuel, wind_speed=wind,
                                  wind_azimuth=azimuth, fire_origins=tuple(origins),
                                  seed=seed)
        data = np.frombuffer(fh.read(horizon * resolution * resolution * 4), dtype="<f4")
    frames = data.astype(np.float64).reshape(horizon, resolution, resolution)
    return GroundTruthField(resolution=resolution, horizon=horizon,
                            frames=frames, characteristics=char)
