"""Synthetic tactile test bed.

Two parametric fingertip models stand in for the physical sensors:

* ``dense_nonlinear`` - 19 taxels, saturating force response, wide footprint,
  slow hysteresis; almost every taxel reacts to a press.
* ``sparse_linear`` - 12 taxels, linear response with an activation threshold;
  only the taxels near the contact point react.

A press is described by a :class:`Stimulus`. The contact point on the
hemispherical fingertip follows the surface angles, and the footprint widens
with force, curvature and material softness.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict, replace
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

DT = 0.03  # sampling period [s]

FORCE_RANGE = (0.0, 5.0)
PITCH_RANGE = (-3.6, 18.0)
ROLL_RANGE = (-19.0, 19.0)
SHORE_RANGE = (0.0, 30.0)
CURVATURE_CLASSES = ("r5", "r7.5", "r10", "r20", "r40", "flat")
CURVATURE_RADIUS_MM = {"r5": 5.0, "r7.5": 7.5, "r10": 10.0, "r20": 20.0, "r40": 40.0, "flat": np.inf}
ARCHETYPES = ("dense_nonlinear", "sparse_linear")
ATTRIBUTES = ("force", "pitch", "roll", "shore")

# a flat plate tilted by a degrees touches a spherical tip a degrees off its apex
ANGLE_GAIN = 1.0


class StimulusError(ValueError):
    pass


def _check_range(name: str, value, lo: float, hi: float) -> None:
    v = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(v)) or np.any(v < lo) or np.any(v > hi):
        raise StimulusError(f"{name} outside [{lo}, {hi}]: {value}")


def curvature_scale(label: str) -> float:
    """Inverse radius normalised so the sharpest sample (5 mm) maps to 1, flat to 0."""
    try:
        return 5.0 / CURVATURE_RADIUS_MM[label]
    except KeyError:
        raise StimulusError(f"unknown curvature class {label!r}") from None


@dataclass(frozen=True)
class Stimulus:
    force: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    shore: float = 30.0
    curvature: str = "flat"

    def __post_init__(self):
        _check_range("force", self.force, *FORCE_RANGE)
        _check_range("pitch", self.pitch, *PITCH_RANGE)
        _check_range("roll", self.roll, *ROLL_RANGE)
        _check_range("shore", self.shore, *SHORE_RANGE)
        if self.curvature not in CURVATURE_CLASSES:
            raise StimulusError(f"unknown curvature class {self.curvature!r}")


@dataclass
class Stimuli:
    """Column-wise batch of stimuli."""

    force: np.ndarray
    pitch: np.ndarray
    roll: np.ndarray
    shore: np.ndarray
    curvature: np.ndarray  # str labels

    def __post_init__(self):
        n = len(self.force)
        for name in ("force", "pitch", "roll", "shore"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise StimulusError(f"column {name} has shape {arr.shape}, expected ({n},)")
            setattr(self, name, arr)
        self.curvature = np.asarray(self.curvature, dtype="<U5")
        if self.curvature.shape != (n,):
            raise StimulusError("curvature column length mismatch")
        self.validate()

    def validate(self) -> None:
        for name, (lo, hi) in zip(ATTRIBUTES, (FORCE_RANGE, PITCH_RANGE, ROLL_RANGE, SHORE_RANGE)):
            col = getattr(self, name)
            bad = np.flatnonzero(~np.isfinite(col) | (col < lo) | (col > hi))
            if bad.size:
                raise StimulusError(f"row {bad[0]}: {name}={col[bad[0]]} outside [{lo}, {hi}]")
        bad = np.flatnonzero(~np.isin(self.curvature, CURVATURE_CLASSES))
        if bad.size:
            raise StimulusError(f"row {bad[0]}: unknown curvature class {self.curvature[bad[0]]!r}")

    def __len__(self) -> int:
        return len(self.force)

    def __getitem__(self, i: int) -> Stimulus:
        return Stimulus(
            float(self.force[i]), float(self.pitch[i]), float(self.roll[i]),
            float(self.shore[i]), str(self.curvature[i]),
        )

    @classmethod
    def from_list(cls, items: Sequence[Stimulus]) -> "Stimuli":
        return cls(
            np.array([s.force for s in items], dtype=np.float64),
            np.array([s.pitch for s in items], dtype=np.float64),
            np.array([s.roll for s in items], dtype=np.float64),
            np.array([s.shore for s in items], dtype=np.float64),
            np.array([s.curvature for s in items], dtype="<U5"),
        )

    @classmethod
    def concat(cls, parts: Sequence["Stimuli"]) -> "Stimuli":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("force", "pitch", "roll", "shore", "curvature")))

    def take(self, idx) -> "Stimuli":
        return Stimuli(self.force[idx], self.pitch[idx], self.roll[idx], self.shore[idx], self.curvature[idx])

    def curvature_index(self) -> np.ndarray:
        lookup = {c: k for k, c in enumerate(CURVATURE_CLASSES)}
        return np.array([lookup[c] for c in self.curvature], dtype=np.int64)


@dataclass
class TaxelFrame:
    values: np.ndarray
    t: float = 0.0


def _ring(n: int, polar_deg: float, azimuth_offset_deg: float = 0.0) -> np.ndarray:
    a = np.radians(polar_deg)
    b = np.radians(azimuth_offset_deg + 360.0 * np.arange(n) / n)
    return np.column_stack([np.sin(a) * np.cos(b), np.sin(a) * np.sin(b), np.full(n, np.cos(a))])


# Fixed layouts: apex + rings for the dense tip, two rings with a bare apex for the sparse one.
DENSE_LAYOUT = np.vstack([[[0.0, 0.0, 1.0]], _ring(6, 22.0), _ring(12, 45.0, 15.0)])
SPARSE_LAYOUT = np.vstack([_ring(4, 30.0, 45.0), _ring(8, 65.0)])


@dataclass
class SensorModel:
    archetype: str
    taxel_positions: np.ndarray
    gain: float = 1.0
    saturation_force: float = 1.5
    footprint_base_width: float = 0.35
    activation_threshold: float = 0.0
    hysteresis_tau: float = 0.4
    noise_sigma: float = 0.01
    baseline: np.ndarray = field(default=None)
    force_widening: float = 0.5
    curvature_widening: float = 0.6
    softness_widening: float = 0.4

    def __post_init__(self):
        if self.archetype not in ARCHETYPES:
            raise ValueError(f"unknown archetype {self.archetype!r}")
        self.taxel_positions = np.asarray(self.taxel_positions, dtype=np.float64)
        expected = 19 if self.archetype == "dense_nonlinear" else 12
        if self.taxel_positions.shape != (expected, 3):
            raise ValueError(f"{self.archetype} needs {expected} taxel positions")
        if self.saturation_force <= 0 or self.footprint_base_width <= 0 or self.noise_sigma < 0:
            raise ValueError("saturation_force and footprint width must be > 0, noise_sigma >= 0")
        if self.hysteresis_tau < 0:
            raise ValueError("hysteresis_tau must be >= 0")
        if self.baseline is None:
            self.baseline = np.full(self.n_taxels, 0.5)
        self.baseline = np.asarray(self.baseline, dtype=np.float64)

    @property
    def n_taxels(self) -> int:
        return len(self.taxel_positions)

    @classmethod
    def default(cls, archetype: str, **overrides) -> "SensorModel":
        if archetype in ("dense", "biotac"):
            archetype = "dense_nonlinear"
        elif archetype in ("sparse", "icub"):
            archetype = "sparse_linear"
        if archetype == "dense_nonlinear":
            base = dict(taxel_positions=DENSE_LAYOUT, hysteresis_tau=0.4, activation_threshold=0.0)
        elif archetype == "sparse_linear":
            base = dict(taxel_positions=SPARSE_LAYOUT, hysteresis_tau=0.1, activation_threshold=0.05)
        else:
            raise ValueError(f"unknown archetype {archetype!r}")
        base.update(overrides)
        return cls(archetype=archetype, **base)

    def parameters(self) -> dict:
        d = asdict(self)
        d["taxel_positions"] = self.taxel_positions.tolist()
        d["baseline"] = self.baseline.tolist()
        return d

    @classmethod
    def from_parameters(cls, d: dict) -> "SensorModel":
        return cls(**d)

    def force_response(self, force) -> np.ndarray:
        force = np.asarray(force, dtype=np.float64)
        if self.archetype == "dense_nonlinear":
            return self.gain * force / (force + self.saturation_force)
        return self.gain * force / FORCE_RANGE[1]


def contact_direction(pitch_deg, roll_deg) -> np.ndarray:
    """Unit vector(s) of the contact centre on the fingertip hemisphere."""
    p = np.radians(np.asarray(pitch_deg, dtype=np.float64) * ANGLE_GAIN)
    r = np.radians(np.asarray(roll_deg, dtype=np.float64) * ANGLE_GAIN)
    return np.stack([np.sin(r) * np.cos(p), np.sin(p), np.cos(r) * np.cos(p)], axis=-1)


def deflections(sensor: SensorModel, stim: Stimuli) -> np.ndarray:
    """Noiseless per-taxel deflection magnitudes, shape (n, taxels)."""
    kappa = np.array([curvature_scale(c) for c in stim.curvature])
    width = (
        sensor.footprint_base_width
        * (1 + sensor.force_widening * stim.force / FORCE_RANGE[1])
        * (1 + sensor.curvature_widening * kappa)
        * (1 + sensor.softness_widening * (SHORE_RANGE[1] - stim.shore) / SHORE_RANGE[1])
    )
    c = contact_direction(stim.pitch, stim.roll)
    cos = np.clip(c @ sensor.taxel_positions.T, -1.0, 1.0)
    dist = np.arccos(cos)
    d = sensor.force_response(stim.force)[:, None] * np.exp(-(dist**2) / (2 * width[:, None] ** 2))
    if sensor.archetype == "sparse_linear":
        d[d < sensor.activation_threshold] = 0.0
    return d


def _frames_from_deflections(sensor: SensorModel, d: np.ndarray) -> np.ndarray:
    sign = -1.0 if sensor.archetype == "dense_nonlinear" else 1.0
    return sensor.baseline + sign * d


def taxel_frame_noiseless(sensor: SensorModel, s: Stimulus, t: float = 0.0) -> TaxelFrame:
    values = _frames_from_deflections(sensor, deflections(sensor, Stimuli.from_list([s])))[0]
    return TaxelFrame(values, t)


def frames_noiseless(sensor: SensorModel, stim: Stimuli) -> np.ndarray:
    return _frames_from_deflections(sensor, deflections(sensor, stim))


def force_ramp_profile(t, peak: float = 5.0, ramp_time: float = 15.0):
    """Triangular force profile: linear rise to ``peak`` at ``ramp_time``, mirrored fall."""
    t_arr = np.asarray(t, dtype=np.float64)
    if ramp_time <= 0:
        raise ValueError("ramp_time must be positive")
    if np.any(t_arr < 0) or np.any(t_arr > 2 * ramp_time) or not np.all(np.isfinite(t_arr)):
        raise ValueError(f"t must lie in [0, {2 * ramp_time}]")
    f = peak * np.where(t_arr <= ramp_time, t_arr, 2 * ramp_time - t_arr) / ramp_time
    return float(f) if np.ndim(t) == 0 else f


def lag_coefficient(tau: float, dt: float = DT) -> float:
    """Per-sample blend factor of the first-order lag; 1 means no lag."""
    if tau <= 0:
        return 1.0
    return float(-np.expm1(-dt / tau))


def simulate_sequence(sensor: SensorModel, schedule: Stimuli, seed, dt: float = DT) -> np.ndarray:
    """Frames for a stimulus schedule sampled every ``dt``: noiseless response,
    first-order lag (hysteresis), then i.i.d. Gaussian noise. Returns (n, taxels)."""
    if len(schedule) == 0:
        raise ValueError("empty schedule")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    target = frames_noiseless(sensor, schedule)
    alpha = lag_coefficient(sensor.hysteresis_tau, dt)
    if alpha < 1.0:
        y = np.empty_like(target)
        y[0] = target[0]
        for k in range(1, len(target)):
            y[k] = y[k - 1] + alpha * (target[k] - y[k - 1])
    else:
        y = target
    return y + sensor.noise_sigma * rng.standard_normal(y.shape)


@dataclass
class GridSpec:
    """Dataset layout. Angle/shore grids are inclusive linspaces over the full ranges."""

    n_roll: int = 7
    n_pitch: int = 7
    n_shore: int = 4
    ramp_time: float = 15.0
    peak_force: float = 5.0
    ramps_per_class: int = 1
    dt: float = DT

    def __post_init__(self):
        for name in ("n_roll", "n_pitch", "n_shore", "ramps_per_class"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.ramp_time <= 0 or self.dt <= 0:
            raise ValueError("ramp_time and dt must be positive")
        if not FORCE_RANGE[0] < self.peak_force <= FORCE_RANGE[1]:
            raise ValueError("peak_force must lie in (0, 5]")
        if round(2 * self.ramp_time / self.dt) < 2:
            raise ValueError("ramp shorter than two samples")

    @property
    def frames_per_ramp(self) -> int:
        return int(round(2 * self.ramp_time / self.dt))

    def rolls(self) -> np.ndarray:
        return np.linspace(*ROLL_RANGE, self.n_roll) if self.n_roll > 1 else np.zeros(1)

    def pitches(self) -> np.ndarray:
        return np.linspace(*PITCH_RANGE, self.n_pitch) if self.n_pitch > 1 else np.zeros(1)

    def shores(self) -> np.ndarray:
        return np.linspace(*SHORE_RANGE, self.n_shore) if self.n_shore > 1 else np.full(1, SHORE_RANGE[1])


# Reduced grids that train in well under a minute on one CPU (~10k frames each).
DESK_GRIDS = {
    "A": dict(n_roll=5, n_pitch=5, ramp_time=6.0),
    "B": dict(n_roll=3, n_pitch=3, n_shore=4, ramp_time=4.5),
    "C": dict(ramps_per_class=3, ramp_time=9.0),
}


def grid_for(kind: str, scale: str = "desk") -> GridSpec:
    """``desk`` presets or the ``full`` default grid for dataset ``kind``."""
    if kind not in DESK_GRIDS:
        raise ValueError(f"unknown dataset kind {kind!r}")
    if scale == "desk":
        return GridSpec(**DESK_GRIDS[kind])
    if scale == "full":
        return GridSpec(ramps_per_class=5) if kind == "C" else GridSpec()
    raise ValueError(f"unknown scale {scale!r}")


@dataclass
class Dataset:
    sensor: str
    kind: str
    seed: int
    frames: np.ndarray
    t: np.ndarray
    stimuli: Stimuli
    spec: Optional[GridSpec] = None
    sim_parameters: Optional[dict] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or len(self.frames) == 0:
            raise ValueError("dataset needs a non-empty (n, taxels) frame array")
        if len(self.t) != len(self.frames) or len(self.stimuli) != len(self.frames):
            raise ValueError("frames, times and stimuli differ in length")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def n_taxels(self) -> int:
        return self.frames.shape[1]

    def labels(self, attribute: str) -> np.ndarray:
        if attribute == "curvature":
            return self.stimuli.curvature_index()
        return getattr(self.stimuli, attribute)

    def records(self) -> Iterator[tuple[TaxelFrame, Stimulus]]:
        for i in range(len(self)):
            yield TaxelFrame(self.frames[i], float(self.t[i])), self.stimuli[i]

    def subset(self, idx) -> "Dataset":
        return replace(self, frames=self.frames[idx], t=self.t[idx], stimuli=self.stimuli.take(idx))


def _ramp_units(kind: str, spec: GridSpec) -> List[dict]:
    """One dict of fixed stimulus fields per force ramp, in generation order."""
    if kind == "A":
        return [dict(pitch=p, roll=r, shore=SHORE_RANGE[1], curvature="flat")
                for p in spec.pitches() for r in spec.rolls()]
    if kind == "B":
        return [dict(pitch=p, roll=r, shore=s, curvature="flat")
                for s in spec.shores() for p in spec.pitches() for r in spec.rolls()]
    if kind == "C":
        return [dict(pitch=0.0, roll=0.0, shore=SHORE_RANGE[1], curvature=c)
                for c in CURVATURE_CLASSES for _ in range(spec.ramps_per_class)]
    raise ValueError(f"unknown dataset kind {kind!r}")


def generate_dataset(kind: str, sensor: SensorModel, spec: Optional[GridSpec] = None, seed: int = 0) -> Dataset:
    """Build dataset A (surface angles), B (angles x shore hardness) or C (curvature).

    Every unit of the grid gets one triangular force ramp; each ramp draws its
    noise from its own stream derived from ``(seed, unit index)``.
    """
    spec = spec or GridSpec()
    units = _ramp_units(kind, spec)
    n = spec.frames_per_ramp
    tk = np.arange(n) * spec.dt
    force = force_ramp_profile(tk, spec.peak_force, spec.ramp_time)

    frames, times, parts = [], [], []
    for u, fixed in enumerate(units):
        sched = Stimuli(
            force,
            np.full(n, fixed["pitch"]),
            np.full(n, fixed["roll"]),
            np.full(n, fixed["shore"]),
            np.full(n, fixed["curvature"]),
        )
        rng = np.random.default_rng([seed, u])
        frames.append(simulate_sequence(sensor, sched, rng, spec.dt))
        times.append((u * n + np.arange(n)) * spec.dt)
        parts.append(sched)
    return Dataset(
        sensor=sensor.archetype,
        kind=kind,
        seed=seed,
        frames=np.vstack(frames),
        t=np.concatenate(times),
        stimuli=Stimuli.concat(parts),
        spec=spec,
        sim_parameters=sensor.parameters(),
    )


def hysteresis_loop_area(force: np.ndarray, response: np.ndarray) -> float:
    """Area enclosed by a (force, response) up/down sweep, via the shoelace formula."""
    f = np.asarray(force, dtype=np.float64)
    r = np.asarray(response, dtype=np.float64)
    return float(0.5 * abs(np.dot(f, np.roll(r, -1)) - np.dot(r, np.roll(f, -1))))


class TactileStream:
    """Frame-by-frame version of :func:`simulate_sequence` for closed-loop use."""

    def __init__(self, sensor: SensorModel, rng: np.random.Generator, dt: float = DT):
        self.sensor = sensor
        self.rng = rng
        self.alpha = lag_coefficient(sensor.hysteresis_tau, dt)
        self._state: Optional[np.ndarray] = None

    def read(self, s: Stimulus) -> np.ndarray:
        target = taxel_frame_noiseless(self.sensor, s).values
        if self._state is None:
            self._state = target
        else:
            self._state = self._state + self.alpha * (target - self._state)
        return self._state + self.sensor.noise_sigma * self.rng.standard_normal(target.shape)
