"""Deterministic synthetic gait recordings with terrain labels.

Each terrain class walks with its own gait model. A sequence follows a phase
``theta = 2*pi*t/period + phi0`` where ``period`` is the class's base period
perturbed by up to 5% (walking speed), and the foot forces follow the
waveform

    w(theta) = sin(theta) + a2*sin(2*theta + p2) + a3*sin(3*theta + p3)

with the four feet offset in a trot pattern. Accelerations reuse ``w``,
gyro rates are pure sinusoids at the fundamental, and the orientation
quaternion comes from small roll/pitch oscillations plus a slow yaw drift.
Gaussian sensor noise of the class's level (times ``noise_scale``) is added.

Per-class parameters (index = terrain code):

    class      period  a2    a3    force_amp  noise  stance
    concrete    4.0    0.10  0.05  1.00       0.02    0.0
    grassy      6.0    0.45  0.10  0.55       0.05    1.0
    gravel      8.5    0.15  0.35  1.25       0.08   -1.0
    mulch      12.0    0.50  0.25  0.40       0.04    2.0
    dirt       16.0    0.20  0.15  0.85       0.03   -2.0
    sandy      22.0    0.60  0.40  0.30       0.06    3.0

``stance`` is a static fore-aft load shift of the terrain (soft ground lets
the front feet sink): it is added to the front feet's normal forces,
subtracted from the hind feet's, and tilts the body pitch by
``0.05 * stance`` rad.

For widths other than 22 every channel is ``amp_j * w(theta + phase_j)``
plus noise, with per-channel amplitude and phase drawn once per dataset.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import FRAME_DIM, N_CLASSES, SequenceSample, TerrainLabel
from .errors import ContractViolation
from .seqcore import SeededRng


@dataclass(frozen=True)
class GaitParams:
    period: float
    a2: float
    a3: float
    force_amp: float
    noise: float
    stance: float = 0.0


CLASS_GAITS = (
    GaitParams(4.0, 0.10, 0.05, 1.00, 0.02, 0.0),
    GaitParams(6.0, 0.45, 0.10, 0.55, 0.05, 1.0),
    GaitParams(8.5, 0.15, 0.35, 1.25, 0.08, -1.0),
    GaitParams(12.0, 0.50, 0.25, 0.40, 0.04, 2.0),
    GaitParams(16.0, 0.20, 0.15, 0.85, 0.03, -2.0),
    GaitParams(22.0, 0.60, 0.40, 0.30, 0.06, 3.0),
)

SPEED_JITTER = 0.05
# trot: diagonal feet in phase (FL, FR, BL, BR)
LEG_PHASE = (0.0, np.pi, np.pi, 0.0)
FORCE_AXIS_SCALE = (0.3, 0.2, 1.0)  # x, y, normal
FORCE_AXIS_OFFSET = (0.0, 0.0, 2.5)


@dataclass(frozen=True)
class SynthSpec:
    n_sequences: int = 300
    t_min: int = 40
    t_max: int = 80
    seed: int = 0
    class_count: int = N_CLASSES
    dim: int = FRAME_DIM
    noise_scale: float = 1.0

    def validate(self):
        if not 1 <= self.class_count <= N_CLASSES:
            raise ContractViolation(f"class_count must lie in [1, {N_CLASSES}], got {self.class_count}")
        if self.n_sequences < self.class_count:
            raise ContractViolation(
                f"n_sequences ({self.n_sequences}) must be >= class_count ({self.class_count})"
            )
        if not 2 <= self.t_min <= self.t_max:
            raise ContractViolation(f"need 2 <= t_min <= t_max, got [{self.t_min}, {self.t_max}]")
        if self.dim < 1:
            raise ContractViolation(f"dim must be >= 1, got {self.dim}")
        if self.noise_scale < 0:
            raise ContractViolation("noise_scale must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ContractViolation("seed must be a 64-bit unsigned integer")
        return self


def load_synth_spec(path) -> SynthSpec:
    """Read a flat JSON object whose keys are SynthSpec field names."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ContractViolation("synthetic spec file must hold a flat JSON object")
    known = {f.name for f in fields(SynthSpec)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ContractViolation(f"unknown synthetic spec keys: {', '.join(unknown)}")
    return SynthSpec(**raw).validate()


def _waveform(theta, gait: GaitParams, p2, p3):
    return np.sin(theta) + gait.a2 * np.sin(2 * theta + p2) + gait.a3 * np.sin(3 * theta + p3)


def _quaternion(roll, pitch, yaw):
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.stack([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ], axis=1)


def _gait_frames(gait: GaitParams, T: int, noise: float, rng: SeededRng) -> np.ndarray:
    period = gait.period * (1.0 + rng.uniform(-SPEED_JITTER, SPEED_JITTER))
    phi0 = rng.uniform(0.0, 2 * np.pi)
    p2, p3 = 0.3, 1.1
    t = np.arange(T, dtype=float)
    theta = 2 * np.pi * t / period + phi0

    force = np.empty((T, 12))
    for leg, offset in enumerate(LEG_PHASE):
        w = _waveform(theta + offset, gait, p2, p3)
        for axis in range(3):
            force[:, 3 * leg + axis] = FORCE_AXIS_OFFSET[axis] + gait.force_amp * FORCE_AXIS_SCALE[axis] * w
        force[:, 3 * leg + 2] += gait.stance if leg < 2 else -gait.stance
    accel = np.stack([
        0.3 * _waveform(theta + 0.5, gait, p2, p3),
        0.2 * _waveform(theta + 2.0, gait, p2, p3),
        9.81 + 0.5 * gait.force_amp * _waveform(theta, gait, p2, p3),
    ], axis=1)
    gyro = np.stack([0.4 * np.sin(theta), 0.3 * np.sin(theta + 1.0), 0.2 * np.sin(theta + 2.0)], axis=1)

    sigma = gait.noise * noise
    force += rng.gaussian(0.0, sigma, force.shape)
    accel += rng.gaussian(0.0, sigma, accel.shape)
    gyro += rng.gaussian(0.0, sigma, gyro.shape)
    roll = 0.05 * np.sin(theta) + rng.gaussian(0.0, 0.1 * sigma, T)
    pitch = 0.05 * gait.stance + 0.04 * np.sin(theta + np.pi / 2) + rng.gaussian(0.0, 0.1 * sigma, T)
    yaw = 0.002 * t
    return np.concatenate([force, accel, gyro, _quaternion(roll, pitch, yaw)], axis=1)


def _generic_frames(gait: GaitParams, T: int, noise: float, amps, phases, rng: SeededRng):
    period = gait.period * (1.0 + rng.uniform(-SPEED_JITTER, SPEED_JITTER))
    theta = 2 * np.pi * np.arange(T) / period + rng.uniform(0.0, 2 * np.pi)
    X = np.stack([a * _waveform(theta + ph, gait, 0.3, 1.1) for a, ph in zip(amps, phases)], axis=1)
    return X + rng.gaussian(0.0, gait.noise * noise, X.shape)


def synth_generate(spec: SynthSpec) -> list:
    """Labeled synthetic sequences; class ``i % class_count`` for sequence ``i``."""
    spec.validate()
    rng = SeededRng(spec.seed).child("synth")
    amps = phases = None
    if spec.dim != FRAME_DIM:
        amps = rng.uniform(0.5, 1.5, spec.dim)
        phases = rng.uniform(0.0, 2 * np.pi, spec.dim)
    samples = []
    width = len(str(spec.n_sequences - 1))
    for i in range(spec.n_sequences):
        label = i % spec.class_count
        gait = CLASS_GAITS[label]
        T = int(rng.generator.integers(spec.t_min, spec.t_max + 1))
        if spec.dim == FRAME_DIM:
            X = _gait_frames(gait, T, spec.noise_scale, rng)
        else:
            X = _generic_frames(gait, T, spec.noise_scale, amps, phases, rng)
        samples.append(SequenceSample(f"syn{i:0{width}d}", X, int(TerrainLabel(label))))
    return samples


def spec_dict(spec: SynthSpec) -> dict:
    return asdict(spec)
