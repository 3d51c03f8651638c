"""Analytic planar 2-link arm dynamics and the synthetic trajectory generator.

Exact inverse/forward dynamics of the standard two-link arm in a vertical
plane (angles measured from the horizontal x-axis, gravity along -y). These
closed forms supply ground truth for the sequence surrogates and the exact
mass / Coriolis / gravity terms for the equation-of-motion training loss.

All functions broadcast over leading axes: q, qd, qdd, tau may be (2,) or
(..., 2).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .sequences import (
    MotionSequence,
    TorqueSequence,
    joints_from_names,
    load_sequence,
    save_sequence,
)

JOINT_NAMES = ("shoulder", "elbow")


@dataclass(frozen=True)
class ArmParams:
    """Link masses/lengths/COM offsets/inertias of the planar 2-link arm."""

    m1: float = 1.5
    m2: float = 1.0
    l1: float = 0.3
    l2: float = 0.25
    r1: float = 0.15
    r2: float = 0.125
    I1: float = 0.02
    I2: float = 0.01
    g: float = 9.81

    def __post_init__(self):
        for name in ("m1", "m2", "l1", "l2", "I1", "I2"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be > 0")
        if not 0 < self.r1 <= self.l1:
            raise ParameterError("need 0 < r1 <= l1")
        if not 0 < self.r2 <= self.l2:
            raise ParameterError("need 0 < r2 <= l2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArmParams":
        return cls(**d)


def mass_matrix(q, params: ArmParams) -> np.ndarray:
    """Symmetric positive-definite mass matrix; depends on q2 only."""
    q = np.asarray(q, dtype=float)
    c2 = np.cos(q[..., 1])
    p = params
    a = p.I1 + p.I2 + p.m1 * p.r1**2 + p.m2 * (p.l1**2 + p.r2**2)
    b = p.m2 * p.l1 * p.r2
    d = p.I2 + p.m2 * p.r2**2
    m = np.empty(q.shape[:-1] + (2, 2))
    m[..., 0, 0] = a + 2 * b * c2
    m[..., 0, 1] = d + b * c2
    m[..., 1, 0] = d + b * c2
    m[..., 1, 1] = d
    return m


def coriolis_vector(q, qd, params: ArmParams) -> np.ndarray:
    """Combined Coriolis/centrifugal torque vector."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    b = params.m2 * params.l1 * params.r2
    s2 = np.sin(q[..., 1])
    out = np.empty(np.broadcast_shapes(q.shape, qd.shape))
    out[..., 0] = -b * s2 * (2 * qd[..., 0] + qd[..., 1]) * qd[..., 1]
    out[..., 1] = b * s2 * qd[..., 0] ** 2
    return out


def gravity_vector(q, params: ArmParams) -> np.ndarray:
    """Gravitational torque vector (vertical plane)."""
    q = np.asarray(q, dtype=float)
    p = params
    c1 = np.cos(q[..., 0])
    c12 = np.cos(q[..., 0] + q[..., 1])
    out = np.empty(q.shape)
    out[..., 0] = (p.m1 * p.r1 + p.m2 * p.l1) * p.g * c1 + p.m2 * p.r2 * p.g * c12
    out[..., 1] = p.m2 * p.r2 * p.g * c12
    return out


def inverse_dynamics(q, qd, qdd, params: ArmParams) -> np.ndarray:
    """tau = M(q) qdd + C(q, qd) + G(q), exactly."""
    qdd = np.asarray(qdd, dtype=float)
    m = mass_matrix(q, params)
    return (
        np.einsum("...ij,...j->...i", m, qdd)
        + coriolis_vector(q, qd, params)
        + gravity_vector(q, params)
    )


def forward_dynamics(q, qd, tau, params: ArmParams) -> np.ndarray:
    """qdd = M(q)^-1 (tau - C(q, qd) - G(q)); M is always invertible."""
    tau = np.asarray(tau, dtype=float)
    rhs = tau - coriolis_vector(q, qd, params) - gravity_vector(q, params)
    return np.linalg.solve(mass_matrix(q, params), rhs[..., None])[..., 0]


def kinetic_energy(q, qd, params: ArmParams) -> np.ndarray:
    qd = np.asarray(qd, dtype=float)
    m = mass_matrix(q, params)
    return 0.5 * np.einsum("...i,...ij,...j->...", qd, m, qd)


# --- synthetic trajectories -------------------------------------------------

# Waypoint ranges chosen so q1 + q2 stays inside (0, pi): the gravity map is
# then invertible and a torque trace determines the posture unambiguously.
WAYPOINT_LO = np.array([0.3, 0.5])
WAYPOINT_HI = np.array([0.8, 1.3])


def _quintic_rest_to_rest(q0, q1, duration, t):
    """Minimum-jerk segment: zero velocity/acceleration at both ends.

    Returns position, velocity, acceleration at times t (analytic, not FD).
    """
    x = np.clip(t / duration, 0.0, 1.0)[:, None]
    d = q1 - q0
    s = 10 * x**3 - 15 * x**4 + 6 * x**5
    ds = (30 * x**2 - 60 * x**3 + 30 * x**4) / duration
    dds = (60 * x - 180 * x**2 + 120 * x**3) / duration**2
    return q0 + d * s, d * ds, d * dds


@dataclass
class ArmTrial:
    """One generated trial: paired angle/torque sequences plus exact derivatives."""

    motion: MotionSequence
    torque: TorqueSequence
    qdot: np.ndarray
    qddot: np.ndarray


def generate_trajectory(params: ArmParams, n_frames: int, dt: float, rng, n_segments: int = 2):
    """Smooth random waypoint trajectory; returns (q, qd, qdd) arrays (T, 2).

    Every trial starts from the same neutral posture (the waypoint-box
    midpoint); the remaining waypoints are sampled uniformly.
    """
    waypoints = rng.uniform(WAYPOINT_LO, WAYPOINT_HI, size=(n_segments + 1, 2))
    waypoints[0] = 0.5 * (WAYPOINT_LO + WAYPOINT_HI)
    total = (n_frames - 1) * dt
    seg_dur = total / n_segments
    t = np.arange(n_frames) * dt
    seg = np.minimum((t / seg_dur).astype(int), n_segments - 1)
    q = np.empty((n_frames, 2))
    qd = np.empty((n_frames, 2))
    qdd = np.empty((n_frames, 2))
    for k in range(n_segments):
        mask = seg == k
        local = t[mask] - k * seg_dur
        q[mask], qd[mask], qdd[mask] = _quintic_rest_to_rest(
            waypoints[k], waypoints[k + 1], seg_dur, local
        )
    return q, qd, qdd


def generate_dataset(
    params: ArmParams, n_trials: int, n_frames: int, dt: float, seed: int, n_segments: int = 2
) -> list[ArmTrial]:
    """Paired (motion, torque) trials with analytic derivatives, deterministic per seed."""
    if n_frames < 16:
        raise ParameterError(f"n_frames must be >= 16, got {n_frames}")
    if not 0 < dt <= 0.1:
        raise ParameterError(f"dt must be in (0, 0.1], got {dt}")
    if n_trials < 1:
        raise ParameterError("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    joints = joints_from_names(JOINT_NAMES)
    trials = []
    for _ in range(n_trials):
        q, qd, qdd = generate_trajectory(params, n_frames, dt, rng, n_segments)
        tau = inverse_dynamics(q, qd, qdd, params)
        trials.append(
            ArmTrial(
                motion=MotionSequence(joints, dt, q),
                torque=TorqueSequence(joints, dt, tau),
                qdot=qd,
                qddot=qdd,
            )
        )
    return trials


def save_dataset(trials: list[ArmTrial], params: ArmParams, outdir, meta: dict | None = None):
    """Paired motion/torque CSVs (+ derivative CSVs) and a JSON manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, trial in enumerate(trials):
        stem = f"trial{i:03d}"
        save_sequence(trial.motion, outdir / f"{stem}_angles.csv")
        save_sequence(trial.torque, outdir / f"{stem}_torques.csv")
        save_sequence(trial.motion.with_frames(trial.qdot), outdir / f"{stem}_qdot.csv")
        save_sequence(trial.motion.with_frames(trial.qddot), outdir / f"{stem}_qddot.csv")
        entries.append(stem)
    manifest = {
        "arm_params": params.to_dict(),
        "trials": entries,
        "n_frames": trials[0].motion.n_frames,
        "dt": trials[0].motion.dt,
    }
    if meta:
        manifest.update(meta)
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_dataset(datadir) -> tuple[list[ArmTrial], ArmParams, dict]:
    datadir = Path(datadir)
    with open(datadir / "manifest.json") as fh:
        manifest = json.load(fh)
    params = ArmParams.from_dict(manifest["arm_params"])
    trials = []
    for stem in manifest["trials"]:
        motion = load_sequence(datadir / f"{stem}_angles.csv", kind="angle")
        torque = load_sequence(datadir / f"{stem}_torques.csv", kind="torque")
        qdot = load_sequence(datadir / f"{stem}_qdot.csv", kind="angle").frames
        qddot = load_sequence(datadir / f"{stem}_qddot.csv", kind="angle").frames
        trials.append(ArmTrial(motion, torque, qdot, qddot))
    return trials, params, manifest
