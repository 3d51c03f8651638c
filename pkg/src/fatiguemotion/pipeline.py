"""End-to-end fatigue modulation: angles -> torques -> fatigue -> angles.

The stages run sequence-level (the surrogates are bidirectional and need
whole trials): one inverse-dynamics pass over the motion, per-joint fatigue
modulation of the predicted torques, then one forward-dynamics pass over the
modulated torques. Joints without a fatigue profile pass their unmodulated
torque through to the forward model. Deviation metrics compare against the
unmodulated round trip FD(ID(q)), which isolates the fatigue effect from
surrogate error.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compartments import CompartmentState, FatigueProfile, advance, modulate_torque
from .errors import DegenerateChannelError, ParameterError, ShapeError
from .sequences import MotionSequence, NormalizationParams, torque_to_activation
from .surrogates import BiLstmModel


def nrmse(pred, truth) -> float:
    """100 * RMSE / (max(truth) - min(truth)), in percent of the truth range."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or truth.size < 2:
        raise ShapeError("traces must have equal length >= 2")
    span = truth.max() - truth.min()
    if span == 0:
        raise DegenerateChannelError("truth trace is constant; NRMSE undefined")
    return float(100.0 * np.sqrt(np.mean((pred - truth) ** 2)) / span)


def r_squared(pred, truth) -> float:
    """Squared Pearson correlation between the traces."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or truth.size < 2:
        raise ShapeError("traces must have equal length >= 2")
    dp = pred - pred.mean()
    dt_ = truth - truth.mean()
    sp = np.sqrt(np.sum(dp**2))
    st = np.sqrt(np.sum(dt_**2))
    if sp == 0 or st == 0:
        raise DegenerateChannelError("constant trace; correlation undefined")
    r = np.sum(dp * dt_) / (sp * st)
    return float(r**2)


@dataclass
class PipelineConfig:
    """Trained models, normalization, and fatigue settings for one joint set.

    ``profiles`` lists the modulated joints; every joint of the motion needs
    ID/FD models so the full torque vector can be assembled. ``tau_max`` (the
    %MVC scaling) defaults to the largest absolute torque seen in training,
    taken from the torque normalization bounds.
    """

    angle_norm: NormalizationParams
    torque_norm: NormalizationParams
    id_models: dict[str, BiLstmModel]
    fd_models: dict[str, BiLstmModel]
    profiles: dict[str, FatigueProfile] = field(default_factory=dict)
    mode: str = "dynamic"
    fixed_level: float | None = None
    tau_max: dict[str, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("dynamic", "fixed"):
            raise ParameterError(f"mode must be 'dynamic' or 'fixed', got {self.mode!r}")
        if self.mode == "fixed":
            if self.fixed_level is None or not 0 <= self.fixed_level <= 100:
                raise ParameterError("fixed mode needs fixed_level in [0,100]")
        if self.angle_norm.joints != self.torque_norm.joints:
            raise ShapeError("angle and torque normalization joint sets differ")
        for name in self.angle_norm.joints:
            if name not in self.id_models or name not in self.fd_models:
                raise ParameterError(f"joint {name!r}: missing ID or FD model")
        for name in self.profiles:
            if name not in self.angle_norm.joints:
                raise ParameterError(f"profile for unknown joint {name!r}")
        if self.tau_max is None:
            self.tau_max = {
                name: float(max(abs(self.torque_norm.lo[i]), abs(self.torque_norm.hi[i])))
                for i, name in enumerate(self.torque_norm.joints)
            }

    def config_hash(self) -> str:
        doc = {
            "joints": list(self.angle_norm.joints),
            "angle_norm": self.angle_norm.to_dict(),
            "torque_norm": self.torque_norm.to_dict(),
            "profiles": {k: v.to_dict() for k, v in sorted(self.profiles.items())},
            "mode": self.mode,
            "fixed_level": self.fixed_level,
            "tau_max": dict(sorted(self.tau_max.items())),
            "seed": self.seed,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


@dataclass
class JointFatigueTrace:
    """Per-frame fatigue history of one modulated joint."""

    rc_hat: np.ndarray
    m_a: np.ndarray | None = None
    m_f: np.ndarray | None = None
    m_r: np.ndarray | None = None


@dataclass
class FatigueReport:
    """Traces, deviation metrics vs the unmodulated round trip, and run metadata."""

    baseline: MotionSequence
    torques: np.ndarray            # (T, N) predicted raw torques
    modulated_torques: np.ndarray  # (T, N) after capacity scaling
    traces: dict[str, JointFatigueTrace]
    nrmse: dict[str, float]
    r2: dict[str, float]
    metadata: dict

    def save(self, path) -> None:
        doc = {
            "metadata": self.metadata,
            "nrmse": self.nrmse,
            "r2": self.r2,
            "traces": {
                name: {
                    k: getattr(tr, k).tolist()
                    for k in ("rc_hat", "m_a", "m_f", "m_r")
                    if getattr(tr, k) is not None
                }
                for name, tr in self.traces.items()
            },
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


def _predict_all(models: dict[str, BiLstmModel], order, frames: np.ndarray) -> np.ndarray:
    out = np.empty_like(frames)
    for i, name in enumerate(order):
        out[:, i] = models[name].predict_sequence(frames)
    return out


def apply_fatigue(motion: MotionSequence, config: PipelineConfig):
    """Run the full chain on one motion; returns (fatigued motion, report)."""
    if motion.joint_names != config.angle_norm.joints:
        raise ShapeError(
            f"motion joints {motion.joint_names} do not match pipeline {config.angle_norm.joints}"
        )
    if motion.normalized:
        raise ParameterError("apply_fatigue expects a denormalized motion")
    order = motion.joint_names
    t_len = motion.n_frames

    x = config.angle_norm.apply(motion.frames)
    tau_norm = _predict_all(config.id_models, order, x)
    tau_raw = config.torque_norm.invert(tau_norm)

    baseline_norm = _predict_all(config.fd_models, order, tau_norm)
    baseline = MotionSequence(motion.joints, motion.dt, config.angle_norm.invert(baseline_norm))

    tau_mod = tau_raw.copy()
    traces: dict[str, JointFatigueTrace] = {}
    for name, profile in config.profiles.items():
        j = order.index(name)
        if config.mode == "fixed":
            rc_hat = np.full(t_len, float(config.fixed_level))
            tau_mod[:, j] = modulate_torque(tau_raw[:, j], rc_hat)
            traces[name] = JointFatigueTrace(rc_hat=rc_hat)
        else:
            cc3 = profile.cc3
            state = CompartmentState.rested().as_array()
            m_hist = np.empty((t_len, 3))
            rc_hat = np.empty(t_len)
            for t in range(t_len):
                act = torque_to_activation(tau_raw[t, j], config.tau_max[name])
                state = advance(state, act, cc3, motion.dt)
                m_hist[t] = state
                rc_hat[t] = 100.0 - profile.lam * state[1]
            tau_mod[:, j] = modulate_torque(tau_raw[:, j], rc_hat)
            traces[name] = JointFatigueTrace(
                rc_hat=rc_hat, m_a=m_hist[:, 0], m_f=m_hist[:, 1], m_r=m_hist[:, 2]
            )

    fatigued_norm = _predict_all(config.fd_models, order, config.torque_norm.apply(tau_mod))
    fatigued = MotionSequence(motion.joints, motion.dt, config.angle_norm.invert(fatigued_norm))

    dev_nrmse = {}
    dev_r2 = {}
    for i, name in enumerate(order):
        dev_nrmse[name] = nrmse(fatigued.frames[:, i], baseline.frames[:, i])
        dev_r2[name] = r_squared(fatigued.frames[:, i], baseline.frames[:, i])
    metadata = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "mode": config.mode,
        "fixed_level": config.fixed_level,
        "joints": list(order),
        "modulated_joints": sorted(config.profiles),
        "n_frames": t_len,
        "dt": motion.dt,
    }
    report = FatigueReport(
        baseline=baseline,
        torques=tau_raw,
        modulated_torques=tau_mod,
        traces=traces,
        nrmse=dev_nrmse,
        r2=dev_r2,
        metadata=metadata,
    )
    return fatigued, report


def _unit_scale(*traces):
    lo = min(float(tr.min()) for tr in traces)
    hi = max(float(tr.max()) for tr in traces)
    if hi == lo:
        raise DegenerateChannelError("constant trace; cannot scale to [0,1]")
    return lo, hi


def export_curves(baseline: MotionSequence, runs, outdir) -> list[str]:
    """Per-joint baseline-vs-fatigued angle curves (scaled to [0,1] jointly) and
    compartment/capacity traces, one file set per run.

    ``runs`` is a list of (label, fatigued MotionSequence, FatigueReport).
    Returns the written file names; re-export is byte-identical.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    times = baseline.times
    for label, fatigued, report in runs:
        if fatigued.joint_names != baseline.joint_names:
            raise ShapeError("run joint set differs from baseline")
        if fatigued.n_frames != baseline.n_frames:
            raise ShapeError("run length differs from baseline")
        for i, name in enumerate(baseline.joint_names):
            base = baseline.frames[:, i]
            fat = fatigued.frames[:, i]
            lo, hi = _unit_scale(base, fat)
            fname = f"{name}_{label}_angles.csv"
            with open(outdir / fname, "w") as fh:
                fh.write("t,baseline,fatigued\n")
                for t, b, f in zip(times, (base - lo) / (hi - lo), (fat - lo) / (hi - lo)):
                    fh.write(f"{float(t)!r},{float(b)!r},{float(f)!r}\n")
            written.append(fname)
        for name, tr in report.traces.items():
            if tr.m_a is not None:
                fname = f"{name}_{label}_compartments.csv"
                with open(outdir / fname, "w") as fh:
                    fh.write("t,M_A,M_F,M_R,RC,RC_hat\n")
                    for k in range(times.size):
                        cells = (times[k], tr.m_a[k], tr.m_f[k], tr.m_r[k], 100.0 - tr.m_f[k], tr.rc_hat[k])
                        fh.write(",".join(repr(float(c)) for c in cells) + "\n")
            else:
                fname = f"{name}_{label}_capacity.csv"
                with open(outdir / fname, "w") as fh:
                    fh.write("t,RC_hat\n")
                    for k in range(times.size):
                        fh.write(f"{float(times[k])!r},{float(tr.rc_hat[k])!r}\n")
            written.append(fname)
    return written
