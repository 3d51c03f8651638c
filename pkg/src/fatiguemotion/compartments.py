"""Three-compartment muscle fatigue simulator.

Motor units of a joint are partitioned into active (M_A), fatigued (M_F) and
resting (M_R) pools, each in %MVC, summing to 100. A piecewise feedback
controller moves units between M_A and M_R to track a target load TL; active
units fatigue at rate F and fatigued units recover at rate R:

    dM_A/dt = C(t) - F*M_A
    dM_F/dt = F*M_A - R*M_F
    dM_R/dt = -C(t) + R*M_F

    C(t) = LD*(TL - M_A)   if M_A < TL and M_R >  (TL - M_A)
           LD*M_R          if M_A < TL and M_R <= (TL - M_A)
           LR*(TL - M_A)   if M_A >= TL

Residual capacity RC = 100 - M_F is the remaining torque-generating
capacity; its attenuated variant RC_hat = 100 - lam*M_F scales how strongly
fatigue reduces capacity per joint. This module is the deterministic
reference oracle for the learned fatigue network.

Everything is state-in/state-out; independent joints simulate in parallel
safely.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ParameterError

# Internal RK4 sub-step ceiling: the controller's development/relaxation
# rates (LD, LR ~ 10/s) bound the fastest time scale, and RK4 needs
# LD*dt well inside its stability region.
MAX_STEP = 0.05

_CONSERVATION_GUARD = 1e-9


@dataclass(frozen=True)
class Cc3Params:
    """Per-joint fatigue (F), recovery (R) and controller (LD, LR) rates, 1/s."""

    F: float
    R: float
    LD: float = 10.0
    LR: float = 10.0

    def __post_init__(self):
        for name in ("F", "R", "LD", "LR"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")


# Elbow rates from the published joint-specific fatigue literature.
ELBOW = Cc3Params(F=0.00912, R=0.00094)


@dataclass(frozen=True)
class CompartmentState:
    """Motor-unit pools in %MVC; components >= 0 and sum to 100."""

    M_A: float
    M_F: float
    M_R: float

    def __post_init__(self):
        for name in ("M_A", "M_F", "M_R"):
            if getattr(self, name) < -1e-9:
                raise ParameterError(f"{name} must be >= 0")
        if abs(self.M_A + self.M_F + self.M_R - 100.0) > 1e-6:
            raise ParameterError(
                f"pools must sum to 100, got {self.M_A + self.M_F + self.M_R}"
            )

    @classmethod
    def rested(cls) -> "CompartmentState":
        return cls(0.0, 0.0, 100.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.M_A, self.M_F, self.M_R])

    @classmethod
    def from_array(cls, a) -> "CompartmentState":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class LoadProfile:
    """Sampled target-load trace TL(t) in %MVC."""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if self.dt <= 0:
            raise ParameterError("dt must be > 0")
        if v.ndim != 1 or v.size == 0:
            raise ParameterError("profile must be a non-empty 1-D trace")
        if (v < 0).any() or (v > 100).any():
            raise ParameterError("target load must stay in [0, 100]")
        v.setflags(write=False)

    @classmethod
    def constant(cls, tl: float, duration: float, dt: float) -> "LoadProfile":
        n = int(round(duration / dt)) + 1
        return cls(np.full(n, float(tl)), dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.size) * self.dt


def _controller(m_a: float, m_r: float, tl: float, p: Cc3Params) -> float:
    if m_a < tl:
        if m_r > tl - m_a:
            return p.LD * (tl - m_a)
        return p.LD * m_r
    return p.LR * (tl - m_a)


def _derivs(s: np.ndarray, tl: float, p: Cc3Params) -> np.ndarray:
    c = _controller(s[0], s[2], tl, p)
    f_out = p.F * s[0]
    r_out = p.R * s[1]
    return np.array([c - f_out, f_out - r_out, -c + r_out])


def controller(state: CompartmentState, tl: float, params: Cc3Params) -> float:
    """Flow C(t) between resting and active pools, %MVC/s."""
    if not 0 <= tl <= 100:
        raise ParameterError(f"target load must be in [0,100], got {tl}")
    return _controller(state.M_A, state.M_R, tl, params)


def derivatives(state: CompartmentState, tl: float, params: Cc3Params) -> np.ndarray:
    """(dM_A/dt, dM_F/dt, dM_R/dt) in state order; the three sum to 0 exactly."""
    return _derivs(state.as_array(), tl, params)


def _rk4(s: np.ndarray, tl: float, p: Cc3Params, dt: float) -> np.ndarray:
    k1 = _derivs(s, tl, p)
    k2 = _derivs(s + 0.5 * dt * k1, tl, p)
    k3 = _derivs(s + 0.5 * dt * k2, tl, p)
    k4 = _derivs(s + dt * k3, tl, p)
    out = s + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    # Guard: pools stay non-negative and conserve the 100% total.
    out = np.maximum(out, 0.0)
    total = out.sum()
    if abs(total - 100.0) > _CONSERVATION_GUARD:
        out *= 100.0 / total
    return out


def step_rk4(state: CompartmentState, tl: float, params: Cc3Params, dt: float) -> CompartmentState:
    """One classical RK4 step (no sub-stepping; see :func:`simulate` for that)."""
    if not 0 < dt <= 0.5:
        raise ParameterError(f"dt must be in (0, 0.5], got {dt}")
    if not 0 <= tl <= 100:
        raise ParameterError(f"target load must be in [0,100], got {tl}")
    return CompartmentState.from_array(_rk4(state.as_array(), tl, params, dt))


@dataclass(frozen=True)
class Cc3Trajectory:
    """Simulated compartment history: times (n,) and states (n, 3) as (M_A, M_F, M_R)."""

    times: np.ndarray
    states: np.ndarray

    @property
    def M_A(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def M_F(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def M_R(self) -> np.ndarray:
        return self.states[:, 2]

    @property
    def rc(self) -> np.ndarray:
        return 100.0 - self.M_F

    def rc_lambda(self, lam: float) -> np.ndarray:
        if not 0 <= lam <= 1:
            raise ParameterError(f"lambda must be in [0,1], got {lam}")
        return 100.0 - lam * self.M_F

    def state_at(self, i: int) -> CompartmentState:
        return CompartmentState.from_array(self.states[i])

    def conservation_error(self) -> float:
        return float(np.abs(self.states.sum(axis=1) - 100.0).max())


def advance(state_arr: np.ndarray, tl: float, params: Cc3Params, dt: float) -> np.ndarray:
    """Advance one frame interval, sub-stepping so each RK4 step is <= MAX_STEP."""
    n_sub = max(1, int(np.ceil(dt / MAX_STEP)))
    h = dt / n_sub
    s = state_arr
    for _ in range(n_sub):
        s = _rk4(s, tl, params, h)
    return s


def simulate(
    initial: CompartmentState | None, load: LoadProfile, params: Cc3Params, dt: float | None = None
) -> Cc3Trajectory:
    """Integrate the compartments along a load profile, one state per sample.

    The target load is held constant across each sample interval. The first
    state is the initial state itself (all units rested by default).
    """
    if initial is None:
        initial = CompartmentState.rested()
    dt = load.dt if dt is None else dt
    if dt <= 0:
        raise ParameterError("dt must be > 0")
    n = load.values.size
    states = np.empty((n, 3))
    states[0] = initial.as_array()
    for i in range(1, n):
        states[i] = advance(states[i - 1], float(load.values[i - 1]), params, dt)
    return Cc3Trajectory(times=np.arange(n) * dt, states=states)


def residual_capacity(state: CompartmentState) -> float:
    """Remaining capacity RC = 100 - M_F = M_A + M_R, in %."""
    return 100.0 - state.M_F


def residual_capacity_lambda(m_f, lam: float):
    """Attenuated capacity RC_hat = 100 - lam * M_F; lam in [0,1]."""
    if not 0 <= lam <= 1:
        raise ParameterError(f"lambda must be in [0,1], got {lam}")
    return 100.0 - lam * np.asarray(m_f, dtype=float)


def modulate_torque(tau, rc_hat):
    """Scale torque by capacity: (RC_hat / 100) * tau. Sign is preserved."""
    rc_hat = np.asarray(rc_hat, dtype=float)
    if (rc_hat < 0).any() or (rc_hat > 100).any():
        raise ParameterError("RC_hat must be in [0, 100]")
    return (rc_hat / 100.0) * np.asarray(tau, dtype=float)


@dataclass(frozen=True)
class FatigueProfile:
    """Per-joint fatigue configuration: rates plus the attenuation factor."""

    joint: str
    F: float
    R: float
    LD: float = 10.0
    LR: float = 10.0
    lam: float = 1.0

    def __post_init__(self):
        if not 0 <= self.lam <= 1:
            raise ParameterError(f"lambda must be in [0,1], got {self.lam}")

    @property
    def cc3(self) -> Cc3Params:
        return Cc3Params(self.F, self.R, self.LD, self.LR)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FatigueProfile":
        d = dict(d)
        d["lam"] = d.pop("lambda")
        return cls(**d)


def save_profiles(profiles, path) -> None:
    """Profiles as a JSON array of {"joint", "F", "R", "LD", "LR", "lambda"}."""
    with open(path, "w") as fh:
        json.dump([p.to_dict() for p in profiles], fh, indent=2)
        fh.write("\n")


def load_profiles(path) -> dict[str, FatigueProfile]:
    with open(path) as fh:
        raw = json.load(fh)
    if isinstance(raw, dict):
        raw = [raw]
    profiles = [FatigueProfile.from_dict(d) for d in raw]
    return {p.joint: p for p in profiles}


def trajectory_to_csv(traj: Cc3Trajectory, path, lam: float = 1.0) -> None:
    """Trajectory export: t, M_A, M_F, M_R, RC, RC_lambda."""
    rc_l = traj.rc_lambda(lam)
    with open(path, "w") as fh:
        fh.write("t,M_A,M_F,M_R,RC,RC_lambda\n")
        for i in range(traj.times.size):
            cells = (traj.times[i], *traj.states[i], traj.rc[i], rc_l[i])
            fh.write(",".join(repr(float(c)) for c in cells) + "\n")
