"""Time stepping for the density equation and blow-up detection.

One step (see :func:`advance`):

1. ``v`` is the elliptic solution for the current ``u`` (kept in the state);
2. drift fluxes ``w_k v_s u_donor`` with the donor on the outer side of a
   face when ``v_s > 0`` (the velocity ``-v_s`` points at the origin);
3. implicit diffusion with the coefficient lagged over Picard sweeps;
4. conservative cell update with zero flux at both ends, then ``v`` is
   re-solved for the new ``u``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from . import _kernels
from .elliptic import RadialGrid, solve_v
from .errors import ConfigError, SchemeError
from .model import InitialProfile, ProblemParams

logger = logging.getLogger(__name__)

NEGATIVE_TOL = 1e-13
CLAMP_STREAK = 10
DOUBLING_WINDOW = 5


@dataclass(frozen=True)
class StepperConfig:
    cfl: float = 0.4
    dt_init: float = 1e-4
    dt_min: float = 1e-9
    dt_max: float = 1e-2
    t_end: float = 10.0
    u_blowup_factor: float = 1e3
    picard_iters: int = 2
    growth_clamp: float = 1.2
    max_steps: int = 10_000_000

    def __post_init__(self) -> None:
        if not 0.0 < self.cfl < 1.0:
            raise ConfigError(f"cfl must lie in (0, 1), got {self.cfl}", "cfl", "0 < cfl < 1")
        if not 0.0 < self.dt_min < self.dt_init <= self.dt_max:
            raise ConfigError(
                "need 0 < dt_min < dt_init <= dt_max, got "
                f"{self.dt_min}, {self.dt_init}, {self.dt_max}",
                "dt_init",
                "0 < dt_min < dt_init <= dt_max",
            )
        if not self.t_end > 0.0:
            raise ConfigError("t_end must be > 0", "t_end", "t_end > 0")
        if not self.u_blowup_factor > 1.0:
            raise ConfigError("u_blowup_factor must exceed 1", "u_blowup_factor", "u_blowup_factor > 1")
        if int(self.picard_iters) != self.picard_iters or self.picard_iters < 1:
            raise ConfigError("picard_iters must be a positive integer", "picard_iters", "picard_iters >= 1")
        if not self.growth_clamp > 1.0:
            raise ConfigError("growth_clamp must exceed 1", "growth_clamp", "growth_clamp > 1")


@dataclass
class SimState:
    t: float
    dt: float
    u: np.ndarray
    v: np.ndarray
    step: int
    mass0: float
    u0_max: float
    clamp_streak: int = 0

    @property
    def u_max(self) -> float:
        return float(np.max(self.u))


def initial_state(
    params: ProblemParams,
    grid: RadialGrid,
    u0: InitialProfile | np.ndarray,
    config: StepperConfig | None = None,
) -> SimState:
    """State at ``t = 0`` with cell averages of ``u0`` and the matching ``v``."""
    if isinstance(u0, InitialProfile):
        u = grid.cell_averages(u0)
    else:
        u = np.array(u0, dtype=float)
    v = solve_v(u, params, grid)
    mass0 = grid.total(u)
    dt = (config or StepperConfig()).dt_init
    return SimState(t=0.0, dt=dt, u=u, v=v, step=0, mass0=mass0, u0_max=float(np.max(u)))


def cfl_dt(state: SimState, grid: RadialGrid, config: StepperConfig, params: ProblemParams) -> float:
    """Largest admissible step: advective CFL and explicit positivity, within bounds."""
    gmax, positivity = _kernels.drift_limits(state.v, float(params.M), grid.vol, grid.weights, grid.h)
    dt = config.dt_max
    if gmax > 0.0:
        dt = min(dt, config.cfl * grid.h / gmax)
    dt = min(dt, positivity)
    return max(dt, config.dt_min)


def advance(
    state: SimState,
    config: StepperConfig,
    params: ProblemParams,
    grid: RadialGrid,
    dt_cap: float = math.inf,
) -> SimState:
    """Advance ``state`` in place by one accepted step and return it.

    The trial step is the smaller of the CFL step and twice the previous
    step; it is halved (down to ``dt_min``) while the sup-norm would grow by
    more than ``growth_clamp``.  ``dt_cap`` limits the step (used to land on
    ``t_end`` exactly) and may undercut ``dt_min``.
    """
    dt = cfl_dt(state, grid, config, params)
    if state.step > 0:
        dt = min(dt, 2.0 * state.dt)
    else:
        dt = min(dt, config.dt_init)
    dt = max(dt, config.dt_min)
    dt = min(dt, dt_cap)
    umax_old = state.u_max
    args = (float(params.M), float(params.m), float(params.k_D), grid.vol, grid.weights, grid.h)
    while True:
        u_new, v_new = _kernels.advance_kernel(state.u, state.v, *args, dt, int(config.picard_iters))
        umax_new = float(np.max(u_new))
        if not math.isfinite(umax_new):
            raise SchemeError(f"non-finite density at t={state.t:.6g}, dt={dt:.3g}")
        if umax_old > 0.0 and umax_new > config.growth_clamp * umax_old and dt > config.dt_min:
            dt = max(0.5 * dt, config.dt_min)
            continue
        break
    umin = float(np.min(u_new))
    if umin < 0.0:
        if umin < -NEGATIVE_TOL * max(1.0, umax_new):
            raise SchemeError(f"negative density {umin:.3e} at t={state.t:.6g}")
        # rounding-level undershoot in cells that are numerically empty
        np.maximum(u_new, 0.0, out=u_new)
        v_new = solve_v(u_new, params, grid)
    state.u = u_new
    state.v = v_new
    state.t += dt
    state.dt = dt
    state.step += 1
    state.clamp_streak = state.clamp_streak + 1 if dt <= config.dt_min else 0
    return state


class OutcomeLabel(str, Enum):
    COMPLETED_BOUNDED = "CompletedBounded"
    BLOWUP_DETECTED = "BlowupDetected"
    MAX_STEPS_REACHED = "MaxStepsReached"
    SCHEME_ERROR = "SchemeError"


@dataclass
class Outcome:
    label: OutcomeLabel
    t: float
    steps: int
    evidence: dict = field(default_factory=dict)


@dataclass
class DoublingTracker:
    """Times at which the sup-norm first crosses ``u0_max * 2**k``."""

    base: float
    crossings: list[float] = field(default_factory=list)

    def update(self, t: float, u_max: float) -> None:
        if self.base <= 0.0:
            return
        level = self.base * 2.0 ** (len(self.crossings) + 1)
        while u_max >= level:
            self.crossings.append(t)
            level *= 2.0

    @property
    def intervals(self) -> list[float]:
        times = [0.0] + self.crossings
        return [b - a for a, b in zip(times[:-1], times[1:])]

    def accelerating(self, window: int = DOUBLING_WINDOW) -> bool:
        """True if the last ``window`` doubling intervals never lengthen and shrink overall."""
        d = self.intervals
        if len(d) < window:
            return False
        d = d[-window:]
        return all(b <= a for a, b in zip(d[:-1], d[1:])) and d[-1] < d[0]


def run_until(
    state: SimState,
    config: StepperConfig,
    params: ProblemParams,
    grid: RadialGrid,
    monitors: Callable[[SimState], object] | None = None,
    cadence: float = 10.0,
):
    """Step until ``t_end``, detected blow-up, or ``max_steps``.

    ``monitors`` is called on the initial state, every ``1/cadence`` units of
    simulated time, and on the final state; its return values form the
    trajectory.  Blow-up is declared only when the sup-norm has grown by
    ``u_blowup_factor`` *and* either the step has sat at ``dt_min`` for
    ``CLAMP_STREAK`` consecutive steps or the last ``DOUBLING_WINDOW``
    sup-norm doubling times shrink.
    """
    trajectory: list = []
    record = monitors if monitors is not None else (lambda s: None)
    period = 1.0 / cadence if cadence > 0 else math.inf
    next_record = state.t + period
    tracker = DoublingTracker(state.u0_max)
    threshold = config.u_blowup_factor * state.u0_max
    trajectory.append(record(state))
    recorded_step = state.step
    label = OutcomeLabel.COMPLETED_BOUNDED
    while True:
        remaining = config.t_end - state.t
        if remaining <= 1e-12 * max(1.0, config.t_end):
            break
        if state.step >= config.max_steps:
            label = OutcomeLabel.MAX_STEPS_REACHED
            break
        advance(state, config, params, grid, dt_cap=remaining)
        u_max = state.u_max
        tracker.update(state.t, u_max)
        if u_max >= threshold and (
            state.clamp_streak >= CLAMP_STREAK or tracker.accelerating()
        ):
            label = OutcomeLabel.BLOWUP_DETECTED
            break
        if state.t >= next_record - 1e-12 * period:
            trajectory.append(record(state))
            recorded_step = state.step
            while next_record <= state.t + 1e-12 * period:
                next_record += period
    if state.step != recorded_step:
        trajectory.append(record(state))
    evidence = {
        "u_max_ratio": state.u_max / state.u0_max if state.u0_max > 0 else math.nan,
        "doubling_times": tracker.intervals,
        "clamp_streak": state.clamp_streak,
        "dt_final": state.dt,
    }
    logger.info("run ended: %s at t=%.6g after %d steps", label.value, state.t, state.step)
    return trajectory, Outcome(label, state.t, state.step, evidence)
