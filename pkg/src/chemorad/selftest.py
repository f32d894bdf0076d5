"""Quick analytic-oracle checks of a build, used by ``chemorad selftest``."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diagnostics import Diagnostics, MonitorConfig
from .elliptic import RadialGrid, solve_v, v_at_origin
from .model import InitialProfile, ProblemParams, choose_exponents, derive_constants
from .stepper import StepperConfig, advance, initial_state


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _exact_v(s: np.ndarray, c: float, M: float, R: float = 1.0) -> np.ndarray:
    # n = 3, u = c constant: v = M R sinh(k s) / (s sinh(k R)), k = sqrt(c)
    k = math.sqrt(c)
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = s < 1e-8
    out[~small] = M * R * np.sinh(k * s[~small]) / (s[~small] * math.sinh(k * R))
    out[small] = M * R * k / math.sinh(k * R)
    return out


def check_elliptic_order() -> Check:
    params = ProblemParams(n=3, R=1.0, M=1.0)
    errors, origin_ok = [], True
    for N in (64, 128, 256):
        grid = RadialGrid.for_problem(N, params)
        v = solve_v(np.ones(N), params, grid)
        errors.append(float(np.max(np.abs(v - _exact_v(grid.centers, 1.0, 1.0)))))
        v0_err = abs(v_at_origin(v) - 1.0 / math.sinh(1.0))
        origin_ok &= v0_err <= 10.0 * grid.h**2
    orders = [math.log2(a / b) for a, b in zip(errors[:-1], errors[1:])]
    passed = all(1.8 <= p <= 2.2 for p in orders) and origin_ok
    return Check("elliptic order", passed, "orders " + ", ".join(f"{p:.3f}" for p in orders))


def check_elliptic_scaled() -> Check:
    params = ProblemParams(n=3, R=1.0, M=2.0)
    grid = RadialGrid.for_problem(256, params)
    v = solve_v(np.full(256, 4.0), params, grid)
    err = abs(v_at_origin(v) - 4.0 / math.sinh(2.0))
    return Check("elliptic u=4, M=2", err <= 10.0 * grid.h**2, f"v(0) error {err:.2e}")


def check_conservation(steps: int = 2000) -> Check:
    params = ProblemParams(n=3, m=0.5, M=1.0)
    grid = RadialGrid.for_problem(128, params)
    config = StepperConfig(t_end=1e9)
    state = initial_state(params, grid, InitialProfile.gaussian(2.0, 0.3, 0.1), config)
    worst_v = 0.0
    for _ in range(steps):
        advance(state, config, params, grid)
        worst_v = max(worst_v, float(np.max(state.v)) - params.M)
        if np.min(state.u) < 0.0 or np.min(state.v) <= 0.0:
            return Check("conservation", False, f"sign violation at step {state.step}")
    drift = abs(grid.total(state.u) - state.mass0) / state.mass0
    passed = drift <= 1e-10 and worst_v <= 1e-12
    return Check("conservation", passed, f"relative mass drift {drift:.1e} after {steps} steps")


def check_drift_sign(steps: int = 100) -> Check:
    # weak diffusion so that the chemical drift dominates the spreading of the annulus
    params = ProblemParams(n=3, m=1.0, M=1.0, k_D=0.1)
    grid = RadialGrid.for_problem(256, params)
    config = StepperConfig(t_end=1e9)
    state = initial_state(params, grid, InitialProfile.annulus(10.0, 0.6, 0.9), config)

    def centre(u):
        return float(np.sum(grid.vol * u * grid.centers) / np.sum(grid.vol * u))

    radii = [centre(state.u)]
    for _ in range(steps):
        advance(state, config, params, grid)
        radii.append(centre(state.u))
    passed = all(b < a for a, b in zip(radii[:-1], radii[1:]))
    return Check("drift sign", passed, f"centre of mass {radii[0]:.5f} -> {radii[-1]:.5f}")


def check_monitors(fields: int = 10, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    worst_excess = -math.inf
    for _ in range(fields):
        M = float(rng.uniform(0.5, 5.0))
        params = ProblemParams(n=3, m=0.5, M=M)
        grid = RadialGrid.for_problem(128, params)
        u = rng.uniform(0.0, 5.0, grid.N)
        derived = derive_constants(params, InitialProfile.constant(1.0))
        derived = type(derived)(grid.total(u), derived.sigma_n, float(u.max()))
        exps = choose_exponents(params, derived=derived)
        diag = Diagnostics(params, grid, derived, MonitorConfig(exps))
        rec = diag.evaluate(0.0, 0.0, u, solve_v(u, params, grid))
        for name, (val, _) in rec.residuals.items():
            worst_excess = max(worst_excess, val - diag.tolerance(name))
    return Check("stationary monitors", worst_excess <= 0.0, f"worst residual - tolerance {worst_excess:.2e}")


CHECKS: tuple[Callable[[], Check], ...] = (
    check_elliptic_order,
    check_elliptic_scaled,
    check_conservation,
    check_drift_sign,
    check_monitors,
)


def run_selftest(echo: Callable[[str], None] | None = print) -> list[Check]:
    results = []
    for fn in CHECKS:
        res = fn()
        results.append(res)
        if echo is not None:
            echo(f"{'PASS' if res.passed else 'FAIL'}  {res.name}: {res.detail}")
    return results
