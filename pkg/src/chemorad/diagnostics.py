"""Functionals of the mass accumulation function and inequality monitors.

Every monitor returns a *signed residual*: positive means the inequality is
violated, negative means it holds with room to spare.  Monitors never raise
on a violation; the run records it and carries on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .elliptic import RadialGrid, face_gradient, v_at_origin
from .errors import ConfigError
from .model import (
    DerivedConstants,
    ExponentChoice,
    ProblemParams,
    barrier_W,
    barrier_Z,
    smallness_threshold_Mstar,
)

MONITOR_NAMES = (
    "vmax",
    "v0bound",
    "logv",
    "vgrad_far",
    "vgrad_near",
    "vgrad_U",
    "barrier",
)
VMAX_REL_TOL = 1e-12


def mass_accumulation(u: np.ndarray, grid: RadialGrid) -> np.ndarray:
    """``U`` at the ``N + 1`` faces as prefix sums of the cell masses ``vol_i u_i``."""
    U = np.empty(grid.N + 1)
    U[0] = 0.0
    np.cumsum(grid.vol * u, out=U[1:])
    return U


def _power_integral(a: np.ndarray, b: np.ndarray, p: float) -> np.ndarray:
    """``int_a^b s^p ds`` for ``0 < a < b``."""
    if p == -1.0:
        return np.log(b / a)
    return (b ** (p + 1.0) - a ** (p + 1.0)) / (p + 1.0)


def _weighted_cell_integrals(U: np.ndarray, weight_exp: float, grid: RadialGrid) -> np.ndarray:
    """``int s^{-weight_exp} U(s) ds`` over each cell.

    Inside cell ``i`` the density is the constant ``(U_{i+1} - U_i)/vol_i``,
    so ``U(s) = U_i + u_i (s^n - s_i^n)/n`` exactly; the integrals are taken
    in closed form.  In the first cell this is the local model
    ``U ~ U(h) (s/h)^n``.
    """
    n = grid.n
    f = grid.faces
    u = np.diff(U) / grid.vol
    out = np.empty(grid.N)
    if n + 1.0 - weight_exp <= 0.0:
        raise ConfigError(f"weight s^-{weight_exp} is not integrable against U ~ s^{n}")
    out[0] = u[0] / n * f[1] ** (n + 1.0 - weight_exp) / (n + 1.0 - weight_exp)
    a, b = f[1:-1], f[2:]
    Ui, ui = U[1:-1], u[1:]
    base = _power_integral(a, b, -weight_exp)
    high = _power_integral(a, b, n - weight_exp)
    out[1:] = Ui * base + ui / n * (high - a**n * base)
    return out


def phi(U: np.ndarray, alpha: float, grid: RadialGrid) -> float:
    """``int_0^R s^{-alpha} U(s) ds``; exact for piecewise-constant densities."""
    return float(np.sum(_weighted_cell_integrals(U, alpha, grid)))


def psi(U: np.ndarray, grid: RadialGrid) -> float:
    """``int_0^R s^{1-n} U(s) ds``; exact for piecewise-constant densities."""
    return float(np.sum(_weighted_cell_integrals(U, grid.n - 1.0, grid)))


def _worst(res: np.ndarray, where: np.ndarray) -> tuple[float, float]:
    if res.size == 0:
        return -math.inf, math.nan
    k = int(np.argmax(res))
    return float(res[k]), float(where[k])


def monitor_v0_bound(v0: float, psi_value: float, M: float) -> float:
    """``v(0) - M/(1 + psi)``."""
    return v0 - M / (1.0 + psi_value)


def monitor_logv_gradient(
    u: np.ndarray, v: np.ndarray, U: np.ndarray, grid: RadialGrid
) -> tuple[float, float]:
    """Worst ``s^{1-n}U/(1 + int_0^s r^{1-n}U) - d(ln v)/ds`` over interior faces.

    Returns ``(residual, radius)``.  The log derivative is a difference of
    logarithms across the face, so summing it telescopes to
    ``ln(v_{N-1}/v_0)``.
    """
    f = grid.faces[1:-1]
    dlog = np.diff(np.log(v)) / grid.h
    inner = np.cumsum(_weighted_cell_integrals(U, grid.n - 1.0, grid))[:-1]
    rhs = U[1:-1] / grid.weights[1:-1] / (1.0 + inner)
    return _worst(rhs - dlog, f)


def monitor_vgrad_bounds(
    v: np.ndarray,
    U: np.ndarray,
    grid: RadialGrid,
    exponents: ExponentChoice,
    derived: DerivedConstants,
    params: ProblemParams,
) -> dict[str, tuple[float, float]]:
    """Residuals of the three pointwise upper bounds on ``v_s``.

    ``far``: ``v_s <= delta0^{1-n} L M`` for ``s >= delta0``;
    ``near``: ``v_s <= (n-2) M c_star / s`` for ``s <= R(1-1/c_star)^{1/(n-2)}``;
    ``U``: ``v_s <= M s^{1-n} U`` everywhere.
    Each entry is ``(worst residual, radius)``.
    """
    n, M = params.n, params.M
    g = face_gradient(v, grid, M)[1:]
    f = grid.faces[1:]
    far = f >= exponents.delta0 * (1.0 - 1e-14)
    near = f <= exponents.near_cutoff(params) * (1.0 + 1e-14)
    return {
        "far": _worst(g[far] - exponents.delta0 ** (1 - n) * derived.L * M, f[far]),
        "near": _worst(g[near] - (n - 2) * M * exponents.c_star / f[near], f[near]),
        "U": _worst(g - M * U[1:] / grid.weights[1:], f),
    }


def z_barrier_applies(params: ProblemParams, exponents: ExponentChoice) -> bool:
    return (
        params.m == 1.0
        and params.M < params.z_threshold
        and exponents.beta is not None
        and exponents.delta1 is not None
    )


def w_barrier_applies(params: ProblemParams, exponents: ExponentChoice, derived: DerivedConstants) -> bool:
    if not (0.0 < params.m < 1.0 and exponents.gamma is not None and derived.eta is not None):
        return False
    return params.M <= smallness_threshold_Mstar(exponents.gamma, derived.eta, params)


def monitor_barriers(
    U: np.ndarray,
    grid: RadialGrid,
    exponents: ExponentChoice,
    derived: DerivedConstants,
    params: ProblemParams,
    barrier: str,
) -> tuple[float, float]:
    """Worst ``U(s) - barrier(s)`` over the faces where the barrier is claimed.

    ``barrier`` is ``"Z"`` (faces in ``(0, delta1)``) or ``"W"`` (faces in
    ``(0, R]``).  Requesting a barrier outside its regime raises
    :class:`ConfigError`.
    """
    f = grid.faces
    if barrier == "Z":
        if not z_barrier_applies(params, exponents):
            raise ConfigError(
                "Z barrier needs m = 1 and M < 2k_D/(n-2)", "beta", "m = 1 and M < 2k_D/(n-2)"
            )
        sel = (f > 0.0) & (f < exponents.delta1)
        bound = barrier_Z(f[sel], exponents.beta, exponents.delta1, derived.L, params.n)
    elif barrier == "W":
        if not w_barrier_applies(params, exponents, derived):
            raise ConfigError("W barrier needs 0 < m < 1 and M <= M*(gamma)", "gamma", "M <= M*")
        sel = f > 0.0
        bound = barrier_W(f[sel], exponents.gamma, derived.eta, params.n, params.R)
    else:
        raise ConfigError(f"unknown barrier {barrier!r}", "barrier")
    return _worst(U[sel] - bound, f[sel])


def monitor_vmax(v: np.ndarray, M: float) -> tuple[float, float]:
    """``(max v - M, -min v)``; both should be <= ``1e-12 M``."""
    return float(np.max(v) - M), float(-np.min(v))


# --------------------------------------------------------------------------
# per-slice records


@dataclass(frozen=True)
class MonitorConfig:
    """Which monitors run and how much discretisation slack each gets.

    The slack is ``c1 h + c2 h^2``; ``c1 = None`` means ``5 max(M, L, 1)``.
    """

    exponents: ExponentChoice
    enabled: frozenset[str] = frozenset(MONITOR_NAMES)
    c1: float | None = None
    c2: float = 50.0

    def __post_init__(self) -> None:
        unknown = set(self.enabled) - set(MONITOR_NAMES)
        if unknown:
            raise ConfigError(f"unknown monitors {sorted(unknown)}", "monitors")
        if (self.c1 is not None and self.c1 < 0.0) or self.c2 < 0.0:
            raise ConfigError("tolerance coefficients must be >= 0", "monitors")

    def slope(self, params: ProblemParams, derived: DerivedConstants) -> float:
        return self.c1 if self.c1 is not None else 5.0 * max(params.M, derived.L, 1.0)

    def tolerance(self, name: str, h: float, params: ProblemParams, derived: DerivedConstants) -> float:
        if name == "vmax":
            return VMAX_REL_TOL * max(params.M, 1.0)
        return self.slope(params, derived) * h + self.c2 * h * h


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    dt: float
    mass: float
    u_max: float
    v0: float
    phi: float
    psi: float
    residuals: dict[str, tuple[float, float]] = field(default_factory=dict)

    def residual(self, name: str) -> float:
        return self.residuals.get(name, (math.nan, math.nan))[0]


CSV_COLUMNS = (
    "t",
    "dt",
    "mass",
    "u_max",
    "v0",
    "phi",
    "psi",
    "res_vmax",
    "res_v0bound",
    "res_logv",
    "res_vgrad_far",
    "res_vgrad_near",
    "res_vgrad_U",
    "res_barrier",
)


def record_row(rec: DiagnosticsRecord) -> list[float]:
    """CSV row in :data:`CSV_COLUMNS` order; disabled monitors are NaN."""
    return [rec.t, rec.dt, rec.mass, rec.u_max, rec.v0, rec.phi, rec.psi] + [
        rec.residual(c[len("res_"):]) for c in CSV_COLUMNS[7:]
    ]


def phi_weight(params: ProblemParams, exponents: ExponentChoice) -> float:
    """Exponent used for the recorded ``phi``.

    Outside the blow-up window there is no admissible ``alpha``; the record
    then uses ``n - 2.5`` (0.5 in three dimensions), which keeps ``phi``
    finite and comparable across runs.
    """
    return exponents.alpha if exponents.alpha is not None else params.n - 2.5


class Diagnostics:
    """Callable that turns a simulation state into a :class:`DiagnosticsRecord`.

    ``barrier`` selects the barrier monitor (``"Z"``, ``"W"`` or ``None``).
    """

    def __init__(
        self,
        params: ProblemParams,
        grid: RadialGrid,
        derived: DerivedConstants,
        monitors: MonitorConfig,
        barrier: str | None = None,
    ):
        self.params = params
        self.grid = grid
        self.derived = derived
        self.config = monitors
        self.exponents = monitors.exponents
        self.alpha = phi_weight(params, self.exponents)
        self.barrier = barrier
        if barrier == "Z" and not z_barrier_applies(params, self.exponents):
            raise ConfigError("Z barrier needs m = 1 and M < 2k_D/(n-2)", "beta", "M < 2k_D/(n-2)")
        if barrier == "W" and not w_barrier_applies(params, self.exponents, derived):
            raise ConfigError("W barrier needs 0 < m < 1 and M <= M*(gamma)", "gamma", "M <= M*")

    @classmethod
    def auto_barrier(cls, params: ProblemParams, exponents: ExponentChoice, derived: DerivedConstants) -> str | None:
        if z_barrier_applies(params, exponents):
            return "Z"
        if w_barrier_applies(params, exponents, derived):
            return "W"
        return None

    def tolerance(self, name: str) -> float:
        return self.config.tolerance(name, self.grid.h, self.params, self.derived)

    def evaluate(self, t: float, dt: float, u: np.ndarray, v: np.ndarray) -> DiagnosticsRecord:
        p, grid, enabled = self.params, self.grid, self.config.enabled
        U = mass_accumulation(u, grid)
        v0 = v_at_origin(v, grid)
        psi_value = psi(U, grid)
        res: dict[str, tuple[float, float]] = {}
        if "vmax" in enabled:
            over, under = monitor_vmax(v, p.M)
            res["vmax"] = (max(over, under), math.nan)
        if "v0bound" in enabled:
            res["v0bound"] = (monitor_v0_bound(v0, psi_value, p.M), 0.0)
        if "logv" in enabled and p.M > 0.0:
            res["logv"] = monitor_logv_gradient(u, v, U, grid)
        if enabled & {"vgrad_far", "vgrad_near", "vgrad_U"}:
            grads = monitor_vgrad_bounds(v, U, grid, self.exponents, self.derived, p)
            for key, val in grads.items():
                if f"vgrad_{key}" in enabled:
                    res[f"vgrad_{key}"] = val
        if "barrier" in enabled and self.barrier is not None:
            res["barrier"] = monitor_barriers(U, grid, self.exponents, self.derived, p, self.barrier)
        return DiagnosticsRecord(
            t=t,
            dt=dt,
            mass=self.derived.sigma_n * float(U[-1]),
            u_max=float(np.max(u)),
            v0=v0,
            phi=phi(U, self.alpha, grid),
            psi=psi_value,
            residuals=res,
        )

    def __call__(self, state) -> DiagnosticsRecord:
        return self.evaluate(state.t, state.dt, state.u, state.v)

    def violations(self, records: Iterable[DiagnosticsRecord]) -> dict[str, float]:
        """Worst residual minus tolerance per monitor (positive = violated)."""
        worst = worst_residuals(records)
        return {k: v - self.tolerance(k) for k, v in worst.items()}


def worst_residuals(records: Iterable[DiagnosticsRecord]) -> dict[str, float]:
    worst: dict[str, float] = {}
    for rec in records:
        for key, (val, _) in rec.residuals.items():
            if not math.isnan(val):
                worst[key] = max(worst.get(key, -math.inf), val)
    return worst


# --------------------------------------------------------------------------
# blow-up evidence

MIN_EVIDENCE_RECORDS = 20


def _slope(t: np.ndarray, y: np.ndarray) -> float:
    if t.size < 2 or np.ptp(t) == 0.0:
        return 0.0
    tc = t - t.mean()
    return float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))


def blowup_evidence(
    records: Sequence[DiagnosticsRecord],
    alpha: float,
    derived: DerivedConstants,
    params: ProblemParams,
    tol: float = 0.0,
    doubling_times: Sequence[float] | None = None,
) -> dict:
    """Summary of how ``phi``, ``psi`` and the sup-norm behaved over a run.

    * ``phi_slope``: least-squares slope of ``phi(t)`` over the final half of
      the time span;
    * ``psi_above_cstar``: whether ``psi >= (1/2) R^{alpha+1-n} phi(0)`` on
      every record (the sufficient condition for linear growth of ``phi``);
    * ``phi_bound_excess`` (three dimensions, ``alpha < 1``): the worst of
      ``phi - L R^{1-alpha}/(1-alpha) - tol``.

    The evidence never changes a run's outcome.  In three dimensions the
    bound needs ``alpha < 1``; a larger weight is a configuration error.
    """
    if params.n == 3 and alpha >= 1.0:
        raise ConfigError(f"the n = 3 phi bound needs alpha < 1, got {alpha}", "alpha", "alpha < 1")
    if len(records) < MIN_EVIDENCE_RECORDS:
        return {"insufficient_data": True, "records": len(records)}
    t = np.array([r.t for r in records])
    ph = np.array([r.phi for r in records])
    ps = np.array([r.psi for r in records])
    um = np.array([r.u_max for r in records])
    half = t >= t[0] + 0.5 * (t[-1] - t[0])
    c_star = float(0.5 * params.R ** (-params.n + alpha + 1.0) * ph[0])
    out = {
        "insufficient_data": False,
        "records": len(records),
        "phi_slope": _slope(t[half], ph[half]),
        "phi_increasing": bool(np.all(np.diff(ph[half]) > 0.0)),
        "C_star": c_star,
        "psi_above_cstar": bool(np.all(ps >= c_star)),
        "u_max_ratio": float(um[-1] / um[0]) if um[0] > 0 else math.nan,
    }
    if doubling_times is not None:
        out["doubling_times"] = list(doubling_times)
    if params.n == 3:
        bound = derived.L * params.R ** (1.0 - alpha) / (1.0 - alpha)
        out["phi_bound"] = bound
        out["phi_bound_excess"] = float(np.max(ph) - bound - tol)
    return out
