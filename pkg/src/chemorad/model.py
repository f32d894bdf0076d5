"""Problem parameters, initial data, explicit thresholds and barrier functions.

Everything in this module is a pure function of its arguments.  The
quantities here are the closed-form ingredients of the comparison arguments
for the radial system

    u_t = s^{1-n} (s^{n-1} D(u) u_s)_s + s^{1-n} (s^{n-1} u v_s)_s,
    0   = s^{1-n} (s^{n-1} v_s)_s - u v,

on the ball of radius ``R`` with ``v(R) = M`` and no total flux of ``u``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DomainError, RegimeError

# Gauss-Legendre rule used for every radial integral of the initial data.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_BASE_PANELS = 512
ETA_GRID_POINTS = 4096


def diffusion_coeff(xi, m: float, scale: float = 1.0):
    """Prototype diffusivity ``scale * (1 + xi)**(m - 1)``.

    Accepts scalars or arrays; raises :class:`DomainError` on negative input.
    """
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(xi_arr < 0.0) or not np.all(np.isfinite(xi_arr)):
        raise DomainError("diffusion_coeff requires finite xi >= 0")
    out = scale * (1.0 + xi_arr) ** (m - 1.0)
    return float(out) if out.ndim == 0 else out


def unit_sphere_measure(n: int) -> float:
    """Surface measure of the unit (n-1)-sphere, ``2 pi^(n/2) / Gamma(n/2)``."""
    if int(n) != n or n < 2:
        raise DomainError(f"unit_sphere_measure needs an integer n >= 2, got {n!r}")
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass(frozen=True)
class ProblemParams:
    """One instance of the boundary value problem.

    ``M = 0`` is accepted only as a test hook (it switches the chemical off).
    The diffusivity used by the solver is ``k_D * (1 + u)**(m - 1)``, which
    lies between the lower and upper prototype envelopes for any
    ``k_D <= K_D``.
    """

    n: int = 3
    R: float = 1.0
    M: float = 1.0
    m: float = 1.0
    k_D: float = 1.0
    K_D: float = 1.0

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 3:
            raise ConfigError(f"n must be an integer >= 3, got {self.n!r}", "n", "n >= 3")
        object.__setattr__(self, "n", int(self.n))
        for key in ("R", "m", "k_D"):
            val = getattr(self, key)
            if not (math.isfinite(val) and val > 0.0):
                raise ConfigError(f"{key} must be finite and > 0, got {val!r}", key, f"{key} > 0")
        if not (math.isfinite(self.M) and self.M >= 0.0):
            raise ConfigError(f"M must be finite and >= 0, got {self.M!r}", "M", "M >= 0")
        if not (math.isfinite(self.K_D) and self.K_D >= self.k_D):
            raise ConfigError(
                f"K_D must be >= k_D, got K_D={self.K_D!r}, k_D={self.k_D!r}", "K_D", "k_D <= K_D"
            )

    @property
    def is_prototype(self) -> bool:
        return self.k_D == 1.0 and self.K_D == 1.0

    @property
    def z_threshold(self) -> float:
        """``2 k_D / (n - 2)``: the bound on ``M`` for boundedness at ``m = 1``."""
        return 2.0 * self.k_D / (self.n - 2)

    def diffusivity(self, xi):
        return diffusion_coeff(xi, self.m, self.k_D)


# --------------------------------------------------------------------------
# initial data


class ProfileKind(str, Enum):
    CONSTANT = "constant"
    GAUSSIAN = "gaussian"
    ANNULUS = "annulus"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class InitialProfile:
    """Radially symmetric nonnegative initial density.

    Use the ``constant``, ``gaussian``, ``annulus`` and ``tabulated``
    constructors.  The gaussian is ``amplitude * exp(-(s - c)^2 / (2 w^2))``;
    tabulated data is interpolated linearly in ``s`` and held constant
    beyond the last sample.
    """

    kind: ProfileKind
    amplitude: float = 0.0
    center_radius: float = 0.0
    width: float = 0.0
    inner: float = 0.0
    outer: float = 0.0
    radii: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        kind = ProfileKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is ProfileKind.TABULATED:
            r = np.asarray(self.radii, dtype=float)
            vals = np.asarray(self.values, dtype=float)
            if r.ndim != 1 or r.size < 2 or r.size != vals.size:
                raise ConfigError("tabulated profile needs >= 2 matching radii/values", "samples")
            if np.any(np.diff(r) <= 0.0) or r[0] < 0.0:
                raise ConfigError("tabulated radii must be >= 0 and strictly increasing", "samples")
            if np.any(vals < 0.0) or not np.all(np.isfinite(vals)):
                raise ConfigError("tabulated values must be finite and >= 0", "samples")
            if not np.any(vals > 0.0):
                raise ConfigError("initial profile is identically zero", "samples", "u0 not identically 0")
            return
        if not (math.isfinite(self.amplitude) and self.amplitude > 0.0):
            raise ConfigError(
                f"amplitude must be finite and > 0, got {self.amplitude!r}",
                "amplitude",
                "u0 not identically 0",
            )
        if kind is ProfileKind.GAUSSIAN and not self.width > 0.0:
            raise ConfigError("gaussian width must be > 0", "width", "width > 0")
        if kind is ProfileKind.ANNULUS and not (0.0 <= self.inner < self.outer):
            raise ConfigError("annulus needs 0 <= inner < outer", "inner", "0 <= inner < outer")

    @classmethod
    def constant(cls, c: float) -> "InitialProfile":
        return cls(ProfileKind.CONSTANT, amplitude=c)

    @classmethod
    def gaussian(cls, amplitude: float, center_radius: float, width: float) -> "InitialProfile":
        return cls(ProfileKind.GAUSSIAN, amplitude=amplitude, center_radius=center_radius, width=width)

    @classmethod
    def annulus(cls, amplitude: float, inner: float, outer: float) -> "InitialProfile":
        return cls(ProfileKind.ANNULUS, amplitude=amplitude, inner=inner, outer=outer)

    @classmethod
    def tabulated(cls, radii: Sequence[float], values: Sequence[float]) -> "InitialProfile":
        return cls(
            ProfileKind.TABULATED,
            radii=tuple(float(r) for r in radii),
            values=tuple(float(v) for v in values),
        )

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        kind = self.kind
        if kind is ProfileKind.CONSTANT:
            return np.full_like(s, self.amplitude)
        if kind is ProfileKind.GAUSSIAN:
            z = (s - self.center_radius) / self.width
            return self.amplitude * np.exp(-0.5 * z * z)
        if kind is ProfileKind.ANNULUS:
            inside = (s >= self.inner) & (s <= self.outer)
            return np.where(inside, self.amplitude, 0.0)
        return np.interp(s, self.radii, self.values)

    def sup(self, R: float) -> float:
        """Supremum of the profile over ``[0, R]``."""
        kind = self.kind
        if kind is ProfileKind.CONSTANT:
            return self.amplitude
        if kind is ProfileKind.GAUSSIAN:
            dist = max(0.0, self.center_radius - R, -self.center_radius)
            return self.amplitude * math.exp(-0.5 * (dist / self.width) ** 2)
        if kind is ProfileKind.ANNULUS:
            return self.amplitude if self.inner <= R else 0.0
        r = np.asarray(self.radii)
        probe = np.concatenate(([0.0, R], r[r <= R]))
        return float(np.max(self(probe)))

    def _breakpoints(self) -> np.ndarray:
        if self.kind is ProfileKind.TABULATED:
            return np.asarray(self.radii, dtype=float)
        if self.kind is ProfileKind.ANNULUS:
            return np.array([self.inner, self.outer])
        return np.empty(0)

    def mass_within(self, radii, n: int) -> np.ndarray:
        """Radial mass ``int_0^r s^{n-1} u0(s) ds`` at each requested radius."""
        r = np.asarray(radii, dtype=float)
        if np.any(r < 0.0):
            raise DomainError("radii must be nonnegative")
        if self.kind is ProfileKind.CONSTANT:
            return self.amplitude * r**n / n
        if self.kind is ProfileKind.ANNULUS:
            lo = self.inner**n
            return self.amplitude * (np.clip(r, self.inner, self.outer) ** n - lo) / n
        flat = r.ravel()
        rmax = float(flat.max()) if flat.size else 0.0
        if rmax == 0.0:
            return np.zeros_like(r)
        knots = self._breakpoints()
        pts = np.unique(
            np.concatenate(([0.0], flat, np.linspace(0.0, rmax, _BASE_PANELS + 1), knots[knots < rmax]))
        )
        a, b = pts[:-1], pts[1:]
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        s = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        panel = half * np.sum(_GL_WEIGHTS[None, :] * s ** (n - 1) * self(s), axis=1)
        cumulative = np.concatenate(([0.0], np.cumsum(panel)))
        idx = np.searchsorted(pts, flat)
        return cumulative[idx].reshape(r.shape)


def initial_mass(u0: InitialProfile, params: ProblemParams) -> float:
    """Radial mass ``L = int_0^R s^{n-1} u0(s) ds`` (total mass over sigma_n).

    Grid cell averages are built from the same integrals, so the discrete
    initial mass reproduces ``L`` to rounding.
    """
    L = float(u0.mass_within(np.array([params.R]), params.n)[0])
    if not L > 0.0:
        raise ConfigError("initial profile has zero mass on (0, R)", "u0", "u0 not identically 0")
    return L


def eta(
    u0: InitialProfile,
    gamma: float,
    params: ProblemParams,
    extra_radii: Sequence[float] | np.ndarray | None = None,
) -> float:
    """Grid supremum of ``r^(gamma - n) * U0(r)`` over ``(0, R]``.

    Evaluated on a geometric grid of ``ETA_GRID_POINTS`` radii (dense near
    the origin) plus ``extra_radii``; the result is a lower bound of the true
    supremum, exact at every radius actually sampled.
    """
    _check_gamma(gamma, params)
    R, n = params.R, params.n
    radii = np.geomspace(R * 1e-6, R, ETA_GRID_POINTS)
    if extra_radii is not None:
        extra = np.asarray(extra_radii, dtype=float)
        radii = np.concatenate((radii, extra[(extra > 0.0) & (extra <= R)]))
    U0 = u0.mass_within(radii, n)
    return float(np.max(radii ** (gamma - n) * U0))


def _check_gamma(gamma: float, params: ProblemParams) -> None:
    if not 0.0 < params.m < 1.0:
        raise RegimeError(
            f"the W-barrier exponent needs 0 < m < 1, got m={params.m}", "gamma", "0 < m < 1"
        )
    hi = 2.0 / (2.0 - params.m)
    if not 0.0 < gamma < hi:
        raise ConfigError(f"gamma={gamma} outside (0, {hi})", "gamma", "0 < gamma < 2/(2-m)")


def smallness_threshold_Mstar(gamma: float, eta_value: float, params: ProblemParams) -> float:
    """Upper bound on ``M`` under which the W barrier is a supersolution (0 < m < 1)."""
    _check_gamma(gamma, params)
    if not eta_value > 0.0:
        raise DomainError("eta must be > 0")
    n, R, m = params.n, params.R, params.m
    denom = eta_value * (R**gamma + eta_value * (n - gamma)) ** (1.0 - m) * R ** (2.0 - gamma * (2.0 - m))
    return gamma / denom


@dataclass(frozen=True)
class DerivedConstants:
    L: float
    sigma_n: float
    u0_sup: float
    eta: float | None = None

    @property
    def total_mass(self) -> float:
        return self.sigma_n * self.L


def derive_constants(
    params: ProblemParams,
    u0: InitialProfile,
    gamma: float | None = None,
    extra_radii=None,
) -> DerivedConstants:
    return DerivedConstants(
        L=initial_mass(u0, params),
        sigma_n=unit_sphere_measure(params.n),
        u0_sup=u0.sup(params.R),
        eta=None if gamma is None else eta(u0, gamma, params, extra_radii),
    )


def barrier_delta1(beta: float, c_star: float, params: ProblemParams, derived: DerivedConstants) -> float:
    """Radius of the near-origin region where the Z barrier dominates ``U``."""
    n, R, M = params.n, params.R, params.M
    if params.m != 1.0:
        raise RegimeError(f"the Z barrier needs m = 1, got m={params.m}", "m", "m = 1")
    if not M < params.z_threshold:
        raise RegimeError(
            f"the Z barrier needs M < 2k_D/(n-2) = {params.z_threshold:g}, got M={M:g}",
            "M",
            "M < 2k_D/(n-2)",
        )
    lo = M * (n - 2) / params.k_D
    if not lo < beta < 2.0:
        raise ConfigError(f"beta={beta} outside ({lo}, 2)", "beta", "M(n-2)/k_D < beta < 2")
    if not c_star > 1.0:
        raise ConfigError(f"c_star={c_star} must exceed 1", "c_star", "c_star > 1")
    L = derived.L
    first = R * (1.0 - 1.0 / c_star) ** (1.0 / (n - 2))
    second = (n * L / derived.u0_sup) ** (1.0 / n)
    if M > 0.0:
        third = ((L * M) ** n / (n * derived.sigma_n * (2.0 - beta))) ** (1.0 / (n * (n - 2)))
    else:
        third = math.inf
    return min(first, second, third)


def barrier_Z(s, beta: float, delta1: float, L: float, n: int):
    """``L * (s / delta1)**(n - beta)`` on ``[0, delta1]``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0.0) or np.any(s_arr > delta1 * (1.0 + 1e-14)):
        raise DomainError(f"barrier_Z defined on [0, {delta1}]")
    out = L * (s_arr / delta1) ** (n - beta)
    return float(out) if out.ndim == 0 else out


def barrier_W(s, gamma: float, eta_value: float, n: int, R: float | None = None):
    """``eta * s**(n - gamma)``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0.0) or (R is not None and np.any(s_arr > R * (1.0 + 1e-14))):
        raise DomainError("barrier_W defined on [0, R]")
    out = eta_value * s_arr ** (n - gamma)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# exponents


EXPONENT_NAMES = ("alpha", "beta", "gamma", "c_star", "delta0")


@dataclass(frozen=True)
class ExponentChoice:
    """Exponents and radii feeding the barrier and functional monitors.

    ``None`` marks an exponent whose regime does not apply to the problem
    (for example ``beta`` away from ``m = 1``).
    """

    beta: float | None = None
    c_star: float = 2.0
    gamma: float | None = None
    alpha: float | None = None
    delta0: float = 0.5
    delta1: float | None = None

    def validate(self, params: ProblemParams) -> None:
        windows = exponent_windows(params)
        for name in EXPONENT_NAMES:
            value = getattr(self, name)
            if value is None:
                continue
            win = windows.get(name)
            if name == "c_star" and params.m == 1.0 and self.beta is not None:
                win = _c_star_window(self.beta, params)
            if win is None:
                raise ConfigError(f"{name} is not defined for this regime", name, _HYPOTHESIS[name])
            lo, hi = win
            if not lo < value < hi:
                raise ConfigError(
                    f"{name}={value} outside open interval ({lo}, {hi})", name, _HYPOTHESIS[name]
                )
        if self.delta1 is not None and not 0.0 < self.delta1 <= params.R:
            raise ConfigError(f"delta1={self.delta1} outside (0, R]", "delta1", "0 < delta1 <= R")

    def near_cutoff(self, params: ProblemParams) -> float:
        """Outer edge ``R (1 - 1/c_star)^(1/(n-2))`` of the near-origin gradient bound."""
        return params.R * (1.0 - 1.0 / self.c_star) ** (1.0 / (params.n - 2))


_HYPOTHESIS = {
    "beta": "M(n-2)/k_D < beta < 2, which needs M < 2k_D/(n-2)",
    "c_star": "c_star > 1 (and c_star < k_D beta/(M(n-2)) when m = 1)",
    "gamma": "0 < gamma < 2/(2-m), which needs 0 < m < 1",
    "alpha": "n-3 < alpha < n(1-m)-1 (alpha < 1 when n = 3), which needs m < 2/n",
    "delta0": "0 < delta0 < R",
}


def _c_star_window(beta: float, params: ProblemParams) -> tuple[float, float]:
    if params.M == 0.0:
        return (1.0, math.inf)
    return (1.0, params.k_D * beta / (params.M * (params.n - 2)))


def exponent_windows(params: ProblemParams) -> dict[str, tuple[float, float] | None]:
    """Open intervals for each exponent; ``None`` where the regime does not apply.

    Windows may be empty (``lo >= hi``); :func:`choose_exponents` reports that.
    """
    n, m, M, R = params.n, params.m, params.M, params.R
    windows: dict[str, tuple[float, float] | None] = {
        "beta": (M * (n - 2) / params.k_D, 2.0) if m == 1.0 else None,
        "gamma": (0.0, 2.0 / (2.0 - m)) if 0.0 < m < 1.0 else None,
        "alpha": None,
        "c_star": (1.0, math.inf),
        "delta0": (0.0, R),
    }
    if m < 2.0 / n:
        hi = n * (1.0 - m) - 1.0
        if n == 3:
            hi = min(hi, 1.0)
        windows["alpha"] = (float(n - 3), hi)
    return windows


def choose_exponents(
    params: ProblemParams,
    policy: Mapping[str, float] | None = None,
    derived: DerivedConstants | None = None,
    strict: bool = True,
) -> ExponentChoice:
    """Pick each exponent at the midpoint of its window unless overridden.

    With ``strict=False`` an empty ``beta`` window (``M >= 2k_D/(n-2)`` at
    ``m = 1``) leaves the Z-barrier exponents unset instead of raising;
    explicit overrides always re-validate.  ``delta1`` is computed when
    ``derived`` is supplied and ``beta`` is set.
    """
    policy = dict(policy or {})
    unknown = set(policy) - set(EXPONENT_NAMES)
    if unknown:
        raise ConfigError(f"unknown exponent override(s): {sorted(unknown)}", sorted(unknown)[0])
    windows = exponent_windows(params)
    chosen: dict[str, float | None] = {}

    win = windows["beta"]
    if win is not None:
        lo, hi = win
        if lo >= hi:
            if strict or "beta" in policy or "c_star" in policy:
                raise ConfigError(
                    f"empty beta window: m = 1 needs M < 2k_D/(n-2) = {params.z_threshold:g}, "
                    f"got M = {params.M:g}",
                    "beta",
                    "M < 2k_D/(n-2)",
                )
            chosen["beta"] = None
        else:
            chosen["beta"] = policy.get("beta", 0.5 * (lo + hi))
    else:
        chosen["beta"] = policy.get("beta")  # validated below

    if params.m == 1.0 and chosen["beta"] is not None:
        c_lo, c_hi = _c_star_window(chosen["beta"], params)
        default_c = 0.5 * (c_lo + c_hi) if math.isfinite(c_hi) else 2.0
    else:
        default_c = 2.0
    chosen["c_star"] = policy.get("c_star", default_c)

    for name in ("gamma", "alpha"):
        win = windows[name]
        chosen[name] = policy.get(name, None if win is None else 0.5 * (win[0] + win[1]))
    chosen["delta0"] = policy.get("delta0", 0.5 * params.R)

    choice = ExponentChoice(**chosen)  # type: ignore[arg-type]
    choice.validate(params)
    if derived is not None and choice.beta is not None and params.m == 1.0:
        choice = replace(choice, delta1=barrier_delta1(choice.beta, choice.c_star, params, derived))
    return choice


# --------------------------------------------------------------------------
# regimes


class Regime(str, Enum):
    BOUNDED_GUARANTEED = "BoundedGuaranteed"
    SMALL_M_BOUNDED = "SmallMBounded"
    BLOWUP_CANDIDATE = "BlowupCandidate"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class RegimeClassification:
    label: Regime
    witness: dict = field(default_factory=dict)

    @property
    def bounded_side(self) -> bool:
        return self.label in (Regime.BOUNDED_GUARANTEED, Regime.SMALL_M_BOUNDED)


def classify_regime(
    params: ProblemParams,
    u0: InitialProfile | None = None,
    empirical_threshold: float | None = None,
    gamma: float | None = None,
) -> RegimeClassification:
    """Label the parameter point by which boundedness/blow-up result covers it.

    ``SmallMBounded`` needs ``u0`` (the threshold depends on the data);
    ``BlowupCandidate`` needs an empirical threshold from the harness.
    """
    n, m, M = params.n, params.m, params.M
    if m > 1.0:
        return RegimeClassification(Regime.BOUNDED_GUARANTEED, {"m > 1": True})
    if m == 1.0 and M < params.z_threshold:
        return RegimeClassification(
            Regime.BOUNDED_GUARANTEED, {"m = 1": True, "M < 2k_D/(n-2)": params.z_threshold}
        )
    witness: dict = {}
    if m < 1.0 and u0 is not None:
        g = gamma if gamma is not None else 0.5 * (2.0 / (2.0 - m))
        mstar = smallness_threshold_Mstar(g, eta(u0, g, params), params)
        witness.update({"gamma": g, "M_star": mstar})
        if M <= mstar:
            return RegimeClassification(Regime.SMALL_M_BOUNDED, witness)
    if m < 2.0 / n and empirical_threshold is not None:
        witness["empirical_threshold"] = empirical_threshold
        if M > empirical_threshold:
            witness["m < 2/n"] = True
            return RegimeClassification(Regime.BLOWUP_CANDIDATE, witness)
    if 2.0 / n <= m < 1.0:
        witness["open band 2/n <= m < 1"] = True
    return RegimeClassification(Regime.INDETERMINATE, witness)
