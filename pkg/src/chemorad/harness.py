"""Configuration files, single runs, (m, M) sweeps and threshold bisection.

Config files are INI-style ``key = value`` lines in the sections
``[problem] [initial] [grid] [stepper] [monitors] [sweep] [output]``.
Unknown sections or keys are rejected.

Each run writes ``<dir>/<digest>.csv`` (time series) and
``<dir>/<digest>.ndjson`` (one run record); both are written to a temporary
file and renamed into place.  Sweeps skip points whose record already
exists, which makes them resumable.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from . import __version__ as SCHEME_VERSION
from .diagnostics import (
    CSV_COLUMNS,
    Diagnostics,
    MonitorConfig,
    blowup_evidence,
    record_row,
    worst_residuals,
)
from .elliptic import RadialGrid
from .errors import ChemoradError, ConfigError, SchemeError
from .model import (
    DerivedConstants,
    ExponentChoice,
    InitialProfile,
    ProblemParams,
    ProfileKind,
    choose_exponents,
    derive_constants,
)
from .stepper import OutcomeLabel, StepperConfig, initial_state, run_until

logger = logging.getLogger(__name__)

SECTIONS: dict[str, tuple[str, ...]] = {
    "problem": ("n", "R", "M", "m", "k_D", "K_D"),
    "initial": ("kind", "amplitude", "center_radius", "width", "inner", "outer"),
    "grid": ("N",),
    "stepper": (
        "cfl",
        "dt_init",
        "dt_min",
        "dt_max",
        "t_end",
        "u_blowup_factor",
        "picard_iters",
        "growth_clamp",
    ),
    "monitors": ("alpha", "beta", "gamma", "c_star", "delta0"),
    "sweep": ("m_values", "M_values", "M_lo", "M_hi", "tol_rel", "workers"),
    "output": ("dir", "cadence"),
}
INT_KEYS = {"n", "N", "picard_iters", "workers"}
THREADS_ENV = "CHEMO_THREADS"


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    params: ProblemParams
    u0: InitialProfile
    N: int = 256
    stepper: StepperConfig = field(default_factory=StepperConfig)
    overrides: tuple[tuple[str, float], ...] = ()
    out_dir: str = "runs"
    cadence: float = 10.0

    def __post_init__(self) -> None:
        if not self.cadence > 0.0:
            raise ConfigError("cadence must be > 0", "cadence", "cadence > 0")
        object.__setattr__(self, "overrides", tuple(sorted(dict(self.overrides).items())))
        # grid and exponent windows are validated eagerly
        RadialGrid.for_problem(self.N, self.params)
        self.setup()

    def with_problem(self, **changes) -> "RunConfig":
        return replace(self, params=replace(self.params, **changes))

    def setup(self) -> tuple[RadialGrid, DerivedConstants, ExponentChoice]:
        """Grid, derived constants and exponents for this run."""
        grid = RadialGrid.for_problem(self.N, self.params)
        base = derive_constants(self.params, self.u0)
        # an explicit beta or c_star asks for the Z barrier and must be admissible
        exponents = choose_exponents(self.params, dict(self.overrides), base, strict=False)
        derived = base
        if exponents.gamma is not None:
            derived = derive_constants(self.params, self.u0, exponents.gamma, grid.faces)
        return grid, derived, exponents

    def as_dict(self) -> dict:
        u0 = {k: v for k, v in asdict(self.u0).items() if v not in ((), 0.0) or k == "kind"}
        u0["kind"] = self.u0.kind.value
        return {
            "problem": asdict(self.params),
            "initial": u0,
            "grid": {"N": self.N},
            "stepper": asdict(self.stepper),
            "monitors": dict(self.overrides),
            "output": {"cadence": self.cadence},
        }

    @property
    def digest(self) -> str:
        """Hash of the canonical (sorted-key) serialisation; the output dir is excluded."""
        payload = {"config": self.as_dict(), "scheme": SCHEME_VERSION}
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:20]


@dataclass(frozen=True)
class SweepConfig:
    template: RunConfig
    m_values: tuple[float, ...] = ()
    M_values: tuple[float, ...] = ()
    M_lo: float | None = None
    M_hi: float | None = None
    tol_rel: float = 0.05
    workers: int = 1

    def __post_init__(self) -> None:
        if (self.M_lo is None) != (self.M_hi is None):
            raise ConfigError("M_lo and M_hi must be given together", "M_lo")
        if self.M_lo is not None and not 0.0 < self.M_lo < self.M_hi:
            raise ConfigError("need 0 < M_lo < M_hi", "M_lo", "M_lo < M_hi")
        if not self.tol_rel > 0.0:
            raise ConfigError("tol_rel must be > 0", "tol_rel", "tol_rel > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", "workers", "workers >= 1")

    @property
    def bisect(self) -> bool:
        return self.M_lo is not None

    def effective_workers(self) -> int:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}", THREADS_ENV) from None
        return self.workers


def _number(section: str, key: str, raw: str) -> float | int:
    try:
        if key in INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as a number", key) from None


def _number_list(section: str, key: str, raw: str) -> tuple[float, ...]:
    parts = [p.strip() for p in raw.replace(";", ",").split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"[{section}] {key}: empty list", key, "nonempty list")
    return tuple(float(_number(section, key, p)) for p in parts)


def _read_sections(text: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(
        interpolation=None, strict=True, inline_comment_prefixes=("#", ";"), default_section="\x00"
    )
    parser.optionxform = str  # keys are case sensitive (M vs m)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", section, f"one of {sorted(SECTIONS)}")
        items = dict(parser.items(section))
        for key in items:
            if key not in SECTIONS[section]:
                raise ConfigError(
                    f"unknown key {key!r} in [{section}]", key, f"one of {SECTIONS[section]}"
                )
        out[section] = items
    return out


def _build_run_config(sections: Mapping[str, Mapping[str, str]]) -> RunConfig:
    num = {
        sec: {k: _number(sec, k, v) for k, v in sections.get(sec, {}).items()}
        for sec in ("problem", "grid", "stepper", "monitors")
    }
    if "problem" not in sections:
        raise ConfigError("missing [problem] section", "problem")
    params = ProblemParams(**num["problem"])

    initial = dict(sections.get("initial", {}))
    kind = initial.pop("kind", None)
    if kind is None:
        raise ConfigError("[initial] needs a kind", "kind", "constant|gaussian|annulus")
    try:
        kind_enum = ProfileKind(kind.strip())
    except ValueError:
        raise ConfigError(f"unknown initial kind {kind!r}", "kind", "constant|gaussian|annulus") from None
    if kind_enum is ProfileKind.TABULATED:
        raise ConfigError("tabulated profiles are only available through the API", "kind")
    init_num = {k: _number("initial", k, v) for k, v in initial.items()}
    allowed = {
        ProfileKind.CONSTANT: {"amplitude"},
        ProfileKind.GAUSSIAN: {"amplitude", "center_radius", "width"},
        ProfileKind.ANNULUS: {"amplitude", "inner", "outer"},
    }[kind_enum]
    extra = set(init_num) - allowed
    if extra:
        raise ConfigError(f"keys {sorted(extra)} do not apply to kind={kind_enum.value}", sorted(extra)[0])
    u0 = InitialProfile(kind_enum, **init_num)

    stepper = StepperConfig(**num["stepper"])
    output = sections.get("output", {})
    cadence = float(_number("output", "cadence", output["cadence"])) if "cadence" in output else 10.0
    return RunConfig(
        params=params,
        u0=u0,
        N=int(num["grid"].get("N", 256)),
        stepper=stepper,
        overrides=tuple(num["monitors"].items()),
        out_dir=output.get("dir", "runs"),
        cadence=cadence,
    )


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a run configuration.

    A ``[sweep]`` section is allowed (and ignored here); see
    :func:`parse_sweep_config`.
    """
    return _build_run_config(_read_sections(text))


def parse_sweep_config(text: str) -> SweepConfig:
    sections = _read_sections(text)
    template = _build_run_config(sections)
    sw = sections.get("sweep")
    if sw is None:
        raise ConfigError("missing [sweep] section", "sweep")
    kwargs: dict = {}
    for key in ("m_values", "M_values"):
        if key in sw:
            kwargs[key] = _number_list("sweep", key, sw[key])
    for key in ("M_lo", "M_hi", "tol_rel"):
        if key in sw:
            kwargs[key] = float(_number("sweep", key, sw[key]))
    if "workers" in sw:
        kwargs["workers"] = int(_number("sweep", "workers", sw["workers"]))
    return SweepConfig(template=template, **kwargs)


def load_config(path: str | os.PathLike) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# records and files


def _clean(obj):
    """JSON-safe copy: non-finite floats become ``None``."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    # shortest repr that round-trips exactly
    return repr(float(x))


def timeseries_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow([_fmt(x) for x in record_row(rec)])
    return buf.getvalue()


@dataclass
class RunRecord:
    digest: str
    outcome: str
    t_final: float
    worst_residuals: dict[str, float]
    wall_ms: float
    scheme_version: str = SCHEME_VERSION
    final: dict = field(default_factory=dict)
    tolerances: dict[str, float] = field(default_factory=dict)
    evidence: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(_clean(asdict(self)), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        data = json.loads(text)
        return cls(**{k: data.get(k) for k in cls.__dataclass_fields__ if k in data})

    @property
    def violations(self) -> dict[str, float]:
        return {
            k: v - self.tolerances[k]
            for k, v in self.worst_residuals.items()
            if v is not None and k in self.tolerances
        }


def record_path(out_dir: str | os.PathLike, digest: str) -> Path:
    return Path(out_dir) / f"{digest}.ndjson"


def timeseries_path(out_dir: str | os.PathLike, digest: str) -> Path:
    return Path(out_dir) / f"{digest}.csv"


def load_record(path: Path) -> RunRecord:
    return RunRecord.from_json(path.read_text(encoding="utf-8").strip().splitlines()[0])


# --------------------------------------------------------------------------
# runs


def execute(config: RunConfig):
    """Run one simulation in memory; returns ``(trajectory, outcome, diagnostics)``."""
    grid, derived, exponents = config.setup()
    monitors = MonitorConfig(exponents)
    barrier = Diagnostics.auto_barrier(config.params, exponents, derived)
    diag = Diagnostics(config.params, grid, derived, monitors, barrier)
    state = initial_state(config.params, grid, config.u0, config.stepper)
    trajectory, outcome = run_until(state, config.stepper, config.params, grid, diag, config.cadence)
    return trajectory, outcome, diag


def run_single(config: RunConfig, write: bool = True) -> RunRecord:
    """Execute one run and persist its time series and record.

    Scheme failures do not raise; they produce a record with outcome
    ``SchemeError``.
    """
    start = time.perf_counter()
    digest = config.digest
    settings = {
        "n": config.params.n,
        "m": config.params.m,
        "M": config.params.M,
        "N": config.N,
        "dt_min": config.stepper.dt_min,
        "u_blowup_factor": config.stepper.u_blowup_factor,
        "t_end": config.stepper.t_end,
    }
    try:
        trajectory, outcome, diag = execute(config)
    except SchemeError as exc:
        logger.warning("scheme error in run %s: %s", digest, exc)
        rec = RunRecord(
            digest=digest,
            outcome=OutcomeLabel.SCHEME_ERROR.value,
            t_final=math.nan,
            worst_residuals={},
            wall_ms=1e3 * (time.perf_counter() - start),
            settings=settings,
            error=str(exc),
        )
        if write:
            atomic_write(record_path(config.out_dir, digest), rec.to_json() + "\n")
        return rec
    worst = worst_residuals(trajectory)
    evidence = dict(outcome.evidence)
    evidence.update(
        blowup_evidence(
            trajectory,
            diag.alpha,
            diag.derived,
            config.params,
            tol=diag.tolerance("phi"),
            doubling_times=outcome.evidence.get("doubling_times"),
        )
    )
    final = trajectory[-1]
    rec = RunRecord(
        digest=digest,
        outcome=outcome.label.value,
        t_final=outcome.t,
        worst_residuals=worst,
        wall_ms=1e3 * (time.perf_counter() - start),
        final={
            "t": final.t,
            "dt": final.dt,
            "mass": final.mass,
            "u_max": final.u_max,
            "v0": final.v0,
            "phi": final.phi,
            "psi": final.psi,
        },
        tolerances={k: diag.tolerance(k) for k in worst},
        evidence=evidence,
        settings=settings | {"barrier": diag.barrier, "alpha": diag.alpha},
    )
    if write:
        atomic_write(timeseries_path(config.out_dir, digest), timeseries_csv(trajectory))
        atomic_write(record_path(config.out_dir, digest), rec.to_json() + "\n")
    return rec


def _run_point(config: RunConfig) -> RunRecord:
    try:
        return run_single(config)
    except ChemoradError as exc:
        return RunRecord(
            digest=config.digest,
            outcome="ConfigError",
            t_final=math.nan,
            worst_residuals={},
            wall_ms=0.0,
            error=str(exc),
        )


def run_many(configs: Sequence[RunConfig], workers: int = 1, resume: bool = True) -> list[RunRecord]:
    """Run configurations (in parallel when ``workers > 1``), skipping finished ones.

    Results come back in the order of ``configs`` regardless of completion
    order.
    """
    results: list[RunRecord | None] = [None] * len(configs)
    todo: list[int] = []
    for i, cfg in enumerate(configs):
        path = record_path(cfg.out_dir, cfg.digest)
        if resume and path.exists():
            results[i] = load_record(path)
        else:
            todo.append(i)
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, rec in zip(todo, pool.map(_run_point, [configs[i] for i in todo])):
                results[i] = rec
    else:
        for i in todo:
            results[i] = _run_point(configs[i])
    logger.info("ran %d of %d configurations", len(todo), len(configs))
    return results  # type: ignore[return-value]


# --------------------------------------------------------------------------
# threshold bisection


@dataclass
class ThresholdEstimate:
    m: float
    M_hat: float
    bracket: tuple[float, float]
    bisections: int
    records: list[RunRecord]
    anomaly: str | None = None
    widened: list[str] = field(default_factory=list)
    settings: dict = field(default_factory=dict)


BOUNDED = OutcomeLabel.COMPLETED_BOUNDED.value
BLOWUP = OutcomeLabel.BLOWUP_DETECTED.value


def estimate_blowup_threshold(
    m: float,
    template: RunConfig,
    M_lo: float,
    M_hi: float,
    tol_rel: float = 0.05,
    max_widen: int = 6,
    validate: bool = False,
) -> ThresholdEstimate:
    """Bisect on the run outcome for the smallest ``M`` that blows up.

    The bracket is checked first: ``M_lo`` must finish bounded and ``M_hi``
    must blow up.  Failing ends are widened by factors of 2 (at most
    ``max_widen`` times each) and the widening is reported.  Any outcome
    other than bounded/blow-up inside the bracket stops the search with an
    anomaly instead of being guessed at.  With ``validate=True`` the
    estimate is probed at ``2 M_hat`` and ``M_hat / 2``.
    """
    if not 0.0 < M_lo < M_hi:
        raise ConfigError("need 0 < M_lo < M_hi", "M_lo", "M_lo < M_hi")
    records: list[RunRecord] = []
    widened: list[str] = []

    def outcome(M: float) -> str:
        rec = run_single(template.with_problem(m=m, M=M))
        records.append(rec)
        return rec.outcome

    anomaly = None
    lo, hi = M_lo, M_hi
    for _ in range(max_widen + 1):
        res = outcome(lo)
        if res == BOUNDED:
            break
        if res != BLOWUP:
            anomaly = f"M_lo={lo:g} gave {res}"
            break
        widened.append(f"M_lo {lo:g} -> {lo / 2:g}")
        lo /= 2.0
    else:
        anomaly = f"no bounded run down to M={lo:g}"
    if anomaly is None:
        for _ in range(max_widen + 1):
            res = outcome(hi)
            if res == BLOWUP:
                break
            if res != BOUNDED:
                anomaly = f"M_hi={hi:g} gave {res}"
                break
            widened.append(f"M_hi {hi:g} -> {hi * 2:g}")
            hi *= 2.0
        else:
            anomaly = f"no blow-up up to M={hi:g}"

    bisections = 0
    while anomaly is None and (hi - lo) > tol_rel * 0.5 * (hi + lo):
        mid = 0.5 * (lo + hi)
        res = outcome(mid)
        bisections += 1
        if res == BOUNDED:
            lo = mid
        elif res == BLOWUP:
            hi = mid
        else:
            anomaly = f"M={mid:g} gave {res} inside the bracket"
    M_hat = 0.5 * (lo + hi)
    if anomaly is None and validate:
        above, below = outcome(2.0 * M_hat), outcome(0.5 * M_hat)
        if above != BLOWUP or below != BOUNDED:
            anomaly = f"non-monotone: 2*M_hat -> {above}, M_hat/2 -> {below}"
    return ThresholdEstimate(
        m=m,
        M_hat=M_hat,
        bracket=(lo, hi),
        bisections=bisections,
        records=records,
        anomaly=anomaly,
        widened=widened,
        settings={
            "N": template.N,
            "dt_min": template.stepper.dt_min,
            "u_blowup_factor": template.stepper.u_blowup_factor,
            "t_end": template.stepper.t_end,
            "tol_rel": tol_rel,
        },
    )


# --------------------------------------------------------------------------
# sweeps


@dataclass
class PhaseCell:
    m: float
    M: float
    record: RunRecord


@dataclass
class PhaseDiagram:
    m_values: tuple[float, ...]
    M_values: tuple[float, ...]
    cells: list[PhaseCell]
    thresholds: dict[float, ThresholdEstimate] = field(default_factory=dict)

    def label(self, m: float, M: float) -> str:
        for cell in self.cells:
            if cell.m == m and cell.M == M:
                return cell.record.outcome
        raise KeyError((m, M))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["m", "M", "outcome", "t_final", "u_max_ratio", "phi_slope", "worst_violation", "digest"])
        for cell in sorted(self.cells, key=lambda c: (c.m, c.M)):
            rec = cell.record
            ev = rec.evidence or {}
            viol = max(rec.violations.values(), default=math.nan) if rec.tolerances else math.nan
            writer.writerow(
                [
                    _fmt(cell.m),
                    _fmt(cell.M),
                    rec.outcome,
                    _fmt(rec.t_final if rec.t_final is not None else math.nan),
                    _fmt(ev.get("u_max_ratio") if ev.get("u_max_ratio") is not None else math.nan),
                    _fmt(ev.get("phi_slope") if ev.get("phi_slope") is not None else math.nan),
                    _fmt(viol),
                    rec.digest,
                ]
            )
        return buf.getvalue()

    def thresholds_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["m", "M_hat", "M_lo", "M_hi", "bisections", "N", "dt_min", "u_blowup_factor", "anomaly"])
        for m in sorted(self.thresholds):
            est = self.thresholds[m]
            writer.writerow(
                [
                    _fmt(m),
                    _fmt(est.M_hat),
                    _fmt(est.bracket[0]),
                    _fmt(est.bracket[1]),
                    est.bisections,
                    est.settings["N"],
                    _fmt(est.settings["dt_min"]),
                    _fmt(est.settings["u_blowup_factor"]),
                    est.anomaly or "",
                ]
            )
        return buf.getvalue()


def run_sweep(sweep: SweepConfig, write: bool = True) -> PhaseDiagram:
    """Run every ``(m, M)`` point and, if a bracket is given, bisect ``M`` for each ``m < 2/n``.

    Failed points are recorded in their cell; the sweep itself never aborts.
    """
    template = sweep.template
    points = [(m, M) for m in sweep.m_values for M in sweep.M_values]
    configs = []
    for m, M in points:
        try:
            configs.append(template.with_problem(m=m, M=M))
        except ChemoradError as exc:
            configs.append(exc)
    runnable = [c for c in configs if isinstance(c, RunConfig)]
    done = iter(run_many(runnable, workers=sweep.effective_workers()))
    cells = []
    for (m, M), cfg in zip(points, configs):
        if isinstance(cfg, RunConfig):
            rec = next(done)
        else:
            rec = RunRecord(digest="", outcome="ConfigError", t_final=math.nan, worst_residuals={}, wall_ms=0.0, error=str(cfg))
        cells.append(PhaseCell(m, M, rec))
    diagram = PhaseDiagram(tuple(sweep.m_values), tuple(sweep.M_values), cells)
    if sweep.bisect:
        n = template.params.n
        for m in sweep.m_values:
            if 0.0 < m < 2.0 / n:
                diagram.thresholds[m] = estimate_blowup_threshold(
                    m, template, sweep.M_lo, sweep.M_hi, sweep.tol_rel
                )
    if write:
        out = Path(template.out_dir)
        atomic_write(out / "phase_diagram.csv", diagram.to_csv())
        if diagram.thresholds:
            atomic_write(out / "thresholds.csv", diagram.thresholds_csv())
    return diagram


def collect_records(out_dir: str | os.PathLike) -> list[RunRecord]:
    """All run records under ``out_dir``, sorted by digest."""
    paths = sorted(Path(out_dir).glob("*.ndjson"))
    return [load_record(p) for p in paths if p.name != "runs.ndjson"]
