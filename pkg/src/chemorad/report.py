"""Text summaries and gnuplot scripts for a directory of run records.

Nothing here renders images; ``plot.gp`` is meant to be run with gnuplot by
whoever wants the figures.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

from .diagnostics import CSV_COLUMNS, MONITOR_NAMES
from .errors import ChemoradError
from .harness import PhaseCell, PhaseDiagram, RunRecord, atomic_write, collect_records
from .stepper import OutcomeLabel

OUTCOME_CODES = {
    OutcomeLabel.COMPLETED_BOUNDED.value: 0,
    OutcomeLabel.BLOWUP_DETECTED.value: 1,
    OutcomeLabel.MAX_STEPS_REACHED.value: 2,
    OutcomeLabel.SCHEME_ERROR.value: 3,
}


def diagram_from_records(records: Sequence[RunRecord]) -> PhaseDiagram:
    """Phase diagram over the ``(m, M)`` points found in ``records``.

    When a point was run more than once (for example at several
    resolutions) the record with the smallest digest is kept, so the result
    does not depend on file order.
    """
    chosen: dict[tuple[float, float], RunRecord] = {}
    for rec in sorted(records, key=lambda r: r.digest):
        s = rec.settings or {}
        if "m" not in s or "M" not in s:
            continue
        chosen.setdefault((float(s["m"]), float(s["M"])), rec)
    cells = [PhaseCell(m, M, rec) for (m, M), rec in sorted(chosen.items())]
    return PhaseDiagram(
        tuple(sorted({c.m for c in cells})), tuple(sorted({c.M for c in cells})), cells
    )


def _num(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    return f"{x:.6g}"


def summary_text(records: Sequence[RunRecord]) -> str:
    lines = []
    for rec in sorted(records, key=lambda r: (r.settings.get("m", 0.0), r.settings.get("M", 0.0), r.digest)):
        s = rec.settings or {}
        lines.append(
            f"run {rec.digest}  n={s.get('n', '-')} m={_num(s.get('m'))} M={_num(s.get('M'))} "
            f"N={s.get('N', '-')}  outcome={rec.outcome}  t_final={_num(rec.t_final)}"
        )
        if rec.error:
            lines.append(f"  error: {rec.error}")
        if rec.worst_residuals:
            lines.append(f"  {'monitor':<12}{'worst':>16}{'tolerance':>16}  status")
            for name in MONITOR_NAMES:
                if name not in rec.worst_residuals:
                    continue
                worst = rec.worst_residuals[name]
                tol = (rec.tolerances or {}).get(name)
                ok = worst is None or tol is None or worst <= tol
                lines.append(f"  {name:<12}{_num(worst):>16}{_num(tol):>16}  {'ok' if ok else 'VIOLATED'}")
        ev = rec.evidence or {}
        if rec.outcome == OutcomeLabel.BLOWUP_DETECTED.value:
            lines.append(f"  u_max growth factor: {_num(ev.get('u_max_ratio'))}")
            if ev.get("insufficient_data"):
                lines.append(f"  phi slope: insufficient data ({ev.get('records')} records)")
            else:
                lines.append(
                    f"  phi slope (final half): {_num(ev.get('phi_slope'))}  "
                    f"strictly increasing: {ev.get('phi_increasing')}"
                )
                if "phi_bound" in ev:
                    lines.append(
                        f"  phi bound L R^(1-a)/(1-a): {_num(ev.get('phi_bound'))}  "
                        f"excess over bound+tol: {_num(ev.get('phi_bound_excess'))}"
                    )
            lines.append("  doubling times of u_max:")
            lines.append(f"    {'k':>3}{'interval':>16}")
            for k, d in enumerate(ev.get("doubling_times") or [], start=1):
                lines.append(f"    {k:>3}{_num(d):>16}")
        lines.append("")
    return "\n".join(lines)


def plot_script(records: Sequence[RunRecord], diagram: PhaseDiagram | None) -> str:
    col = {name: i + 1 for i, name in enumerate(CSV_COLUMNS)}
    series = [f"{r.digest}.csv" for r in sorted(records, key=lambda r: r.digest) if r.worst_residuals]
    out = [
        "# gnuplot script; run with: gnuplot plot.gp",
        "set datafile separator ','",
        "set terminal pngcairo size 900,600",
        "set key outside right",
        "set xlabel 't'",
    ]
    for name, title, logscale in (
        ("u_max", "sup of u", True),
        ("phi", "phi", False),
        ("v0", "v at the origin", False),
    ):
        out.append(f"set output '{name}.png'")
        out.append(f"set title '{title}'")
        out.append("set logscale y" if logscale else "unset logscale y")
        if series:
            plots = [f"'{f}' using 1:{col[name]} every ::1 with lines title '{f[:8]}'" for f in series]
            out.append("plot " + ", \\\n     ".join(plots))
    if diagram is not None and diagram.cells:
        out += [
            "set output 'phase_map.png'",
            "set title 'outcome in the (m, M) plane'",
            "set xlabel 'm'",
            "set ylabel 'M'",
            "set logscale y",
            "unset key",
            "set palette defined (0 'blue', 1 'red', 2 'orange', 3 'black')",
            "set cbrange [0:3]",
            "code(s) = s eq 'CompletedBounded' ? 0 : s eq 'BlowupDetected' ? 1 : s eq 'MaxStepsReached' ? 2 : 3",
            "plot 'phase_diagram.csv' every ::1 using 1:2:(code(strcol(3))) with points pt 7 ps 2 palette",
        ]
    return "\n".join(out) + "\n"


def emit_report(
    records: Sequence[RunRecord], diagram: PhaseDiagram | None, out_dir: str | Path
) -> list[Path]:
    """Write ``summary.txt``, ``phase_diagram.csv`` and ``plot.gp`` into ``out_dir``."""
    if not records:
        raise ChemoradError("no run records to report on")
    if diagram is None:
        diagram = diagram_from_records(records)
    if not diagram.cells:
        raise ChemoradError("phase diagram is empty")
    out = Path(out_dir)
    paths = [out / "summary.txt", out / "phase_diagram.csv", out / "plot.gp"]
    atomic_write(paths[0], summary_text(records))
    atomic_write(paths[1], diagram.to_csv())
    atomic_write(paths[2], plot_script(records, diagram))
    return paths


def report_directory(directory: str | Path) -> list[Path]:
    """Report on every record in ``directory``.

    A ``phase_diagram.csv`` already written by a sweep is left alone: records
    from threshold bisection share the directory and would otherwise show up
    as extra grid points.
    """
    records = collect_records(directory)
    existing = Path(directory) / "phase_diagram.csv"
    if not existing.exists():
        return emit_report(records, None, directory)
    if not records:
        raise ChemoradError("no run records to report on")
    out = Path(directory)
    atomic_write(out / "summary.txt", summary_text(records))
    atomic_write(out / "plot.gp", plot_script(records, diagram_from_records(records)))
    return [out / "summary.txt", existing, out / "plot.gp"]
