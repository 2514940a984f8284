"""Report CSV schema, merging and markdown rendering.

CSV files are UTF-8 with LF line endings and '.' decimal separators;
float formatting is fixed-precision so reruns are byte-stable.
"""

from __future__ import annotations

from pathlib import Path

from .errors import SchemaError
from .transfer import EvalReport

CSV_HEADER = "task,mode,n_t,seeds,mean_rel_l2,std_rel_l2,seconds"


def format_row(report: EvalReport) -> str:
    return (
        f"{report.task},{report.mode},{report.n_t},{len(report.seeds)},"
        f"{report.mean:.6f},{report.std:.6f},{report.seconds:.3f}"
    )


def write_report(reports: list[EvalReport], path) -> None:
    rows = sorted(reports, key=lambda r: (r.task, r.mode, r.n_t))
    text = "\n".join([CSV_HEADER] + [format_row(r) for r in rows]) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def parse_report(path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise SchemaError(f"{path}: bad or missing header (want {CSV_HEADER!r})")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise SchemaError(f"{path}:{ln}: expected 7 columns, got {len(parts)}")
        try:
            rows.append(
                {
                    "task": parts[0],
                    "mode": parts[1],
                    "n_t": int(parts[2]),
                    "seeds": int(parts[3]),
                    "mean_rel_l2": float(parts[4]),
                    "std_rel_l2": float(parts[5]),
                    "seconds": float(parts[6]),
                }
            )
        except ValueError as exc:
            raise SchemaError(f"{path}:{ln}: {exc}") from exc
    return rows


def merge_reports(paths: list) -> list[dict]:
    """Concatenate, validate and sort; duplicate (task, mode, n_t) keys fail."""
    rows: list[dict] = []
    for p in paths:
        rows.extend(parse_report(p))
    seen = set()
    for row in rows:
        key = (row["task"], row["mode"], row["n_t"])
        if key in seen:
            raise SchemaError(f"duplicate report row for {key}")
        seen.add(key)
    rows.sort(key=lambda r: (r["task"], r["mode"], r["n_t"]))
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r['task']},{r['mode']},{r['n_t']},{r['seeds']},"
            f"{r['mean_rel_l2']:.6f},{r['std_rel_l2']:.6f},{r['seconds']:.3f}"
        )
    return "\n".join(lines) + "\n"


def render_markdown(rows: list[dict]) -> str:
    """One table per task: rows are n_t, columns are modes, cells mean ± std (%)."""
    out = []
    tasks = sorted({r["task"] for r in rows})
    for task in tasks:
        sub = [r for r in rows if r["task"] == task]
        modes = sorted({r["mode"] for r in sub})
        n_ts = sorted({r["n_t"] for r in sub})
        cell = {(r["n_t"], r["mode"]): r for r in sub}
        out.append(f"## {task}")
        out.append("")
        out.append("| N_t | " + " | ".join(modes) + " |")
        out.append("|---" * (len(modes) + 1) + "|")
        for n_t in n_ts:
            row = [str(n_t)]
            for mode in modes:
                r = cell.get((n_t, mode))
                row.append(
                    f"{100 * r['mean_rel_l2']:.2f} ± {100 * r['std_rel_l2']:.2f}" if r else "—"
                )
            out.append("| " + " | ".join(row) + " |")
        out.append("")
    return "\n".join(out)
