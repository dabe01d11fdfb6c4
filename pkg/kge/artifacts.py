# artifacts.py
# Atomic file output and report rendering
# Partial outputs are never left in place: write to a temp file, then rename

import json
import os
import tempfile
from pathlib import Path


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
    return path


def atomic_write_text(path, text: str):
    return atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(record):
    """Canonical JSON: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(record, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path, record):
    return atomic_write_text(path, dumps_json(record))


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# ================= TABLES =================

METRIC_COLUMNS = ("hits1", "hits3", "hits10", "mr", "mrr", "count")


def _fmt(value):
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def render_table(rows, columns):
    """Plain fixed-width table; rows are dicts, missing cells render as '-'."""
    cells = [[str(c) for c in columns]]
    for row in rows:
        cells.append([_fmt(row.get(c)) for c in columns])
    widths = [max(len(r[i]) for r in cells) for i in range(len(columns))]
    lines = []
    for n, r in enumerate(cells):
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# ================= REPORTS =================

def report_record(command, config, **body):
    """Every report embeds the resolved configuration and its seed."""
    return {"command": command, "config": config.as_dict(), "seed": config["seed"], **body}


def write_report(workspace, name, record, table=None):
    """<name>.json, plus <name>.txt when a rendered table is given."""
    path = write_json(workspace.report(f"{name}.json"), record)
    if table is not None:
        atomic_write_text(workspace.report(f"{name}.txt"), table)
    return path
