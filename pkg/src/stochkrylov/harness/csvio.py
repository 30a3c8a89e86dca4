"""CSV emission with a config-echo header.

Output format: '#'-prefixed key=value lines echoing the configuration, then a
column header row, then data rows. Floats are printed with 17 significant
digits so that identical runs produce byte-identical files and values
round-trip exactly.
"""

from __future__ import annotations

import io
from pathlib import Path


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def render_csv(header_kv: dict, columns: list, rows) -> str:
    buf = io.StringIO()
    for key, value in header_kv.items():
        buf.write(f"# {key}={format_value(value)}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(format_value(v) for v in row) + "\n")
    return buf.getvalue()


def write_csv(path, header_kv: dict, columns: list, rows) -> None:
    text = render_csv(header_kv, columns, rows)
    Path(path).write_text(text, encoding="ascii", newline="\n")


def read_config_echo(path) -> dict:
    """Parse the '# key=value' header block of a results CSV back into a dict."""
    out = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if not body or "=" not in body:
                continue
            key, _, value = body.partition("=")
            out[key.strip()] = value.strip()
    return out
