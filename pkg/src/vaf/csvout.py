"""CSV emission with the run-metadata comment line."""

import csv
import hashlib
import io
import json

from . import __version__


def scenario_hash(obj):
    """Short stable hash of a scenario text or of a JSON-able argument dict."""
    if isinstance(obj, (bytes, str)):
        data = obj.encode() if isinstance(obj, str) else obj
    else:
        data = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(data).hexdigest()[:16]


def fmt(value):
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def render_csv(header, rows, scenario, seed):
    buf = io.StringIO()
    buf.write(f"# scenario={scenario} seed={seed} version={__version__}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def csv_body(text):
    """Everything after the metadata line."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))
