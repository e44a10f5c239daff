"""Deterministic CSV/JSON writers.

Every file carries the tool version, a SHA-256 of the run configuration,
the resolved parameters and the seed, so identical configurations give
byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math

import numpy as np

from . import __version__

TOOL = "coinfection-branch"


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (complex, np.complexfloating)):
        return [_jsonable(obj.real), _jsonable(obj.imag)]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    if hasattr(obj, "value"):
        return obj.value
    return obj


def config_hash(config):
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def meta(command, config, params, seed):
    return {
        "tool": TOOL,
        "version": __version__,
        "command": command,
        "config_sha256": config_hash(config),
        "params": params.to_dict(),
        "seed": seed,
    }


def header_lines(m):
    return [
        f"# {m['tool']} {m['version']}",
        f"# command: {m['command']}",
        f"# config-sha256: {m['config_sha256']}",
        "# params: " + json.dumps(_jsonable(m["params"]), sort_keys=True, separators=(",", ":")),
        f"# seed: {m['seed']}",
    ]


def dumps_json(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, m, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_json({"meta": m, **payload}))


def write_csv(path, m, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_lines(m):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


BRANCH_COLUMNS = (
    ["K", "type", "S", "I1", "I2", "I12"]
    + [f"re_lambda{i}" for i in range(1, 5)]
    + [f"im_lambda{i}" for i in range(1, 5)]
    + ["stable"]
)


def branch_rows(branch):
    for s in branch.samples:
        ev = s.report.eigenvalues
        yield ([s.K, s.equilibrium.type_tag.value, *s.equilibrium.point]
               + list(ev.real) + list(ev.imag) + [s.report.stable])


TRAJECTORY_COLUMNS = ["t", "S", "I1", "I2", "I12", "R"]


def trajectory_rows(traj):
    for t, y in zip(traj.times, traj.states):
        yield [t, *y]


def read_csv(path):
    """Header metadata and float/str columns of a file written by :func:`write_csv`."""
    header, body = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            (header if line.startswith("#") else body).append(line)
    rows = list(csv.reader(body))
    cols = rows[0]
    data = {c: [] for c in cols}
    for row in rows[1:]:
        for c, v in zip(cols, row):
            try:
                data[c].append(float(v))
            except ValueError:
                data[c].append(v)
    return header, data
