"""CSV ingestion, draw persistence and plot/summary tables."""

from __future__ import annotations

import csv
import io
import math
import re
from pathlib import Path

import numpy as np

from .draws import DrawStore
from .hier import FunctionalDataset
from .rounding import CountSeries


class ParseError(ValueError):
    """Malformed input file; the message carries the offending line number."""


def fmt(x):
    """Decimal text with 17 significant digits (round-trips any double)."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def _read_rows(path):
    text = Path(path).read_text()
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        rows.append((lineno, next(csv.reader([line]))))
    if not rows:
        raise ParseError(f"{path}: empty file")
    return rows


def _number(cell, lineno, name):
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"line {lineno}: {name} value {cell!r} is not a number") from None
    if not math.isfinite(v):
        raise ParseError(f"line {lineno}: {name} must be finite")
    return v


def _count(cell, lineno):
    v = _number(cell, lineno, "y")
    if v < 0 or v != int(v):
        raise ParseError(f"line {lineno}: y must be a non-negative integer, got {cell!r}")
    return int(v)


def parse_count_series_csv(path):
    rows = _read_rows(path)
    lineno, header = rows[0]
    if [h.strip() for h in header] != ["s", "y"]:
        raise ParseError(f"line {lineno}: expected header 's,y'")
    s, y = [], []
    for lineno, row in rows[1:]:
        if len(row) != 2:
            raise ParseError(f"line {lineno}: expected 2 fields, got {len(row)}")
        s.append(_number(row[0], lineno, "s"))
        y.append(_count(row[1], lineno))
    if not s:
        raise ParseError(f"{path}: no data rows")
    s, y = np.array(s), np.array(y, dtype=np.int64)
    order = np.argsort(s, kind="stable")
    s, y = s[order], y[order]
    dup = np.flatnonzero(np.diff(s) == 0)
    if dup.size:
        raise ParseError(f"duplicate location s={s[dup[0]]!r}")
    return CountSeries(s, y)


_COV = re.compile(r"^x(\d+)$")


def _label_order(labels):
    uniq = list(dict.fromkeys(labels))
    try:
        return sorted(uniq, key=float)
    except ValueError:
        return sorted(uniq)


def parse_functional_csv(path):
    rows = _read_rows(path)
    lineno, header = rows[0]
    header = [h.strip() for h in header]
    if header[:3] != ["subject", "s", "y"]:
        raise ParseError(f"line {lineno}: header must start with 'subject,s,y'")
    rest = header[3:]
    has_group = bool(rest) and rest[0] == "group"
    covs = rest[1:] if has_group else rest
    for k, name in enumerate(covs, start=1):
        if name != f"x{k}":
            raise ParseError(f"line {lineno}: expected covariate column 'x{k}', got {name!r}")
    width = len(header)

    subj, times, counts, groups, X = [], [], [], {}, []
    for lineno, row in rows[1:]:
        if len(row) != width:
            raise ParseError(f"line {lineno}: expected {width} fields, got {len(row)}")
        if any(c.strip() == "" for c in row):
            raise ParseError(f"line {lineno}: empty cell")
        sid = row[0].strip()
        subj.append(sid)
        times.append(_number(row[1], lineno, "s"))
        counts.append(_count(row[2], lineno))
        if has_group:
            g = row[3].strip()
            if groups.setdefault(sid, g) != g:
                raise ParseError(f"line {lineno}: subject {sid} changes group")
        X.append([_number(c, lineno, header[3 + has_group + j]) for j, c in enumerate(row[3 + has_group:])])
    if not subj:
        raise ParseError(f"{path}: no data rows")

    subject_labels = list(dict.fromkeys(subj))
    index = {s: i for i, s in enumerate(subject_labels)}
    sid = np.array([index[s] for s in subj])
    t = np.array(times)
    key = np.lexsort((t, sid))
    same = (np.diff(sid[key]) == 0) & (np.diff(t[key]) == 0)
    if same.any():
        bad = key[np.flatnonzero(same)[0]]
        raise ParseError(f"subject {subj[bad]} has duplicate time {t[bad]!r}")
    group_arr, group_labels = None, []
    if has_group:
        group_labels = _label_order(groups.values())
        gidx = {g: k for k, g in enumerate(group_labels)}
        group_arr = np.array([gidx[groups[s]] for s in subject_labels])
    cov = np.array(X, dtype=float) if covs else None
    return FunctionalDataset(sid, t, np.array(counts), covariates=cov, groups=group_arr,
                             subject_labels=subject_labels, group_labels=group_labels)


# -- writing -----------------------------------------------------------------

def header_lines(meta):
    """Comment header shared by every output file; only deterministic fields."""
    keys = ["command", "model", "seed", "config_hash"]
    return [f"# {k}={meta[k]}" for k in keys if k in meta]


def write_table(path, columns, rows, meta):
    buf = io.StringIO()
    for line in header_lines(meta):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([c if isinstance(c, str) else fmt(c) for c in row])
    Path(path).write_text(buf.getvalue())


def _flat_names(name, shape):
    if not shape:
        return [name]
    return [f"{name}[{','.join(map(str, idx))}]" for idx in np.ndindex(*shape)]


def write_draws(path, store, meta=None):
    """One row per stored iteration; array parameters are flattened in C order."""
    meta = {**store.meta, **(meta or {})}
    names = sorted(store.draws)
    columns = ["iteration"]
    shapes = []
    for name in names:
        shape = store[name].shape[1:]
        shapes.append(f"# shape {name}={','.join(map(str, shape))}")
        columns += _flat_names(name, shape)
    flat = [store[name].reshape(len(store), -1) for name in names]
    body = np.hstack(flat) if flat else np.zeros((len(store), 0))
    buf = io.StringIO()
    for line in header_lines(meta) + shapes:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for it, row in zip(store.iterations, body):
        w.writerow([str(int(it))] + [fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_draws(path):
    meta, shapes, lines = {}, {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# shape "):
            name, _, dims = line[len("# shape "):].partition("=")
            shapes[name] = tuple(int(d) for d in dims.split(",") if d)
        elif line.startswith("# "):
            k, _, v = line[2:].partition("=")
            meta[k] = v
        elif line.strip():
            lines.append(line)
    if not lines:
        raise ParseError(f"{path}: no header row")
    rows = list(csv.reader(lines))
    columns = rows[0]
    if columns[0] != "iteration":
        raise ParseError(f"{path}: first column must be 'iteration'")
    data = np.array([[float(c) for c in r] for r in rows[1:]]).reshape(len(rows) - 1, len(columns))
    draws, col = {}, 1
    for name, shape in shapes.items():
        size = int(np.prod(shape)) if shape else 1
        draws[name] = data[:, col:col + size].reshape((data.shape[0],) + shape)
        col += size
    if col != len(columns):
        raise ParseError(f"{path}: shape lines do not account for all columns")
    if "seed" in meta:
        meta["seed"] = int(meta["seed"])
    return DrawStore(draws, data[:, 0].astype(np.int64), {}, meta)


def summarize_draws(store, probs=(0.025, 0.5, 0.975)):
    """Rows of ``(parameter, mean, sd, quantiles...)`` per flattened component."""
    rows = []
    for name in sorted(store.draws):
        arr = store[name].reshape(len(store), -1)
        for label, col in zip(_flat_names(name, store[name].shape[1:]), arr.T):
            q = np.quantile(col, probs)
            sd = float(col.std(ddof=1)) if col.size > 1 else 0.0
            rows.append([label, float(col.mean()), sd, *q])
    columns = ["parameter", "mean", "sd"] + [f"q{100 * p:g}" for p in probs]
    return columns, rows
