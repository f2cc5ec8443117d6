"""Correspondence types and the CSV / JSONL interchange formats.

A correspondence is a 4-tuple ``(x, y, u, v)`` of normalized image
coordinates: ``(x, y)`` in the source image and ``(u, v)`` in the target.
Coordinates are expected to already be normalized to ``[-1, 1]``; this
module only validates the range, it never rescales.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np

__all__ = [
    "LapMotionError",
    "ParseError",
    "DimensionMismatchError",
    "CoordinateRangeError",
    "Correspondence",
    "CorrespondenceSet",
    "PruneResult",
    "compute_motions",
    "load_correspondences",
    "save_correspondences",
    "detect_format",
    "save_prune_result",
    "load_predictions",
]


class LapMotionError(Exception):
    """Base class for errors raised by this package."""


class ParseError(LapMotionError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class DimensionMismatchError(ParseError):
    pass


class CoordinateRangeError(ParseError):
    pass


class Correspondence(NamedTuple):
    x: float
    y: float
    u: float
    v: float


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=a.dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """An ordered set of N putative correspondences.

    Parameters
    ----------
    coords : ndarray, shape (N, 4)
        Rows ``(x, y, u, v)``. Row order is significant: index ``i`` in every
        downstream structure refers to row ``i`` here.
    labels : ndarray of int, shape (N,), optional
        Ground-truth flags, 1 for a true correspondence and 0 otherwise.
    features : ndarray, shape (N, d0), optional
        Per-correspondence feature vectors.
    """

    coords: np.ndarray
    labels: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 4:
            raise DimensionMismatchError(
                f"coords must have shape (N, 4), got {coords.shape}")
        n = coords.shape[0]
        if n < 1:
            raise ValueError("a correspondence set needs at least one row")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coordinates must be finite")
        object.__setattr__(self, "coords", _frozen(coords))

        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (n,):
                raise DimensionMismatchError(
                    f"labels must have shape ({n},), got {labels.shape}")
            if not np.all((labels == 0) | (labels == 1)):
                raise ValueError("labels must be 0 or 1")
            object.__setattr__(self, "labels", _frozen(labels.astype(np.int64)))

        if self.features is not None:
            features = np.asarray(self.features, dtype=np.float64)
            if features.ndim != 2 or features.shape[0] != n:
                raise DimensionMismatchError(
                    f"features must have shape ({n}, d0), got {features.shape}")
            if not np.all(np.isfinite(features)):
                raise ValueError("features must be finite")
            object.__setattr__(self, "features", _frozen(features))

    def __len__(self) -> int:
        return self.coords.shape[0]

    def __getitem__(self, i: int) -> Correspondence:
        return Correspondence(*(float(c) for c in self.coords[i]))

    def __iter__(self) -> Iterator[Correspondence]:
        for i in range(len(self)):
            yield self[i]

    @property
    def n(self) -> int:
        return len(self)

    @property
    def source(self) -> np.ndarray:
        return self.coords[:, :2]

    @property
    def target(self) -> np.ndarray:
        return self.coords[:, 2:]

    def take(self, index) -> "CorrespondenceSet":
        """Return the subset (or permutation) of rows selected by ``index``."""
        index = np.asarray(index)
        return CorrespondenceSet(
            self.coords[index],
            None if self.labels is None else self.labels[index],
            None if self.features is None else self.features[index],
        )

    def check_range(self, bound: float = 1.0) -> None:
        bad = np.flatnonzero(np.any(np.abs(self.coords) > bound, axis=1))
        if bad.size:
            i = int(bad[0])
            raise CoordinateRangeError(
                f"row {i}: coordinates {tuple(self.coords[i])} outside "
                f"[-{bound}, {bound}] ({bad.size} rows out of range)")


def compute_motions(cs: CorrespondenceSet) -> np.ndarray:
    """Motion vectors ``(u - x, v - y)``, shape (N, 2)."""
    return cs.coords[:, 2:] - cs.coords[:, :2]


@dataclass(frozen=True, eq=False)
class PruneResult:
    """Output of a pruning run.

    ``inlier[i]`` holds iff ``residual_norms[i] <= epsilon``.
    """

    residual_norms: np.ndarray
    inlier: np.ndarray
    smoothed: np.ndarray
    epsilon: float
    warnings: tuple = field(default=())

    def __len__(self) -> int:
        return self.residual_norms.shape[0]

    @property
    def n_inliers(self) -> int:
        return int(np.count_nonzero(self.inlier))


# -- serialization ---------------------------------------------------------

_FORMATS = ("csv", "jsonl")


def detect_format(path) -> str:
    suffix = Path(path).suffix.lower().lstrip(".")
    if suffix in ("jsonl", "ndjson", "json"):
        return "jsonl"
    return "csv"


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"column {column!r}: cannot parse {text!r} as a number",
                         line) from None
    if not math.isfinite(value):
        raise ParseError(f"column {column!r}: non-finite value {text!r}", line)
    return value


def _parse_label(value, line: int) -> int:
    if isinstance(value, bool):
        return int(value)
    try:
        as_float = float(value)
    except (TypeError, ValueError):
        raise ParseError(f"label {value!r} is not 0 or 1", line) from None
    if as_float not in (0.0, 1.0):
        raise ParseError(f"label {value!r} is not 0 or 1", line)
    return int(as_float)


def _read_csv(text: str):
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty file: a header row is required", 1) from None
    if header[:4] != ["x", "y", "u", "v"]:
        raise ParseError(f"header must start with x,y,u,v, got {header[:4]}", 1)
    rest = header[4:]
    has_label = bool(rest) and rest[0] == "label"
    feat_cols = rest[1:] if has_label else rest
    expected = [f"f{i}" for i in range(len(feat_cols))]
    if feat_cols != expected:
        raise ParseError(f"unexpected columns {feat_cols}; features must be "
                         f"named f0..f{{d0-1}} in order", 1)

    coords, labels, feats = [], [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DimensionMismatchError(
                f"expected {len(header)} fields, got {len(row)}", line)
        coords.append([_parse_float(row[c], line, header[c]) for c in range(4)])
        if has_label:
            labels.append(_parse_label(row[4].strip(), line))
        off = 5 if has_label else 4
        if feat_cols:
            feats.append([_parse_float(row[off + c], line, feat_cols[c])
                          for c in range(len(feat_cols))])
    return coords, (labels if has_label else None), (feats if feat_cols else None)


def _json_number(value, line: int, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"key {key!r}: expected a number, got {value!r}", line)
    value = float(value)
    if not math.isfinite(value):
        raise ParseError(f"key {key!r}: non-finite value", line)
    return value


def _read_jsonl(text: str):
    coords, labels, feats = [], [], []
    has_label = has_feats = None
    width = None
    for line, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line) from None
        if not isinstance(obj, dict):
            raise ParseError("each line must be a JSON object", line)
        try:
            row = [obj[key] for key in ("x", "y", "u", "v")]
        except KeyError as exc:
            raise ParseError(f"missing key {exc.args[0]!r}", line) from None
        coords.append([_json_number(c, line, k) for c, k in zip(row, "xyuv")])

        if has_label is None:
            has_label = "label" in obj
            has_feats = "features" in obj
        if ("label" in obj) != has_label or ("features" in obj) != has_feats:
            raise ParseError("optional keys must be present on every line or none",
                             line)
        if has_label:
            labels.append(_parse_label(obj["label"], line))
        if has_feats:
            f = obj["features"]
            if not isinstance(f, list):
                raise ParseError("'features' must be an array", line)
            if width is None:
                width = len(f)
            elif len(f) != width:
                raise DimensionMismatchError(
                    f"feature length {len(f)} differs from first row ({width})", line)
            feats.append([_json_number(v, line, "features") for v in f])
    return coords, (labels if has_label else None), (feats if has_feats else None)


def load_correspondences(path, format: Optional[str] = None,
                         check_range: bool = True) -> CorrespondenceSet:
    """Read a correspondence file.

    Parameters
    ----------
    path : path-like
        CSV or JSONL file (see README for both layouts).
    format : {"csv", "jsonl"}, optional
        Inferred from the file suffix when omitted.
    check_range : bool
        Reject coordinates outside ``[-1, 1]``.

    Raises
    ------
    ParseError
        Malformed content; the message carries the line number.
    DimensionMismatchError
        Rows with differing field or feature counts.
    CoordinateRangeError
        A coordinate outside ``[-1, 1]`` while ``check_range`` is set.
    """
    fmt = format or detect_format(path)
    if fmt not in _FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {_FORMATS}")
    text = Path(path).read_text(encoding="utf-8")
    coords, labels, feats = _read_csv(text) if fmt == "csv" else _read_jsonl(text)
    if not coords:
        raise ParseError("no correspondences in file")
    cs = CorrespondenceSet(
        np.array(coords, dtype=np.float64),
        None if labels is None else np.array(labels, dtype=np.int64),
        None if feats is None else np.array(feats, dtype=np.float64).reshape(len(coords), -1),
    )
    if check_range:
        cs.check_range()
    return cs


def _fmt(value: float) -> str:
    # repr() is the shortest string that round-trips a float64 exactly
    return repr(float(value))


def save_correspondences(cs: CorrespondenceSet, path, format: Optional[str] = None) -> None:
    fmt = format or detect_format(path)
    if fmt not in _FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {_FORMATS}")
    d0 = 0 if cs.features is None else cs.features.shape[1]
    out = []
    if fmt == "csv":
        header = ["x", "y", "u", "v"]
        if cs.labels is not None:
            header.append("label")
        header += [f"f{i}" for i in range(d0)]
        out.append(",".join(header))
        for i in range(len(cs)):
            row = [_fmt(c) for c in cs.coords[i]]
            if cs.labels is not None:
                row.append(str(int(cs.labels[i])))
            if d0:
                row += [_fmt(f) for f in cs.features[i]]
            out.append(",".join(row))
    else:
        for i in range(len(cs)):
            obj = dict(zip("xyuv", (float(c) for c in cs.coords[i])))
            if cs.labels is not None:
                obj["label"] = int(cs.labels[i])
            if cs.features is not None:
                obj["features"] = [float(f) for f in cs.features[i]]
            out.append(json.dumps(obj))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def save_prune_result(result: PruneResult, path, format: Optional[str] = None) -> None:
    """Write per-correspondence residuals and labels.

    CSV columns are ``index,residual,inlier``; JSONL lines additionally
    carry the smoothed motion.
    """
    fmt = format or detect_format(path)
    if fmt not in _FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {_FORMATS}")
    out = []
    if fmt == "csv":
        out.append("index,residual,inlier")
        for i, (r, ok) in enumerate(zip(result.residual_norms, result.inlier)):
            out.append(f"{i},{_fmt(r)},{int(ok)}")
    else:
        for i in range(len(result)):
            out.append(json.dumps({
                "index": i,
                "residual": float(result.residual_norms[i]),
                "inlier": int(result.inlier[i]),
                "smoothed": [float(v) for v in result.smoothed[i]],
            }))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_predictions(path, format: Optional[str] = None) -> np.ndarray:
    """Read the ``inlier`` column of a file written by :func:`save_prune_result`,
    ordered by ``index``."""
    fmt = format or detect_format(path)
    text = Path(path).read_text(encoding="utf-8")
    pairs = []
    if fmt == "csv":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or "inlier" not in reader.fieldnames:
            raise ParseError("prediction file needs an 'inlier' column", 1)
        for row in reader:
            line = reader.line_num
            idx = int(row["index"]) if row.get("index") not in (None, "") else len(pairs)
            pairs.append((idx, _parse_label(row["inlier"], line)))
    else:
        for line, raw in enumerate(text.splitlines(), start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line) from None
            if "inlier" not in obj:
                raise ParseError("missing key 'inlier'", line)
            pairs.append((int(obj.get("index", len(pairs))), _parse_label(obj["inlier"], line)))
    pairs.sort()
    return np.array([p for _, p in pairs], dtype=np.int64)
