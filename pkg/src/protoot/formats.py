"""Text formats for feature matrices, training configs and metrics, plus model archives.

Feature file::

    ucir-features 1 <N> <D> <has_labels:0|1>
    <D floats separated by single spaces>[ <integer label>]
    ...

Floats are written with ``repr``, the shortest string that parses back to
the same double, so save -> load -> save is byte-identical.

Config file: ``key = value`` per line, ``#`` starts a comment. Keys are the
:class:`~protoot.training.TrainConfig` field names (``lambda`` for
``lambda_``). Missing keys keep their defaults.

Metrics file: one JSON object per line.
"""

import dataclasses
import json
import math

import numpy as np

from .exceptions import DimMismatchError, IoError, ParseError
from .representation import MlpEncoder
from .training import TrainConfig

MAGIC = "ucir-features"
VERSION = "1"
METRIC_KEYS = ("epoch", "loss_pre", "loss_in", "loss_cr", "loss_total", "p_at_k", "wallclock_ms")


def _read_text(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path} is not UTF-8 text") from exc


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _fmt_float(v):
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"cannot serialize non-finite value {v}")
    return repr(v)


def format_features(x, labels=None):
    """Serialize ``x`` (and optional integer ``labels``) to the feature-file text."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimMismatchError(f"features must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise DimMismatchError(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    lines = [f"{MAGIC} {VERSION} {n} {d} {0 if labels is None else 1}"]
    for i in range(n):
        row = " ".join(_fmt_float(v) for v in x[i])
        if labels is not None:
            row += f" {int(labels[i])}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def _parse_float(token, line):
    try:
        v = float(token)
    except ValueError:
        raise ParseError(f"not a number: {token!r}", line) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {token!r}", line)
    return v


def _parse_int(token, line, what):
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"{what} is not an integer: {token!r}", line) from None


def parse_features(text):
    """Inverse of :func:`format_features`; returns ``(x, labels_or_None)``."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", 1)
    head = lines[0].split(" ")
    if len(head) != 5 or head[0] != MAGIC:
        raise ParseError(f"expected header '{MAGIC} {VERSION} <N> <D> <0|1>'", 1)
    if head[1] != VERSION:
        raise ParseError(f"unsupported version {head[1]!r}", 1)
    n = _parse_int(head[2], 1, "N")
    d = _parse_int(head[3], 1, "D")
    if n < 0 or d < 1:
        raise ParseError(f"invalid dimensions N={n} D={d}", 1)
    if head[4] not in ("0", "1"):
        raise ParseError(f"has_labels must be 0 or 1, got {head[4]!r}", 1)
    has_labels = head[4] == "1"
    body = lines[1:]
    if len(body) != n:
        # point at the first surplus row, or just past the end when rows are missing
        at = n + 2 if len(body) > n else len(lines) + 1
        raise ParseError(f"header declares {n} rows, body has {len(body)}", at)
    width = d + (1 if has_labels else 0)
    x = np.empty((n, d))
    labels = np.empty(n, dtype=np.int64) if has_labels else None
    for i, raw in enumerate(body):
        lineno = i + 2
        tokens = raw.split(" ")
        if len(tokens) != width:
            raise ParseError(f"expected {width} fields, found {len(tokens)}", lineno)
        x[i] = [_parse_float(t, lineno) for t in tokens[:d]]
        if has_labels:
            labels[i] = _parse_int(tokens[d], lineno, "label")
    return x, labels


def save_features(path, x, labels=None):
    _write_text(path, format_features(x, labels))


def load_features(path):
    """Read a feature file; returns ``(x, labels)`` with ``labels`` None when absent."""
    return parse_features(_read_text(path))


def _config_key(name):
    return "lambda" if name == "lambda_" else name


def _field_for_key(key):
    name = "lambda_" if key == "lambda" else key
    for f in dataclasses.fields(TrainConfig):
        if f.name == name:
            return f
    return None


def _fmt_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _fmt_float(v)
    return str(v)


def format_config(cfg):
    lines = [f"{_config_key(f.name)} = {_fmt_value(getattr(cfg, f.name))}"
             for f in dataclasses.fields(cfg)]
    return "\n".join(lines) + "\n"


def convert_value(field, text, line=None):
    """Convert config text to the type of ``field``."""
    kind = field.type
    if kind is bool:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ParseError(f"{field.name}: expected true/false, got {text!r}", line)
    if kind is int:
        return _parse_int(text, line, field.name)
    if kind is float:
        return _parse_float(text, line)
    return text


def parse_config(text, base=None):
    """Parse config text into a :class:`TrainConfig`, starting from ``base`` or the defaults."""
    values = {}
    seen = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key = value, got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        field = _field_for_key(key)
        if field is None:
            raise ParseError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ParseError(f"duplicate key {key!r} (first on line {seen[key]})", lineno)
        seen[key] = lineno
        values[field.name] = convert_value(field, value, lineno)
    try:
        return dataclasses.replace(base or TrainConfig(), **values)
    except ValueError as exc:
        raise ParseError(f"invalid config: {exc}") from exc


def save_config(path, cfg):
    _write_text(path, format_config(cfg))


def load_config(path, base=None):
    return parse_config(_read_text(path), base)


def format_metrics(history):
    """One compact JSON object per record, keys in the canonical order."""
    out = []
    for rec in history:
        missing = [k for k in METRIC_KEYS if k not in rec]
        if missing:
            raise ValueError(f"metrics record lacks {missing}")
        out.append(json.dumps({k: rec[k] for k in METRIC_KEYS}) + "\n")
    return "".join(out)


def save_metrics(path, history):
    _write_text(path, format_metrics(history))


def load_metrics(path):
    records = []
    for lineno, raw in enumerate(_read_text(path).split("\n"), start=1):
        if not raw.strip():
            continue
        try:
            records.append(json.loads(raw))
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad JSON: {exc.msg}", lineno) from None
    return records


def save_model(path, encoder, cfg):
    """Store encoder weights and the training config in an ``.npz`` archive."""
    try:
        with open(path, "wb") as fh:
            np.savez(fh, shape=np.array(encoder.shape), w1=encoder.w1, b1=encoder.b1,
                     w2=encoder.w2, b2=encoder.b2, config=np.array(format_config(cfg)))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def load_model(path):
    """Return ``(encoder, cfg)`` saved by :func:`save_model`."""
    try:
        with np.load(path, allow_pickle=False) as z:
            encoder = MlpEncoder(*(int(v) for v in z["shape"]))
            for name in ("w1", "b1", "w2", "b2"):
                arr = z[name]
                if arr.shape != getattr(encoder, name).shape:
                    raise ParseError(f"model weight {name} has shape {arr.shape}")
                setattr(encoder, name, arr.astype(np.float64))
            cfg = parse_config(str(z["config"]))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"{path} is not a model archive: {exc}") from exc
    return encoder, cfg
