import hashlib
import json
import logging
import tomllib
from pathlib import Path

import numpy as np
import pandas as pd

from hypokinetic.errors import ConfigError, SnapshotError
from hypokinetic.spectral import FREQUENCY, PHYSICAL, Field, make_grid

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"HYPO"
SNAPSHOT_VERSION = 1
NO_TIME_AXIS = 0xFF
_REP_BYTES = {PHYSICAL: 0, FREQUENCY: 1}


def load_config_file(path):
    """
    Load a TOML or JSON config file into a plain dict.

    Args:
        path (str): Path to the config file.
    Returns:
        dict: Parsed key-value tree.
    Raises:
        FileNotFoundError: If the file does not exist.
        ConfigError: If the file cannot be parsed.
    """
    path = Path(path)
    try:
        text = path.read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"File not found: {path}")
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text.decode("utf-8"))
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc


def write_snapshot(field, path):
    """
    Write a field in the HYPO binary snapshot format.

    Layout: magic, u32 version, u32 n, N_t, N_x, N_v, f64 L_t, L_x, L_v,
    one rep byte per (t, x.., v..) axis (0xFF for an absent time axis), then
    row-major interleaved (re, im) f64 samples, all little-endian.
    """
    grid = field.grid
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    reps = list(field.rep)
    rep_bytes = [_REP_BYTES[r] for r in reps]
    if not field.has_time:
        rep_bytes = [NO_TIME_AXIS] + rep_bytes
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(np.array([SNAPSHOT_VERSION, grid.n, grid.N_t, grid.N_x, grid.N_v], dtype="<u4").tobytes())
        fh.write(np.array([grid.L_t, grid.L_x, grid.L_v], dtype="<f8").tobytes())
        fh.write(bytes(rep_bytes))
        fh.write(np.ascontiguousarray(field.data, dtype="<c16").tobytes())
    return path


def read_snapshot(path):
    """
    Read a HYPO snapshot back into a Field.

    Raises:
        FileNotFoundError: If the file does not exist.
        SnapshotError: On a bad magic, an unknown version or a truncated payload.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"File not found: {path}")
    if raw[:4] != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path} is not a HYPO snapshot")
    header = np.frombuffer(raw, dtype="<u4", count=5, offset=4)
    version, n, N_t, N_x, N_v = (int(v) for v in header)
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    lengths = np.frombuffer(raw, dtype="<f8", count=3, offset=24)
    offset = 48
    rep_bytes = raw[offset:offset + 1 + 2 * n]
    offset += 1 + 2 * n
    has_time = rep_bytes[0] != NO_TIME_AXIS
    if not has_time:
        rep_bytes = rep_bytes[1:]
    decode = {v: k for k, v in _REP_BYTES.items()}
    try:
        rep = tuple(decode[b] for b in rep_bytes)
    except KeyError:
        raise SnapshotError(f"invalid representation byte in {path}")
    grid = make_grid(n, N_t, N_x, N_v, *(float(L) for L in lengths))
    shape = grid.shape(has_time)
    count = int(np.prod(shape))
    if len(raw) - offset != 16 * count:
        raise SnapshotError(f"{path} holds {len(raw) - offset} data bytes, expected {16 * count}")
    data = np.frombuffer(raw, dtype="<c16", count=count, offset=offset).reshape(shape)
    return Field(data.astype(complex), grid, rep, has_time)


def write_report(frame, path, summary=None):
    """
    Write a per-case report as JSON lines with an optional summary line, plus a CSV.

    Returns:
        list[Path]: The two files written.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = frame.to_json(orient="records", lines=True, double_precision=15)
    if text and not text.endswith("\n"):
        text += "\n"
    if summary is not None:
        line = pd.Series({"summary": True, **summary}, dtype=object)
        text += line.to_json(double_precision=15) + "\n"
    path.write_text(text)
    csv_path = path.with_suffix(".csv")
    columns = [c for c in ("case", "lhs", "rhs", "ratio") if c in frame.columns]
    frame[columns or frame.columns].to_csv(csv_path, index=False)
    return [path, csv_path]


def load_report(path):
    """Read the per-case rows of a JSON-lines report, dropping the summary line."""
    path = Path(path)
    try:
        frame = pd.read_json(path, orient="records", lines=True)
    except FileNotFoundError:
        raise FileNotFoundError(f"File not found: {path}")
    if "summary" in frame.columns:
        frame = frame[frame["summary"].isna()].drop(columns="summary")
    return frame


def config_hash(config_dict):
    """SHA-256 of the canonical (sorted, compact) JSON of a config tree."""
    canonical = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_json(payload, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(value):
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")
