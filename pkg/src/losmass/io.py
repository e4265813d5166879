"""Text formats: data files, key = value configs, CSV tables and JSON summaries.

Floats are written with ``repr``, the shortest decimal string that parses
back to the identical double, so every table round-trips exactly.
"""
from __future__ import annotations

import csv
import json
import math
import os
import warnings
from pathlib import Path
from typing import Iterable, Sequence

from .model import KinematicDatum, ModelError


class DataError(ModelError):
    """Malformed or invalid data file."""


class ConfigError(ValueError):
    """Malformed configuration."""


class EmptyDataWarning(UserWarning):
    pass


_COLUMNS = ("r_p", "v3", "sigma_v3")


def parse_data_lines(lines: Iterable[str]) -> list[KinematicDatum]:
    """Three whitespace-separated columns ``r_p v3 sigma_v3`` per line; '#' comments."""
    data = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) != 3:
            raise DataError(f"line {lineno}: expected 3 columns, found {len(tokens)}")
        values = []
        for name, tok in zip(_COLUMNS, tokens):
            try:
                value = float(tok)
            except ValueError:
                raise DataError(f"line {lineno}: non-numeric {name}") from None
            if not math.isfinite(value):
                raise DataError(f"line {lineno}: non-finite {name}")
            values.append(value)
        if values[0] < 0:
            raise DataError(f"line {lineno}: r_p must be >= 0")
        if values[2] < 0:
            raise DataError(f"line {lineno}: sigma_v3 must be >= 0")
        data.append(KinematicDatum(*values))
    return data


def parse_data_file(path) -> list[KinematicDatum]:
    with open(path, encoding="utf-8") as fh:
        data = parse_data_lines(fh)
    if not data:
        warnings.warn(f"{path}: no data lines", EmptyDataWarning, stacklevel=2)
    return data


def format_data(data: Sequence[KinematicDatum], header: str | None = None) -> str:
    lines = [f"# {h}" for h in (header or "").splitlines()]
    lines.append("# r_p[kpc] v3[km/s] sigma_v3[km/s]")
    lines += [" ".join(repr(float(x)) for x in (d.r_p, d.v3, d.sigma_v3)) for d in data]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# key = value configuration

def parse_config_text(text: str) -> dict[str, dict[str, str]]:
    """``section.key = value`` lines into nested dicts; '#' starts a comment line.

    Keys without a dot go to the ``run`` section.
    """
    out: dict[str, dict[str, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        section, _, name = key.rpartition(".")
        section = section or "run"
        bucket = out.setdefault(section, {})
        if name in bucket:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        bucket[name] = value
    return out


def format_config(sections: dict[str, dict]) -> str:
    lines = []
    for section, values in sections.items():
        for key, value in values.items():
            lines.append(f"{section}.{key} = {format_value(value)}")
    return "\n".join(lines) + "\n"


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# --------------------------------------------------------------------------
# tables

def _cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty table")
    return rows[0], rows[1:]


def read_numeric_csv(path) -> dict[str, list[float]]:
    """Columns of a CSV as float lists keyed by header name."""
    header, rows = read_csv(path)
    cols: dict[str, list[float]] = {h: [] for h in header}
    for row in rows:
        for h, v in zip(header, row):
            cols[h].append(float(v))
    return cols


def _json_default(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, payload: dict) -> None:
    def clean(value):
        if isinstance(value, float) and not math.isfinite(value):
            return repr(value)
        if isinstance(value, dict):
            return {k: clean(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [clean(v) for v in value]
        return value

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clean(payload), fh, indent=2, default=_json_default)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


class ArtifactWriter:
    """Writes outputs as ``name.partial`` and renames them all on :meth:`commit`.

    If a run fails midway, whatever was written keeps the suffix.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.pending: list[Path] = []

    def path(self, name: str) -> Path:
        final = self.directory / name
        tmp = final.with_name(final.name + ".partial")
        self.pending.append(final)
        return tmp

    def commit(self) -> list[Path]:
        done = []
        for final in self.pending:
            tmp = final.with_name(final.name + ".partial")
            if tmp.exists():
                os.replace(tmp, final)
                done.append(final)
        self.pending = []
        return done
