"""Delimited result tables with a commented metadata header.

File layout::

    # format: csv           (or tsv)
    # key: value            (metadata, one per line)
    # columns: name[unit],...
    # types: float,int,str,...
    name,name,...           (header row)
    value,value,...         (data rows)

Floats are written with ``repr`` so they reparse to the identical double.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field

TYPES = {"float": float, "int": int, "str": str}
DELIMITERS = {"csv": ",", "tsv": "\t"}


@dataclass
class Column:
    name: str
    kind: str = "float"
    unit: str = ""

    def __post_init__(self):
        if self.kind not in TYPES:
            raise ValueError(f"unknown column type {self.kind!r}")
        if "," in self.name or "[" in self.name:
            raise ValueError(f"column name {self.name!r} may not contain ',' or '['")


@dataclass
class ResultTable:
    columns: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    fmt: str = "csv"

    def __post_init__(self):
        if self.fmt not in DELIMITERS:
            raise ValueError(f"format must be one of {sorted(DELIMITERS)}")

    @property
    def names(self):
        return [c.name for c in self.columns]

    def add(self, *values, **named):
        """Append a row given positionally or by column name."""
        if values and named:
            raise ValueError("give a row either positionally or by name")
        if named:
            missing = set(self.names) - set(named)
            extra = set(named) - set(self.names)
            if missing or extra:
                raise ValueError(f"row keys mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
            values = [named[n] for n in self.names]
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} values, table has {len(self.columns)} columns")
        row = []
        for col, v in zip(self.columns, values):
            v = TYPES[col.kind](v)
            if col.kind == "float" and not math.isfinite(v) and "status" not in self.names:
                raise ValueError(f"non-finite value in column {col.name!r} without a status column")
            row.append(v)
        self.rows.append(tuple(row))

    def column(self, name):
        i = self.names.index(name)
        return [r[i] for r in self.rows]

    def sort(self, keys):
        idx = [self.names.index(k) for k in keys]
        self.rows.sort(key=lambda r: tuple(r[i] for i in idx))

    def data_lines(self):
        """Header and data rows exactly as written (used for byte comparisons)."""
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter=DELIMITERS[self.fmt], lineterminator="\n")
        writer.writerow(self.names)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def to_text(self):
        lines = [f"# format: {self.fmt}"]
        for key, value in self.metadata.items():
            if not isinstance(value, str):
                value = json.dumps(value, sort_keys=True)
            if "\n" in value:
                raise ValueError(f"metadata {key!r} must fit on one line")
            if key == "format":
                raise ValueError("'format' is a reserved metadata key")
            lines.append(f"# {key}: {value}")
        lines.append("# columns: " + ",".join(f"{c.name}[{c.unit}]" for c in self.columns))
        lines.append("# types: " + ",".join(c.kind for c in self.columns))
        return "\n".join(lines) + "\n" + self.data_lines()

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_text())


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def parse_table(text):
    meta, columns, kinds, body = {}, None, None, []
    for line in text.splitlines():
        if line.startswith("# columns: "):
            columns = line[len("# columns: "):].split(",")
        elif line.startswith("# types: "):
            kinds = line[len("# types: "):].split(",")
        elif line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            meta[key] = value
        else:
            body.append(line)
    if columns is None or kinds is None or len(columns) != len(kinds):
        raise ValueError("table is missing its column or type declaration")
    fmt = meta.pop("format", "csv")
    if fmt not in DELIMITERS:
        raise ValueError(f"unknown table format {fmt!r}")
    cols = []
    for spec, kind in zip(columns, kinds):
        name, _, unit = spec.partition("[")
        cols.append(Column(name, kind, unit.rstrip("]")))
    reader = csv.reader(body, delimiter=DELIMITERS[fmt])
    header = next(reader)
    if header != [c.name for c in cols]:
        raise ValueError("header row does not match the declared columns")
    table = ResultTable(columns=cols, metadata=meta, fmt=fmt)
    for rec in reader:
        if not rec:
            continue
        if len(rec) != len(cols):
            raise ValueError("ragged row")
        table.rows.append(tuple(TYPES[c.kind](v) for c, v in zip(cols, rec)))
    return table


def read_table(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_table(fh.read())
