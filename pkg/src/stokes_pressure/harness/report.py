"""Report rows and the CSV writer.

Schema: ``experiment,param_json,quantity,value,tolerance,pass``.  Floats are
written with 17 significant digits, lines end in LF, text is UTF-8.

Row kinds decide the ``pass`` column:

* ``max``: residual rows, pass iff ``value <= tolerance``
* ``min``: observed orders, pass iff ``value >= tolerance``
* ``exact``: pass iff ``value == tolerance``
* ``match``: pass iff ``|value - reference| <= tolerance`` (reference kept in the parameters)
* ``control``: negative controls, pass iff ``value > tolerance`` (the tolerance
  column holds the detection threshold)
* ``info``: measured values with no flag (ratios); ``pass`` and ``tolerance`` are empty
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

HEADER = ("experiment", "param_json", "quantity", "value", "tolerance", "pass")
KINDS = ("max", "min", "exact", "match", "control", "info")


def fmt_float(x: float) -> str:
    return "%.17g" % float(x)


@dataclass(frozen=True)
class ReportRow:
    experiment: str
    params: dict
    quantity: str
    value: float
    tolerance: float | None = None
    kind: str = "max"
    reference: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown row kind {self.kind!r}")
        if self.kind != "info" and self.tolerance is None:
            raise ValueError("flagged rows need a tolerance")
        if self.kind == "match" and self.reference is None:
            raise ValueError("match rows need a reference value")

    @property
    def passed(self) -> bool | None:
        v, tol = float(self.value), self.tolerance
        if self.kind == "info":
            return None
        if not math.isfinite(v):
            return False
        if self.kind == "max":
            return v <= tol
        if self.kind == "min":
            return v >= tol
        if self.kind == "exact":
            return v == tol
        if self.kind == "match":
            return abs(v - self.reference) <= tol
        return v > tol

    def param_json(self) -> str:
        return json.dumps(self.params, sort_keys=True, separators=(",", ":"), allow_nan=True)

    def cells(self) -> list[str]:
        flag = self.passed
        return [
            self.experiment,
            self.param_json(),
            self.quantity,
            fmt_float(self.value),
            "" if self.tolerance is None else fmt_float(self.tolerance),
            "" if flag is None else ("true" if flag else "false"),
        ]


def params(resolution=None, dt=None, seed=None, **extra) -> dict:
    """Row parameters; resolution, time step and seed are always present."""
    out = {"resolution": resolution, "dt": dt, "seed": seed}
    out.update(extra)
    return out


def render(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for r in rows:
        writer.writerow(r.cells())
    return buf.getvalue()


def write_csv(rows, path) -> None:
    Path(path).write_bytes(render(rows).encode("utf-8"))


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def all_passed(rows) -> bool:
    return all(r.passed is not False for r in rows)


def observed_order(coarse: float, fine: float, ratio: float = 2.0) -> float:
    """``log(e_coarse / e_fine) / log(ratio)``; ``nan`` if either error is not positive."""
    if not (coarse > 0 and fine > 0):
        return math.nan
    return math.log(coarse / fine) / math.log(ratio)
