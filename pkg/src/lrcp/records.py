"""Result records: append-only JSON lines with full config echoes.

One line per record.  Value fields are reproducible bit-for-bit given the
config and master seed; wall-clock and version fields are bookkeeping only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import __version__
from .config import UNITS

__all__ = ["ResultRecord", "write_records", "read_records"]


@dataclass
class ResultRecord:
    experiment: str
    operation: str
    config: dict
    value: float | None
    ci_low: float | None = None
    ci_high: float | None = None
    n_samples: int | None = None
    n_escaped: int = 0
    flags: list = field(default_factory=list)
    replicates: list = field(default_factory=lambda: [0, 0])
    extra: dict = field(default_factory=dict)
    wall_s: float = 0.0

    def to_json(self) -> str:
        payload = {
            "experiment": self.experiment,
            "operation": self.operation,
            "replicates": self.replicates,
            "value": self.value,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_samples": self.n_samples,
            "n_escaped": self.n_escaped,
            "flags": self.flags,
            "extra": self.extra,
            "config": self.config,
            "wall_s": round(self.wall_s, 3),
            "version": __version__,
            "units": UNITS,
        }
        return json.dumps(payload, sort_keys=True, allow_nan=True)


def write_records(path: str, records) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_records(path: str) -> list:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
