"""Run records and their CSV / JSON exports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from ..sampling import EstimatorResult
from .config import spec_hash

# Grid coordinate columns of each experiment kind, in CSV order.
COORDS = {
    "lyapunov-scan": ["E", "n"],
    "block-stats": ["l", "statistic"],
    "negative-moment": ["s", "n"],
    "green-decay": ["s", "x"],
    "eigen-decay": ["quantity"],
    "correlator-decay": ["x"],
    "kappa-dichotomy": ["kappa", "half_length"],
    "transport-critical": ["T"],
    "martingale-diagnostic": ["n", "term"],
}
VALUE_COLUMNS = ["mean", "std_error", "n_samples", "rejections"]


@dataclass
class Point:
    coords: dict
    result: EstimatorResult
    rejections: int = 0

    def to_dict(self) -> dict:
        return {"coords": dict(self.coords), "result": self.result.to_dict(), "rejections": self.rejections}

    @classmethod
    def from_dict(cls, d: dict) -> "Point":
        return cls(dict(d["coords"]), EstimatorResult.from_dict(d["result"]), int(d["rejections"]))


@dataclass
class RunRecord:
    kind: str
    spec: dict
    spec_hash: str
    version: str
    wall_time: float
    points: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    rejections: int = 0
    verdicts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "spec": self.spec, "spec_hash": self.spec_hash, "version": self.version,
            "wall_time": self.wall_time, "points": [p.to_dict() for p in self.points],
            "fits": self.fits, "rejections": self.rejections, "verdicts": self.verdicts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(d["kind"], d["spec"], d["spec_hash"], d["version"], float(d["wall_time"]),
                   [Point.from_dict(p) for p in d["points"]], d["fits"], int(d["rejections"]), d["verdicts"])

    def verify_hash(self) -> bool:
        return spec_hash(self.spec) == self.spec_hash

    def numeric_payload(self) -> str:
        """Everything except timing, as canonical JSON (for determinism checks)."""
        d = self.to_dict()
        d.pop("wall_time")
        return json.dumps(d, sort_keys=True)


def to_json(record: RunRecord) -> str:
    return json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n"


def from_json(text: str) -> RunRecord:
    return RunRecord.from_dict(json.loads(text))


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(record: RunRecord) -> str:
    """Schema comment row, header row, one row per grid point (comma, LF)."""
    cols = COORDS[record.kind]
    buf = io.StringIO()
    buf.write(f"# schema={record.kind}/v1\n")
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(cols + VALUE_COLUMNS)
    for p in record.points:
        r = p.result
        w.writerow([_cell(p.coords[c]) for c in cols]
                   + [_cell(float(r.mean)), _cell(float(r.std_error)), str(r.n_samples), str(p.rejections)])
    return buf.getvalue()


def export(record: RunRecord, path: str, fmt: str = "csv") -> str:
    if fmt not in ("csv", "json"):
        raise ValueError("format must be csv or json")
    text = to_csv(record) if fmt == "csv" else to_json(record)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path
