"""Battery cycle data types and the canonical on-disk dataset layout.

A dataset directory holds one subdirectory per battery:

    <root>/<battery_id>/meta.json    battery_id, life, nominal_capacity_ah,
                                     charge_policy
    <root>/<battery_id>/cycles.csv   header: cycle,charge_q_ah,voltage_v,
                                     current_a,temperature_c
                                     rows grouped by ascending cycle, then
                                     ascending charge_q_ah

The life label is supplied by the data source (cycle where discharge
capacity falls to 80% of the 1.1 Ah nominal); it is never recomputed here.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataValidationError

NOMINAL_CAPACITY_AH = 1.1

MIN_CURVE_POINTS = 16

CYCLES_CSV_HEADER = ["cycle", "charge_q_ah", "voltage_v", "current_a", "temperature_c"]


@dataclass
class CycleCurve:
    """Charge-phase V/I/T series for one cycle, indexed by charged capacity."""

    cycle_index: int
    charged_capacity: np.ndarray  # Ah, strictly increasing
    voltage: np.ndarray  # V
    current: np.ndarray  # A
    temperature: np.ndarray  # degC

    def __post_init__(self):
        self.charged_capacity = np.asarray(self.charged_capacity, dtype=float)
        self.voltage = np.asarray(self.voltage, dtype=float)
        self.current = np.asarray(self.current, dtype=float)
        self.temperature = np.asarray(self.temperature, dtype=float)

    def validate(self, battery_id: str = "?") -> None:
        where = f"battery {battery_id!r} cycle {self.cycle_index}"
        if self.cycle_index < 1:
            raise DataValidationError(f"{where}: cycle index must be positive")
        n = len(self.charged_capacity)
        for name in ("voltage", "current", "temperature"):
            if len(getattr(self, name)) != n:
                raise DataValidationError(f"{where}: {name} length != capacity length")
        if n < MIN_CURVE_POINTS:
            raise DataValidationError(f"{where}: needs >= {MIN_CURVE_POINTS} points, got {n}")
        if not np.all(np.diff(self.charged_capacity) > 0):
            raise DataValidationError(f"{where}: charged_capacity must be strictly increasing")


@dataclass
class BatteryRecord:
    """All charge cycles of one battery plus its life label in cycles."""

    battery_id: str
    cycles: list[CycleCurve]
    life: int
    charge_policy: str = ""
    nominal_capacity_ah: float = NOMINAL_CAPACITY_AH

    def validate(self) -> None:
        if self.life < 1:
            raise DataValidationError(f"battery {self.battery_id!r}: life must be positive")
        if not self.cycles:
            raise DataValidationError(f"battery {self.battery_id!r}: no cycles")
        indices = [c.cycle_index for c in self.cycles]
        if indices[0] != 1 or any(b <= a for a, b in zip(indices, indices[1:])):
            raise DataValidationError(
                f"battery {self.battery_id!r}: cycle indices must strictly increase from 1"
            )
        for curve in self.cycles:
            curve.validate(self.battery_id)


def save_battery(record: BatteryRecord, root: str | Path) -> Path:
    """Write one battery in the canonical layout; returns its directory."""
    record.validate()
    bdir = Path(root) / record.battery_id
    bdir.mkdir(parents=True, exist_ok=True)
    meta = {
        "battery_id": record.battery_id,
        "life": int(record.life),
        "nominal_capacity_ah": record.nominal_capacity_ah,
        "charge_policy": record.charge_policy,
    }
    (bdir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    with open(bdir / "cycles.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CYCLES_CSV_HEADER)
        for curve in record.cycles:
            for q, v, i, t in zip(
                curve.charged_capacity, curve.voltage, curve.current, curve.temperature
            ):
                writer.writerow(
                    [curve.cycle_index, repr(float(q)), repr(float(v)), repr(float(i)), repr(float(t))]
                )
    return bdir


def _load_battery_dir(bdir: Path) -> BatteryRecord:
    meta_path = bdir / "meta.json"
    if not meta_path.exists():
        raise DataValidationError(f"battery dir {bdir.name!r}: missing meta.json")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"battery dir {bdir.name!r}: invalid meta.json: {exc}") from exc
    for key in ("battery_id", "life"):
        if key not in meta:
            raise DataValidationError(f"battery dir {bdir.name!r}: meta.json missing {key!r}")
    csv_path = bdir / "cycles.csv"
    if not csv_path.exists():
        raise DataValidationError(f"battery dir {bdir.name!r}: missing cycles.csv")

    by_cycle: dict[int, list[list[float]]] = {}
    order: list[int] = []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CYCLES_CSV_HEADER:
            raise DataValidationError(
                f"battery {meta['battery_id']!r}: bad cycles.csv header {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                cyc = int(row[0])
                vals = [float(x) for x in row[1:5]]
            except (ValueError, IndexError) as exc:
                raise DataValidationError(
                    f"battery {meta['battery_id']!r}: bad row {lineno} in cycles.csv"
                ) from exc
            if cyc not in by_cycle:
                by_cycle[cyc] = []
                order.append(cyc)
            by_cycle[cyc].append(vals)

    cycles = []
    for cyc in order:
        block = np.asarray(by_cycle[cyc])
        cycles.append(
            CycleCurve(
                cycle_index=cyc,
                charged_capacity=block[:, 0],
                voltage=block[:, 1],
                current=block[:, 2],
                temperature=block[:, 3],
            )
        )
    record = BatteryRecord(
        battery_id=str(meta["battery_id"]),
        cycles=cycles,
        life=int(meta["life"]),
        charge_policy=str(meta.get("charge_policy", "")),
        nominal_capacity_ah=float(meta.get("nominal_capacity_ah", NOMINAL_CAPACITY_AH)),
    )
    record.validate()
    return record


def load_canonical_dataset(path: str | Path) -> list[BatteryRecord]:
    """Load every battery directory under ``path``, sorted by name.

    Raises DataValidationError naming the offending battery/cycle on any
    invariant violation. An empty directory yields an empty list.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataValidationError(f"dataset directory {root} does not exist")
    records = []
    for bdir in sorted(p for p in root.iterdir() if p.is_dir()):
        records.append(_load_battery_dir(bdir))
    return records


def save_canonical_dataset(records: list[BatteryRecord], root: str | Path) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for record in records:
        save_battery(record, root)
    return root
