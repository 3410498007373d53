"""Turn charge-cycle curves into video-like sample tensors.

Pipeline per battery: outlier removal (Hampel) and Savitzky-Golay smoothing
per channel per cycle, linear resampling of each cycle onto a G*G
capacity-grid image, assembly of 4-frame samples (first cycle + the three
most recent before each anchor), a differential twin stream (each recent
frame minus the first-cycle frame), then per-channel min-max scaling to
[-1, 1] fitted on training data only. Labels stay in cycles, unscaled.

The train/test split is by battery (94:30 for the canonical 124-battery
fleet, proportional otherwise) so no battery leaks across the split.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.signal import savgol_filter

from .dataset import BatteryRecord, CycleCurve
from .errors import DataValidationError
from . import io as tio

N_CHANNELS = 3  # voltage, current, temperature, in this order
SAMPLE_DEPTH = 4  # first cycle + three most recent
VALID_INPUT_CYCLES = (10, 20, 30, 40)
DEFAULT_GRID_SIDE = 32

CANONICAL_TRAIN = 94
CANONICAL_TEST = 30

HAMPEL_WINDOW = 11
HAMPEL_SIGMAS = 3.0
SG_WINDOW = 9
SG_POLYORDER = 3

_MAD_SCALE = 1.4826  # MAD -> sigma for Gaussian data


@dataclass
class SamplePair:
    """One training sample: raw frames, differential frames, life label."""

    raw: np.ndarray  # [3, 4, G, G]
    diff: np.ndarray  # [3, 3, G, G]
    label: float  # life in cycles
    battery_id: str
    anchor_cycle: int  # latest cycle used


@dataclass
class SampleSet:
    """A batch of SamplePairs stacked into contiguous arrays."""

    raw: np.ndarray  # [N, 3, 4, G, G]
    diff: np.ndarray  # [N, 3, 3, G, G]
    labels: np.ndarray  # [N]
    battery_ids: list[str]
    anchor_cycles: np.ndarray  # [N]

    def __len__(self) -> int:
        return self.raw.shape[0]

    @property
    def grid_side(self) -> int:
        return self.raw.shape[-1]

    @classmethod
    def from_pairs(cls, pairs: list[SamplePair]) -> "SampleSet":
        if not pairs:
            raise ValueError("cannot build a SampleSet from zero samples")
        return cls(
            raw=np.stack([p.raw for p in pairs]),
            diff=np.stack([p.diff for p in pairs]),
            labels=np.array([p.label for p in pairs], dtype=float),
            battery_ids=[p.battery_id for p in pairs],
            anchor_cycles=np.array([p.anchor_cycle for p in pairs], dtype=int),
        )

    def pairs(self) -> list[SamplePair]:
        return [
            SamplePair(self.raw[i], self.diff[i], float(self.labels[i]),
                       self.battery_ids[i], int(self.anchor_cycles[i]))
            for i in range(len(self))
        ]

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=int)
        return SampleSet(
            raw=self.raw[idx],
            diff=self.diff[idx],
            labels=self.labels[idx],
            battery_ids=[self.battery_ids[i] for i in idx],
            anchor_cycles=self.anchor_cycles[idx],
        )


# ---------------------------------------------------------------------------
# series cleaning
# ---------------------------------------------------------------------------

def hampel_filter(series: np.ndarray, window: int = HAMPEL_WINDOW, n_sigmas: float = HAMPEL_SIGMAS) -> np.ndarray:
    """Replace rolling-median outliers.

    A point deviating from the window median by more than
    n_sigmas * 1.4826 * MAD is replaced with that median. Edge windows are
    truncated to the available points.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 3:
        raise ValueError(f"hampel_filter needs at least 3 points, got {x.size}")
    half = window // 2
    out = x.copy()
    for i in range(x.size):
        lo = max(0, i - half)
        hi = min(x.size, i + half + 1)
        win = x[lo:hi]
        med = np.median(win)
        mad = np.median(np.abs(win - med))
        if np.abs(x[i] - med) > n_sigmas * _MAD_SCALE * mad:
            out[i] = med
    return out


def savitzky_golay(series: np.ndarray, window: int = SG_WINDOW, polyorder: int = SG_POLYORDER) -> np.ndarray:
    """Least-squares polynomial smoothing over a sliding window.

    Each interior point takes the center value of the window's polynomial
    fit; edge points are evaluated from the polynomial fitted to the
    nearest full window.
    """
    x = np.asarray(series, dtype=float)
    if window % 2 == 0 or window < 5:
        raise ValueError(f"window must be odd and >= 5, got {window}")
    if polyorder >= window:
        raise ValueError(f"polyorder {polyorder} must be < window {window}")
    if x.size < window:
        raise ValueError(f"series length {x.size} shorter than window {window}")
    return savgol_filter(x, window_length=window, polyorder=polyorder, mode="interp")


def clean_series(series: np.ndarray) -> np.ndarray:
    """Default cleaning used by the pipeline: Hampel then Savitzky-Golay."""
    return savitzky_golay(hampel_filter(series))


# ---------------------------------------------------------------------------
# frame construction
# ---------------------------------------------------------------------------

def resample_to_grid(curve: CycleCurve, grid_side: int) -> np.ndarray:
    """Interpolate V/I/T onto G*G cell-center points over [0, Q_max] and
    reshape row-major into a [3, G, G] frame.

    Sample points sit at cell centers ((i + 0.5)/G^2 * Q_max), so G=1 probes
    the grid center. Queries outside the recorded capacity range hold the
    endpoint values.
    """
    if grid_side < 1:
        raise ValueError("grid_side must be positive")
    q = np.asarray(curve.charged_capacity, dtype=float)
    if q.size < 2:
        raise DataValidationError(
            f"battery cycle {curve.cycle_index}: need >= 2 points to interpolate"
        )
    n = grid_side * grid_side
    q_max = q[-1]
    grid = (np.arange(n) + 0.5) * (q_max / n)
    frame = np.empty((N_CHANNELS, grid_side, grid_side))
    for ch, series in enumerate((curve.voltage, curve.current, curve.temperature)):
        frame[ch] = np.interp(grid, q, np.asarray(series, dtype=float)).reshape(grid_side, grid_side)
    return frame


def cycle_frame(curve: CycleCurve, grid_side: int, smooth: bool = True) -> np.ndarray:
    """Clean one cycle's channels and resample to a [3, G, G] frame."""
    if not smooth:
        return resample_to_grid(curve, grid_side)
    cleaned = CycleCurve(
        cycle_index=curve.cycle_index,
        charged_capacity=curve.charged_capacity,
        voltage=clean_series(curve.voltage),
        current=clean_series(curve.current),
        temperature=clean_series(curve.temperature),
    )
    return resample_to_grid(cleaned, grid_side)


def assemble_samples(
    battery: BatteryRecord,
    n_input_cycles: int,
    grid_side: int = DEFAULT_GRID_SIDE,
    smooth: bool = True,
) -> list[SamplePair]:
    """Build unscaled SamplePairs from the battery's first n_input_cycles.

    One sample per anchor cycle t in [4, n_input_cycles]: raw frames are
    cycles (1, t-2, t-1, t); the diff stream is frames (t-2, t-1, t) minus
    the cycle-1 frame (the first frame's self-difference is identically
    zero and excluded).
    """
    if n_input_cycles not in VALID_INPUT_CYCLES:
        raise ValueError(f"n_input_cycles must be one of {VALID_INPUT_CYCLES}")
    if len(battery.cycles) < n_input_cycles:
        raise DataValidationError(
            f"battery {battery.battery_id!r} has {len(battery.cycles)} cycles, "
            f"needs >= {n_input_cycles}"
        )
    frames = np.stack(
        [cycle_frame(battery.cycles[i], grid_side, smooth) for i in range(n_input_cycles)]
    )  # [n, 3, G, G], index i = cycle i+1
    first = frames[0]
    samples = []
    for anchor in range(SAMPLE_DEPTH, n_input_cycles + 1):
        recent = frames[anchor - 3 : anchor]  # cycles t-2, t-1, t
        raw = np.stack([first, *recent], axis=1)  # [3, 4, G, G]
        diff = np.stack([f - first for f in recent], axis=1)  # [3, 3, G, G]
        samples.append(
            SamplePair(
                raw=raw,
                diff=diff,
                label=float(battery.life),
                battery_id=battery.battery_id,
                anchor_cycle=anchor,
            )
        )
    return samples


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------

@dataclass
class ScalerParams:
    """Per-channel min/max for each stream, fit on the training set only."""

    raw_min: np.ndarray  # [3]
    raw_max: np.ndarray
    diff_min: np.ndarray
    diff_max: np.ndarray

    def to_dict(self) -> dict:
        return {
            "raw_min": self.raw_min.tolist(),
            "raw_max": self.raw_max.tolist(),
            "diff_min": self.diff_min.tolist(),
            "diff_max": self.diff_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(*(np.asarray(d[k], dtype=float)
                     for k in ("raw_min", "raw_max", "diff_min", "diff_max")))


def fit_scaler(train_samples: list[SamplePair]) -> ScalerParams:
    """Channel-wise min/max over all training samples, per stream."""
    if not train_samples:
        raise ValueError("cannot fit a scaler on zero samples")
    raw = np.stack([s.raw for s in train_samples])
    diff = np.stack([s.diff for s in train_samples])
    reduce_axes = (0, 2, 3, 4)
    params = ScalerParams(
        raw_min=raw.min(axis=reduce_axes),
        raw_max=raw.max(axis=reduce_axes),
        diff_min=diff.min(axis=reduce_axes),
        diff_max=diff.max(axis=reduce_axes),
    )
    for name, lo, hi in (("raw", params.raw_min, params.raw_max),
                         ("diff", params.diff_min, params.diff_max)):
        degenerate = np.flatnonzero(hi <= lo)
        if degenerate.size:
            raise ValueError(f"degenerate {name} channel(s) {degenerate.tolist()}: max == min")
    return params


def _scale(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    shape = (N_CHANNELS,) + (1,) * (x.ndim - 1)
    lo = lo.reshape(shape)
    hi = hi.reshape(shape)
    return 2.0 * (x - lo) / (hi - lo) - 1.0


def apply_scaler(sample: SamplePair, params: ScalerParams) -> SamplePair:
    """Map each channel to [-1, 1] using train-set extrema; the label is
    untouched. Test samples may exceed [-1, 1]."""
    return replace(
        sample,
        raw=_scale(sample.raw, params.raw_min, params.raw_max),
        diff=_scale(sample.diff, params.diff_min, params.diff_max),
    )


# ---------------------------------------------------------------------------
# split + pipeline
# ---------------------------------------------------------------------------

def split_train_test(batteries: list[BatteryRecord], seed: int) -> tuple[list[str], list[str]]:
    """Deterministic battery-level split: 94:30 for 124 batteries, the same
    proportion (rounded) otherwise."""
    ids = [b.battery_id for b in batteries]
    if len(ids) < 2:
        raise ValueError(f"need at least 2 batteries to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise DataValidationError("duplicate battery ids in dataset")
    if len(ids) == CANONICAL_TRAIN + CANONICAL_TEST:
        n_train = CANONICAL_TRAIN
    else:
        n_train = round(len(ids) * CANONICAL_TRAIN / (CANONICAL_TRAIN + CANONICAL_TEST))
        n_train = min(max(n_train, 1), len(ids) - 1)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:]


def holdout_by_battery(samples: SampleSet, val_fraction: float, seed: int) -> tuple[SampleSet, SampleSet]:
    """Split a SampleSet into (fit, holdout) by battery, never by sample."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    ids = sorted(set(samples.battery_ids))
    if len(ids) < 2:
        raise ValueError("need at least 2 batteries to hold one out")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_val = min(max(int(round(len(ids) * val_fraction)), 1), len(ids) - 1)
    val_ids = {ids[i] for i in order[:n_val]}
    val_idx = [i for i, b in enumerate(samples.battery_ids) if b in val_ids]
    fit_idx = [i for i, b in enumerate(samples.battery_ids) if b not in val_ids]
    return samples.subset(fit_idx), samples.subset(val_idx)


def preprocess_fleet(
    records: list[BatteryRecord],
    n_input_cycles: int,
    grid_side: int = DEFAULT_GRID_SIDE,
    seed: int = 0,
    smooth: bool = True,
) -> tuple[SampleSet, SampleSet, ScalerParams, tuple[list[str], list[str]]]:
    """Full pipeline: split, assemble, fit scaler on train, scale both."""
    train_ids, test_ids = split_train_test(records, seed)
    by_id = {r.battery_id: r for r in records}

    def build(ids):
        pairs = []
        for bid in ids:
            pairs.extend(assemble_samples(by_id[bid], n_input_cycles, grid_side, smooth))
        return pairs

    train_pairs = build(train_ids)
    test_pairs = build(test_ids)
    scaler = fit_scaler(train_pairs)
    train = SampleSet.from_pairs([apply_scaler(p, scaler) for p in train_pairs])
    test = SampleSet.from_pairs([apply_scaler(p, scaler) for p in test_pairs])
    return train, test, scaler, (train_ids, test_ids)


# ---------------------------------------------------------------------------
# sample archives
# ---------------------------------------------------------------------------

def save_sample_archive(
    out_dir: str | Path,
    splits: dict[str, SampleSet],
    scaler: ScalerParams,
    n_input_cycles: int,
    grid_side: int,
    seed: int,
) -> Path:
    """Write one tensor file per split plus a JSON manifest listing samples."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": 1,
        "n_input_cycles": n_input_cycles,
        "grid_side": grid_side,
        "seed": seed,
        "scaler": scaler.to_dict(),
        "splits": {},
    }
    for name, ss in splits.items():
        fname = f"{name}.fpt"
        tio.write_tensors(
            out / fname,
            {"raw": ss.raw, "diff": ss.diff, "labels": ss.labels,
             "anchor_cycles": ss.anchor_cycles.astype(float)},
            meta={"split": name, "n_samples": len(ss)},
        )
        manifest["splits"][name] = {
            "file": fname,
            "n_samples": len(ss),
            "battery_ids": sorted(set(ss.battery_ids)),
            "samples": [
                {"battery_id": ss.battery_ids[i],
                 "anchor_cycle": int(ss.anchor_cycles[i]),
                 "label": float(ss.labels[i])}
                for i in range(len(ss))
            ],
        }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def load_sample_archive(path: str | Path) -> tuple[dict[str, SampleSet], ScalerParams, dict]:
    """Inverse of save_sample_archive; returns (splits, scaler, manifest)."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataValidationError(f"{root}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())
    splits = {}
    for name, info in manifest["splits"].items():
        _, tensors = tio.read_tensors(root / info["file"])
        splits[name] = SampleSet(
            raw=tensors["raw"],
            diff=tensors["diff"],
            labels=tensors["labels"],
            battery_ids=[s["battery_id"] for s in info["samples"]],
            anchor_cycles=tensors["anchor_cycles"].astype(int),
        )
    scaler = ScalerParams.from_dict(manifest["scaler"])
    return splits, scaler, manifest
