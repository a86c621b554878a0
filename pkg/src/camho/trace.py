"""Trace container and on-disk format.

A trace directory holds:
  manifest.json   format/version, epoch interval, dimensions, link budgets
  camera_<i>.f32  raw little-endian float32 frames, row-major, one file per
                  camera, frame order = epoch order (i is 1-based)
  powers.csv      header "t,bs_1_dbm,...,bs_J_dbm"; -inf written literally

Frames are depth values in [0, 1]. save(load(d)) is byte-identical for
directories produced by save(). Segments returned by view()/split() share
the underlying arrays (read-only views), never copies.
"""

import csv
import io
import json
import os
from dataclasses import dataclass

import numpy as np

from .channel import LinkBudget, capacity_bps
from .errors import TraceFormatError

FORMAT_VERSION = 1

_MANIFEST_NAME = "manifest.json"
_POWERS_NAME = "powers.csv"


def _camera_file(i: int) -> str:
    return f"camera_{i}.f32"


class Trace:
    """Synchronized depth frames and received powers over decision epochs."""

    def __init__(self, frames, powers_dbm, budgets, epoch_interval_ms,
                 seed=None, provenance=""):
        frames = np.asarray(frames, dtype=np.float32)
        powers = np.asarray(powers_dbm, dtype=np.float64)
        if frames.ndim != 4:
            raise ValueError(f"frames must be (cameras, epochs, H, W), got shape {frames.shape}")
        if powers.ndim != 2:
            raise ValueError(f"powers must be (bs, epochs), got shape {powers.shape}")
        if frames.shape[0] < 1 or powers.shape[0] < 1:
            raise ValueError("need at least one camera and one BS")
        if frames.shape[1] != powers.shape[1]:
            raise ValueError(
                f"frames cover {frames.shape[1]} epochs but powers cover {powers.shape[1]}"
            )
        if frames.shape[1] < 1:
            raise ValueError("trace must contain at least one epoch")
        budgets = tuple(budgets)
        if len(budgets) != powers.shape[0]:
            raise ValueError(f"{len(budgets)} budgets for {powers.shape[0]} BSs")
        for b in budgets:
            if not isinstance(b, LinkBudget):
                raise ValueError(f"budgets must be LinkBudget, got {type(b).__name__}")
        if not isinstance(epoch_interval_ms, int) or epoch_interval_ms < 1:
            raise ValueError(f"epoch_interval_ms must be a positive integer, got {epoch_interval_ms!r}")
        frames.flags.writeable = False
        powers.flags.writeable = False
        self.frames = frames
        self.powers_dbm = powers
        self.budgets = budgets
        self.epoch_interval_ms = epoch_interval_ms
        self.seed = seed
        self.provenance = provenance
        self._capacity_cache = {}

    # -- basic geometry -------------------------------------------------

    @property
    def num_cameras(self) -> int:
        return self.frames.shape[0]

    @property
    def num_bs(self) -> int:
        return self.powers_dbm.shape[0]

    @property
    def num_epochs(self) -> int:
        return self.frames.shape[1]

    @property
    def frame_shape(self):
        return self.frames.shape[2], self.frames.shape[3]

    def capacity(self, bs: int) -> np.ndarray:
        """Capacity series (bit/s) of BS `bs` (1-based), cached per instance."""
        if not 1 <= bs <= self.num_bs:
            raise ValueError(f"bs {bs} outside 1..{self.num_bs}")
        if bs not in self._capacity_cache:
            series = capacity_bps(self.powers_dbm[bs - 1], self.budgets[bs - 1])
            series.flags.writeable = False
            self._capacity_cache[bs] = series
        return self._capacity_cache[bs]

    def capacity_matrix(self) -> np.ndarray:
        """(num_bs, num_epochs) capacity array, rows shared with capacity()."""
        return np.stack([self.capacity(j) for j in range(1, self.num_bs + 1)])

    # -- views ----------------------------------------------------------

    def view(self, start: int, stop: int) -> "Trace":
        """Segment [start, stop) sharing frame/power memory with self."""
        if not (0 <= start < stop <= self.num_epochs):
            raise ValueError(f"invalid window [{start}, {stop}) for {self.num_epochs} epochs")
        return Trace(
            self.frames[:, start:stop],
            self.powers_dbm[:, start:stop],
            self.budgets,
            self.epoch_interval_ms,
            seed=self.seed,
            provenance=self.provenance,
        )


def split(trace: Trace, t_prime: int):
    """Split into training epochs [0, t_prime) and evaluation epochs [t_prime, T)."""
    if not isinstance(t_prime, int):
        raise ValueError(f"t_prime must be an integer, got {t_prime!r}")
    if not 0 < t_prime < trace.num_epochs:
        raise ValueError(
            f"t_prime must fall strictly inside (0, {trace.num_epochs}), got {t_prime}"
        )
    return trace.view(0, t_prime), trace.view(t_prime, trace.num_epochs)


# -- persistence ---------------------------------------------------------


def _manifest_dict(trace: Trace) -> dict:
    h, w = trace.frame_shape
    return {
        "format_version": FORMAT_VERSION,
        "epoch_interval_ms": trace.epoch_interval_ms,
        "num_cameras": trace.num_cameras,
        "num_bs": trace.num_bs,
        "num_epochs": trace.num_epochs,
        "frame_height": h,
        "frame_width": w,
        "budgets": [
            {"bandwidth_hz": b.bandwidth_hz, "noise_psd_dbm_hz": b.noise_psd_dbm_hz}
            for b in trace.budgets
        ],
        "provenance": trace.provenance,
        "seed": trace.seed,
    }


def save(trace: Trace, dirpath):
    """Write a trace directory; deterministic bytes for identical traces."""
    os.makedirs(dirpath, exist_ok=True)
    manifest = json.dumps(_manifest_dict(trace), indent=2, sort_keys=True) + "\n"
    with open(os.path.join(dirpath, _MANIFEST_NAME), "w", encoding="utf-8", newline="") as f:
        f.write(manifest)
    for i in range(trace.num_cameras):
        data = np.ascontiguousarray(trace.frames[i], dtype="<f4")
        with open(os.path.join(dirpath, _camera_file(i + 1)), "wb") as f:
            f.write(data.tobytes())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"bs_{j}_dbm" for j in range(1, trace.num_bs + 1)])
    for t in range(trace.num_epochs):
        # repr gives the shortest exact round-trip form; -inf prints as "-inf"
        writer.writerow([t] + [repr(float(v)) for v in trace.powers_dbm[:, t]])
    with open(os.path.join(dirpath, _POWERS_NAME), "w", encoding="utf-8", newline="") as f:
        f.write(buf.getvalue())


def _read_manifest(dirpath) -> dict:
    path = os.path.join(dirpath, _MANIFEST_NAME)
    if not os.path.isfile(path):
        raise TraceFormatError(f"missing {_MANIFEST_NAME} in {dirpath}")
    try:
        with open(path, encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise TraceFormatError(f"unparseable {_MANIFEST_NAME}: {e}") from e
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise TraceFormatError(
            f"unsupported trace format_version {version!r}, this build reads {FORMAT_VERSION}"
        )
    required = ["epoch_interval_ms", "num_cameras", "num_bs", "num_epochs",
                "frame_height", "frame_width", "budgets"]
    missing = [k for k in required if k not in manifest]
    if missing:
        raise TraceFormatError(f"manifest missing fields: {', '.join(missing)}")
    return manifest


def _read_powers(dirpath, num_bs, num_epochs) -> np.ndarray:
    path = os.path.join(dirpath, _POWERS_NAME)
    if not os.path.isfile(path):
        raise TraceFormatError(f"missing {_POWERS_NAME} in {dirpath}")
    powers = np.empty((num_bs, num_epochs), dtype=np.float64)
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        expected = ["t"] + [f"bs_{j}_dbm" for j in range(1, num_bs + 1)]
        if header != expected:
            raise TraceFormatError(f"powers.csv header {header} != {expected}")
        count = 0
        for row in reader:
            if len(row) != num_bs + 1:
                raise TraceFormatError(f"powers.csv row {count} has {len(row)} fields")
            if count >= num_epochs:
                raise TraceFormatError(f"powers.csv has more than {num_epochs} rows")
            try:
                t = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as e:
                raise TraceFormatError(f"powers.csv row {count}: {e}") from e
            if t != count:
                raise TraceFormatError(f"powers.csv epochs not contiguous at row {count}")
            powers[:, count] = values
            count += 1
    if count != num_epochs:
        raise TraceFormatError(f"powers.csv has {count} rows, manifest says {num_epochs}")
    return powers


def load(dirpath) -> Trace:
    """Read a trace directory, checking structure against the manifest."""
    manifest = _read_manifest(dirpath)
    n_cam = manifest["num_cameras"]
    n_epochs = manifest["num_epochs"]
    h, w = manifest["frame_height"], manifest["frame_width"]
    frames = np.empty((n_cam, n_epochs, h, w), dtype=np.float32)
    expected_bytes = n_epochs * h * w * 4
    for i in range(n_cam):
        path = os.path.join(dirpath, _camera_file(i + 1))
        if not os.path.isfile(path):
            raise TraceFormatError(f"missing {_camera_file(i + 1)} in {dirpath}")
        actual = os.path.getsize(path)
        if actual != expected_bytes:
            raise TraceFormatError(
                f"{_camera_file(i + 1)} holds {actual} bytes, expected {expected_bytes} "
                f"({n_epochs} epochs of {h}x{w} float32)"
            )
        frames[i] = np.fromfile(path, dtype="<f4").reshape(n_epochs, h, w)
    powers = _read_powers(dirpath, manifest["num_bs"], n_epochs)
    try:
        budgets = tuple(
            LinkBudget(float(b["bandwidth_hz"]), float(b["noise_psd_dbm_hz"]))
            for b in manifest["budgets"]
        )
    except (KeyError, TypeError, ValueError) as e:
        raise TraceFormatError(f"bad budgets in manifest: {e}") from e
    if len(budgets) != manifest["num_bs"]:
        raise TraceFormatError(
            f"manifest lists {len(budgets)} budgets for num_bs={manifest['num_bs']}"
        )
    return Trace(
        frames,
        powers,
        budgets,
        int(manifest["epoch_interval_ms"]),
        seed=manifest.get("seed"),
        provenance=manifest.get("provenance", ""),
    )


def validate(source) -> list:
    """Return a list of violation strings; empty means the trace is sound.

    Accepts either a Trace or a directory path. For a path, structural
    problems (missing files, length mismatches) are reported instead of
    raised so a report covers everything found.
    """
    if isinstance(source, Trace):
        return _validate_content(source)
    violations = []
    try:
        manifest = _read_manifest(source)
    except TraceFormatError as e:
        return [str(e)]
    n_epochs = manifest["num_epochs"]
    h, w = manifest["frame_height"], manifest["frame_width"]
    expected_bytes = n_epochs * h * w * 4
    for i in range(1, manifest["num_cameras"] + 1):
        path = os.path.join(source, _camera_file(i))
        if not os.path.isfile(path):
            violations.append(f"missing {_camera_file(i)}")
        else:
            actual = os.path.getsize(path)
            if actual != expected_bytes:
                got = actual // (h * w * 4)
                violations.append(
                    f"camera {i} stream covers {got} epochs, manifest says {n_epochs}"
                )
    try:
        _read_powers(source, manifest["num_bs"], n_epochs)
    except TraceFormatError as e:
        violations.append(str(e))
    if violations:
        return violations
    return _validate_content(load(source))


def _validate_content(trace: Trace) -> list:
    violations = []
    if np.isnan(trace.frames).any():
        violations.append("frames contain NaN")
    else:
        bad = (trace.frames < 0.0) | (trace.frames > 1.0)
        if bad.any():
            i, t, r, c = (int(v) for v in np.argwhere(bad)[0])
            violations.append(
                f"frame value {trace.frames[i, t, r, c]!r} outside [0, 1] "
                f"at (camera {i + 1}, t={t}, row={r}, col={c})"
            )
    if np.isnan(trace.powers_dbm).any():
        violations.append("powers contain NaN")
    if np.isposinf(trace.powers_dbm).any():
        violations.append("powers contain +inf")
    return violations
