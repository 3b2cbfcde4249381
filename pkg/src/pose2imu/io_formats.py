"""On-disk formats: interchange CSV, checkpoints, npy arrays, config and reports."""

from __future__ import annotations

import ast
import csv
import io
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .models import ModelBundle
from .preprocessing import PoseSequence, SensorSequence, WindowSet
from .training import RunResult, TrainConfig


class FormatError(ValueError):
    """A file does not follow its declared format."""


class BadMagicError(FormatError):
    pass


class UnsupportedDtypeError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class CheckpointMagicError(BadMagicError):
    pass


class CheckpointConsistencyError(FormatError):
    pass


class SchemaError(FormatError):
    """A dataset descriptor or table disagrees with the data it describes."""


class MissingModalityError(FileNotFoundError):
    pass


class ConfigError(ValueError):
    pass


# interchange matrices


def write_interchange(path, header: Sequence[str], rows: np.ndarray) -> None:
    """Write a header line plus decimal rows; column 0 must be strictly increasing time."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != len(header):
        raise SchemaError(f"{len(header)} header columns for data of shape {rows.shape}")
    if rows.shape[0] > 1 and not (np.diff(rows[:, 0]) > 0).all():
        raise SchemaError("time column must be strictly increasing")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def read_interchange(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: {len(row)} columns, header has {len(header)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    data = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    if data.shape[0] > 1 and not (np.diff(data[:, 0]) > 0).all():
        raise FormatError(f"{path}: time column is not strictly increasing")
    return header, data


def _window_header(joints: Sequence[str]) -> list[str]:
    pose_cols = [f"{j}_{ax}" for j in joints for ax in "xyz"]
    return ["time", "window", "label", *pose_cols, "acc_x", "acc_y", "acc_z"]


def write_window_table(path, windows: WindowSet, rate: float, joints: Sequence[str]) -> None:
    """One row per sample of every window, windows laid end to end in time."""
    n, _, n_joints, t = windows.pose.shape
    if len(joints) != n_joints:
        raise SchemaError(f"{len(joints)} joint names for {n_joints} joints")
    pose = windows.pose.transpose(0, 3, 2, 1).reshape(n * t, n_joints * 3)
    sensor = windows.sensor.transpose(0, 2, 1).reshape(n * t, 3)
    time = np.arange(n * t) / rate
    win = np.repeat(np.arange(n), t)
    lab = np.repeat(windows.labels, t)
    write_interchange(path, _window_header(joints), np.column_stack([time, win, lab, pose, sensor]))


def read_window_table(path) -> tuple[WindowSet, float, list[str]]:
    header, data = read_interchange(path)
    if header[:3] != ["time", "window", "label"] or header[-3:] != ["acc_x", "acc_y", "acc_z"]:
        raise SchemaError(f"{path}: not a window table (header {header[:3]}...)")
    pose_cols = header[3:-3]
    if len(pose_cols) % 3:
        raise SchemaError(f"{path}: pose columns must come in x, y, z triples")
    joints = [c.rsplit("_", 1)[0] for c in pose_cols[::3]]
    win_ids = data[:, 1].astype(np.int64)
    n = int(win_ids.max()) + 1 if win_ids.size else 0
    counts = np.bincount(win_ids, minlength=n)
    if n == 0 or (counts != counts[0]).any():
        raise SchemaError(f"{path}: windows have unequal lengths {sorted(set(counts.tolist()))}")
    t = int(counts[0])
    rate = 1.0 / float(data[1, 0] - data[0, 0]) if data.shape[0] > 1 else 1.0
    order = np.argsort(win_ids, kind="stable")
    data = data[order]
    pose = data[:, 3:-3].reshape(n, t, len(joints), 3).transpose(0, 3, 2, 1)
    sensor = data[:, -3:].reshape(n, t, 3).transpose(0, 2, 1)
    labels = data[::t, 2].astype(np.int64)
    return WindowSet(np.ascontiguousarray(pose), np.ascontiguousarray(sensor), labels), round(rate, 9), joints


# checkpoints

CHECKPOINT_MAGIC = b"P2SCKPT1"
_F32 = "<f4"


def checkpoint_bytes(bundle: ModelBundle) -> bytes:
    state = bundle.state_dict()
    tensors = {}
    chunks = []
    offset = 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype=_F32)
        tensors[name] = {"dtype": _F32, "shape": list(arr.shape), "offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    meta = {k: bundle.meta[k] for k in sorted(bundle.meta)}
    meta["with_regressor"] = bundle.regressor is not None
    manifest = json.dumps({"meta": meta, "tensors": tensors}, sort_keys=True, separators=(",", ":")).encode()
    return CHECKPOINT_MAGIC + struct.pack("<I", len(manifest)) + manifest + b"".join(chunks)


def write_checkpoint(bundle: ModelBundle, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(bundle))


def _parse_checkpoint(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(f"checkpoint magic mismatch: {blob[:8]!r}")
    if len(blob) < 12:
        raise CheckpointConsistencyError("checkpoint ends inside the manifest length")
    (mlen,) = struct.unpack("<I", blob[8:12])
    if 12 + mlen > len(blob):
        raise CheckpointConsistencyError(f"manifest length {mlen} runs past the end of the file")
    try:
        manifest = json.loads(blob[12 : 12 + mlen].decode("utf-8"))
        meta, tensors = manifest["meta"], manifest["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointConsistencyError(f"unreadable manifest: {exc}") from None
    payload = memoryview(blob)[12 + mlen :]
    spans = []
    arrays = {}
    for name, entry in tensors.items():
        try:
            dtype, shape, offset = entry["dtype"], tuple(int(s) for s in entry["shape"]), int(entry["offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointConsistencyError(f"{name}: malformed manifest entry ({exc})") from None
        if dtype != _F32:
            raise CheckpointConsistencyError(f"{name}: dtype {dtype!r}, only {_F32} is stored")
        nbytes = 4 * math.prod(shape)
        if offset < 0 or offset + nbytes > len(payload):
            raise CheckpointConsistencyError(f"{name}: bytes [{offset}, {offset + nbytes}) outside payload of {len(payload)}")
        spans.append((offset, offset + nbytes, name))
        arrays[name] = np.frombuffer(payload[offset : offset + nbytes], dtype=_F32).reshape(shape).copy()
    spans.sort()
    covered = 0
    for start, end, name in spans:
        if start < covered:
            raise CheckpointConsistencyError(f"{name}: overlaps the preceding tensor")
        if start > covered:
            raise CheckpointConsistencyError(f"{name}: gap before offset {start}")
        covered = end
    if covered != len(payload):
        raise CheckpointConsistencyError(f"payload has {len(payload) - covered} trailing bytes")
    return meta, arrays


def read_checkpoint(path) -> ModelBundle:
    """Rebuild a bundle; everything is validated before any parameter is written."""
    meta, arrays = _parse_checkpoint(Path(path).read_bytes())
    try:
        bundle = ModelBundle.create(
            int(meta["n_classes"]),
            int(meta.get("seed", 0)),
            window=int(meta["window"]),
            with_regressor=bool(meta["with_regressor"]),
            variant=meta.get("variant", "full"),
            slope=float(meta.get("slope", 0.01)),
        )
        bundle.load_state_dict(arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointConsistencyError(f"checkpoint does not match its model: {exc}") from None
    return bundle


# npy v1 reader

NPY_MAGIC = b"\x93NUMPY"
_NPY_DTYPES = {"<f4": np.float32, "<f8": np.float64}


def parse_array_container(blob: bytes) -> np.ndarray:
    for i, expected in enumerate(NPY_MAGIC):
        if i >= len(blob) or blob[i] != expected:
            raise BadMagicError(f"array container: bad magic byte at offset {i}")
    if len(blob) < 10:
        raise TruncatedPayloadError("array container ends inside the preamble")
    if blob[6:8] != b"\x01\x00":
        raise BadMagicError(f"array container: unsupported version {blob[6]}.{blob[7]} at offset 6")
    (hlen,) = struct.unpack("<H", blob[8:10])
    if 10 + hlen > len(blob):
        raise TruncatedPayloadError(f"header of {hlen} bytes runs past the end of the file")
    raw = blob[10 : 10 + hlen]
    if not raw.endswith(b"\n"):
        raise FormatError("array container header is not newline-terminated")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # mangled headers can hold odd escapes
            header = ast.literal_eval(raw.decode("latin-1"))
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"array container header is not a literal dict: {exc}") from None
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"array container header has wrong keys: {header!r}")
    descr, fortran, shape = header["descr"], header["fortran_order"], header["shape"]
    if descr not in _NPY_DTYPES:
        raise UnsupportedDtypeError(f"unsupported dtype {descr!r}; only {sorted(_NPY_DTYPES)} are read")
    if fortran is not False:
        raise FormatError("column-major (fortran_order) arrays are not supported")
    if not isinstance(shape, tuple) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise FormatError(f"bad shape {shape!r}")
    dtype = np.dtype(_NPY_DTYPES[descr]).newbyteorder("<")
    expected = math.prod(shape) * dtype.itemsize
    payload = blob[10 + hlen :]
    if len(payload) != expected:
        raise TruncatedPayloadError(f"shape {shape} needs {expected} payload bytes, file has {len(payload)}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def read_array_container(path) -> np.ndarray:
    """Parse a version-1.0 ``.npy`` file holding little-endian float32/float64 data."""
    return parse_array_container(Path(path).read_bytes())


def array_container_bytes(arr: np.ndarray) -> bytes:
    """Encode a float array as a version-1.0 container (used for fixtures and exports)."""
    arr = np.ascontiguousarray(arr)
    descr = arr.dtype.newbyteorder("<").str
    if descr not in _NPY_DTYPES:
        raise UnsupportedDtypeError(f"cannot store dtype {arr.dtype}")
    text = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {tuple(arr.shape)!r}, }}"
    pad = (-(10 + len(text) + 1)) % 64
    header = (text + " " * pad + "\n").encode("latin-1")
    return NPY_MAGIC + b"\x01\x00" + struct.pack("<H", len(header)) + header + arr.astype(descr).tobytes()


# MM-Fit sessions

# Layout guesses for the public release; verify against dataset release.
MMFIT_DEFAULT_DESCRIPTOR = {
    "note": "verify against dataset release",
    "pose": {
        "file": "{session}_pose_3d.npy",
        "rate": 30.0,
        "axes": ["coord", "frame", "joint"],
        "leading_rows": 1,
        "joints": [
            "nose", "neck", "right_shoulder", "right_elbow", "right_wrist",
            "left_shoulder", "left_elbow", "left_wrist", "midhip",
            "right_hip", "right_knee", "right_ankle", "left_hip",
            "left_knee", "left_ankle", "right_eye", "left_eye",
            "right_ear", "left_ear",
        ],
        "arm": {"wrist": "left_wrist", "elbow": "left_elbow", "shoulder": "left_shoulder"},
    },
    "accel": {"file": "{session}_sw_l_acc.npy", "rate": 100.0, "value_columns": [2, 3, 4]},
    "labels": {"file": "{session}_labels.csv", "start": 0, "end": 1, "name": 3, "unit": "frame"},
    "classes": [
        "non_activity", "squats", "lunges", "bicep_curls", "situps", "pushups",
        "tricep_extensions", "dumbbell_rows", "jumping_jacks", "dumbbell_shoulder_press",
        "lateral_shoulder_raises",
    ],
    "tolerance_s": 1.0,
    # one subdirectory per session under dataset.path
    "splits": {
        "train": ["w01", "w02", "w03", "w04", "w06", "w07", "w08", "w16", "w17", "w18"],
        "val": ["w14", "w15", "w19"],
        "test": ["w09", "w10", "w11"],
    },
}


def _descriptor_file(directory: Path, spec: dict, session: str, modality: str) -> Path:
    path = directory / spec["file"].format(session=session)
    if not path.exists():
        raise MissingModalityError(f"missing {modality} file {path}")
    return path


def load_mmfit_session(directory, descriptor: dict, session: str = "") -> tuple[PoseSequence, SensorSequence, np.ndarray]:
    """Pose, wrist accelerometer and per-sensor-sample labels for one session.

    ``descriptor`` names the files and column roles; pose joints are renamed
    through ``descriptor['pose']['arm']`` to wrist/elbow/shoulder, and
    ``neck``/``midhip`` must be present for scaling.
    """
    directory = Path(directory)
    try:
        pose_spec, acc_spec, lab_spec = descriptor["pose"], descriptor["accel"], descriptor["labels"]
        classes = list(descriptor["classes"])
        joints = list(pose_spec["joints"])
    except KeyError as exc:
        raise SchemaError(f"descriptor lacks {exc}") from None
    pose_path = _descriptor_file(directory, pose_spec, session, "pose")
    acc_path = _descriptor_file(directory, acc_spec, session, "accelerometer")
    lab_path = _descriptor_file(directory, lab_spec, session, "label")

    raw = read_array_container(pose_path)
    axes = list(pose_spec.get("axes", ["frame", "joint", "coord"]))
    if sorted(axes) != ["coord", "frame", "joint"] or raw.ndim != 3:
        raise SchemaError(f"pose array of shape {raw.shape} does not match axes {axes}")
    pos = raw.transpose([axes.index(a) for a in ("frame", "joint", "coord")])
    pos = pos[:, int(pose_spec.get("leading_rows", 0)) :, :]
    if pos.shape[1] != len(joints):
        raise SchemaError(f"descriptor lists {len(joints)} joints, pose file has {pos.shape[1]}")
    if pos.shape[2] != 3:
        raise SchemaError(f"pose file has {pos.shape[2]} coordinates per joint")
    rename = {v: k for k, v in pose_spec.get("arm", {}).items()}
    pose = PoseSequence(float(pose_spec["rate"]), [rename.get(j, j) for j in joints], pos)

    acc = read_array_container(acc_path)
    cols = list(acc_spec.get("value_columns", [0, 1, 2]))
    if acc.ndim != 2 or max(cols) >= acc.shape[1]:
        raise SchemaError(f"accelerometer array {acc.shape} lacks value columns {cols}")
    sensor = SensorSequence(float(acc_spec["rate"]), acc[:, cols])

    tol = float(descriptor.get("tolerance_s", 1.0))
    gap = abs(len(pose) / pose.rate - len(sensor) / sensor.rate)
    if gap > tol:
        raise SchemaError(f"pose and accelerometer durations differ by {gap:.3f} s (tolerance {tol} s)")

    labels = np.zeros(len(sensor), dtype=np.int64)
    unit_rate = pose.rate if lab_spec.get("unit", "frame") == "frame" else sensor.rate
    with open(lab_path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                start, end = float(row[lab_spec["start"]]), float(row[lab_spec["end"]])
                name = row[lab_spec["name"]].strip()
            except (IndexError, ValueError) as exc:
                raise SchemaError(f"{lab_path}: bad label row {row}: {exc}") from None
            if name not in classes:
                raise SchemaError(f"{lab_path}: unknown activity {name!r}")
            a = int(round(start / unit_rate * sensor.rate))
            b = int(round(end / unit_rate * sensor.rate))
            labels[max(a, 0) : max(b + 1, 0)] = classes.index(name)
    return pose, sensor, labels


def load_descriptor(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: descriptor is not valid JSON: {exc}") from None


# configuration


@dataclass
class ExperimentConfig:
    """Everything a config file can set; ``train`` is the trainer-facing part."""

    train: TrainConfig
    dataset_kind: str = "synth"
    dataset_path: str = ""
    dataset_descriptor: str = ""
    window_size_s: float = 3.0
    window_stride_s: float = 0.2
    synth: dict = field(default_factory=dict)


def _seeds(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.replace(" ", "").split(",") if s)


def _triple(text: str) -> tuple[int, ...]:
    vals = tuple(int(s) for s in text.replace(" ", "").split(","))
    if len(vals) != 3:
        raise ValueError("expected three comma-separated counts")
    return vals


CONFIG_KEYS = {
    "dataset.kind": str,
    "dataset.path": str,
    "dataset.descriptor": str,
    "window.size_s": float,
    "window.stride_s": float,
    "loss.alpha": float,
    "loss.beta": float,
    "train.lr": float,
    "train.batch_size": int,
    "train.max_epochs": int,
    "train.patience": int,
    "train.seeds": _seeds,
    "train.class_weighting": str,
    "model.variant": str,
    "method": str,
    "synth.windows_per_class": _triple,
    "synth.noise_std": float,
    "synth.seed": int,
    "synth.duration_s": float,
    "synth.rate": float,
}
REQUIRED_KEYS = ("dataset.kind",)
DATASET_KINDS = ("synth", "interchange", "mmfit")

_TRAIN_FIELDS = {
    "loss.alpha": "alpha",
    "loss.beta": "beta",
    "train.lr": "lr",
    "train.batch_size": "batch_size",
    "train.max_epochs": "max_epochs",
    "train.patience": "patience",
    "train.seeds": "seeds",
    "train.class_weighting": "class_weighting",
    "model.variant": "variant",
    "method": "method",
}


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        if key in values:
            raise ConfigError(f"duplicate config key {key!r} (line {lineno})")
        try:
            values[key] = CONFIG_KEYS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {key} = {raw!r}: {exc}") from None
    for key, val in (overrides or {}).items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val
    for key in REQUIRED_KEYS:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    if values["dataset.kind"] not in DATASET_KINDS:
        raise ConfigError(f"dataset.kind must be one of {DATASET_KINDS}, got {values['dataset.kind']!r}")
    if values["dataset.kind"] != "synth" and not values.get("dataset.path"):
        raise ConfigError(f"dataset.kind = {values['dataset.kind']} needs dataset.path")
    train_kwargs = {field_: values[key] for key, field_ in _TRAIN_FIELDS.items() if key in values}
    try:
        train = TrainConfig(**train_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    synth = {key.split(".", 1)[1]: val for key, val in values.items() if key.startswith("synth.")}
    return ExperimentConfig(
        train=train,
        dataset_kind=values["dataset.kind"],
        dataset_path=values.get("dataset.path", ""),
        dataset_descriptor=values.get("dataset.descriptor", ""),
        window_size_s=values.get("window.size_s", 3.0),
        window_stride_s=values.get("window.stride_s", 0.2),
        synth=synth,
    )


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a flat ``key = value`` file; unknown keys are errors that name the key."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)


# reports

REPORT_COLUMNS = ("method", "seed", "f1", "accuracy", "test_mse", "stopped_epoch")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6f}"


def report_text(results: RunResult | Sequence[RunResult]) -> str:
    """Per-seed rows followed by ``mean`` and ``std`` (population) rows per method."""
    if isinstance(results, RunResult):
        results = [results]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for res in results:
        for e in sorted(res.entries, key=lambda e: e.seed):
            w.writerow([res.method, e.seed, _fmt(e.f1), _fmt(e.accuracy), _fmt(e.test_mse), e.stopped_epoch])
        agg = res.aggregate()
        for i, label in enumerate(("mean", "std")):
            w.writerow(
                [res.method, label]
                + [_fmt(agg[m][i]) if m in agg else "" for m in ("f1", "accuracy", "test_mse", "stopped_epoch")]
            )
    return buf.getvalue()


def write_report(results: RunResult | Sequence[RunResult], path) -> None:
    Path(path).write_text(report_text(results), encoding="utf-8")


def read_report(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
