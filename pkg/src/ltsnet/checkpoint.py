"""Self-describing binary checkpoints shared by Students, Teachers and snapshots.

Layout: the 8-byte magic ``LTSNCKPT``, a little-endian uint32 version, a
uint32 header length, a UTF-8 JSON header (kind, config, extra fields and the
ordered parameter table with shapes), then every parameter as little-endian
float64 in table order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import ParamStore
from .student import StudentConfig, StudentModel
from .teacher import TeacherConfig, TeacherModel, TeacherSnapshot

MAGIC = b"LTSNCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    config: dict
    params: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, kind: str, config: dict, params: dict[str, np.ndarray], extra: dict | None = None) -> None:
    names = list(params)
    table = [{"name": n, "shape": list(np.shape(params[n]))} for n in names]
    header = json.dumps({"kind": kind, "config": config, "extra": extra or {}, "params": table},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(header)) + header)
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    offset = 16 + hlen
    params = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(entry["shape"]).astype(np.float64)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return Checkpoint(header["kind"], header["config"], params, header.get("extra", {}))


def _store_arrays(store: ParamStore) -> dict[str, np.ndarray]:
    return {name: store[name].data for name in store}


def _restore(store: ParamStore, params: dict[str, np.ndarray], path) -> None:
    if set(params) != set(store):
        missing = sorted(set(store) - set(params))
        extra = sorted(set(params) - set(store))
        raise CheckpointError(f"{path}: parameter mismatch (missing {missing}, unexpected {extra})")
    for name, value in params.items():
        if store[name].data.shape != value.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name!r}")
        store[name].data[...] = value


def save_student(path, model: StudentModel) -> None:
    save_checkpoint(path, "student", model.config.to_dict(), _store_arrays(model.store),
                    {"n_seen_domains": model.n_seen_domains})


def load_student(path) -> StudentModel:
    ck = load_checkpoint(path)
    if ck.kind != "student":
        raise CheckpointError(f"{path}: holds a {ck.kind!r}, not a student")
    model = StudentModel(StudentConfig(**ck.config), 0)
    _restore(model.store, ck.params, path)
    model.n_seen_domains = int(ck.extra.get("n_seen_domains", model.config.k_max))
    return model


def save_teacher(path, model: TeacherModel) -> None:
    save_checkpoint(path, "teacher", model.config.to_dict(), _store_arrays(model.store))


def load_teacher(path) -> TeacherModel:
    ck = load_checkpoint(path)
    if ck.kind != "teacher":
        raise CheckpointError(f"{path}: holds a {ck.kind!r}, not a teacher")
    model = TeacherModel(TeacherConfig(**ck.config), 0)
    _restore(model.store, ck.params, path)
    return model


def save_snapshot(path, snap: TeacherSnapshot) -> None:
    save_checkpoint(path, "teacher_snapshot", snap.config.to_dict(), snap.parameters(), {"k": snap.k})


def load_snapshot(path) -> TeacherSnapshot:
    ck = load_checkpoint(path)
    if ck.kind != "teacher_snapshot":
        raise CheckpointError(f"{path}: holds a {ck.kind!r}, not a teacher snapshot")
    teacher = TeacherModel(TeacherConfig(**ck.config), 0)
    for name, value in ck.params.items():
        if name not in teacher.store:
            raise CheckpointError(f"{path}: unexpected parameter {name!r}")
        teacher.store[name].data[...] = value
    return TeacherSnapshot(teacher, int(ck.extra["k"]))
