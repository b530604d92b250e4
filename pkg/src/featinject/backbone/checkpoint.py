"""Single-file checkpoint container.

Layout: an ASCII header of ``key=value`` lines grouped under ``[section]``
markers, terminated by a blank line, followed by the parameter payload as
concatenated little-endian float32 arrays. The ``[parameters]`` section lists
``name<TAB>shape<TAB>offset<TAB>count`` per array (offset/count in floats).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .unet import UNetArch

MAGIC = "FEATINJECT-CHECKPOINT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class BackboneCheckpoint:
    arch: UNetArch
    params: dict[str, np.ndarray]
    schedule_kind: str = "linear"
    num_train_steps: int = 1000
    meta: dict[str, str] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def to_bytes(self) -> bytes:
        payload = b"".join(
            np.ascontiguousarray(a, dtype="<f4").tobytes() for a in self.params.values()
        )
        lines = [MAGIC, f"format_version={self.format_version}", "[architecture]"]
        lines += [f"{k}={v}" for k, v in self.arch.to_dict().items()]
        lines += ["[schedule]", f"kind={self.schedule_kind}", f"num_train_steps={self.num_train_steps}"]
        lines += ["[meta]"] + [f"{k}={v}" for k, v in sorted(self.meta.items())]
        lines.append("[parameters]")
        offset = 0
        for name, a in self.params.items():
            shape = ",".join(map(str, a.shape))
            lines.append(f"{name}\t{shape}\t{offset}\t{a.size}")
            offset += a.size
        lines += [
            "[payload]",
            f"bytes={len(payload)}",
            f"sha256={hashlib.sha256(payload).hexdigest()}",
            "",
        ]
        return ("\n".join(lines) + "\n").encode("ascii") + payload

    @property
    def checkpoint_id(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]

    def same_weights(self, other: "BackboneCheckpoint") -> bool:
        return (
            self.arch == other.arch
            and self.schedule_kind == other.schedule_kind
            and self.num_train_steps == other.num_train_steps
            and list(self.params) == list(other.params)
            and all(np.array_equal(self.params[k], other.params[k]) for k in self.params)
        )


def save_checkpoint(ckpt: BackboneCheckpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(ckpt.to_bytes())
    return path


def checkpoint_from_bytes(data: bytes) -> BackboneCheckpoint:
    end = data.find(b"\n\n")
    if end < 0:
        raise CorruptCheckpointError("checkpoint header is not terminated")
    try:
        header = data[:end].decode("ascii").split("\n")
    except UnicodeDecodeError:
        raise CorruptCheckpointError("checkpoint header is not ASCII") from None
    payload = data[end + 2 :]
    if not header or header[0] != MAGIC:
        raise CorruptCheckpointError("not a featinject checkpoint (bad magic line)")

    sections: dict[str, list[str]] = {"": []}
    current = ""
    for line in header[1:]:
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        else:
            sections[current].append(line)

    def kv(name):
        out = {}
        for line in sections.get(name, []):
            key, sep, value = line.partition("=")
            if not sep:
                raise CorruptCheckpointError(f"malformed line in [{name}]: {line!r}")
            out[key] = value
        return out

    top = kv("")
    try:
        version = int(top["format_version"])
    except (KeyError, ValueError):
        raise CorruptCheckpointError("missing format_version") from None
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION})"
        )
    try:
        arch = UNetArch.from_dict(kv("architecture"))
        sched = kv("schedule")
        info = kv("payload")
        n_bytes, digest = int(info["bytes"]), info["sha256"]
        kind, T = sched["kind"], int(sched["num_train_steps"])
    except (KeyError, ValueError) as e:
        raise CorruptCheckpointError(f"incomplete checkpoint header: {e}") from None
    if len(payload) != n_bytes:
        raise CorruptCheckpointError(f"payload has {len(payload)} bytes, header says {n_bytes}")
    if hashlib.sha256(payload).hexdigest() != digest:
        raise CorruptCheckpointError("payload checksum mismatch")

    flat = np.frombuffer(payload, dtype="<f4")
    params = {}
    for line in sections.get("parameters", []):
        try:
            name, shape, offset, count = line.split("\t")
            shape_t = tuple(int(s) for s in shape.split(",")) if shape else ()
            offset, count = int(offset), int(count)
        except ValueError:
            raise CorruptCheckpointError(f"malformed parameter line {line!r}") from None
        if offset + count > flat.size or int(np.prod(shape_t)) != count:
            raise CorruptCheckpointError(f"parameter {name} out of payload bounds")
        params[name] = flat[offset : offset + count].astype(np.float32).reshape(shape_t)
    return BackboneCheckpoint(
        arch=arch,
        params=params,
        schedule_kind=kind,
        num_train_steps=T,
        meta=kv("meta"),
        format_version=version,
    )


def load_checkpoint(path) -> BackboneCheckpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())
