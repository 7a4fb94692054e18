"""The DPLE container: named float64 tensors in a little-endian binary file.

Layout:
    magic   4 bytes  b"DPLE"
    version u32 LE   (currently 1)
    count   u32 LE   number of sections
    section, repeated `count` times:
        name_len u16 LE, then UTF-8 name bytes
        rank     u8
        dims     rank x u32 LE
        payload  8 * prod(dims) bytes of f64 LE, row-major

Zero-size tensors (a dim of 0) are legal; string-valued metadata rides in
section names with an empty payload. Datasets and trained models are both
plain section dictionaries on top of this.
"""

from __future__ import annotations

import struct
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import adapter, encoders
from .errors import FormatError, UsageError
from .evaluation import EmbeddingDataset
from .grad import Tensor
from .learn import TrainConfig
from .pipeline import Pipeline

MAGIC = b"DPLE"
VERSION = 1

Array = np.ndarray


def write_sections(path, sections: dict[str, Array]) -> None:
    """Write named tensors in dict order; bytes are a pure function of input."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", len(sections))
    for name, arr in sections.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise UsageError(f"section name too long: {name[:32]!r}...")
        if data.ndim > 255:
            raise UsageError("section rank exceeds u8")
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<B", data.ndim)
        for d in data.shape:
            blob += struct.pack("<I", d)
        blob += data.tobytes()
    Path(path).write_bytes(bytes(blob))


def read_sections(path) -> dict[str, Array]:
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    off = 0

    def take(n: int) -> memoryview:
        nonlocal off
        if off + n > len(view):
            raise FormatError("truncated DPLE file")
        chunk = view[off:off + n]
        off += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError("not a DPLE file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FormatError(f"unsupported DPLE version {version}")
    (count,) = struct.unpack("<I", take(4))
    sections: dict[str, Array] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = tuple(struct.unpack("<I", take(4))[0] for _ in range(rank))
        n_items = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = take(8 * n_items)
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
        if name in sections:
            raise FormatError(f"duplicate section {name!r}")
        sections[name] = arr
    if off != len(view):
        raise FormatError("trailing bytes after last section")
    return sections


# -- dataset containers ------------------------------------------------------

def write_dataset(path, ds: EmbeddingDataset) -> None:
    sections: dict[str, Array] = {}
    sections[f"meta/name/{ds.name}"] = np.zeros((0,))
    for i, cname in enumerate(ds.class_names):
        sections[f"class/{i:04d}/{cname}"] = np.zeros((0,))
    sections["features"] = ds.features
    sections["patch_features"] = ds.patch_features
    sections["labels"] = ds.labels.astype(np.float64)
    sections["base_ids"] = np.asarray(ds.base_ids, dtype=np.float64)
    sections["novel_ids"] = np.asarray(ds.novel_ids, dtype=np.float64)
    write_sections(path, sections)


def read_dataset(path) -> EmbeddingDataset:
    sec = read_sections(path)
    try:
        name = next(k.split("/", 2)[2] for k in sec if k.startswith("meta/name/"))
        classes = sorted(k for k in sec if k.startswith("class/"))
        class_names = tuple(k.split("/", 2)[2] for k in classes)
        return EmbeddingDataset(
            name=name,
            class_names=class_names,
            features=sec["features"],
            patch_features=sec["patch_features"],
            labels=sec["labels"].astype(np.int64),
            base_ids=tuple(int(i) for i in sec["base_ids"]),
            novel_ids=tuple(int(i) for i in sec["novel_ids"]),
        )
    except (KeyError, StopIteration, IndexError) as exc:
        raise FormatError(f"not a dataset container: missing {exc}") from exc


# -- model containers --------------------------------------------------------

def write_model(path, cfg: TrainConfig, pipe: Pipeline) -> None:
    """Persist prompt state + encoder seeds (weights are regenerable) + config."""
    from .config import serialize_config

    sections: dict[str, Array] = {}
    for line in serialize_config(cfg).strip().splitlines():
        key, value = (s.strip() for s in line.split("=", 1))
        sections[f"config/{key}/{value}"] = np.zeros((0,))
    sections["seed/language"] = np.asarray([pipe.lang.seed], dtype=np.float64)
    sections["seed/vision"] = np.asarray([pipe.vis.seed], dtype=np.float64)
    for name, t in pipe.prompts.named_parameters():
        sections[f"param/{name}"] = t.data
    write_sections(path, sections)


def read_model(path) -> tuple[TrainConfig, Pipeline]:
    """Rebuild the pipeline: regenerate encoders from seeds, load parameters."""
    from .config import parse_config
    from .learn import build_pipeline

    sec = read_sections(path)
    lines = []
    for key in sec:
        if key.startswith("config/"):
            _, k, v = key.split("/", 2)
            lines.append(f"{k} = {v}")
    if not lines:
        raise FormatError("not a model container: no config sections")
    cfg = parse_config("\n".join(lines))

    pipe = build_pipeline(cfg)
    if (int(sec["seed/language"][0]) != pipe.lang.seed
            or int(sec["seed/vision"][0]) != pipe.vis.seed):
        raise FormatError("encoder seeds disagree with the stored config")
    loaded = 0
    for name, t in pipe.prompts.named_parameters():
        key = f"param/{name}"
        if key not in sec:
            raise FormatError(f"model container missing {key!r}")
        arr = sec[key]
        if arr.shape != t.data.shape:
            raise FormatError(f"parameter {name!r} has shape {arr.shape}, "
                              f"expected {t.data.shape}")
        t.data = arr.copy()
        loaded += 1
    return cfg, pipe
