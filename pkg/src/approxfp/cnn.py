"""Small CNN whose convolution multiplies run through configurable multipliers.

Topology: conv1 (10 kernels 3x3x3) -> ReLU -> 2x2 maxpool -> conv2 (12 kernels
3x3x10) -> ReLU -> 2x2 maxpool -> flatten -> FC(10).  Convolutions are
"valid" (no padding) and have no bias.  Only conv multiplications use the
selected multipliers; accumulation, pooling and the FC head use ordinary
binary32 arithmetic in a fixed order so results never depend on batching.

Tensors are numpy ``float32`` arrays laid out ``(N, C, H, W)``.
"""
from __future__ import annotations

import json
import struct
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import booth, kernels

IMAGE_SHAPE = (3, 32, 32)
CONV1_SHAPE = (10, 3, 3, 3)
CONV2_SHAPE = (12, 10, 3, 3)
FC_IN = 12 * 6 * 6
FC_SHAPE = (10, FC_IN)
N_CLASSES = 10
TAPS = 9
CONV1_SLOTS = CONV1_SHAPE[0] * TAPS
N_SLOTS = CONV1_SLOTS + CONV2_SHAPE[0] * TAPS  # 198

LAYER_SHAPES = {
    "conv1": CONV1_SHAPE,
    "conv2": CONV2_SHAPE,
    "fc_w": FC_SHAPE,
    "fc_b": (N_CLASSES,),
}


# --------------------------------------------------------------------------
# network definition and weight files


@dataclass
class NetworkDef:
    conv1: np.ndarray
    conv2: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray

    def __post_init__(self):
        for name, shape in LAYER_SHAPES.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name}: non-finite weight")
            setattr(self, name, arr)

    @classmethod
    def zeros(cls) -> NetworkDef:
        return cls(**{k: np.zeros(s, np.float32) for k, s in LAYER_SHAPES.items()})

    @classmethod
    def random(cls, seed: int = 0, scale: float = 0.3) -> NetworkDef:
        rng = np.random.default_rng(seed)
        return cls(**{k: (scale * rng.standard_normal(s)).astype(np.float32) for k, s in LAYER_SHAPES.items()})

    def layers(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in LAYER_SHAPES}

    def equals(self, other: NetworkDef) -> bool:
        """Bit-exact equality of every weight."""
        return all(
            np.array_equal(a.view(np.uint32), b.view(np.uint32))
            for a, b in zip(self.layers().values(), other.layers().values())
        )


WEIGHT_MAGIC = b"AFPW"
WEIGHT_VERSION = 1
_HEADER = struct.Struct("<4sII")  # magic, version, n_layers
_ENTRY = struct.Struct("<16sI4IQ")  # name, ndim, dims[4], byte offset


class WeightFormatError(ValueError):
    pass


def save_weights(net: NetworkDef, path: str | Path) -> None:
    """Write the weight file: header, layer table, raw little-endian FP32."""
    layers = net.layers()
    offset = _HEADER.size + _ENTRY.size * len(layers)
    table, payload = [], []
    for name, arr in layers.items():
        dims = list(arr.shape) + [0] * (4 - arr.ndim)
        table.append(_ENTRY.pack(name.encode(), arr.ndim, *dims, offset))
        data = arr.astype("<f4").tobytes()
        payload.append(data)
        offset += len(data)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(WEIGHT_MAGIC, WEIGHT_VERSION, len(layers)))
        fh.write(b"".join(table))
        fh.write(b"".join(payload))


def load_weights(path: str | Path) -> NetworkDef:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise WeightFormatError("file too short for header")
    magic, version, n_layers = _HEADER.unpack_from(raw)
    if magic != WEIGHT_MAGIC:
        raise WeightFormatError(f"bad magic {magic!r}")
    if version != WEIGHT_VERSION:
        raise WeightFormatError(f"unsupported version {version}")
    layers = {}
    for i in range(n_layers):
        pos = _HEADER.size + i * _ENTRY.size
        if pos + _ENTRY.size > len(raw):
            raise WeightFormatError("truncated layer table")
        name_b, ndim, d0, d1, d2, d3, offset = _ENTRY.unpack_from(raw, pos)
        name = name_b.rstrip(b"\0").decode()
        shape = (d0, d1, d2, d3)[:ndim]
        if name not in LAYER_SHAPES:
            raise WeightFormatError(f"unknown layer {name!r}")
        if shape != LAYER_SHAPES[name]:
            raise WeightFormatError(f"{name}: shape {shape} does not match {LAYER_SHAPES[name]}")
        count = int(np.prod(shape))
        if offset + 4 * count > len(raw):
            raise WeightFormatError(f"{name}: payload runs past end of file")
        layers[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)
    missing = set(LAYER_SHAPES) - set(layers)
    if missing:
        raise WeightFormatError(f"missing layers {sorted(missing)}")
    try:
        return NetworkDef(**layers)
    except ValueError as exc:
        raise WeightFormatError(str(exc)) from None


# --------------------------------------------------------------------------
# multiplier assignment


@dataclass(frozen=True)
class AssignmentSequence:
    """Config id per multiplier slot.

    Slots 0..89 belong to conv1 and 90..197 to conv2; within a layer slot
    ``9*k + t`` is kernel ``k``, tap ``t`` (row-major over the 3x3 window).
    """

    slots: tuple[str, ...]

    def __post_init__(self):
        names = tuple(booth.get_config(s).name for s in self.slots)
        if len(names) != N_SLOTS:
            raise ValueError(f"sequence has {len(names)} slots, expected {N_SLOTS}")
        object.__setattr__(self, "slots", names)

    @classmethod
    def uniform(cls, cfg) -> AssignmentSequence:
        return cls((booth.get_config(cfg).name,) * N_SLOTS)

    @staticmethod
    def slot_index(layer: int, kernel: int, tap: int) -> int:
        return (0 if layer == 1 else CONV1_SLOTS) + TAPS * kernel + tap

    def layer(self, layer: int) -> tuple[str, ...]:
        return self.slots[:CONV1_SLOTS] if layer == 1 else self.slots[CONV1_SLOTS:]

    def __len__(self):
        return N_SLOTS

    def __iter__(self):
        return iter(self.slots)

    def to_json(self) -> str:
        return json.dumps({"slots": list(self.slots)})

    @classmethod
    def from_json(cls, text: str) -> AssignmentSequence:
        doc = json.loads(text)
        if not isinstance(doc, dict) or "slots" not in doc:
            raise ValueError('sequence file must be an object with a "slots" list')
        return cls(tuple(doc["slots"]))

    @classmethod
    def load(cls, path: str | Path) -> AssignmentSequence:
        return cls.from_json(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


# --------------------------------------------------------------------------
# CIFAR-10 binary batches

RECORD = 1 + 3 * 32 * 32


@dataclass
class Dataset:
    images: np.ndarray  # uint8 (N, 3, 32, 32)
    labels: np.ndarray  # uint8 (N,)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, idx) -> Dataset:
        if isinstance(idx, int):
            idx = slice(idx, idx + 1)
        return Dataset(self.images[idx], self.labels[idx])

    def as_float(self) -> np.ndarray:
        return to_float(self.images)


def to_float(images_u8: np.ndarray) -> np.ndarray:
    return images_u8.astype(np.float32) / np.float32(255.0)


def parse_cifar10(raw: bytes, source: str = "<bytes>") -> Dataset:
    if len(raw) % RECORD:
        raise ValueError(f"{source}: {len(raw)} bytes is not a whole number of {RECORD}-byte records")
    recs = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD)
    labels = recs[:, 0].copy()
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise ValueError(f"{source}: record {bad} has label {labels[bad]} > 9")
    images = recs[:, 1:].reshape(-1, *IMAGE_SHAPE).copy()
    return Dataset(images, labels)


def load_cifar10(paths: str | Path | Sequence[str | Path]) -> Dataset:
    """Read one or more CIFAR-10 binary batch files (concatenated in order)."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    parts = [parse_cifar10(Path(p).read_bytes(), str(p)) for p in paths]
    return Dataset(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]))


def write_cifar10(ds: Dataset, path: str | Path) -> None:
    recs = np.empty((len(ds), RECORD), dtype=np.uint8)
    recs[:, 0] = ds.labels
    recs[:, 1:] = ds.images.reshape(len(ds), -1)
    Path(path).write_bytes(recs.tobytes())


# --------------------------------------------------------------------------
# convolution and inference


def _multiply_window(w: np.float32, window: np.ndarray, cfg: booth.MultiplierConfig, exact_fastpath: bool) -> np.ndarray:
    """``w * window`` elementwise through ``cfg``; ``w`` is the multiplicand."""
    if cfg.is_exact and exact_fastpath:
        # the platform multiply is IEEE binary32 round-to-nearest-even, which
        # the exact datapath reproduces bit for bit
        return window * w
    cm = kernels.compiled(cfg)
    return cm.multiply_scalar(int(np.float32(w).view(np.uint32)), window.view(np.uint32)).view(np.float32)


def conv2d_interleaved(x: np.ndarray, weights: np.ndarray, seq_slice: Sequence, exact_fastpath: bool = True) -> np.ndarray:
    """Valid 3x3 convolution with one multiplier config per (kernel, tap).

    ``x`` is (N, C, H, W) or (C, H, W).  Output (k, y, x) accumulates
    ``multiply(w[k, c, t], in[c, y+dy, x+dx])`` over channels then taps,
    starting from +0.0, in binary32.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    x = np.ascontiguousarray(x, dtype=np.float32)
    weights = np.asarray(weights, dtype=np.float32)
    n, c_in, h, w = x.shape
    n_k = weights.shape[0]
    if weights.shape[1:] != (c_in, 3, 3):
        raise ValueError(f"kernels {weights.shape} do not match input with {c_in} channels")
    if len(seq_slice) != n_k * TAPS:
        raise ValueError(f"need {n_k * TAPS} slot configs, got {len(seq_slice)}")
    if h < 3 or w < 3:
        raise ValueError(f"input {h}x{w} smaller than the 3x3 kernel")
    cfgs = [booth.get_config(s) for s in seq_slice]
    ho, wo = h - 2, w - 2
    out = np.zeros((n, n_k, ho, wo), dtype=np.float32)

    planes = []
    for c in range(c_in):
        plane = x[:, c]
        # few distinct values (e.g. 8-bit pixels): multiply each one once.
        # Dedupe on bit patterns so -0.0 and +0.0 stay distinct.
        uniq, inv = np.unique(plane.view(np.uint32), return_inverse=True)
        if uniq.size * 8 <= plane.size:
            planes.append((plane, uniq.view(np.float32), inv.reshape(plane.shape)))
        else:
            planes.append((plane, None, None))

    for k in range(n_k):
        acc = out[:, k]
        for c, (plane, uniq, inv) in enumerate(planes):
            for t in range(TAPS):
                dy, dx = divmod(t, 3)
                wt = np.float32(weights[k, c, dy, dx])
                cfg = cfgs[TAPS * k + t]
                if uniq is not None:
                    prod = _multiply_window(wt, uniq, cfg, exact_fastpath)[inv[:, dy : dy + ho, dx : dx + wo]]
                else:
                    prod = _multiply_window(wt, np.ascontiguousarray(plane[:, dy : dy + ho, dx : dx + wo]), cfg, exact_fastpath)
                acc += prod
    return out[0] if squeeze else out


def relu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.float32(0.0))


def maxpool2(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    v = x[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2)
    return v.max(axis=(3, 5))


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``x @ w.T + b`` summed sequentially over inputs in binary32."""
    acc = np.zeros((x.shape[0], w.shape[0]), dtype=np.float32)
    for j in range(w.shape[1]):
        acc += x[:, j : j + 1] * w[:, j]
    return acc + b


def features(x: np.ndarray, net: NetworkDef, seq: AssignmentSequence, exact_fastpath: bool = True) -> np.ndarray:
    h = maxpool2(relu(conv2d_interleaved(x, net.conv1, seq.layer(1), exact_fastpath)))
    h = maxpool2(relu(conv2d_interleaved(h, net.conv2, seq.layer(2), exact_fastpath)))
    return h.reshape(h.shape[0], -1)


def infer(images: np.ndarray, net: NetworkDef, seq: AssignmentSequence, batch_size: int = 256, exact_fastpath: bool = True):
    """Logits (N, 10) and predicted labels; ties go to the lowest class."""
    single = images.ndim == 3
    if single:
        images = images[None]
    if images.dtype == np.uint8:
        images = to_float(images)
    logits = np.empty((images.shape[0], N_CLASSES), dtype=np.float32)
    for lo in range(0, images.shape[0], batch_size):
        f = features(images[lo : lo + batch_size], net, seq, exact_fastpath)
        logits[lo : lo + batch_size] = dense(f, net.fc_w, net.fc_b)
    preds = np.argmax(logits, axis=1)
    if single:
        return logits[0], int(preds[0])
    return logits, preds


def evaluate_accuracy(data: Dataset, net: NetworkDef, seq: AssignmentSequence, batch_size: int = 256, workers: int = 1) -> float:
    """Top-1 accuracy in percent.

    With ``workers > 1`` batches run on threads (the compiled kernels drop
    the GIL); per-image results do not depend on batching.
    """
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty slice")
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        chunks = [data[lo : lo + batch_size] for lo in range(0, len(data), batch_size)]
        with ThreadPoolExecutor(workers) as pool:
            preds = list(pool.map(lambda d: infer(d.images, net, seq, batch_size)[1], chunks))
        correct = sum(int((p == d.labels).sum()) for p, d in zip(preds, chunks))
    else:
        _, preds = infer(data.images, net, seq, batch_size)
        correct = int((preds == data.labels).sum())
    return 100.0 * correct / len(data)
