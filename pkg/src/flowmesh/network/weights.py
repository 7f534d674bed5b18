"""Architecture hyperparameters and named weight tensors.

On disk a weight set is a JSON manifest plus a little-endian float32 blob.
The manifest lists tensors in architecture order with their shape and byte
offset, carries the hyperparameters, and records a SHA-256 of the blob.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import FlowmeshError, MissingWeights, ShapeMismatch

STATE_CHANNELS = 7
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    in_channels: int = 1
    encoder_channels: tuple = (16, 48, 96, 192, 384)
    blocks_per_level: int = 2
    convs_per_block: int = 3
    branch_widths: tuple = (384, 192, 96)
    branch_levels: tuple = ((5, 4), (4, 3), (3, 2))
    graph_blocks: int = 3
    graph_convs_per_block: int = 3
    leaky_slope: float = 0.2
    dropout: float = 0.1
    norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "branch_widths", tuple(int(c) for c in self.branch_widths))
        object.__setattr__(self, "branch_levels", tuple(tuple(int(x) for x in p) for p in self.branch_levels))
        if len(self.branch_widths) != len(self.branch_levels):
            raise ValueError("one width and one level pair per branch")
        n = len(self.encoder_channels)
        for pair in self.branch_levels:
            if len(pair) != 2 or not all(1 <= lvl <= n for lvl in pair):
                raise ValueError(f"branch levels must name two of levels 1..{n}")

    @property
    def n_levels(self) -> int:
        return len(self.encoder_channels)

    @property
    def size_multiple(self) -> int:
        return 2 ** self.n_levels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["branch_widths"] = list(self.branch_widths)
        d["branch_levels"] = [list(p) for p in self.branch_levels]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(**d)


DEFAULT_ARCH = Architecture()


def _conv_specs(prefix, cin, cout, k):
    shape = (cout, cin, k, k, k) if k else (cin, cout)
    return [(f"{prefix}.weight", shape), (f"{prefix}.bias", (cout,))]


def _cheb_specs(prefix, cin, cout):
    return [(f"{prefix}.w0", (cin, cout)), (f"{prefix}.w1", (cin, cout)), (f"{prefix}.bias", (cout,))]


def _norm_specs(prefix, c):
    return [(f"{prefix}.scale", (c,)), (f"{prefix}.shift", (c,))]


def tensor_specs(arch: Architecture) -> list:
    """Ordered ``(name, shape)`` records demanded by ``arch``."""
    specs = []
    cin = arch.in_channels
    for lvl, c in enumerate(arch.encoder_channels, start=1):
        for b in range(1, arch.blocks_per_level + 1):
            p = f"encoder.level{lvl}.block{b}"
            block_in = cin
            for k in range(1, arch.convs_per_block + 1):
                specs += _conv_specs(f"{p}.conv{k}", block_in if k == 1 else c, c, 3)
                specs += _norm_specs(f"{p}.norm{k}", c)
            if block_in != c:
                specs += _conv_specs(f"{p}.skip", block_in, c, 1)
            cin = c
    for b, (width, levels) in enumerate(zip(arch.branch_widths, arch.branch_levels), start=1):
        p = f"branch{b}"
        specs += _cheb_specs(f"{p}.adapt", STATE_CHANNELS, width)
        feat = width + sum(arch.encoder_channels[lvl - 1] for lvl in levels)
        for k in range(1, arch.graph_blocks + 1):
            block_in = feat if k == 1 else width
            for c in range(1, arch.graph_convs_per_block + 1):
                specs += _cheb_specs(f"{p}.block{k}.conv{c}", block_in if c == 1 else width, width)
                specs += _norm_specs(f"{p}.block{k}.norm{c}", width)
            if block_in != width:
                specs += [(f"{p}.block{k}.skip.weight", (block_in, width)), (f"{p}.block{k}.skip.bias", (width,))]
        specs += _cheb_specs(f"{p}.bottleneck", width, STATE_CHANNELS)
    return specs


class WeightSet:
    """Immutable mapping of tensor name to float32 array plus architecture."""

    def __init__(self, arch: Architecture, tensors: dict, allow_extra: bool = False):
        self.arch = arch
        specs = tensor_specs(arch)
        expected = dict(specs)
        missing = [n for n in expected if n not in tensors]
        if missing:
            raise MissingWeights(f"{len(missing)} tensors missing, first: {missing[0]}")
        extra = [n for n in tensors if n not in expected]
        if extra and not allow_extra:
            raise ShapeMismatch(f"unexpected tensors: {extra[:3]}")
        store = {}
        for name, shape in specs:
            arr = np.array(tensors[name], dtype=np.float32)
            if arr.shape != tuple(shape):
                raise ShapeMismatch(f"{name}: expected shape {tuple(shape)}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise FlowmeshError(f"{name} has non-finite values")
            arr.setflags(write=False)
            store[name] = arr
        self._tensors = store
        self.names = [n for n, _ in specs]

    def __getitem__(self, name) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise MissingWeights(name) from None

    def __contains__(self, name):
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    @property
    def n_parameters(self) -> int:
        return int(sum(a.size for a in self._tensors.values()))

    def replace(self, updates: dict) -> "WeightSet":
        merged = dict(self._tensors)
        merged.update(updates)
        return WeightSet(self.arch, merged)

    def blob(self) -> bytes:
        return b"".join(self._tensors[n].astype("<f4").tobytes() for n in self.names)

    def checksum(self) -> str:
        return hashlib.sha256(self.blob()).hexdigest()

    def manifest(self, blob_name: str) -> dict:
        records = []
        offset = 0
        for n in self.names:
            a = self._tensors[n]
            records.append({"name": n, "shape": list(a.shape), "dtype": "f32", "offset": offset})
            offset += 4 * a.size
        return {
            "format_version": FORMAT_VERSION,
            "architecture": self.arch.to_dict(),
            "blob": blob_name,
            "nbytes": offset,
            "checksum": {"sha256": self.checksum()},
            "tensors": records,
        }

    def save(self, path) -> None:
        """Write ``path`` (manifest) and ``path`` with suffix ``.bin`` (blob)."""
        path = Path(path)
        blob_path = path.with_suffix(".bin")
        blob_path.write_bytes(self.blob())
        path.write_text(json.dumps(self.manifest(blob_path.name), indent=1) + "\n")

    @classmethod
    def load(cls, path, allow_extra: bool = False) -> "WeightSet":
        path = Path(path)
        try:
            man = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise MissingWeights(f"cannot read weight manifest {path}: {exc}") from None
        if man.get("format_version") != FORMAT_VERSION:
            raise FlowmeshError(f"unsupported weight format {man.get('format_version')}")
        blob_path = path.parent / man["blob"]
        try:
            blob = blob_path.read_bytes()
        except OSError as exc:
            raise MissingWeights(f"cannot read weight blob {blob_path}: {exc}") from None
        if len(blob) != man["nbytes"]:
            raise ShapeMismatch(f"blob has {len(blob)} bytes, manifest says {man['nbytes']}")
        if hashlib.sha256(blob).hexdigest() != man["checksum"]["sha256"]:
            raise FlowmeshError("weight blob checksum mismatch")
        tensors = {}
        for rec in man["tensors"]:
            if rec.get("dtype") != "f32":
                raise FlowmeshError(f"{rec['name']}: unsupported dtype {rec.get('dtype')}")
            count = int(np.prod(rec["shape"], dtype=np.int64))
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=rec["offset"])
            tensors[rec["name"]] = arr.reshape(rec["shape"])
        return cls(Architecture.from_dict(man["architecture"]), tensors, allow_extra=allow_extra)


def init_random(arch: Architecture = DEFAULT_ARCH, seed: int = 0, scale: float = 0.05) -> WeightSet:
    """Seeded uniform(-scale, scale) weights for every tensor, in order."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_specs(arch):
        tensors[name] = rng.uniform(-scale, scale, size=shape).astype(np.float32)
    return WeightSet(arch, tensors)


def zero_bottlenecks(weights: WeightSet) -> WeightSet:
    """Copy with every branch bottleneck (weights and bias) set to zero."""
    updates = {
        n: np.zeros_like(weights[n]) for n in weights.names if ".bottleneck." in n
    }
    return weights.replace(updates)
