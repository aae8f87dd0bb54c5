"""Named parameter storage, seeded initialisation and the checkpoint format."""
import json
import os
import zlib
from collections import OrderedDict

import numpy as np

from ..errors import DataIOError, LengthMismatchError, MissingSidecarError, StateError
from .autodiff import Tensor, get_default_dtype

ROLES = ("student", "teacher")


def substream(seed, name):
    """Independent generator for a named purpose (``"init"``, ``"mask"``, ``"batch"``, ...)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


class ParamStore:
    """Ordered ``name -> ndarray`` map with a role tag and an iteration counter."""

    def __init__(self, arrays=None, role="student", iteration=0):
        if role not in ROLES:
            raise StateError(f"unknown role {role!r}")
        self.arrays = OrderedDict()
        for name, arr in (arrays or {}).items():
            self[name] = arr
        self.role = role
        self.iteration = iteration

    def __getitem__(self, name):
        return self.arrays[name]

    def __setitem__(self, name, value):
        self.arrays[name] = np.array(value, dtype=get_default_dtype())

    def __contains__(self, name):
        return name in self.arrays

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def items(self):
        return self.arrays.items()

    def names(self):
        return list(self.arrays)

    def signature(self):
        return [(n, a.shape) for n, a in self.arrays.items()]

    def tensors(self, requires_grad=True, names=None):
        """Wrap the arrays (without copying) as tensors for one forward pass."""
        keep = set(self.arrays) if names is None else set(names)
        return {
            n: Tensor(a, requires_grad=requires_grad and n in keep, name=n)
            for n, a in self.arrays.items()
        }

    def copy(self, role=None):
        return ParamStore(
            {n: a.copy() for n, a in self.arrays.items()},
            role=role or self.role,
            iteration=self.iteration,
        )

    def astype(self, dtype):
        out = ParamStore(role=self.role, iteration=self.iteration)
        for n, a in self.arrays.items():
            out.arrays[n] = a.astype(dtype)
        return out

    def check_aligned(self, other):
        if self.signature() != other.signature():
            raise StateError("parameter stores are not name/shape aligned")

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays.values()]) if self.arrays else np.zeros(0)


def init_uniform(seed, name, shape, fan_in):
    """Fan-in scaled uniform (He bound ``sqrt(6 / fan_in)``) from the parameter's own stream."""
    rng = substream(seed, "init/" + name)
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def save_checkpoint(store, prefix, extra=None):
    """Write ``<prefix>.ckpt.json`` and ``<prefix>.ckpt.bin`` atomically."""
    entries, blobs, offset = [], [], 0
    for name, arr in store.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    manifest = {"iteration": int(store.iteration), "role": store.role, "params": entries}
    if extra:
        manifest.update(extra)
    d = os.path.dirname(os.path.abspath(prefix))
    os.makedirs(d, exist_ok=True)
    _atomic_write(prefix + ".ckpt.bin", b"".join(blobs))
    _atomic_write(prefix + ".ckpt.json", (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())


def _atomic_write(path, data):
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def checkpoint_prefix(path):
    for suffix in (".ckpt.json", ".ckpt.bin"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def load_checkpoint(path):
    """Return ``(ParamStore, manifest)`` from a checkpoint prefix or either of its files."""
    prefix = checkpoint_prefix(path)
    mpath, bpath = prefix + ".ckpt.json", prefix + ".ckpt.bin"
    if not os.path.exists(mpath):
        raise MissingSidecarError(f"checkpoint manifest not found: {mpath}")
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
        with open(bpath, "rb") as fh:
            blob = fh.read()
    except (OSError, ValueError) as exc:
        raise DataIOError(f"cannot read checkpoint {prefix}: {exc}") from exc
    store = ParamStore(role=manifest["role"], iteration=manifest["iteration"])
    expected = 0
    for entry in manifest["params"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + 4 * count
        if end > len(blob):
            raise LengthMismatchError(f"checkpoint blob {bpath} too short for {entry['name']}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=entry["offset"])
        store[entry["name"]] = arr.reshape(entry["shape"])
        expected = max(expected, end)
    if expected != len(blob):
        raise LengthMismatchError(f"checkpoint blob {bpath} has {len(blob)} bytes, manifest implies {expected}")
    return store, manifest
