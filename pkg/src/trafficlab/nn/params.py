"""Named parameter tensors with freezable groups and a checkpoint format.

Checkpoints are ``.npz`` archives: one array per parameter under the key
``<group>/<name>`` plus a ``__meta__`` JSON blob carrying the format version,
dtype tag, optimizer step counter and any model metadata (architecture
config, diffusion schedule) so files are self-describing.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor

CHECKPOINT_FORMAT_VERSION = 1


class ParamStore:
    """Registry of named parameters, each assigned to a freezable group."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._group_of: dict[str, str] = {}
        self._frozen: set[str] = set()
        self.step = 0  # optimizer step counter, persisted in checkpoints

    def add(self, name: str, value: np.ndarray, group: str) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=group not in self._frozen)
        self._params[name] = t
        self._group_of[name] = group
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def groups(self) -> set[str]:
        return set(self._group_of.values())

    def group_of(self, name: str) -> str:
        return self._group_of[name]

    def freeze(self, group: str) -> None:
        self._frozen.add(group)
        for name, t in self._params.items():
            if self._group_of[name] == group:
                t.requires_grad = False

    def thaw(self, group: str) -> None:
        self._frozen.discard(group)
        for name, t in self._params.items():
            if self._group_of[name] == group:
                t.requires_grad = True

    def is_frozen(self, group: str) -> bool:
        return group in self._frozen

    def frozen_groups(self) -> set[str]:
        return set(self._frozen)

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items() if self._group_of[n] not in self._frozen]

    def gradients(self) -> dict[str, np.ndarray]:
        """Accumulated grads of unfrozen parameters; frozen groups are absent."""
        out = {}
        for name, t in self.trainable():
            if t.grad is not None:
                out[name] = t.grad
        return out

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def group_checksum(self, group: str) -> str:
        """Order-stable digest of a group's raw parameter bytes."""
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self._params):
            if self._group_of[name] == group:
                h.update(name.encode())
                h.update(self._params[name].data.tobytes())
        return h.hexdigest()

    # ------------------------------------------------------------------
    # persistence

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        arrays = {f"{self._group_of[n]}/{n}": t.data for n, t in self._params.items()}
        blob = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "dtype": "float64",
            "step": self.step,
            "frozen_groups": sorted(self._frozen),
            "meta": meta or {},
        }
        arrays["__meta__"] = np.frombuffer(json.dumps(blob, sort_keys=True).encode(), dtype=np.uint8)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(path, **arrays)
        if path.suffix != ".npz":  # np.savez appends .npz
            Path(str(path) + ".npz").replace(path)

    @classmethod
    def load(cls, path: str | Path) -> tuple["ParamStore", dict]:
        with np.load(path) as archive:
            blob = json.loads(archive["__meta__"].tobytes().decode())
            if blob.get("format_version") != CHECKPOINT_FORMAT_VERSION:
                raise ValueError(f"unsupported checkpoint format: {blob.get('format_version')}")
            store = cls()
            for key in archive.files:
                if key == "__meta__":
                    continue
                group, _, name = key.partition("/")
                store.add(name, archive[key], group)
        store.step = int(blob["step"])
        for group in blob.get("frozen_groups", []):
            store.freeze(group)
        return store, blob["meta"]
