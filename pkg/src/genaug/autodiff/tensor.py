"""Dense float64 tensors and named parameter collections.

Tensor values are immutable after construction (the underlying array is
marked read-only); parameter updates go through ParameterSet.assign, which
re-validates finiteness. This is what catches divergence during training.
"""

import numpy as np


class NonFiniteValueError(ValueError):
    """A value that must be finite is NaN or infinite."""


class Tensor:
    """Immutable dense float64 array with finiteness checked on construction."""

    __slots__ = ("data",)

    def __init__(self, values, shape=None):
        arr = np.asarray(values, dtype=np.float64)
        if shape is not None:
            arr = arr.reshape(shape)
        arr = np.ascontiguousarray(arr)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValueError("tensor contains non-finite values")
        arr.setflags(write=False)
        self.data = arr

    @property
    def shape(self):
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


class ParameterSet:
    """Named tensors with stable iteration order and a trainable flag each.

    The flattened view concatenates trainable tensors (row-major) in
    insertion order; frozen tensors never appear in it and never receive
    gradients.
    """

    def __init__(self):
        self._items: dict[str, tuple[Tensor, bool]] = {}

    def add(self, name: str, values, trainable: bool = True) -> Tensor:
        if name in self._items:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = values if isinstance(values, Tensor) else Tensor(values)
        self._items[name] = (t, trainable)
        return t

    def assign(self, name: str, values) -> Tensor:
        """Replace a tensor's values (shape-preserving, finiteness-checked)."""
        old, trainable = self._items[name]
        t = values if isinstance(values, Tensor) else Tensor(values)
        if t.shape != old.shape:
            raise ValueError(
                f"shape mismatch assigning {name!r}: {t.shape} != {old.shape}"
            )
        self._items[name] = (t, trainable)
        return t

    def __contains__(self, name):
        return name in self._items

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name][0]

    def data(self, name: str) -> np.ndarray:
        return self._items[name][0].data

    def is_trainable(self, name: str) -> bool:
        return self._items[name][1]

    def names(self) -> list[str]:
        return list(self._items)

    def trainable_names(self) -> list[str]:
        return [n for n, (_, tr) in self._items.items() if tr]

    @property
    def num_trainable(self) -> int:
        return sum(t.size for n, (t, tr) in self._items.items() if tr)

    def freeze_all(self) -> None:
        self._items = {n: (t, False) for n, (t, _) in self._items.items()}

    def get_flat(self) -> np.ndarray:
        parts = [self.data(n).ravel() for n in self.trainable_names()]
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_trainable:
            raise ValueError(
                f"flat vector length {vec.size} != trainable size {self.num_trainable}"
            )
        off = 0
        for n in self.trainable_names():
            k = self[n].size
            self.assign(n, vec[off : off + k].reshape(self[n].shape))
            off += k

    def flat_slices(self) -> dict[str, slice]:
        """Flat-view slice per trainable tensor, in insertion order."""
        out, off = {}, 0
        for n in self.trainable_names():
            k = self[n].size
            out[n] = slice(off, off + k)
            off += k
        return out

    def copy(self) -> "ParameterSet":
        ps = ParameterSet()
        for n, (t, tr) in self._items.items():
            ps.add(n, t, trainable=tr)  # tensors immutable, safe to share
        return ps

    def __repr__(self):
        return f"ParameterSet({len(self._items)} tensors, {self.num_trainable} trainable values)"
