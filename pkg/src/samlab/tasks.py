"""Synthetic tasks and the training-set subsampling used by data-limited runs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels, rng
from . import tensor as T
from .errors import ConfigError


@dataclass(frozen=True)
class Batch:
    """Features ``x`` (n, ...) and labels ``y`` (n,), row-aligned."""

    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def take(self, index) -> "Batch":
        index = np.asarray(index, dtype=np.int64)
        return Batch(self.x[index], self.y[index])

    def shards(self, m: int) -> list["Batch"]:
        """Split into ``m`` contiguous equal shards (``len`` must divide evenly)."""
        n = len(self)
        if m < 1 or n % m:
            raise ConfigError(f"cannot split a batch of {n} into {m} equal shards")
        k = n // m
        return [Batch(self.x[j * k : (j + 1) * k], self.y[j * k : (j + 1) * k]) for j in range(m)]


MicroBatch = Batch


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str
    gen_seed: int
    descriptor: str
    num_classes: int = 2

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ConfigError(f"split must be train or test, got {self.split!r}")
        if len(self.labels) < 1 or len(self.features) != len(self.labels):
            raise ConfigError("dataset needs n >= 1 aligned features and labels")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def as_batch(self) -> Batch:
        return Batch(self.features, self.labels)

    def take(self, index, descriptor: str | None = None) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return replace(
            self,
            features=self.features[index],
            labels=self.labels[index],
            descriptor=descriptor or self.descriptor,
        )


@dataclass(frozen=True)
class SubsampleSpec:
    rate: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.rate <= 1.0):
            raise ConfigError(f"subsample rate must lie in (0, 1], got {self.rate}")

    def size(self, n: int) -> int:
        return max(1, math.floor(self.rate * n))


def _row_keys(x: np.ndarray) -> set[bytes]:
    x = np.ascontiguousarray(x)
    return {row.tobytes() for row in x.reshape(len(x), -1)}


def _drop_overlap(train: Dataset, test: Dataset) -> Dataset:
    seen = _row_keys(train.features)
    keep = [i for i, row in enumerate(np.ascontiguousarray(test.features).reshape(len(test), -1))
            if row.tobytes() not in seen]
    return test if len(keep) == len(test) else test.take(keep)


# ---------------------------------------------------------------------------
# two-basin 1-D landscape
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoBasin:
    """Soft-min of a sharp and a flat quadratic basin.

    ``L(x) = -T log(exp(-f_s/T) + exp(-f_f/T))`` with
    ``f_s = a_s/2 (x - c_s)^2`` and ``f_f = a_f/2 (x - c_f)^2 + delta``.
    """

    sharp_curvature: float = 50.0
    sharp_center: float = -1.0
    flat_curvature: float = 1.0
    flat_center: float = 2.0
    delta: float = 0.05
    temperature: float = 0.1

    def _parts(self, x):
        x = np.asarray(x, dtype=np.float64)
        fs = 0.5 * self.sharp_curvature * (x - self.sharp_center) ** 2
        ff = 0.5 * self.flat_curvature * (x - self.flat_center) ** 2 + self.delta
        return x, fs, ff

    def __call__(self, x):
        x, fs, ff = self._parts(x)
        m = np.minimum(fs, ff)
        t = self.temperature
        return m - t * np.log(np.exp(-(fs - m) / t) + np.exp(-(ff - m) / t))

    def grad(self, x):
        x, fs, ff = self._parts(x)
        m = np.minimum(fs, ff)
        ws = np.exp(-(fs - m) / self.temperature)
        wf = np.exp(-(ff - m) / self.temperature)
        return (ws * self.sharp_curvature * (x - self.sharp_center)
                + wf * self.flat_curvature * (x - self.flat_center)) / (ws + wf)

    @property
    def kernel_args(self) -> tuple[float, ...]:
        return (self.sharp_curvature, self.sharp_center, self.flat_curvature,
                self.flat_center, self.delta, self.temperature)

    def barrier(self) -> float:
        """Location of the loss maximum between the two centers."""
        xs = np.linspace(self.sharp_center, self.flat_center, 200001)
        return float(xs[np.argmax(self(xs))])

    def descend(self, x0, steps: int, lr: float, rho: float = 0.0) -> np.ndarray:
        """Final iterates of GD (rho = 0) or SAM-GD from each start in ``x0``."""
        x0 = np.ascontiguousarray(x0, dtype=np.float64)
        return kernels.two_basin_descend(x0, int(steps), float(lr), float(rho), *self.kernel_args)

    def in_flat_basin(self, x) -> np.ndarray:
        return np.asarray(x) > self.barrier()

    def graph(self):
        """Graph function over a single parameter named ``x`` (batch ignored).

        Summed over the entries of ``x``, so a vector parameter evaluates many
        independent starts at once.
        """

        def fn(p, batch):
            x = p["x"]
            g = self.grad(x.data)
            val = np.float64(np.sum(self(x.data)))
            return T._node(val, (x,), lambda up: (float(up) * g,), "two_basin")

        return fn


def gen_two_basin_1d() -> TwoBasin:
    return TwoBasin()


# ---------------------------------------------------------------------------
# spirals
# ---------------------------------------------------------------------------


def _spiral_points(n_per_class: int, noise_sigma: float, gen: np.random.Generator):
    theta = 3.0 * math.pi * gen.random(n_per_class)
    r = theta / (3.0 * math.pi)
    c0 = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    c1 = -c0  # rotation by pi
    if noise_sigma > 0:
        c0 = c0 + noise_sigma * gen.standard_normal(c0.shape)
        c1 = c1 + noise_sigma * gen.standard_normal(c1.shape)
    x = np.concatenate([c0, c1])
    y = np.concatenate([np.zeros(n_per_class, np.int64), np.ones(n_per_class, np.int64)])
    return x, y


def gen_spirals(n_per_class: int, noise_sigma: float, seed: int, split: str = "train") -> Dataset:
    """Two interleaved Archimedean spirals; class 1 is class 0 rotated by pi.

    Rows are class 0 points then class 1 points, so point ``k`` of class 1 is
    row ``n_per_class + k``. The test split comes from an independent stream
    and drops any row that coincides exactly with a training row.
    """
    if n_per_class < 1 or noise_sigma < 0:
        raise ConfigError("gen_spirals needs n_per_class >= 1 and noise_sigma >= 0")
    x, y = _spiral_points(n_per_class, noise_sigma, rng.stream(seed, 0, f"spirals/{split}"))
    desc = f"spirals(n_per_class={n_per_class},noise={noise_sigma},seed={seed})"
    ds = Dataset(x, y, split, seed, desc, num_classes=2)
    if split == "test":
        ds = _drop_overlap(gen_spirals(n_per_class, noise_sigma, seed, "train"), ds)
    return ds


# ---------------------------------------------------------------------------
# key-value lookup sequences
# ---------------------------------------------------------------------------


def seq_lookup_layout(seq_len: int) -> tuple[int, int]:
    """(number of key/value pairs, leading pad positions) for a sequence length."""
    pairs = (seq_len - 1) // 2
    return pairs, seq_len - (2 * pairs + 1)


def _lookup_rows(n: int, vocab: int, seq_len: int, gen: np.random.Generator):
    pairs, pad = seq_lookup_layout(seq_len)
    keys = np.argsort(gen.random((n, vocab)), axis=1)[:, :pairs]
    values = gen.integers(0, vocab, size=(n, pairs))
    which = gen.integers(0, pairs, size=n)
    seq = np.zeros((n, seq_len), dtype=np.int64)
    seq[:, pad : pad + 2 * pairs : 2] = keys
    seq[:, pad + 1 : pad + 2 * pairs : 2] = values
    rows = np.arange(n)
    seq[:, -1] = keys[rows, which]
    return seq, values[rows, which]


def gen_seq_lookup(n: int, vocab: int, seq_len: int, seed: int, split: str = "train") -> Dataset:
    """Sequences ``k1 v1 ... kp vp q`` whose target is the value paired with ``q``.

    Keys within a sequence are distinct; values are uniform over the vocab.
    Even ``seq_len`` gets a single leading pad token 0.
    """
    if vocab < 4 or seq_len < 3 or n < 1:
        raise ConfigError("gen_seq_lookup needs vocab >= 4, seq_len >= 3, n >= 1")
    x, y = _lookup_rows(n, vocab, seq_len, rng.stream(seed, 0, f"seq_lookup/{split}"))
    desc = f"seq_lookup(n={n},vocab={vocab},seq_len={seq_len},seed={seed})"
    ds = Dataset(x, y, split, seed, desc, num_classes=vocab)
    if split == "test":
        ds = _drop_overlap(gen_seq_lookup(n, vocab, seq_len, seed, "train"), ds)
    return ds


def make_splits(kind: str, seed: int, **kw) -> tuple[Dataset, Dataset]:
    """Generate matching (train, test) datasets for a named task."""
    if kind == "spirals":
        n_test = kw.pop("n_test_per_class", kw["n_per_class"])
        train = gen_spirals(kw["n_per_class"], kw["noise_sigma"], seed, "train")
        x, y = _spiral_points(n_test, kw["noise_sigma"], rng.stream(seed, 0, "spirals/test"))
        test = Dataset(x, y, "test", seed, train.descriptor, num_classes=2)
        return train, _drop_overlap(train, test)
    if kind == "seq_lookup":
        n_test = kw.pop("n_test", kw["n"])
        train = gen_seq_lookup(kw["n"], kw["vocab"], kw["seq_len"], seed, "train")
        x, y = _lookup_rows(n_test, kw["vocab"], kw["seq_len"], rng.stream(seed, 0, "seq_lookup/test"))
        test = Dataset(x, y, "test", seed, train.descriptor.replace("seq_lookup", "seq_lookup_test"),
                       num_classes=kw["vocab"])
        return train, _drop_overlap(train, test)
    raise ConfigError(f"unknown task {kind!r}")


# ---------------------------------------------------------------------------
# subsampling
# ---------------------------------------------------------------------------


def subsample_order(n: int, seed: int) -> np.ndarray:
    """Rate-independent selection order: indices sorted by hash(seed, index)."""
    return np.argsort(rng.index_hash(seed, n), kind="stable")


def subsample(dataset: Dataset, spec: SubsampleSpec) -> Dataset:
    """Uniform without-replacement subset of a training split.

    The first ``max(1, floor(rate * n))`` indices of :func:`subsample_order`
    are kept, in original order, so a lower rate always selects a subset of a
    higher rate's selection under the same seed.
    """
    if dataset.split != "train":
        raise ConfigError("only training splits are subsampled")
    n = len(dataset)
    if spec.rate == 1.0:
        return dataset
    keep = np.sort(subsample_order(n, spec.seed)[: spec.size(n)])
    return dataset.take(keep, descriptor=f"{dataset.descriptor}|subsample(rate={spec.rate!r},seed={spec.seed})")
