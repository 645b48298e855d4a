"""Samplers for exchangeable arrays and exchangeable random measures.

The central object is a directing tuple whose components consume a pair
``(u, v)`` of uniforms per subset.  Conditioning on the ``u`` layer
turns the array law into a random measure: freezing the ``u`` seed
("quenching") fixes the measure, and repeated draws with fresh ``v``
noise are conditionally i.i.d. samples from it (the replica trick).

For sequence-indexed structures there is the equivalent kernel-mixture
form: a directing measure ``gamma`` on t-indexed kernels.  Sampling
draws one kernel per position i.i.d. from ``gamma`` (quenched), then
each replica draws its own mixing parameter ``t`` and fills positions
independently from the quenched kernels at that ``t``.  Each replica is
an independent draw of the whole array from the same quenched measure,
which is itself the t-mixture; hence ``t`` is fresh per replica while
kernels are shared.

Row-column exchangeable matrices get their own four-uniform directing
function, with an exact marginalization that reads a kernel family off
a grid directing function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, ValidationError
from .rng import (
    SeedContext,
    SubsetKey,
    index_uniforms,
    subset_uniforms,
    substream,
    uniform_at,
)
from .skewprod import ArraySlice, SkewProductTuple, evaluate, subsets_of

PROB_TOL = 1e-12


@dataclass(frozen=True)
class Kernel:
    """A t-indexed probability kernel on a finite alphabet, dyadic in t.

    ``probs[c, a]`` is the chance of ``alphabet[a]`` on t-cell ``c``.
    """

    grid_depth: int
    alphabet: tuple
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (2**self.grid_depth, len(self.alphabet)):
            raise ValidationError(
                f"kernel table shape {p.shape} != "
                f"({2 ** self.grid_depth}, {len(self.alphabet)})"
            )
        if np.any(p < -PROB_TOL) or np.any(np.abs(p.sum(axis=1) - 1.0) > PROB_TOL):
            raise ValidationError("kernel rows must be probability vectors")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "alphabet", tuple(self.alphabet))

    @classmethod
    def binary(cls, p_plus) -> "Kernel":
        """Kernel on {-1, +1} from the per-cell probability of +1."""
        p_plus = np.atleast_1d(np.asarray(p_plus, dtype=np.float64))
        depth = int(np.log2(len(p_plus)))
        if 2**depth != len(p_plus):
            raise ValidationError("p_plus length must be a power of two")
        probs = np.stack([1.0 - p_plus, p_plus], axis=1)
        return cls(grid_depth=depth, alphabet=(-1, 1), probs=probs)

    def cell(self, t: float) -> int:
        return min(int(t * 2**self.grid_depth), 2**self.grid_depth - 1)

    def mean(self) -> np.ndarray:
        """Per-cell mean value, for numeric alphabets."""
        return self.probs @ np.asarray(self.alphabet, dtype=np.float64)

    def sample(self, t, u):
        """Inverse-CDF draw(s) at mixing parameter t from uniforms u."""
        row = self.probs[self.cell(t)]
        edges = np.cumsum(row)
        idx = np.searchsorted(edges, np.asarray(u), side="right")
        idx = np.minimum(idx, len(self.alphabet) - 1)
        return np.asarray(self.alphabet)[idx]


@dataclass(frozen=True)
class DirectingRandomMeasure:
    """A measure on kernels: atomic weights plus atoms, or a generator.

    Generative form supplies ``generator(ctx, count) -> list[Kernel]``
    drawing i.i.d. kernels.
    """

    weights: np.ndarray = None
    kernels: tuple = None
    generator: object = None

    def __post_init__(self):
        if self.generator is None:
            if self.weights is None or self.kernels is None:
                raise ValidationError("atomic measure needs weights and kernels")
            w = np.asarray(self.weights, dtype=np.float64)
            if np.any(w < -PROB_TOL) or abs(w.sum() - 1.0) > PROB_TOL:
                raise ValidationError("atom weights must be >= 0 and sum to 1")
            if len(w) != len(self.kernels):
                raise ValidationError("one kernel per weight required")
            object.__setattr__(self, "weights", w)
            object.__setattr__(self, "kernels", tuple(self.kernels))

    @property
    def atomic(self) -> bool:
        return self.generator is None

    def draw_kernels(self, ctx: SeedContext, count: int) -> list:
        if self.atomic:
            u = index_uniforms(ctx, count)
            idx = np.searchsorted(np.cumsum(self.weights), u, side="right")
            idx = np.minimum(idx, len(self.kernels) - 1)
            return [self.kernels[j] for j in idx]
        return list(self.generator(ctx, count))


@dataclass(frozen=True)
class TwoLayerDirecting:
    """Directing tuple whose inputs are (u, v) pairs per subset."""

    tuple: SkewProductTuple

    def __post_init__(self):
        if self.tuple.input_arity != 2:
            raise ValidationError("two-layer directing needs input_arity == 2")


@dataclass(frozen=True)
class QuenchedERM:
    """A directing tuple with its u layer frozen: one realized measure."""

    directing: TwoLayerDirecting
    u_context: SeedContext
    n: int


@dataclass(frozen=True)
class RowColumnDirecting:
    """Directing function of four uniforms for row-column exchangeability.

    Grid form: ``table[zc, uc, vc, wc]`` holds alphabet values at dyadic
    cells of depth ``grid_depth`` per coordinate.
    """

    grid_depth: int = None
    table: np.ndarray = None
    alphabet: tuple = None
    func: object = None

    def __post_init__(self):
        if self.func is None:
            t = np.asarray(self.table)
            if t.shape != (2**self.grid_depth,) * 4:
                raise ValidationError("table must be (2^m,)*4")
            object.__setattr__(self, "table", t)

    def __call__(self, z, u, v, w):
        if self.func is not None:
            return self.func(z, u, v, w)
        m = 2**self.grid_depth
        idx = tuple(np.minimum((np.asarray(c) * m).astype(int), m - 1)
                    for c in (z, u, v, w))
        return self.table[idx]


def _uv_inputs(n: int, k: int, u_ctx: SeedContext, v_ctx: SeedContext) -> dict:
    inputs = {}
    for a in subsets_of(range(1, n + 1), k):
        inputs[a] = (uniform_at(u_ctx, a), uniform_at(v_ctx, a))
    return inputs


def sample_slice(directing: TwoLayerDirecting, n: int, ctx: SeedContext) -> ArraySlice:
    """One unconditioned draw of the exchangeable array on [n]."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    return _sample_slice_uv(directing, n, substream(ctx, "U"), substream(ctx, "V"))


def _sample_slice_uv(directing, n, u_ctx, v_ctx) -> ArraySlice:
    tup = directing.tuple
    inputs = _uv_inputs(n, tup.k, u_ctx, v_ctx)
    out = {}
    for e in subsets_of(range(1, n + 1), tup.k):
        out[e] = evaluate(tup, e, {a: inputs[a] for a in subsets_of(e.elements)})
    return ArraySlice(n=n, k=tup.k, values=out)


def quench(directing: TwoLayerDirecting, n: int, u_seed: int) -> QuenchedERM:
    """Freeze the u layer; the result is one realized random measure."""
    return QuenchedERM(directing=directing, u_context=SeedContext(u_seed, ("U",)), n=n)


def draw_replicas(q: QuenchedERM, r: int, ctx: SeedContext) -> list:
    """Conditionally i.i.d. draws from one quenched measure."""
    if r < 1:
        raise ValidationError("replica count must be >= 1")
    return [
        _sample_slice_uv(q.directing, q.n, q.u_context, substream(ctx, f"rep-{rep}"))
        for rep in range(r)
    ]


def replica_matrix(replicas) -> np.ndarray:
    """Stack sequence-indexed replicas into an (r, n) value matrix."""
    if isinstance(replicas, np.ndarray):
        return replicas
    return np.stack([s.vector() if isinstance(s, ArraySlice) else np.asarray(s)
                     for s in replicas])


def empirical_measure(replicas, cylinder) -> float:
    """Fraction of positions whose replica column matches the cylinder.

    ``cylinder`` is a list of (replica_index, value) constraints.
    """
    mat = replica_matrix(replicas)
    if mat.size == 0 or len(mat) == 0:
        raise ValidationError("at least one replica required")
    mask = np.ones(mat.shape[1], dtype=bool)
    for rep, value in cylinder:
        if not 0 <= rep < mat.shape[0]:
            raise ValidationError(f"replica index {rep} out of range")
        mask &= mat[rep] == value
    return float(mask.mean())


def sample_kernel_mixture(gamma: DirectingRandomMeasure, n: int, r: int,
                          ctx: SeedContext) -> np.ndarray:
    """Draw r replicas of a sequence-indexed array directed by ``gamma``.

    Kernels are quenched once; each replica draws a fresh mixing
    parameter t and then fills the n positions independently.
    """
    if n < 1 or r < 1:
        raise ValidationError("n and r must be >= 1")
    kernels = gamma.draw_kernels(substream(ctx, "atoms"), n)
    alphabet = kernels[0].alphabet
    for kern in kernels:
        if kern.alphabet != alphabet:
            raise ValidationError("all kernels must share one alphabet")
    values = np.asarray(alphabet)
    out = np.empty((r, n), dtype=values.dtype)
    for rep in range(r):
        t = uniform_at(substream(ctx, "t"), SubsetKey((rep + 1,)))
        u = index_uniforms(substream(ctx, f"x-{rep}"), n)
        rows = np.stack([kern.probs[kern.cell(t)] for kern in kernels])
        edges = np.cumsum(rows, axis=1)
        idx = (u[:, None] >= edges).sum(axis=1)
        out[rep] = values[np.minimum(idx, len(alphabet) - 1)]
    return out


def sample_row_column(f: RowColumnDirecting, rows: int, cols: int,
                      ctx: SeedContext) -> np.ndarray:
    """Matrix draw: shared z, per-row u, per-column v, per-cell w."""
    if rows < 1 or cols < 1:
        raise ValidationError("rows and cols must be >= 1")
    z = uniform_at(substream(ctx, "Z"), SubsetKey((1,)))
    u = index_uniforms(substream(ctx, "U"), rows)
    v = index_uniforms(substream(ctx, "V"), cols)
    i_idx, n_idx = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    pair_keys = np.stack(
        [i_idx.ravel() + 1, n_idx.ravel() + rows + 1], axis=1
    )
    w = subset_uniforms(substream(ctx, "W"), pair_keys).reshape(rows, cols)
    if f.func is not None:
        out = np.array([[f(z, u[i], v[n], w[i, n]) for n in range(cols)]
                        for i in range(rows)])
        return out
    return f(np.full((rows, cols), z), u[:, None] * np.ones(cols), v[None, :] * np.ones((rows, 1)), w)


def rce_kernel_readoff(f: RowColumnDirecting, z: float, u: float) -> Kernel:
    """Exact w-marginalization of a grid directing function at fixed (z, u).

    Returns the kernel t -> law of f(z, u, t, W) with W uniform.
    """
    if f.func is not None:
        raise CapabilityError("kernel read-off needs the grid form")
    m = 2**f.grid_depth
    zc = min(int(z * m), m - 1)
    uc = min(int(u * m), m - 1)
    block = f.table[zc, uc]  # (t-cell, w-cell)
    alphabet = tuple(sorted(set(np.asarray(block).ravel().tolist())))
    probs = np.stack(
        [(block == a).mean(axis=1) for a in alphabet], axis=1
    )
    return Kernel(grid_depth=f.grid_depth, alphabet=alphabet, probs=probs)


# ---------------------------------------------------------------------------
# Built-in directing structures and batch samplers.
#
# Batch samplers return {key: values} with one array entry per sample; the
# statistical test machinery consumes this shape directly.
# ---------------------------------------------------------------------------


def bernoulli_directing(p: float = 0.5) -> TwoLayerDirecting:
    """k=1 tuple whose singleton entries are v-coin Bernoulli values."""

    def f0(inputs):
        return 0

    def f1(inputs):
        _, v = inputs[SubsetKey((1,))]
        return 1 if v < p else 0

    return TwoLayerDirecting(
        SkewProductTuple(k=1, components=(f0, f1), input_arity=2)
    )


def bipartition_directing() -> TwoLayerDirecting:
    """Two-sided partition measure: u assigns sides, one v-coin picks a side.

    Pair {i, j} gets 1 exactly when both endpoints lie on the chosen
    side, so each quenched draw is an all-or-nothing edge slice.
    """

    def f0(inputs):
        return 0

    def f1(inputs):
        return 0

    def f2(inputs):
        coin = inputs[SubsetKey(())][1] < 0.5
        side_1 = inputs[SubsetKey((1,))][0] < 0.5
        side_2 = inputs[SubsetKey((2,))][0] < 0.5
        target = coin
        return 1 if (side_1 == target and side_2 == target) else 0

    return TwoLayerDirecting(
        SkewProductTuple(k=2, components=(f0, f1, f2), input_arity=2)
    )


def erpm_directing(kernel: Kernel) -> TwoLayerDirecting:
    """Product measure with per-position kernels lambda(u_i, .) (quenched u)."""

    def f0(inputs):
        return 0

    def f1(inputs):
        u, v = inputs[SubsetKey((1,))]
        return kernel.sample(u, v).item()

    return TwoLayerDirecting(
        SkewProductTuple(k=1, components=(f0, f1), input_arity=2)
    )


def iid_coin_sampler(n: int, p: float = 0.5):
    """Batch sampler: n i.i.d. +-1 coins per sample, keys 1..n."""

    def sample(ctx: SeedContext, count: int):
        cols = {}
        for i in range(1, n + 1):
            u = subset_uniforms(ctx, np.stack(
                [np.full(count, i), np.arange(n + 1, n + 1 + count)], axis=1))
            cols[i] = np.where(u < p, 1, -1)
        return cols

    return sample


def biased_coin_sampler(n: int, p_first: float = 0.9):
    """Deliberately non-exchangeable: position 1 biased, the rest fair."""

    def sample(ctx: SeedContext, count: int):
        cols = {}
        for i in range(1, n + 1):
            u = subset_uniforms(ctx, np.stack(
                [np.full(count, i), np.arange(n + 1, n + 1 + count)], axis=1))
            p = p_first if i == 1 else 0.5
            cols[i] = np.where(u < p, 1, -1)
        return cols

    return sample


def bipartition_sampler(n: int):
    """Batch sampler for the two-sided partition measure, keys (i, j)."""

    def sample(ctx: SeedContext, count: int):
        u_ctx, v_ctx = substream(ctx, "U"), substream(ctx, "V")
        sides = np.empty((count, n), dtype=bool)
        for i in range(1, n + 1):
            u = subset_uniforms(u_ctx, np.stack(
                [np.full(count, i), np.arange(n + 1, n + 1 + count)], axis=1))
            sides[:, i - 1] = u < 0.5
        coin = index_uniforms(v_ctx, count) < 0.5
        cols = {}
        for i in range(1, n + 1):
            for j in range(i + 1, n + 1):
                both = sides[:, i - 1] == coin
                both &= sides[:, j - 1] == coin
                cols[(i, j)] = both.astype(int)
        return cols

    return sample


def erpm_sampler(kernel: Kernel, n: int):
    """Batch sampler for the per-position kernel product measure."""
    mean_plus = kernel.probs[:, kernel.alphabet.index(1)] if 1 in kernel.alphabet else None

    def sample(ctx: SeedContext, count: int):
        u_ctx, v_ctx = substream(ctx, "U"), substream(ctx, "V")
        cols = {}
        m = 2**kernel.grid_depth
        for i in range(1, n + 1):
            keys = np.stack(
                [np.full(count, i), np.arange(n + 1, n + 1 + count)], axis=1)
            t = subset_uniforms(u_ctx, keys)
            v = subset_uniforms(v_ctx, keys)
            cells = np.minimum((t * m).astype(int), m - 1)
            if mean_plus is not None and len(kernel.alphabet) == 2:
                cols[i] = np.where(v < mean_plus[cells], 1, -1)
            else:
                rows = kernel.probs[cells]
                edges = np.cumsum(rows, axis=1)
                idx = (v[:, None] >= edges).sum(axis=1)
                cols[i] = np.asarray(kernel.alphabet)[
                    np.minimum(idx, len(kernel.alphabet) - 1)]
        return cols

    return sample
