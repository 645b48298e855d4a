"""Tree-structured weights and martingale families of step functions.

Two ingredients make up the hierarchical ansatz for directing measures:

* cascade weights: every node of a finite rooted tree receives the
  decreasingly ordered points of a Poisson process with intensity
  ``m_s x^{-1-m_s} dx`` (sampled as cumulative-exponential sums raised
  to ``-1/m_s``); a leaf's weight is the normalized product of the
  point values along its root-leaf path.  The tree's branching factor
  is the truncation of the infinite branching of the ideal cascade:
  the kept points are the largest ones, and the discarded tail mass
  shrinks as the branching grows.

* branchingales: each tree node owns a fresh block of binary digits of
  the unit interval, and a node's function is a step function of the
  digit blocks along its own path.  Monotonicity of the induced
  sigma-algebras along paths and conditional independence of sibling
  subtrees over their common ancestor hold structurally, because the
  digit blocks are disjoint and the digits are i.i.d. fair coins under
  Lebesgue measure.  The martingale property is an exact cell-average
  recursion.  Increment specs use dyadic values so the recursion holds
  with zero floating-point defect.

Cascade weights on the leaf functions of a homogeneous branchingale
give an atomic directing measure supported on a hierarchically
distributed set.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import beta as _beta_dist

from ._dist import exponentials
from .erm import DirectingRandomMeasure, Kernel
from .errors import CapabilityError, ValidationError
from .rng import SeedContext, index_uniforms, substream

MIN_CASCADE_POINTS = 64
WEIGHT_TOL = 1e-12


def phi(x):
    """The logistic squashing e^x / (e^x + e^-x), mapping R onto (0, 1)."""
    return 0.5 * (1.0 + np.tanh(np.asarray(x, dtype=np.float64)))


@dataclass(frozen=True)
class TreeSpec:
    """Rooted tree, all leaves at depth ``depth``, ``branching`` children each."""

    depth: int
    branching: int

    def __post_init__(self):
        if self.depth < 0:
            raise ValidationError("depth must be >= 0")
        if self.branching < 2:
            raise ValidationError("branching must be >= 2")

    def nodes(self, level: int):
        return itertools.product(range(self.branching), repeat=level)

    def leaves(self):
        return self.nodes(self.depth)

    @property
    def leaf_count(self) -> int:
        return self.branching**self.depth


@dataclass(frozen=True)
class WeightingScheme:
    """Random weights plus quantile access to the per-atom value laws.

    ``quantiles`` is one callable (components i.i.d. across atoms) or a
    sequence of per-atom callables u -> value; ``None`` means the joint
    law has no quantile description and cannot be realized here.
    ``weights_gen(ctx, k)`` draws the raw weight vector.
    """

    quantiles: object
    k_max: int
    weights_gen: object


def fixed_weights(w):
    w = np.asarray(w, dtype=np.float64)

    def gen(ctx: SeedContext, k: int) -> np.ndarray:
        if k != len(w):
            raise ValidationError("fixed weight vector has the wrong length")
        return w.copy()

    return gen


def gem_weights(m: float):
    """Stick-breaking weights for the two-parameter family at (m, 0)."""

    def gen(ctx: SeedContext, k: int) -> np.ndarray:
        return gem_stick_breaking(m, k, ctx)

    return gen


def gem_stick_breaking(m: float, sticks: int, ctx: SeedContext) -> np.ndarray:
    """First ``sticks`` stick-breaking weights, in stick order (not sorted)."""
    if not 0.0 < m < 1.0:
        raise ValidationError("stick-breaking parameter must lie in (0, 1)")
    u = index_uniforms(ctx, sticks)
    j = np.arange(1, sticks + 1)
    w = _beta_dist.ppf(np.clip(u + 2.0**-54, None, 1.0 - 1e-16), 1.0 - m, j * m)
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - w)[:-1]])
    return w * remaining


def weighting_to_gamma(ws: WeightingScheme, grid_depth: int,
                       ctx: SeedContext) -> DirectingRandomMeasure:
    """Atomic measure sum_k v_k delta_{f_k} with f_k = phi of the k-th quantile.

    Each atom is represented on its own dyadic grid; formally the atoms
    act on disjoint digit blocks of one shared uniform, but digit
    extraction preserves Lebesgue measure, so the per-atom quotient
    grids carry the same functions.
    """
    if ws.quantiles is None:
        raise CapabilityError(
            "value law without quantile access and not i.i.d.; "
            "no constructive joint realization is available"
        )
    if callable(ws.quantiles):
        quantiles = [ws.quantiles] * ws.k_max
    else:
        quantiles = list(ws.quantiles)
        if len(quantiles) != ws.k_max:
            raise ValidationError("need one quantile transform per atom")
    cells = 2**grid_depth
    mid = (np.arange(cells) + 0.5) / cells
    kernels = []
    for q in quantiles:
        x = np.asarray([q(u) for u in mid], dtype=np.float64)
        kernels.append(Kernel.binary(phi(x)))
    weights = np.asarray(ws.weights_gen(substream(ctx, "weights"), ws.k_max),
                         dtype=np.float64)
    if np.any(weights < 0):
        raise ValidationError("weights must be non-negative")
    total = weights.sum()
    if total <= 0:
        raise ValidationError("weights must have positive mass")
    return DirectingRandomMeasure(weights=weights / total, kernels=kernels)


@dataclass(frozen=True)
class CascadeWeights:
    """Normalized leaf weights of a truncated cascade on ``tree``."""

    tree: TreeSpec
    m: tuple
    leaf_weights: np.ndarray  # shape (branching,) * depth

    def __post_init__(self):
        w = np.asarray(self.leaf_weights, dtype=np.float64)
        if w.shape != (self.tree.branching,) * self.tree.depth:
            raise ValidationError("leaf weights must be (branching,)*depth shaped")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValidationError("leaf weights must be >= 0 and sum to 1")
        object.__setattr__(self, "leaf_weights", w)
        object.__setattr__(self, "m", tuple(float(x) for x in self.m))

    def flat(self) -> np.ndarray:
        """Leaf weights in lexicographic leaf order."""
        return self.leaf_weights.ravel()

    def sum_squares(self) -> float:
        return float(np.sum(self.flat() ** 2))


def _poisson_points(m: float, count: int, ctx: SeedContext) -> np.ndarray:
    """Largest ``count`` points of the intensity m x^{-1-m} dx process."""
    gam = np.cumsum(exponentials(index_uniforms(ctx, count)))
    return gam ** (-1.0 / m)


def sample_cascade(tree: TreeSpec, m, ctx: SeedContext,
                   truncation: int | None = None) -> CascadeWeights:
    """Cascade weights on ``tree``; branching is the per-node truncation."""
    m = tuple(float(x) for x in m)
    if len(m) != tree.depth or tree.depth < 1:
        raise ValidationError("need one parameter per level and depth >= 1")
    if any(not 0.0 < x < 1.0 for x in m) or any(a >= b for a, b in zip(m, m[1:])):
        raise ValidationError("parameters must be strictly increasing in (0, 1)")
    if truncation is None:
        truncation = tree.branching
    if truncation != tree.branching:
        raise ValidationError("truncation is the tree branching factor")
    if truncation < MIN_CASCADE_POINTS:
        raise ValidationError(
            f"need at least {MIN_CASCADE_POINTS} points per node"
        )
    if tree.leaf_count > 10**7:
        raise CapabilityError("cascade exceeds the in-memory leaf budget")
    b = tree.branching
    weights = np.ones(())
    for level in range(1, tree.depth + 1):
        points = np.empty((b,) * level)
        for node in tree.nodes(level - 1):
            label = "n" + "/".join(str(t) for t in node)
            points[node] = _poisson_points(m[level - 1], b, substream(ctx, label))
        weights = weights[..., None] * points
    return CascadeWeights(tree=tree, m=m, leaf_weights=weights / weights.sum())


@dataclass(frozen=True)
class IncrementSpec:
    """Per-level refinement law for a branchingale.

    ``refine(level, parent, node_ctx)`` returns an array of shape
    ``parent.shape + (2**bits[level-1],)`` whose last-axis average
    reproduces ``parent`` exactly.
    """

    root_value: float
    bits: tuple
    refine: object
    label: str = "custom"


def zero_increments(root_value: float, depth: int, bits: int = 1) -> IncrementSpec:
    def refine(level, parent, node_ctx):
        return np.repeat(parent[..., None], 2**bits, axis=-1)

    return IncrementSpec(root_value=root_value, bits=(bits,) * depth,
                         refine=refine, label="zero")


def balanced_increments(root_value: float, deltas, proportional: bool = False) -> IncrementSpec:
    """One new bit per level; children sit at parent -+ delta in random order.

    ``deltas`` must be dyadic so cell averages recover parents exactly;
    proportional mode scales delta by min(parent, 1-parent) to stay in
    [0, 1].
    """
    deltas = tuple(float(d) for d in deltas)

    def refine(level, parent, node_ctx):
        d = deltas[level - 1]
        step = d * np.minimum(parent, 1.0 - parent) if proportional else d
        flip = index_uniforms(substream(node_ctx, "dir"), parent.size) < 0.5
        sign = np.where(flip.reshape(parent.shape), 1.0, -1.0)
        lo = parent - sign * step
        hi = parent + sign * step
        return np.stack([lo, hi], axis=-1)

    return IncrementSpec(root_value=root_value, bits=(1,) * len(deltas),
                         refine=refine, label="balanced")


@dataclass(frozen=True)
class Branchingale:
    """Node-indexed step functions forming a martingale along every path.

    Node ``v`` at level ``s`` owns table shape
    ``(2**bits[0], ..., 2**bits[s-1])``: one axis per digit block along
    its path.  Sibling subtrees refine through disjoint blocks, which
    enforces the conditional-independence half of the definition
    structurally.
    """

    tree: TreeSpec
    bits: tuple
    f: dict
    homogeneous: bool = True

    def node_table(self, node) -> np.ndarray:
        return self.f[tuple(node)]

    def leaf_tables(self) -> list:
        return [self.f[leaf] for leaf in self.tree.leaves()]

    def path_values(self, leaf, cell_index) -> np.ndarray:
        """Martingale values (f_root, ..., f_leaf) at one leaf-level cell."""
        leaf = tuple(leaf)
        out = []
        for level in range(self.tree.depth + 1):
            tab = self.f[leaf[:level]]
            out.append(float(np.asarray(tab)[tuple(cell_index[:level])]))
        return np.asarray(out)


def build_branchingale(tree: TreeSpec, spec: IncrementSpec,
                       ctx: SeedContext) -> Branchingale:
    """Grow tables level by level from one increment law per level."""
    if len(spec.bits) != tree.depth:
        raise ValidationError("increment spec must cover every level")
    f = {(): np.asarray(float(spec.root_value))}
    for level in range(1, tree.depth + 1):
        for node in tree.nodes(level):
            parent = f[node[:-1]]
            label = "b" + "/".join(str(t) for t in node)
            child = np.asarray(
                spec.refine(level, np.atleast_1d(parent) if parent.ndim == 0 else parent,
                            substream(ctx, label))
            )
            if parent.ndim == 0:
                child = child.reshape((2 ** spec.bits[level - 1],))
            expected = parent.shape + (2 ** spec.bits[level - 1],)
            if child.shape != expected:
                raise ValidationError(
                    f"refinement shape {child.shape} != expected {expected}"
                )
            if np.max(np.abs(child.mean(axis=-1) - parent)) != 0.0:
                raise ValidationError(
                    "refinement law must preserve conditional means exactly"
                )
            f[node] = child
    return Branchingale(tree=tree, bits=tuple(spec.bits), f=f, homogeneous=True)


@dataclass
class BranchingaleReport:
    max_martingale_defect: float
    homogeneous: bool
    conditional_independence_structural: bool


def check_branchingale(b: Branchingale) -> BranchingaleReport:
    """Exact cell-average recursion check plus the structural verdicts."""
    defect = 0.0
    for level in range(1, b.tree.depth + 1):
        for node in b.tree.nodes(level):
            child = np.asarray(b.f[node])
            parent = np.asarray(b.f[node[:-1]])
            defect = max(defect, float(np.max(np.abs(child.mean(axis=-1) - parent))))
    return BranchingaleReport(
        max_martingale_defect=defect,
        homogeneous=b.homogeneous,
        conditional_independence_structural=True,
    )


@dataclass(frozen=True)
class HierarchicalSet:
    """Leaf functions of a homogeneous branchingale."""

    depth: int
    leaf_functions: tuple

    @classmethod
    def from_branchingale(cls, b: Branchingale) -> "HierarchicalSet":
        if not b.homogeneous:
            raise ValidationError("hierarchically distributed sets need homogeneity")
        return cls(depth=b.tree.depth,
                   leaf_functions=tuple(np.asarray(t) for t in b.leaf_tables()))


def rsb_gamma(cascade: CascadeWeights, b: Branchingale) -> DirectingRandomMeasure:
    """Atomic measure: cascade weights on the branchingale's leaf functions.

    Leaf values are +1 probabilities of binary kernels (the logistic
    convention), so they must lie in [0, 1].
    """
    if cascade.tree != b.tree:
        raise ValidationError("cascade and branchingale must share one tree")
    kernels = []
    for leaf in b.tree.leaves():
        table = np.asarray(b.f[leaf], dtype=np.float64).ravel()
        if np.any(table < 0) or np.any(table > 1):
            raise ValidationError("leaf functions must take values in [0, 1]")
        size = 1
        while size < table.size:
            size *= 2
        if size != table.size:
            raise ValidationError("leaf tables must have power-of-two size")
        kernels.append(Kernel.binary(table))
    return DirectingRandomMeasure(weights=cascade.flat(), kernels=kernels)


def pd_second_moment_gem(m: float, draws: int, sticks: int,
                         ctx: SeedContext) -> np.ndarray:
    """Independent oracle for E sum v^2 under the (m, 0) weight law.

    Unnormalized stick truncation: the missing mass R after ``sticks``
    sticks contributes at most R^2 to the sum of squares, so no
    renormalization is applied and the truncation bias is O(E R^2).
    """
    out = np.empty(draws)
    for d in range(draws):
        w = gem_stick_breaking(m, sticks, substream(ctx, f"draw-{d}"))
        out[d] = np.sum(w * w)
    return out
