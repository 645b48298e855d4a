"""Skew-product tuples of middle-symmetric functions.

A tuple ``(f_0, ..., f_k)`` assigns to every finite subset ``e`` of the
ground set a value ``f_{|e|}((x_a)_{a subset of e})``: level-``i``
components consume one input point per subset of ``{1, ..., i}``.
Middle symmetry means each ``f_i`` is invariant when a permutation of
``{1, ..., i}`` is applied to the subset-indexed arguments, which is
exactly what makes evaluation independent of how ``e`` is relabeled
onto ``{1, ..., |e|}``.

Components come in two interchangeable forms: opaque callables taking a
``{SubsetKey: point}`` mapping, and grid functions that are piecewise
constant on dyadic cells of each coordinate.  Grid functions are
symmetric by construction (cell lookups are canonicalized over the
middle permutation group) and serialize to JSON; opaque callables can
only be spot-checked with ``check_middle_symmetry``.

Input points are floats when ``input_arity == 1`` and tuples of
``input_arity`` floats otherwise.  Levels are capped at ``k <= 4``
because the per-subset bookkeeping grows doubly exponentially.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .rng import SeedContext, SubsetKey, substream, uniform_at

MAX_K = 4


def subsets_of(elements, max_size=None) -> list[SubsetKey]:
    """All subsets of ``elements`` (size <= max_size) in (size, lex) order."""
    elements = tuple(sorted(elements))
    if max_size is None:
        max_size = len(elements)
    out = []
    for size in range(min(max_size, len(elements)) + 1):
        for combo in itertools.combinations(elements, size):
            out.append(SubsetKey(combo))
    return out


def _relabel_subset(a: SubsetKey, mapping: dict) -> SubsetKey:
    return SubsetKey(tuple(sorted(mapping[x] for x in a.elements)))


@dataclass(frozen=True)
class GridComponent:
    """Level-``i`` component, piecewise constant on dyadic cells.

    ``table`` carries one pair of axes per subset of ``{1, ..., level}``
    in (size, lex) order, ``arity`` consecutive axes per subset, each of
    length ``2**grid_depth``.  Evaluation canonicalizes the cell index
    over the middle permutation group, so the component is middle
    symmetric regardless of the stored table.
    """

    level: int
    grid_depth: int
    arity: int
    table: np.ndarray

    def __post_init__(self):
        expected = (2**self.grid_depth,) * (2**self.level * self.arity)
        t = np.asarray(self.table)
        if t.shape != expected:
            raise ValidationError(
                f"grid table shape {t.shape} != expected {expected}"
            )
        object.__setattr__(self, "table", t)

    def _axis_subsets(self):
        return subsets_of(range(1, self.level + 1))

    def __call__(self, inputs: dict):
        cells = 2**self.grid_depth
        axis_keys = self._axis_subsets()
        idx = {}
        for a in axis_keys:
            point = inputs[a]
            coords = (point,) if self.arity == 1 else tuple(point)
            idx[a] = tuple(min(int(c * cells), cells - 1) for c in coords)
        best = None
        for perm in itertools.permutations(range(1, self.level + 1)):
            mapping = {i + 1: perm[i] for i in range(self.level)}
            cand = tuple(
                c
                for a in axis_keys
                for c in idx[_relabel_subset(a, mapping)]
            )
            if best is None or cand < best:
                best = cand
        return self.table[best]

    def to_json(self) -> str:
        return json.dumps(
            {
                "level_k": self.level,
                "grid_depth": self.grid_depth,
                "arity": self.arity,
                "table": np.asarray(self.table).ravel().tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "GridComponent":
        obj = json.loads(text)
        shape = (2 ** obj["grid_depth"],) * (2 ** obj["level_k"] * obj["arity"])
        table = np.asarray(obj["table"]).reshape(shape)
        return cls(obj["level_k"], obj["grid_depth"], obj["arity"], table)


@dataclass(frozen=True)
class SkewProductTuple:
    """The directing data ``(f_0, ..., f_k)`` for exchangeable arrays."""

    k: int
    components: tuple
    input_arity: int = 1
    codomains: tuple = field(default=None)

    def __post_init__(self):
        if not 0 <= self.k <= MAX_K:
            raise ValidationError(f"k must lie in [0, {MAX_K}], got {self.k}")
        if len(self.components) != self.k + 1:
            raise ValidationError(
                f"need k+1={self.k + 1} components, got {len(self.components)}"
            )
        object.__setattr__(self, "components", tuple(self.components))
        if self.codomains is not None:
            object.__setattr__(self, "codomains", tuple(self.codomains))


@dataclass
class ArraySlice:
    """Values on all subsets of ``[n]`` of size at most ``k``."""

    n: int
    k: int
    values: dict

    def __post_init__(self):
        expected = set(subsets_of(range(1, self.n + 1), self.k))
        if set(self.values) != expected:
            raise ValidationError("slice keys must be exactly all subsets of size <= k")

    def vector(self) -> np.ndarray:
        """Values at singletons {1}, ..., {n}, for sequence-indexed slices."""
        return np.asarray([self.values[SubsetKey((i,))] for i in range(1, self.n + 1)])


def evaluate(tup: SkewProductTuple, e: SubsetKey, inputs: dict):
    """Apply ``f_{|e|}`` after relabeling ``e`` canonically onto [|e|]."""
    if len(e) > tup.k:
        raise ValidationError(f"|e|={len(e)} exceeds k={tup.k}")
    mapping = {x: t + 1 for t, x in enumerate(e.elements)}
    local = {}
    for a in subsets_of(e.elements):
        if a not in inputs:
            raise ValidationError(f"missing input for subset {a.elements} of {e.elements}")
        local[_relabel_subset(a, mapping)] = inputs[a]
    return tup.components[len(e)](local)


def evaluate_array(tup: SkewProductTuple, n: int, inputs: dict) -> ArraySlice:
    """The combined map: one output per subset of [n] of size <= k."""
    out = {}
    for e in subsets_of(range(1, n + 1), tup.k):
        out[e] = evaluate(tup, e, {a: inputs[a] for a in subsets_of(e.elements)})
    return ArraySlice(n=n, k=tup.k, values=out)


def compose(g: SkewProductTuple, f: SkewProductTuple) -> SkewProductTuple:
    """The tuple ``h`` with h_i((x_a)) = g_i((f_{|a|}((x_b)_{b in a}))_a)."""
    if g.k != f.k:
        raise ValidationError(f"composition needs equal k, got {g.k} != {f.k}")
    if g.codomains is not None and f.codomains is not None:
        if tuple(g.codomains) != tuple(f.codomains):
            # g's input spaces are recorded in its codomains slot only when
            # the caller supplies them; mismatch means the spaces disagree
            raise ValidationError("codomains of f do not match input spaces of g")

    def make_h(i):
        def h_i(local_inputs: dict):
            mid = {}
            for a in subsets_of(range(1, i + 1)):
                sub = {b: local_inputs[b] for b in subsets_of(a.elements)}
                mid[a] = evaluate(f, a, sub)
            return g.components[i](mid)

        return h_i

    return SkewProductTuple(
        k=g.k,
        components=tuple(make_h(i) for i in range(g.k + 1)),
        input_arity=f.input_arity,
        codomains=g.codomains,
    )


def identity_tuple(k: int, input_arity: int = 1) -> SkewProductTuple:
    """Each level returns its top argument, so evaluation echoes inputs."""

    def make(i):
        top = SubsetKey(tuple(range(1, i + 1)))
        return lambda inputs: inputs[top]

    return SkewProductTuple(k=k, components=tuple(make(i) for i in range(k + 1)),
                            input_arity=input_arity)


@dataclass
class SymmetryReport:
    probes: int
    max_deviation: list  # per level: float deviation or disagreement count
    symmetric: bool


def _random_point(ctx: SeedContext, arity: int, counter: int):
    if arity == 1:
        return uniform_at(ctx, SubsetKey((counter,)))
    return tuple(
        uniform_at(substream(ctx, f"c{c}"), SubsetKey((counter,)))
        for c in range(arity)
    )


def check_middle_symmetry(tup: SkewProductTuple, probes: int, ctx: SeedContext) -> SymmetryReport:
    """Probe each level with random permutations of its middle arguments."""
    if probes < 1:
        raise ValidationError("probes must be >= 1")
    deviations = []
    counter = itertools.count(1)
    for i in range(tup.k + 1):
        keys = subsets_of(range(1, i + 1))
        perms = list(itertools.permutations(range(1, i + 1)))
        worst = 0.0
        for p in range(probes):
            pctx = substream(ctx, f"level{i}-probe{p}")
            inputs = {a: _random_point(pctx, tup.input_arity, next(counter)) for a in keys}
            which = int(uniform_at(substream(pctx, "perm"), SubsetKey((1,))) * len(perms))
            perm = perms[min(which, len(perms) - 1)]
            mapping = {t + 1: perm[t] for t in range(i)}
            permuted = {a: inputs[_relabel_subset(a, mapping)] for a in keys}
            base = tup.components[i](inputs)
            alt = tup.components[i](permuted)
            worst = max(worst, _value_gap(base, alt))
        deviations.append(worst)
    return SymmetryReport(probes=probes, max_deviation=deviations,
                          symmetric=all(d == 0 for d in deviations))


def _value_gap(a, b) -> float:
    if isinstance(a, (tuple, list, np.ndarray)):
        return max(_value_gap(x, y) for x, y in zip(a, b))
    if isinstance(a, (int, float, np.integer, np.floating)):
        return abs(float(a) - float(b))
    return 0.0 if a == b else 1.0
