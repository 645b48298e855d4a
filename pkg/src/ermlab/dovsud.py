"""Gram matrices of quenched measures and their mean/variance split.

An exchangeable PSD matrix is the second-moment matrix of a quenched
random measure on sequences.  For sequence measures given by t-indexed
kernels the split is explicit: the off-diagonal part is the Gram matrix
of the kernel mean functions ``xi_i(t)`` in L2 of the unit interval,
and the diagonal adds the t-averaged conditional variance ``a_i``.

The Hilbert space is represented by dyadic step functions at depth
``m``: inner products are exact cell averages, the only approximation
relative to continuum kernels being the O(4^-m) grid error.  Real
alphabets enter through first and second moments per t-cell, which is
all the correspondence consumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .erm import Kernel
from .errors import ValidationError
from .rng import SeedContext, subset_uniforms, substream

PSD_SLACK = 1e-9
MOMENT_TOL = 1e-12


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric PSD matrix (up to numerical slack) of replica moments."""

    entries: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.entries, dtype=np.float64)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValidationError("Gram matrix must be square")
        if not np.allclose(r, r.T, atol=1e-9, rtol=0.0):
            raise ValidationError("Gram matrix must be symmetric")
        scale = max(np.trace(r) / len(r), 1.0) if len(r) else 1.0
        if len(r) and np.linalg.eigvalsh(r).min() < -PSD_SLACK * scale:
            raise ValidationError("Gram matrix is indefinite beyond slack")
        object.__setattr__(self, "entries", 0.5 * (r + r.T))

    @property
    def n(self) -> int:
        return len(self.entries)

    def to_json(self) -> str:
        return json.dumps(
            {"n": self.n, "entries": self.entries.ravel().tolist()}, sort_keys=True
        )

    @classmethod
    def from_json(cls, text: str) -> "GramMatrix":
        obj = json.loads(text)
        return cls(np.asarray(obj["entries"]).reshape(obj["n"], obj["n"]))


@dataclass(frozen=True)
class DSDecomposition:
    """Per index: a step function xi_i on [0,1) and a variance mass a_i."""

    grid_depth: int
    xi: np.ndarray  # (n, 2^m)
    a: np.ndarray  # (n,)

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=np.float64)
        a = np.asarray(self.a, dtype=np.float64)
        if xi.ndim != 2 or xi.shape[1] != 2**self.grid_depth:
            raise ValidationError("xi must be (n, 2^grid_depth)")
        if a.shape != (xi.shape[0],) or np.any(a < 0):
            raise ValidationError("a must be non-negative, one entry per index")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "a", a)

    def to_json(self) -> str:
        return json.dumps(
            {
                "grid_depth": self.grid_depth,
                "xi": self.xi.ravel().tolist(),
                "a": self.a.tolist(),
                "n": len(self.a),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "DSDecomposition":
        obj = json.loads(text)
        n = obj["n"]
        return cls(
            grid_depth=obj["grid_depth"],
            xi=np.asarray(obj["xi"]).reshape(n, -1),
            a=np.asarray(obj["a"]),
        )


@dataclass(frozen=True)
class MomentKernel:
    """First and second moment per t-cell of a real-alphabet kernel."""

    grid_depth: int
    mean: np.ndarray
    second_moment: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64)
        s = np.asarray(self.second_moment, dtype=np.float64)
        if m.shape != (2**self.grid_depth,) or s.shape != m.shape:
            raise ValidationError("moment tables must be (2^grid_depth,)")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "second_moment", s)


def moments_from_kernel(kernel: Kernel) -> MomentKernel:
    values = np.asarray(kernel.alphabet, dtype=np.float64)
    return MomentKernel(
        grid_depth=kernel.grid_depth,
        mean=kernel.probs @ values,
        second_moment=kernel.probs @ values**2,
    )


def decompose_from_kernels(kernels) -> DSDecomposition:
    """Read the mean functions and variance masses off kernel moments."""
    moments = [
        k if isinstance(k, MomentKernel) else moments_from_kernel(k) for k in kernels
    ]
    depth = moments[0].grid_depth
    if any(m.grid_depth != depth for m in moments):
        raise ValidationError("kernels must share one grid depth")
    xi = np.stack([m.mean for m in moments])
    var = np.stack([m.second_moment - m.mean**2 for m in moments])
    if np.any(var < -MOMENT_TOL):
        raise ValidationError("second moment below squared mean beyond tolerance")
    a = np.clip(var, 0.0, None).mean(axis=1)
    return DSDecomposition(grid_depth=depth, xi=xi, a=a)


def reconstruct(d: DSDecomposition) -> GramMatrix:
    """R_ij = <xi_i, xi_j> + delta_ij a_i with exact grid inner products."""
    cells = 2**d.grid_depth
    r = (d.xi @ d.xi.T) / cells + np.diag(d.a)
    return GramMatrix(r)


class GaussianSampler:
    """Centered Gaussian vectors with a prescribed covariance.

    The factor comes from an eigendecomposition with negative
    eigenvalues clipped at zero; normals are inverse-CDF transforms of
    the hash uniforms, so draws are reproducible and batch-addressable.
    """

    def __init__(self, gram: GramMatrix, ctx: SeedContext):
        r = gram.entries
        scale = max(np.trace(r) / max(gram.n, 1), 1e-30)
        evals, evecs = np.linalg.eigh(r)
        if evals.min() < -PSD_SLACK * scale:
            raise ValidationError("covariance is indefinite beyond slack")
        evals = np.where(evals < PSD_SLACK * scale, 0.0, evals)
        self.gram = gram
        self.factor = evecs * np.sqrt(evals)
        self.ctx = ctx

    def draw(self, count: int, batch: int = 0) -> np.ndarray:
        n = self.gram.n
        bctx = substream(self.ctx, f"batch-{batch}")
        sample_idx, dim_idx = np.meshgrid(
            np.arange(count), np.arange(n), indexing="ij"
        )
        keys = np.stack(
            [sample_idx.ravel() + 1, dim_idx.ravel() + count + 1], axis=1
        )
        u = subset_uniforms(bctx, keys).reshape(count, n)
        z = ndtri(u + 2.0**-54)
        return z @ self.factor.T


def gaussian_sampler(r: GramMatrix, ctx: SeedContext) -> GaussianSampler:
    return GaussianSampler(r, ctx)


def estimate_gram(samples: np.ndarray) -> GramMatrix:
    """Entrywise second-moment estimate; the measure is centered."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("need at least two sample vectors")
    return GramMatrix(x.T @ x / x.shape[0])


def quenched_covariance(kernels) -> np.ndarray:
    """Exhaustive second-moment matrix of the product-mixture measure.

    For quenched kernels the measure is the t-mixture of the product of
    the per-index kernels, so R_ij (i != j) is the t-average of
    mean_i(t) mean_j(t) and R_ii the t-averaged second moment; the sums
    over dyadic t-cells and alphabet values are exact.
    """
    moments = [
        k if isinstance(k, MomentKernel) else moments_from_kernel(k) for k in kernels
    ]
    means = np.stack([m.mean for m in moments])
    r = means @ means.T / means.shape[1]
    np.fill_diagonal(r, [m.second_moment.mean() for m in moments])
    return r
