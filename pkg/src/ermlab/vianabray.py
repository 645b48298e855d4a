"""Dilute pairwise spin-glass engine: instances, exact tables, replicas.

An instance has a Poisson(alpha*N) number of couplings with endpoints
drawn uniformly and independently (self-loops allowed; they shift the
energy by a spin-independent constant) and i.i.d. symmetric coupling
values.  For N <= 24 everything downstream is exact: the log partition
function is accumulated over a Gray-code walk of all 2^N states with
O(degree) incremental energy updates, compensated summation, and a
periodic resynchronization that re-derives the energy from the state,
so closed-form anchors hold to ~1e-14.  Replicas are exact i.i.d.
draws from the full probability table.

Larger N would need MCMC, which is out of scope; requests beyond the
cap raise ``CapabilityError``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from . import erm
from ._dist import poisson_icdf
from .errors import CapabilityError, ValidationError
from .rng import SeedContext, SubsetKey, index_uniforms, substream, uniform_at

EXACT_CAP = 24
LOG2 = math.log(2.0)
_RESYNC = 4096


@dataclass(frozen=True)
class CouplingLaw:
    """Finite symmetric law for the coupling values."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        v = tuple(float(x) for x in self.values)
        p = tuple(float(x) for x in self.probs)
        if len(v) != len(p) or not v:
            raise ValidationError("values and probs must be non-empty, equal length")
        if any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-12:
            raise ValidationError("probs must be a probability vector")
        mass = {}
        for val, pr in zip(v, p):
            mass[val] = mass.get(val, 0.0) + pr
        for val, pr in mass.items():
            if abs(pr - mass.get(-val, 0.0)) > 1e-12:
                raise ValidationError("coupling law must be symmetric about 0")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def pm1(cls) -> "CouplingLaw":
        return cls(values=(-1.0, 1.0), probs=(0.5, 0.5))

    def sample(self, ctx: SeedContext, count: int) -> np.ndarray:
        u = index_uniforms(ctx, count)
        edges = np.cumsum(self.probs)
        idx = np.minimum(np.searchsorted(edges, u, side="right"), len(self.values) - 1)
        return np.asarray(self.values)[idx]

    def e_cosh(self, beta: float) -> float:
        return float(sum(p * math.cosh(beta * v) for v, p in zip(self.values, self.probs)))

    def e_log_cosh(self, beta: float) -> float:
        return float(
            sum(
                p * (abs(beta * v) + math.log1p(math.exp(-2 * abs(beta * v))) - LOG2)
                for v, p in zip(self.values, self.probs)
            )
        )


@dataclass(frozen=True)
class VBInstance:
    """One quenched Hamiltonian: N spins and M pair couplings."""

    N: int
    alpha: float
    i: np.ndarray
    j: np.ndarray
    J: np.ndarray

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.int64)
        j = np.asarray(self.j, dtype=np.int64)
        jv = np.asarray(self.J, dtype=np.float64)
        if not (i.shape == j.shape == jv.shape):
            raise ValidationError("coupling arrays must have equal length")
        if i.size and (i.min() < 0 or i.max() >= self.N or j.min() < 0 or j.max() >= self.N):
            raise ValidationError("coupling endpoints out of range")
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "J", jv)

    @property
    def M(self) -> int:
        return self.i.size

    def to_json(self) -> str:
        return json.dumps(
            {
                "N": self.N,
                "alpha": self.alpha,
                "couplings": [
                    [int(a), int(b), float(c)]
                    for a, b, c in zip(self.i, self.j, self.J)
                ],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "VBInstance":
        obj = json.loads(text)
        cpl = obj["couplings"]
        return cls(
            N=obj["N"],
            alpha=obj["alpha"],
            i=np.asarray([c[0] for c in cpl], dtype=np.int64),
            j=np.asarray([c[1] for c in cpl], dtype=np.int64),
            J=np.asarray([c[2] for c in cpl], dtype=np.float64),
        )


def sample_instance(N: int, alpha: float, coupling: CouplingLaw | None,
                    ctx: SeedContext) -> VBInstance:
    """Poisson(alpha*N) couplings, uniform independent endpoints."""
    if N < 1:
        raise ValidationError("N must be >= 1")
    if alpha < 0:
        raise ValidationError("alpha must be >= 0")
    coupling = coupling or CouplingLaw.pm1()
    m = poisson_icdf(alpha * N, uniform_at(substream(ctx, "M"), SubsetKey((1,))))
    iu = index_uniforms(substream(ctx, "i"), m)
    ju = index_uniforms(substream(ctx, "j"), m)
    return VBInstance(
        N=N,
        alpha=alpha,
        i=np.minimum((iu * N).astype(np.int64), N - 1),
        j=np.minimum((ju * N).astype(np.int64), N - 1),
        J=coupling.sample(substream(ctx, "J"), m),
    )


def energy(inst: VBInstance, sigma) -> float:
    """H(sigma) = sum_k J_k sigma_{i_k} sigma_{j_k}."""
    s = np.asarray(sigma)
    if s.shape != (inst.N,) or not np.all(np.abs(s) == 1):
        raise ValidationError("sigma must be a length-N vector of +-1")
    if inst.M == 0:
        return 0.0
    return float(np.sum(inst.J * s[inst.i] * s[inst.j]))


@numba.njit(cache=True, nogil=True)
def _gray_logsumexp(n_spins, beta, indptr, other, coeff, ci, cj, cval):  # pragma: no cover
    total = np.int64(1) << n_spins
    sigma = np.ones(n_spins, dtype=np.int8)
    e = 0.0
    for k in range(cval.size):
        e += cval[k] * sigma[ci[k]] * sigma[cj[k]]
    m = -beta * e
    acc = 1.0
    comp = 0.0
    for s in range(1, total):
        ss = s
        b = 0
        while ss & 1 == 0:
            ss >>= 1
            b += 1
        delta = 0.0
        for t in range(indptr[b], indptr[b + 1]):
            delta += coeff[t] * sigma[other[t]]
        e -= 2.0 * sigma[b] * delta
        sigma[b] = -sigma[b]
        if s & (_RESYNC - 1) == 0:
            g = s ^ (s >> 1)
            for q in range(n_spins):
                sigma[q] = -1 if (g >> q) & 1 else 1
            e = 0.0
            for k in range(cval.size):
                e += cval[k] * sigma[ci[k]] * sigma[cj[k]]
        w = -beta * e
        if w > m:
            scale = np.exp(m - w)
            acc *= scale
            comp *= scale
            m = w
            term = 1.0
        else:
            term = np.exp(w - m)
        y = term - comp
        tot = acc + y
        comp = (tot - acc) - y
        acc = tot
    return m + np.log(acc)


@numba.njit(cache=True, nogil=True)
def _gray_energies(n_spins, indptr, other, coeff, ci, cj, cval, out):  # pragma: no cover
    total = np.int64(1) << n_spins
    sigma = np.ones(n_spins, dtype=np.int8)
    e = 0.0
    for k in range(cval.size):
        e += cval[k] * sigma[ci[k]] * sigma[cj[k]]
    out[0] = e
    for s in range(1, total):
        ss = s
        b = 0
        while ss & 1 == 0:
            ss >>= 1
            b += 1
        delta = 0.0
        for t in range(indptr[b], indptr[b + 1]):
            delta += coeff[t] * sigma[other[t]]
        e -= 2.0 * sigma[b] * delta
        sigma[b] = -sigma[b]
        if s & (_RESYNC - 1) == 0:
            g0 = s ^ (s >> 1)
            for q in range(n_spins):
                sigma[q] = -1 if (g0 >> q) & 1 else 1
            e = 0.0
            for k in range(cval.size):
                e += cval[k] * sigma[ci[k]] * sigma[cj[k]]
        out[s ^ (s >> 1)] = e


def _adjacency(inst: VBInstance):
    """Per-spin CSR of incident non-self couplings (self-loops are constant)."""
    off = inst.i != inst.j
    ends = np.concatenate([inst.i[off], inst.j[off]])
    others = np.concatenate([inst.j[off], inst.i[off]])
    coeffs = np.concatenate([inst.J[off], inst.J[off]])
    order = np.argsort(ends, kind="stable")
    counts = np.bincount(ends, minlength=inst.N)
    indptr = np.zeros(inst.N + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, others[order].astype(np.int64), coeffs[order]


def log_partition_exact(inst: VBInstance, beta: float) -> float:
    """log Z over all 2^N states; Gray-code walk with exact resyncs."""
    if inst.N > EXACT_CAP:
        raise CapabilityError(
            f"exact enumeration capped at N <= {EXACT_CAP}; "
            "larger N needs a Monte Carlo sampler, which is out of scope"
        )
    if beta == 0.0 or inst.M == 0:
        return inst.N * LOG2
    indptr, other, coeff = _adjacency(inst)
    return float(
        _gray_logsumexp(inst.N, float(beta), indptr, other, coeff,
                        inst.i, inst.j, inst.J)
    )


def enumerate_energies(inst: VBInstance) -> np.ndarray:
    """All 2^N energies by state index via the Gray-code walk."""
    if inst.N > EXACT_CAP:
        raise CapabilityError(f"exact enumeration capped at N <= {EXACT_CAP}")
    out = np.zeros(1 << inst.N)
    if inst.M == 0:
        return out
    indptr, other, coeff = _adjacency(inst)
    _gray_energies(inst.N, indptr, other, coeff, inst.i, inst.j, inst.J, out)
    return out


def enumerate_energies_naive(inst: VBInstance) -> np.ndarray:
    """Direct per-state re-evaluation; the oracle for the Gray-code walk.

    State s encodes spin q as +1 when bit q of s is 0.
    """
    if inst.N > 20:
        raise CapabilityError("naive enumeration kept to N <= 20")
    states = np.arange(1 << inst.N, dtype=np.uint64)
    e = np.zeros(states.size)
    for a, b, val in zip(inst.i, inst.j, inst.J):
        parity = ((states >> np.uint64(a)) ^ (states >> np.uint64(b))) & np.uint64(1)
        e += val * (1.0 - 2.0 * parity.astype(np.float64))
    return e


@dataclass(frozen=True)
class GibbsDistribution:
    """A quenched Gibbs law; exact mode carries the full 2^N table."""

    instance: VBInstance
    beta: float
    log_Z: float
    probs: np.ndarray = None

    @classmethod
    def build(cls, inst: VBInstance, beta: float) -> "GibbsDistribution":
        if beta < 0:
            raise ValidationError("beta must be >= 0")
        if inst.N > EXACT_CAP:
            return cls(instance=inst, beta=beta,
                       log_Z=float("nan"), probs=None)
        if inst.N <= 14:
            e = enumerate_energies_naive(inst)
        else:
            e = enumerate_energies(inst)
        w = -beta * e
        m = w.max()
        raw = np.exp(w - m)
        z = raw.sum()
        return cls(instance=inst, beta=beta,
                   log_Z=float(m + np.log(z)), probs=raw / z)

    @property
    def exact(self) -> bool:
        return self.probs is not None


def gibbs_replicas(g: GibbsDistribution, r: int, ctx: SeedContext) -> "ReplicaMatrix":
    """r exact i.i.d. configuration draws from the probability table."""
    if not g.exact:
        raise CapabilityError(
            "replica draws need the exact table; sampler-only mode (MCMC) is out of scope"
        )
    if r < 1:
        raise ValidationError("replica count must be >= 1")
    u = index_uniforms(substream(ctx, "states"), r)
    states = np.searchsorted(np.cumsum(g.probs), u, side="right")
    states = np.minimum(states, g.probs.size - 1)
    n = g.instance.N
    bits = (states[:, None] >> np.arange(n)[None, :]) & 1
    return ReplicaMatrix(spins=(1 - 2 * bits).astype(np.int8))


@dataclass(frozen=True)
class ReplicaMatrix:
    """Replica-by-site matrix of +-1 spins."""

    spins: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.spins)
        if s.ndim != 2 or not np.all(np.abs(s) == 1):
            raise ValidationError("spins must be an (r, N) matrix of +-1")
        object.__setattr__(self, "spins", s)


def empirical_erm(reps: ReplicaMatrix, cylinder) -> float:
    """Site frequency of a replica-value pattern; see erm.empirical_measure."""
    return erm.empirical_measure(reps.spins, cylinder)


def multi_overlap(reps: ReplicaMatrix, subset) -> float:
    """Site average of the product of the selected replicas' spins."""
    subset = list(subset)
    if not subset:
        raise ValidationError("replica subset must be non-empty")
    if min(subset) < 0 or max(subset) >= reps.spins.shape[0]:
        raise ValidationError("replica index out of range")
    return float(np.prod(reps.spins[subset], axis=0).mean())


def site_marginals(g: GibbsDistribution) -> np.ndarray:
    """Exact P(sigma_n = +1) per site from the probability table."""
    if not g.exact:
        raise CapabilityError("site marginals need the exact table")
    n = g.instance.N
    states = np.arange(g.probs.size, dtype=np.uint64)
    return np.asarray([
        g.probs[((states >> np.uint64(q)) & np.uint64(1)) == 0].sum()
        for q in range(n)
    ])


@dataclass(frozen=True)
class FreeEnergyEstimate:
    N: int
    alpha: float
    beta: float
    instances: int
    mean: float
    std_error: float
    per_instance: np.ndarray

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "alpha": self.alpha,
            "beta": self.beta,
            "instances": self.instances,
            "mean": self.mean,
            "std_error": self.std_error,
            "per_instance_logZ": [float(x * self.N) for x in self.per_instance],
        }


def specific_free_energy(inst: VBInstance, beta: float) -> float:
    """(1/N) log Z; the beta=0 and empty-instance collapses are closed form."""
    if beta == 0.0 or inst.M == 0:
        return LOG2
    return log_partition_exact(inst, beta) / inst.N


def free_energy_mc(N: int, alpha: float, beta: float, instances: int,
                   ctx: SeedContext, coupling: CouplingLaw | None = None,
                   threads: int = 1) -> FreeEnergyEstimate:
    """Mean and standard error of (1/N) log Z over i.i.d. instances."""
    if instances < 2:
        raise ValidationError("need at least 2 instances")
    if N > EXACT_CAP:
        raise CapabilityError(f"exact inner log Z capped at N <= {EXACT_CAP}")
    coupling = coupling or CouplingLaw.pm1()
    contexts = [substream(ctx, f"inst-{k}") for k in range(instances)]

    def one(c):
        return specific_free_energy(sample_instance(N, alpha, coupling, c), beta)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = np.asarray(list(pool.map(one, contexts)))
    else:
        values = np.asarray([one(c) for c in contexts])
    if np.ptp(values) == 0.0:
        mean, se = float(values[0]), 0.0
    else:
        mean = float(values.mean())
        se = float(values.std(ddof=1) / math.sqrt(instances))
    return FreeEnergyEstimate(N=N, alpha=alpha, beta=beta, instances=instances,
                              mean=mean, std_error=se, per_instance=values)


def annealed_bound(alpha: float, beta: float,
                   coupling: CouplingLaw | None = None) -> float:
    """log 2 + alpha (E cosh(beta J) - 1), an upper bound for F_N."""
    coupling = coupling or CouplingLaw.pm1()
    return LOG2 + alpha * (coupling.e_cosh(beta) - 1.0)


def vb_empirical_sampler(N: int, alpha: float, beta: float, r: int,
                         coupling: CouplingLaw | None = None):
    """Batch sampler of replica matrices, keys (replica, site with 1-based site).

    Each sample is a fresh instance plus r exact Gibbs draws, so the
    key relabeling symmetry being tested is site exchangeability of the
    full quenched-plus-sampled law.
    """
    coupling = coupling or CouplingLaw.pm1()

    def sample(ctx: SeedContext, count: int):
        cols = {(rep, site): np.empty(count, dtype=np.int8)
                for rep in range(r) for site in range(1, N + 1)}
        for s in range(count):
            sctx = substream(ctx, f"s{s}")
            inst = sample_instance(N, alpha, coupling, substream(sctx, "inst"))
            g = GibbsDistribution.build(inst, beta)
            reps = gibbs_replicas(g, r, substream(sctx, "gibbs"))
            for rep in range(r):
                for site in range(1, N + 1):
                    cols[(rep, site)][s] = reps.spins[rep, site - 1]
        return cols

    return sample
