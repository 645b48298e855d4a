"""Frequency tests for distributional invariance under relabeling.

Equality in law is checked through finite cylinders: a batch sampler
produces ``{key: values}`` columns, a cylinder fixes values at a few
keys, and two independent sample sets are compared by two-proportion
z-scores with a Bonferroni-corrected significance level.  Cylinders
that are degenerate in both arms (frequency exactly 0 or 1) carry no
information and are excluded from the correction count.

Samplers are callables ``sampler(ctx, count) -> {key: ndarray}``; the
two arms always consume fresh, independent substreams so the z-scores
are valid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import ValidationError
from .rng import SeedContext, substream


@dataclass(frozen=True)
class CylinderSpec:
    """Finitely many (key, value) constraints with distinct keys."""

    constraints: tuple

    def __init__(self, constraints):
        constraints = tuple((k, v) for k, v in constraints)
        keys = [k for k, _ in constraints]
        if len(set(keys)) != len(keys):
            raise ValidationError("cylinder constraint keys must be distinct")
        object.__setattr__(self, "constraints", constraints)


@dataclass
class TestReport:
    statistic: str
    level: float
    samples: int
    freq_a: list
    freq_b: list
    z_scores: list
    degenerate: list
    z_critical: float
    passed: bool
    counted: int = field(default=0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "statistic": self.statistic,
                "level": self.level,
                "samples": self.samples,
                "freq_a": self.freq_a,
                "freq_b": self.freq_b,
                "z_scores": self.z_scores,
                "degenerate": self.degenerate,
                "z_critical": self.z_critical,
                "counted": self.counted,
                "passed": bool(self.passed),
            },
            sort_keys=True,
        )


def position_relabel(pi: dict):
    """Key mapper for integer position keys."""
    return lambda key: pi.get(key, key)


def pair_relabel(pi: dict):
    """Key mapper for unordered pair keys (i, j)."""
    return lambda key: tuple(sorted((pi.get(key[0], key[0]), pi.get(key[1], key[1]))))


def site_relabel(pi: dict):
    """Key mapper for (replica, site) keys; only the site moves."""
    return lambda key: (key[0], pi.get(key[1], key[1]))


def _cylinder_frequencies(data: dict, cylinders, key_map=None) -> np.ndarray:
    freqs = np.empty(len(cylinders))
    for c, cyl in enumerate(cylinders):
        mask = None
        for key, value in cyl.constraints:
            k = key_map(key) if key_map is not None else key
            hit = data[k] == value
            mask = hit if mask is None else (mask & hit)
        freqs[c] = mask.mean()
    return freqs


def _z_report(statistic, freq_a, freq_b, samples, level) -> TestReport:
    z_scores, degenerate = [], []
    for pa, pb in zip(freq_a, freq_b):
        pooled = 0.5 * (pa + pb)
        if pooled <= 0.0 or pooled >= 1.0:
            degenerate.append(True)
            z_scores.append(0.0)
            continue
        degenerate.append(False)
        se = math.sqrt(pooled * (1.0 - pooled) * (2.0 / samples))
        z_scores.append((pa - pb) / se)
    counted = sum(not d for d in degenerate)
    if counted == 0:
        z_crit = math.inf
        passed = True
    else:
        z_crit = float(ndtri(1.0 - level / (2.0 * counted)))
        passed = all(
            abs(z) <= z_crit for z, d in zip(z_scores, degenerate) if not d
        )
    return TestReport(
        statistic=statistic,
        level=level,
        samples=samples,
        freq_a=[float(x) for x in freq_a],
        freq_b=[float(x) for x in freq_b],
        z_scores=[float(z) for z in z_scores],
        degenerate=degenerate,
        z_critical=z_crit,
        passed=passed,
        counted=counted,
    )


def permutation_invariance_test(sampler, pi, cylinders, samples, ctx: SeedContext,
                                key_kind: str = "position",
                                level: float = 0.01) -> TestReport:
    """Compare cylinder frequencies between identity and relabeled sampling.

    ``pi`` is a finite-support permutation as a dict; ``key_kind`` picks
    how sampler keys move under it ("position", "pair" or "site").
    """
    if samples < 100:
        raise ValidationError("need samples >= 100")
    mappers = {"position": position_relabel, "pair": pair_relabel, "site": site_relabel}
    if key_kind not in mappers:
        raise ValidationError(f"unknown key kind {key_kind!r}")
    key_map = mappers[key_kind](pi)
    data_a = sampler(substream(ctx, "arm-a"), samples)
    data_b = sampler(substream(ctx, "arm-b"), samples)
    freq_a = _cylinder_frequencies(data_a, cylinders)
    freq_b = _cylinder_frequencies(data_b, cylinders, key_map=key_map)
    return _z_report("permutation-invariance", freq_a, freq_b, samples, level)


def two_sample_cylinder_test(sampler_a, sampler_b, cylinders, samples,
                             ctx: SeedContext, level: float = 0.01) -> TestReport:
    """Equality-in-law check between two samplers on the given cylinders."""
    if samples < 100:
        raise ValidationError("need samples >= 100")
    data_a = sampler_a(substream(ctx, "arm-a"), samples)
    data_b = sampler_b(substream(ctx, "arm-b"), samples)
    freq_a = _cylinder_frequencies(data_a, cylinders)
    freq_b = _cylinder_frequencies(data_b, cylinders)
    return _z_report("two-sample", freq_a, freq_b, samples, level)
