"""ermlab: exchangeable random measures, Gram decompositions, and the
dilute spin-glass free energy, built on deterministic index-addressable
randomness so every experiment replays bit for bit."""

from . import (  # noqa: F401
    cascade,
    dovsud,
    erm,
    exchtest,
    parisi,
    rng,
    skewprod,
    vianabray,
)
from .errors import CapabilityError, ValidationError  # noqa: F401
from .rng import SeedContext, SubsetKey, substream, uniform_at  # noqa: F401

__version__ = "0.1.0"
