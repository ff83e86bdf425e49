"""Byte accounting and lossy per-region delivery between agents."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

N_REGIONS = 64
REGION_BYTES = 128          # 32 floats x 4 bytes
FULL_MESSAGE_BYTES = N_REGIONS * REGION_BYTES  # 8 KB per sender
N_SENDERS = 3               # links into one receiver
KB_AT_FULL_BUDGET = 24.0    # headline label: 3 senders x 8 KB


def regions_for_budget(budget):
    """floor(B * 64), the enforced per-link region cap."""
    if not 0.0 <= budget <= 1.0:
        raise ConfigError(f"budget fraction {budget} outside [0, 1]")
    return min(int(math.floor(budget * N_REGIONS)), N_REGIONS)


@dataclass(frozen=True)
class LinkBudget:
    budget_fraction: float

    @property
    def regions_allowed(self):
        return regions_for_budget(self.budget_fraction)

    @property
    def bytes_allowed(self):
        return self.regions_allowed * REGION_BYTES

    @property
    def reported_kb(self):
        # label convention only (B x 24 KB); enforcement always uses floor
        return self.budget_fraction * KB_AT_FULL_BUDGET


@dataclass(frozen=True)
class DropConfig:
    drop_rate: float
    rng: np.random.Generator

    def __post_init__(self):
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ConfigError(f"drop_rate {self.drop_rate} outside [0, 1]")


def surviving_regions(selected, drop):
    """Indices of selected regions that survive independent per-region drops.

    Each region draws one uniform from the link stream and survives iff
    u >= drop_rate, so drop events nest across rates: every region lost at
    20% is also lost at 30%, and drop_rate=1.0 loses everything.
    """
    idx = np.nonzero(np.asarray(selected))[0]
    u = drop.rng.random(N_REGIONS)
    return idx[u[idx] >= drop.drop_rate]


def deliver(mask, regions, drop, sender_id):
    """Delivered tokens for one link: [(sender_id, region_index, feature)]."""
    survivors = surviving_regions(mask.selected, drop)
    feats = np.asarray(regions)
    return [(sender_id, int(i), feats[int(i)]) for i in survivors]


def account(masks):
    """Total bytes sent into one receiver across its incoming links."""
    return sum(REGION_BYTES * m.k for m in masks)
