"""Shared per-scene plumbing for training and evaluation.

A ``ScenePack`` caches everything derived from one scene that both paths
need: the four rendered observations (keyed by the scene's own generation
seed, so test data is identical across model seeds), the ground truth, and
the per-region heatmap mass the oracle policy ranks by.
"""

from dataclasses import dataclass

import numpy as np

from .policies import PolicyContext
from .scene import gt_region_mass, render_observation


@dataclass
class ScenePack:
    scene: object
    obs: np.ndarray          # (4, 2, grid, grid) float32
    gt_heatmap: np.ndarray   # (grid, grid) float32
    gt_binary: np.ndarray    # (grid, grid) bool
    region_mass: np.ndarray  # (64,) float64


def pack_scene(scene):
    obs = np.stack([render_observation(scene, a, scene.seed).channels for a in scene.agents])
    return ScenePack(
        scene=scene,
        obs=obs,
        gt_heatmap=scene.gt_heatmap,
        gt_binary=scene.gt_binary,
        region_mass=gt_region_mass(scene),
    )


def senders_of(receiver_id, n_agents=4):
    """Incoming senders, ascending id; list position is the sender's lane."""
    return [s for s in range(n_agents) if s != receiver_id]


def link_list(n_agents=4):
    """All (sender, receiver) links, receiver-major, senders ascending."""
    return [(s, r) for r in range(n_agents) for s in senders_of(r, n_agents)]


def make_context(pack, sender_id, receiver_id, budget, with_mass=False, rng=None):
    scene = pack.scene
    agents = scene.agents
    return PolicyContext(
        budget=budget,
        sender=agents[sender_id],
        neighbors=[agents[i] for i in range(len(agents)) if i != sender_id],
        receiver_id=receiver_id,
        grid_size=scene.config.grid_size,
        gt_region_mass=pack.region_mass if with_mass else None,
        rng=rng,
    )
