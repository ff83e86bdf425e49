"""Transmit-selection policies.

All ten policies share one contract: given a sender's 64 region feature
vectors, a per-link context, and a budget fraction B, emit a boolean
TransmitMask with k <= floor(B * 64) selected regions.  Ranking ties break
toward the lower region index, which makes every policy a strict total
order and keeps selection reproducible.

Learned policies score regions with small networks whose parameters live in
the shared registry under ``pol.<name>.*``.  Only the reasoning policy
conditions on the receiver; reactive and sender-local learned policies emit
the same mask on every outgoing link.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .channel import N_REGIONS, REGION_BYTES, regions_for_budget
from .errors import ConfigError
from .nn import Linear, LayerNorm, Mlp, TransformerLayer

POLICY_NAMES = ("nocomm", "always", "random", "confidence", "uncertainty",
                "where2comm", "ic3net", "mask", "oracle", "r2t")
LEARNED_POLICIES = ("where2comm", "ic3net", "mask", "r2t")
# every policy except nocomm fills the budget exactly
BUDGET_FILLING = tuple(n for n in POLICY_NAMES if n != "nocomm")

REGION_DIM = 32
R2T_DIM = 128
R2T_HEADS = 4
R2T_LAYERS = 2
R2T_TOKENS = N_REGIONS + 3  # regions + agent context + neighbor state + budget


@dataclass
class PolicyContext:
    budget: float
    sender: object               # AgentPose
    neighbors: list              # sender's 3 neighbors, sorted by id
    receiver_id: int
    grid_size: int = 64
    gt_region_mass: np.ndarray = None
    rng: np.random.Generator = None


@dataclass
class TransmitMask:
    selected: np.ndarray  # (64,) bool
    k: int
    bytes: int


def topk_mask(scores, budget):
    """Top-floor(B*64) regions by (score desc, index asc)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.shape != (N_REGIONS,):
        raise ConfigError(f"expected {N_REGIONS} region scores, got {scores.shape}")
    k = regions_for_budget(budget)
    order = np.lexsort((np.arange(N_REGIONS), -scores))
    selected = np.zeros(N_REGIONS, dtype=bool)
    selected[order[:k]] = True
    return TransmitMask(selected=selected, k=k, bytes=REGION_BYTES * k)


# -- reactive policies -------------------------------------------------------

def select_nocomm(regions, ctx):
    return topk_mask(np.zeros(N_REGIONS), 0.0)


def select_always(regions, ctx):
    # constant scores; index tie-break fills the budget from region 0 up
    return topk_mask(np.zeros(N_REGIONS), ctx.budget)


def select_random(regions, ctx):
    return topk_mask(ctx.rng.random(N_REGIONS), ctx.budget)


def select_confidence(regions, ctx):
    return topk_mask(np.linalg.norm(np.asarray(regions), axis=1), ctx.budget)


def select_uncertainty(regions, ctx):
    return topk_mask(np.asarray(regions).var(axis=1), ctx.budget)


def select_oracle(regions, ctx):
    if ctx.gt_region_mass is None:
        raise ConfigError("oracle policy requires gt_region_mass in the context")
    return topk_mask(ctx.gt_region_mass, ctx.budget)


# -- learned policy networks --------------------------------------------------

class Where2CommNet:
    """Per-region confidence scores from a 3-layer MLP."""

    def __init__(self, params):
        self.mlp = Mlp(params, "pol.where2comm", (REGION_DIM, 64, 64, 1))

    def scores(self, regions):
        """(B, 64, 32) -> (B, 64) raw scores."""
        out = self.mlp(regions)
        return ag.reshape(out, out.shape[:-1])


class Ic3NetGateNet:
    """Per-region sigmoid gate conditioned on the mean feature context."""

    def __init__(self, params):
        self.mlp = Mlp(params, "pol.ic3net", (2 * REGION_DIM, 64, 1))

    def gates(self, regions):
        ctx = ag.tmean(regions, axis=1, keepdims=True)
        # broadcast the global context along the region axis
        tiled = ctx + ag.Tensor(np.zeros((N_REGIONS, 1), dtype=ctx.data.dtype))
        gate = ag.sigmoid(self.mlp(ag.concat([regions, tiled], axis=-1)))
        return ag.reshape(gate, gate.shape[:-1])


class MaskNet:
    """Single linear score per region; its weights carry the L1 penalty."""

    def __init__(self, params):
        self.lin = Linear(params, "pol.mask.l1", REGION_DIM, 1)

    def scores(self, regions):
        out = self.lin(regions)
        return ag.reshape(out, out.shape[:-1])

    def l1_penalty(self):
        return ag.tsum(ag.tabs(self.lin.w)) + ag.tsum(ag.tabs(self.lin.b))


class ReasoningNet:
    """Transformer transmit policy over region + context + budget tokens.

    67 tokens (64 projected regions, agent context, neighbor state, budget)
    with learned positional encodings run through 2 pre-norm layers; region
    outputs feed a sigmoid transmit-probability head and a linear priority
    head.  Links are batched along the leading axis.
    """

    def __init__(self, params):
        d = R2T_DIM
        self.proj_region = Linear(params, "pol.r2t.proj_region", REGION_DIM, d)
        self.proj_agent = Linear(params, "pol.r2t.proj_agent", 4, d)
        self.proj_neighbor = Linear(params, "pol.r2t.proj_neighbor", 12, d)
        self.proj_budget = Linear(params, "pol.r2t.proj_budget", 1, d)
        self.pos = params.uniform("pol.r2t.pos", (R2T_TOKENS, d), d)
        self.layers = [TransformerLayer(params, f"pol.r2t.l{i}", d, R2T_HEADS, 2 * d)
                       for i in range(R2T_LAYERS)]
        self.ln_f = LayerNorm(params, "pol.r2t.ln_f", d)
        self.head_p = Linear(params, "pol.r2t.head_p", d, 1)
        self.head_s = Linear(params, "pol.r2t.head_s", d, 1)

    def forward(self, regions, agent_vec, neighbor_vec, budget_vec):
        """(L,64,32), (L,4), (L,12), (L,1) -> transmit probs p and scores s, both (L,64)."""
        n = regions.shape[0]
        toks = ag.concat([
            self.proj_region(regions),
            ag.reshape(self.proj_agent(agent_vec), (n, 1, R2T_DIM)),
            ag.reshape(self.proj_neighbor(neighbor_vec), (n, 1, R2T_DIM)),
            ag.reshape(self.proj_budget(budget_vec), (n, 1, R2T_DIM)),
        ], axis=1)
        x = toks + self.pos
        for layer in self.layers:
            x = layer(x)
        z = self.ln_f(x)[:, :N_REGIONS, :]
        p = ag.reshape(ag.sigmoid(self.head_p(z)), (n, N_REGIONS))
        s = ag.reshape(self.head_s(z), (n, N_REGIONS))
        return p, s


def build_policy_nets(params):
    return {
        "where2comm": Where2CommNet(params),
        "ic3net": Ic3NetGateNet(params),
        "mask": MaskNet(params),
        "r2t": ReasoningNet(params),
    }


# -- context vectors for the reasoning policy --------------------------------

def agent_context_vec(ctx):
    g = float(ctx.grid_size)
    a = ctx.sender
    n_others = max(len(ctx.neighbors), 1)
    return np.array([a.x / g, a.y / g, a.heading / np.pi, a.id / n_others], dtype=np.float64)


def neighbor_state_vec(ctx):
    g = float(ctx.grid_size)
    out = []
    for nb in ctx.neighbors:
        out += [nb.x / g, nb.y / g, nb.heading / np.pi, 1.0 if nb.id == ctx.receiver_id else 0.0]
    return np.array(out, dtype=np.float64)


# -- learned-policy selection -------------------------------------------------

def select_where2comm(regions, ctx, net):
    with ag.no_grad():
        scores = net.scores(_as_batch(regions))
    return topk_mask(scores.data[0], ctx.budget)


def select_ic3net(regions, ctx, net):
    with ag.no_grad():
        gates = net.gates(_as_batch(regions))
    return topk_mask(gates.data[0], ctx.budget)


def select_learned_mask(regions, ctx, net):
    with ag.no_grad():
        scores = net.scores(_as_batch(regions))
    return topk_mask(scores.data[0], ctx.budget)


def select_r2t(regions, ctx, net):
    """Hard evaluation-time selection; also returns p and s for inspection."""
    p, s = _r2t_forward(regions, ctx, net)
    mask = topk_mask(p * s, ctx.budget)
    return mask, p, s


def soft_mask_r2t(regions, ctx, net):
    """Training-time soft weights: the transmit probabilities p."""
    p, _ = _r2t_forward(regions, ctx, net)
    return p


def _r2t_forward(regions, ctx, net):
    with ag.no_grad():
        dt = net.head_p.w.data.dtype
        p, s = net.forward(
            _as_batch(regions, dt),
            ag.Tensor(agent_context_vec(ctx)[None, :].astype(dt)),
            ag.Tensor(neighbor_state_vec(ctx)[None, :].astype(dt)),
            ag.Tensor(np.array([[ctx.budget]], dtype=dt)),
        )
    return p.data[0], s.data[0]


def _as_batch(regions, dtype=None):
    if isinstance(regions, ag.Tensor):
        data = regions.data
    else:
        data = np.asarray(regions)
    if dtype is not None:
        data = data.astype(dtype, copy=False)
    if data.shape != (N_REGIONS, REGION_DIM):
        raise ConfigError(f"expected regions ({N_REGIONS}, {REGION_DIM}), got {data.shape}")
    return ag.Tensor(data[None, :, :])


def select(name, regions, ctx, nets=None):
    """Single-link dispatcher used by the evaluator and the CLI."""
    if name == "nocomm":
        return select_nocomm(regions, ctx)
    if name == "always":
        return select_always(regions, ctx)
    if name == "random":
        return select_random(regions, ctx)
    if name == "confidence":
        return select_confidence(regions, ctx)
    if name == "uncertainty":
        return select_uncertainty(regions, ctx)
    if name == "oracle":
        return select_oracle(regions, ctx)
    if name == "where2comm":
        return select_where2comm(regions, ctx, nets["where2comm"])
    if name == "ic3net":
        return select_ic3net(regions, ctx, nets["ic3net"])
    if name == "mask":
        return select_learned_mask(regions, ctx, nets["mask"])
    if name == "r2t":
        return select_r2t(regions, ctx, nets["r2t"])[0]
    raise ConfigError(f"unknown policy {name!r}; valid: {', '.join(POLICY_NAMES)}")
