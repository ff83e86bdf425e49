"""Shared perception stack: BEV encoder, region split, gated fusion, detector.

One ``CoopModel`` owns every trainable parameter — encoder (``enc.*``),
fusion (``fuse.*``), detection head (``det.*``) and all learned policy
networks (``pol.*``) — so a single checkpoint captures the whole system.
"""

import numpy as np

from . import autograd as ag
from . import formats
from .channel import N_REGIONS, N_SENDERS
from .errors import CheckpointError, ShapeError
from .nn import Conv2d, ConvTranspose2d, LayerNorm, Linear, Params
from .policies import REGION_DIM, build_policy_nets

GRID = 64
FEATURE_GRID = 8  # encoder downsamples 8x


class CoopModel:
    def __init__(self, seed, dtype=np.float32):
        self.seed = int(seed)
        p = Params(seed, dtype)
        self.params = p

        self.enc = [
            Conv2d(p, "enc.c1", 2, 8, stride=2),
            Conv2d(p, "enc.c2", 8, 16, stride=2),
            Conv2d(p, "enc.c3", 16, 32, stride=2),
            Conv2d(p, "enc.c4", 32, 32, stride=1),
        ]

        self.ln_recv = LayerNorm(p, "fuse.ln_recv", REGION_DIM)
        self.wq = Linear(p, "fuse.wq", REGION_DIM, REGION_DIM)
        self.wk = Linear(p, "fuse.wk", REGION_DIM, REGION_DIM)
        self.wv = Linear(p, "fuse.wv", REGION_DIM, REGION_DIM)
        self.wo = Linear(p, "fuse.wo", REGION_DIM, REGION_DIM)
        self.gate = Linear(p, "fuse.gate", 2 * REGION_DIM, REGION_DIM)
        self.ln_z = LayerNorm(p, "fuse.ln_z", REGION_DIM)
        self.ffn1 = Linear(p, "fuse.ffn1", REGION_DIM, 2 * REGION_DIM)
        self.ffn2 = Linear(p, "fuse.ffn2", 2 * REGION_DIM, REGION_DIM)
        # received tokens get a learned slot embedding so the receiver can
        # localize them: 64 region slots x 3 sender lanes
        self.slot = p.uniform("fuse.slot", (N_SENDERS * N_REGIONS, REGION_DIM), REGION_DIM)

        self.det = [
            ConvTranspose2d(p, "det.c1", 32, 16),
            ConvTranspose2d(p, "det.c2", 16, 8),
            ConvTranspose2d(p, "det.c3", 8, 1),
        ]

        self.policy_nets = build_policy_nets(p)

    @property
    def dtype(self):
        return self.params.dtype

    # -- perception ---------------------------------------------------------

    def encode(self, obs):
        """(B, 2, 64, 64) observation -> (B, 32, 8, 8) feature map."""
        if obs.shape[1:] != (2, GRID, GRID):
            raise ShapeError("encode", obs.shape, (-1, 2, GRID, GRID))
        x = obs
        for conv in self.enc:
            x = ag.relu(conv(x))
        return x

    def to_regions(self, fmap):
        """(B, 32, 8, 8) -> (B, 64, 32) region tokens, row-major regions."""
        b = fmap.shape[0]
        return ag.reshape(ag.transpose(fmap, (0, 2, 3, 1)), (b, N_REGIONS, REGION_DIM))

    def regions_to_map(self, regions):
        """Inverse of to_regions (lossless)."""
        b = regions.shape[0]
        return ag.transpose(ag.reshape(regions, (b, FEATURE_GRID, FEATURE_GRID, REGION_DIM)),
                            (0, 3, 1, 2))

    def fuse(self, local, recv_feats=None, recv_slots=None):
        """Gated cross-attention fusion of received tokens into local tokens.

        local: (B, 64, 32); recv_feats: (B, R, 32) or None; recv_slots:
        (B, R) int slot ids (sender_lane * 64 + region index).  An empty
        received set short-circuits to the local tokens exactly, which makes
        no-comm and total packet loss well-posed (softmax over zero keys is
        undefined) and behaviorally identical.
        """
        if recv_feats is None or recv_feats.shape[1] == 0:
            return local
        if recv_feats.shape[-1] != REGION_DIM:
            raise ShapeError("fuse", recv_feats.shape, (-1, -1, REGION_DIM))
        b, r = recv_feats.shape[0], recv_feats.shape[1]
        slot = ag.reshape(ag.gather(self.slot, np.asarray(recv_slots).ravel()),
                          (b, r, REGION_DIM))
        recv = self.ln_recv(recv_feats + slot)
        q = self.wq(local)
        k = self.wk(recv)
        v = self.wv(recv)
        att = ag.softmax(ag.matmul(q, ag.transpose(k, (0, 2, 1))) * (1.0 / REGION_DIM ** 0.5),
                         axis=-1)
        a = self.wo(ag.matmul(att, v))
        g = ag.sigmoid(self.gate(ag.concat([local, a], axis=-1)))
        z = self.ln_z(local + g * a)
        return z + self.ffn2(ag.relu(self.ffn1(z)))

    def fuse_tokens(self, local, received):
        """Single-receiver fusion from a delivered token list.

        ``received`` holds (sender_lane, region_index, feature) triples;
        returns (64, 32).  Wrapper over the batched path.
        """
        loc = local if isinstance(local, ag.Tensor) else ag.Tensor(
            np.asarray(local, dtype=self.dtype))
        loc = ag.reshape(loc, (1, N_REGIONS, REGION_DIM))
        if not received:
            return ag.reshape(self.fuse(loc), (N_REGIONS, REGION_DIM))
        feats = np.stack([np.asarray(f, dtype=self.dtype) for _, _, f in received])
        if feats.shape[1] != REGION_DIM:
            raise ShapeError("fuse_tokens", feats.shape, (-1, REGION_DIM))
        slots = np.array([lane * N_REGIONS + idx for lane, idx, _ in received])
        out = self.fuse(loc, ag.Tensor(feats[None]), slots[None])
        return ag.reshape(out, (N_REGIONS, REGION_DIM))

    def detect(self, tokens):
        """(B, 64, 32) fused tokens -> (B, 64, 64) heatmap logits."""
        x = self.regions_to_map(tokens)
        for i, deconv in enumerate(self.det):
            x = deconv(x)
            if i < len(self.det) - 1:
                x = ag.relu(x)
        b = x.shape[0]
        return ag.reshape(x, (b, GRID, GRID))

    # -- persistence ----------------------------------------------------------

    def save(self, path):
        arrays = dict(self.params.state_arrays())
        arrays["meta.seed"] = np.array([self.seed], dtype=np.float32)
        formats.write_checkpoint(path, arrays)

    def state_copy(self):
        return {n: a.copy() for n, a in self.params.state_arrays().items()}

    def load_state(self, arrays):
        self.params.load_arrays(arrays)


def load_model(path, dtype=np.float32):
    arrays = formats.read_checkpoint(path)
    if "meta.seed" not in arrays:
        raise CheckpointError(f"{path}: missing meta.seed")
    model = CoopModel(int(arrays["meta.seed"][0]), dtype)
    try:
        model.load_state(arrays)
    except KeyError as e:
        raise CheckpointError(f"{path}: architecture mismatch: {e}") from e
    return model
