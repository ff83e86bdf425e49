"""AP metric, per-cell evaluation, and the three experiment sweeps."""

import csv
import dataclasses
import functools
import io
import os
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .channel import DropConfig, account, surviving_regions
from .errors import ConfigError
from .model import load_model
from .pipeline import make_context, pack_scene, senders_of
from .policies import (N_REGIONS, agent_context_vec, neighbor_state_vec,
                       select, topk_mask)
from .rng import stream
from .scene import load_split, generate_scene
from .formats import atomic_write_text

THRESHOLDS = tuple(t / 10 for t in range(1, 10))

BANDWIDTH_BUDGETS = (0.1, 0.5, 1.0)
SELECTIVE_POLICIES = ("always", "random", "confidence", "uncertainty",
                      "where2comm", "ic3net", "mask", "oracle", "r2t")
OCCLUSION_LEVELS = ("low", "medium", "high")
OCCLUSION_POLICIES = ("nocomm", "confidence", "where2comm", "ic3net", "r2t", "always", "oracle")
DROP_RATES = (0.0, 0.1, 0.2, 0.3, 0.5)
DROP_POLICIES = ("r2t", "where2comm", "ic3net", "confidence")
TABLE23_SEEDS = 3  # occlusion/drop tables aggregate over the first 3 seeds

RECORD_FIELDS = ("policy", "budget", "kb_label", "bytes", "occlusion",
                 "drop_rate", "seed", "ap")


@dataclass
class EvalRecord:
    policy: str
    budget: float
    kb_label: float
    bytes: int
    occlusion: str
    drop_rate: float
    seed: int
    ap: float


@dataclass
class PRPoint:
    threshold: float
    precision: float
    recall: float


def pr_points(pred, gt_binary):
    """Precision/recall at each detection threshold, pooled over all cells."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.min() < -1e-12 or pred.max() > 1.0 + 1e-12:
        raise ConfigError(f"predictions outside [0, 1]: [{pred.min()}, {pred.max()}]")
    gt = np.asarray(gt_binary, dtype=bool)
    n_pos = int(gt.sum())
    points = []
    for t in THRESHOLDS:
        hit = pred >= t
        tp = int((hit & gt).sum())
        fp = int((hit & ~gt).sum())
        precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
        recall = 1.0 if n_pos == 0 else tp / n_pos
        points.append(PRPoint(t, precision, recall))
    return points


def average_precision(pred, gt_binary):
    """Step-integrated area under the monotone precision envelope.

    Points are sorted by recall; interpolated precision at recall r is the
    maximum precision among points with recall >= r; the area accumulates
    (r_j - r_{j-1}) * p_interp(r_j) from r_0 = 0.
    """
    pts = pr_points(pred, gt_binary)
    order = sorted(range(len(pts)), key=lambda i: pts[i].recall)
    recalls = np.array([pts[i].recall for i in order])
    precisions = np.array([pts[i].precision for i in order])
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    prev = 0.0
    ap = 0.0
    for r, p in zip(recalls, envelope):
        ap += (r - prev) * p
        prev = r
    return float(ap)


# -- scene-level forward -------------------------------------------------------

_SENDER_LOCAL = ("always", "confidence", "uncertainty", "where2comm",
                 "ic3net", "mask", "oracle")


def link_masks(model, pack, regions_np, policy, budget, seed):
    """TransmitMask per (sender, receiver) link, as a dict."""
    scene = pack.scene
    n = len(scene.agents)
    masks = {}
    if policy == "nocomm":
        empty = topk_mask(np.zeros(N_REGIONS), 0.0)
        return {(s, r): empty for r in range(n) for s in senders_of(r, n)}
    if policy in _SENDER_LOCAL:
        for s in range(n):
            ctx = make_context(pack, s, (s + 1) % n, budget, with_mass=(policy == "oracle"))
            m = select(policy, regions_np[s], ctx, model.policy_nets)
            for r in range(n):
                if r != s:
                    masks[(s, r)] = m
        return masks
    if policy == "random":
        for r in range(n):
            for s in senders_of(r, n):
                ctx = make_context(pack, s, r, budget,
                                   rng=stream(seed, "polrng", scene.scene_id, s, r))
                masks[(s, r)] = select("random", regions_np[s], ctx)
        return masks
    if policy == "r2t":
        links = [(s, r) for r in range(n) for s in senders_of(r, n)]
        dt = model.dtype
        ctxs = [make_context(pack, s, r, budget) for s, r in links]
        reg = np.stack([regions_np[s] for s, _ in links]).astype(dt)
        av = np.stack([agent_context_vec(c) for c in ctxs]).astype(dt)
        nv = np.stack([neighbor_state_vec(c) for c in ctxs]).astype(dt)
        bv = np.full((len(links), 1), budget, dtype=dt)
        with ag.no_grad():
            p, s_ = model.policy_nets["r2t"].forward(
                ag.Tensor(reg), ag.Tensor(av), ag.Tensor(nv), ag.Tensor(bv))
        rank = p.data.astype(np.float64) * s_.data.astype(np.float64)
        for i, link in enumerate(links):
            masks[link] = topk_mask(rank[i], budget)
        return masks
    raise ConfigError(f"unknown policy {policy!r}")


def eval_scene(model, pack, policy, budget, drop_rate, seed):
    """Mean AP over the four receivers plus bytes sent into one receiver."""
    scene = pack.scene
    n = len(scene.agents)
    with ag.no_grad():
        obs = ag.Tensor(pack.obs.astype(model.dtype))
        regions = model.to_regions(model.encode(obs))
    regions_np = regions.data
    masks = link_masks(model, pack, regions_np, policy, budget, seed)

    aps = []
    with ag.no_grad():
        for r in range(n):
            feats = []
            slots = []
            for lane, s in enumerate(senders_of(r, n)):
                drop = DropConfig(drop_rate, stream(seed, "drop", scene.scene_id, r, s))
                idx = surviving_regions(masks[(s, r)].selected, drop)
                if idx.size:
                    feats.append(regions_np[s][idx])
                    slots.append(lane * N_REGIONS + idx)
            local = ag.Tensor(regions_np[r][None])
            if feats:
                recv = ag.Tensor(np.concatenate(feats)[None])
                fused = model.fuse(local, recv, np.concatenate(slots)[None])
            else:
                fused = model.fuse(local)
            logits = model.detect(fused)
            probs = ag.sigmoid_array(logits.data[0])
            aps.append(average_precision(probs, pack.gt_binary))
    bytes_in = account([masks[(s, 0)] for s in senders_of(0, n)])
    return float(np.mean(aps)), bytes_in


def evaluate_cell(model, packs, policy, budget, occlusion, drop_rate):
    """One EvalRecord: AP averaged over receivers, then over scenes."""
    seed = model.seed
    aps = []
    bytes_in = 0
    for pack in packs:
        ap, bytes_in = eval_scene(model, pack, policy, budget, drop_rate, seed)
        aps.append(ap)
    return EvalRecord(
        policy=policy,
        budget=float(budget),
        kb_label=round(float(budget) * 24.0, 9),
        bytes=int(bytes_in),
        occlusion=occlusion,
        drop_rate=float(drop_rate),
        seed=seed,
        ap=float(np.mean(aps)),
    )


# -- sweeps ---------------------------------------------------------------------

@functools.lru_cache(maxsize=8)
def _packs_cached(scenes_dir, occlusion):
    """Packs for a split, regenerated at another occlusion level on request."""
    scenes = load_split(scenes_dir)
    if occlusion is not None and occlusion != scenes[0].config.occlusion_level:
        scenes = [generate_scene(dataclasses.replace(s.config, occlusion_level=occlusion),
                                 s.seed, s.scene_id) for s in scenes]
    return [pack_scene(s) for s in scenes]


@functools.lru_cache(maxsize=8)
def _model_cached(ckpt_path):
    return load_model(ckpt_path)


def sweep_cells(axes, seeds):
    """(policy, budget, occlusion_override, drop_rate, seed) grid for one axis."""
    cells = []
    if axes == "bandwidth":
        for seed in seeds:
            cells.append(("nocomm", 0.0, None, 0.0, seed))
            for policy in SELECTIVE_POLICIES:
                for budget in BANDWIDTH_BUDGETS:
                    cells.append((policy, budget, None, 0.0, seed))
    elif axes == "occlusion":
        for seed in seeds[:TABLE23_SEEDS]:
            for policy in OCCLUSION_POLICIES:
                for level in OCCLUSION_LEVELS:
                    budget = 0.0 if policy == "nocomm" else 0.5
                    cells.append((policy, budget, level, 0.0, seed))
    elif axes == "drop":
        for seed in seeds[:TABLE23_SEEDS]:
            for policy in DROP_POLICIES:
                for rate in DROP_RATES:
                    cells.append((policy, 0.5, None, rate, seed))
    else:
        raise ConfigError(f"unknown sweep axes {axes!r}; valid: bandwidth, occlusion, drop")
    return cells


def run_cell(ckpt_path, scenes_dir, cell):
    policy, budget, occ_override, drop_rate, _seed = cell
    model = _model_cached(ckpt_path)
    packs = _packs_cached(scenes_dir, occ_override)
    occlusion = occ_override or packs[0].scene.config.occlusion_level
    return evaluate_cell(model, packs, policy, budget, occlusion, drop_rate)


def sweep(ckpts_by_seed, scenes_dir, axes, out_dir, workers=1):
    """Evaluate one sweep axis for every checkpoint; write records + summary.

    ``ckpts_by_seed`` maps seed -> checkpoint path, ordered by seed.
    Missing paths are skipped with a warning list returned to the caller.
    """
    seeds = sorted(ckpts_by_seed)
    missing = [s for s in seeds if not os.path.exists(ckpts_by_seed[s])]
    usable = [s for s in seeds if s not in set(missing)]
    cells = [c for c in sweep_cells(axes, usable)]
    tasks = [(ckpts_by_seed[c[-1]], scenes_dir, c) for c in cells]
    if workers > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(workers) as pool:
            records = pool.starmap(run_cell, tasks)
    else:
        records = [run_cell(*t) for t in tasks]
    os.makedirs(out_dir, exist_ok=True)
    rec_path = os.path.join(out_dir, f"{axes}_records.csv")
    sum_path = os.path.join(out_dir, f"{axes}_summary.csv")
    write_records(rec_path, records)
    write_summary(sum_path, summarize(records))
    return records, missing


# -- CSV I/O ---------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_records(path, records):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([_fmt(getattr(r, f)) for f in RECORD_FIELDS])
    atomic_write_text(path, buf.getvalue())


def read_records(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(EvalRecord(
                policy=row["policy"],
                budget=float(row["budget"]),
                kb_label=float(row["kb_label"]),
                bytes=int(row["bytes"]),
                occlusion=row["occlusion"],
                drop_rate=float(row["drop_rate"]),
                seed=int(row["seed"]),
                ap=float(row["ap"]),
            ))
    return out


def summarize(records):
    """Group records over seeds; rows of (cell key, ap_mean, ap_std, n_seeds)."""
    groups = {}
    for r in records:
        key = (r.policy, r.budget, r.occlusion, r.drop_rate)
        groups.setdefault(key, []).append(r)
    rows = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], k[3])):
        rs = groups[key]
        aps = np.array([r.ap for r in rs], dtype=np.float64)
        std = float(aps.std(ddof=1)) if len(aps) > 1 else 0.0
        rows.append({
            "policy": key[0],
            "budget": key[1],
            "kb_label": rs[0].kb_label,
            "bytes": rs[0].bytes,
            "occlusion": key[2],
            "drop_rate": key[3],
            "ap_mean": float(aps.mean()),
            "ap_std": std,
            "n_seeds": len(aps),
        })
    return rows


SUMMARY_FIELDS = ("policy", "budget", "kb_label", "bytes", "occlusion",
                  "drop_rate", "ap_mean", "ap_std", "n_seeds")


def write_summary(path, rows):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(SUMMARY_FIELDS)
    for row in rows:
        w.writerow([_fmt(row[f]) for f in SUMMARY_FIELDS])
    atomic_write_text(path, buf.getvalue())
