"""End-to-end training under the bandwidth-aware objective.

Each step draws one scene, one policy from the learned set plus
always-transmit, and one budget; all four agents act as receivers and their
detection losses are averaged.  Discrete region selection stays out of the
gradient path: the selected regions' features are scaled by the policy's
soft transmit weight, which is what carries gradient into the policy nets,
while the bandwidth penalty uses the soft weights where they exist and the
detached hard fraction otherwise.
"""

import csv
import io
import json
import math
import os

import numpy as np

from . import autograd as ag
from .channel import N_REGIONS, regions_for_budget
from .errors import ConfigError, NumericalError
from .evaluator import eval_scene
from .formats import atomic_write_text, write_checkpoint
from .model import CoopModel
from .optim import LrSchedule, OptimState, adamw_step, clip_grad_norm, lr_at
from .pipeline import link_list, make_context, pack_scene, senders_of
from .policies import (REGION_DIM, agent_context_vec, neighbor_state_vec,
                       topk_mask)
from .rng import stream
from .scene import load_split

TRAIN_POLICIES = ("r2t", "where2comm", "ic3net", "mask", "always")
VAL_POLICY = "r2t"
VAL_BUDGET = 0.5

LOG_FIELDS = ("step", "lr", "loss", "l_det", "l_bw", "grad_norm")


def detection_loss(logits, gt_heatmap):
    """Mean BCE-with-logits of the predicted heatmaps against the soft gt."""
    gt = ag.Tensor(np.asarray(gt_heatmap, dtype=logits.data.dtype))
    return ag.tmean(ag.bce_with_logits(logits, gt))


def loss_terms(l_det, l_bw, lambda_bw, l1_term=None, lambda_l1=0.0):
    """L = L_det + lambda * L_bw (+ lambda_s * sum|w| for the mask policy)."""
    loss = l_det + lambda_bw * l_bw
    if l1_term is not None:
        loss = loss + lambda_l1 * l1_term
    return loss


def training_forward(model, pack, policy, budget, lambda_bw, lambda_l1):
    """One scene, all four receivers; returns (loss, l_det value, l_bw value)."""
    if policy not in TRAIN_POLICIES:
        raise ConfigError(f"policy {policy!r} is not trainable; valid: {TRAIN_POLICIES}")
    dt = model.dtype
    n = len(pack.scene.agents)
    obs = ag.Tensor(pack.obs.astype(dt))
    regions = model.to_regions(model.encode(obs))  # (4, 64, 32)
    k = regions_for_budget(budget)
    nets = model.policy_nets
    links = link_list(n)

    sel = {}
    weight = {}
    if policy == "r2t":
        ctxs = [make_context(pack, s, r, budget) for s, r in links]
        reg_in = ag.gather(regions, np.array([s for s, _ in links]))
        av = ag.Tensor(np.stack([agent_context_vec(c) for c in ctxs]).astype(dt))
        nv = ag.Tensor(np.stack([neighbor_state_vec(c) for c in ctxs]).astype(dt))
        bv = ag.Tensor(np.full((len(links), 1), budget, dtype=dt))
        p, s_scores = nets["r2t"].forward(reg_in, av, nv, bv)
        rank = p.data.astype(np.float64) * s_scores.data.astype(np.float64)
        for i, link in enumerate(links):
            idx = np.nonzero(topk_mask(rank[i], budget).selected)[0]
            sel[link] = idx
            weight[link] = ag.gather(ag.tslice(p, i), idx) if k else None
        l_bw = ag.tmean(p)
    elif policy in ("where2comm", "ic3net", "mask"):
        if policy == "where2comm":
            scores = nets["where2comm"].scores(regions)
            soft = ag.sigmoid(scores)
        elif policy == "ic3net":
            scores = nets["ic3net"].gates(regions)
            soft = scores
        else:
            scores = nets["mask"].scores(regions)
            soft = ag.sigmoid(scores)
        for s in range(n):
            idx = np.nonzero(topk_mask(scores.data[s].astype(np.float64), budget).selected)[0]
            row = ag.gather(ag.tslice(soft, s), idx) if k else None
            for r in range(n):
                if r != s:
                    sel[(s, r)] = idx
                    weight[(s, r)] = row
        l_bw = ag.tmean(soft) if policy == "mask" else float(k / N_REGIONS)
    else:  # always
        idx = np.arange(k)
        for link in links:
            sel[link] = idx
            weight[link] = None
        l_bw = float(k / N_REGIONS)

    if k == 0:
        fused = model.fuse(regions)
    else:
        rows = []
        slot_rows = []
        for r in range(n):
            parts = []
            slots = []
            for lane, s in enumerate(senders_of(r, n)):
                idx = sel[(s, r)]
                feats = ag.gather(ag.tslice(regions, s), idx)
                w = weight[(s, r)]
                if w is not None:
                    feats = feats * ag.reshape(w, (len(idx), 1))
                parts.append(feats)
                slots.append(lane * N_REGIONS + idx)
            rows.append(ag.reshape(ag.concat(parts, axis=0), (1, -1, REGION_DIM)))
            slot_rows.append(np.concatenate(slots))
        fused = model.fuse(regions, ag.concat(rows, axis=0), np.stack(slot_rows))

    logits = model.detect(fused)
    l_det = detection_loss(logits, pack.gt_heatmap)
    l1 = nets["mask"].l1_penalty() if policy == "mask" else None
    loss = loss_terms(l_det, l_bw, lambda_bw, l1, lambda_l1)
    l_bw_val = l_bw.item() if isinstance(l_bw, ag.Tensor) else float(l_bw)
    return loss, l_det.item(), l_bw_val


def global_grad_norm(tensors):
    total = 0.0
    for t in tensors.values():
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def validate(model, val_packs):
    aps = [eval_scene(model, pack, VAL_POLICY, VAL_BUDGET, 0.0, model.seed)[0]
           for pack in val_packs]
    return float(np.mean(aps))


def train_one_seed(run_cfg, scenes_root, seed, out_path, progress=None):
    """Train one seed; writes best + final checkpoints and the step log.

    Returns a summary dict (best epoch/AP, coverage of gradient flow).
    Raises NumericalError on a non-finite loss, after dumping diagnostics
    next to ``out_path``.
    """
    tcfg = run_cfg.train
    train_packs = [pack_scene(s) for s in load_split(os.path.join(scenes_root, "train"))]
    val_packs = [pack_scene(s) for s in load_split(os.path.join(scenes_root, "val"))]
    model = CoopModel(seed, np.float32)

    spe = len(train_packs)
    total_steps = tcfg.epochs * spe
    schedule = LrSchedule(tcfg.lr, tcfg.warmup_epochs * spe, total_steps)
    opt = OptimState(lr=tcfg.lr, weight_decay=tcfg.weight_decay)

    log_rows = []
    val_rows = []
    grad_coverage = set()
    best_ap = -1.0
    best_state = None
    step = 0
    for epoch in range(tcfg.epochs):
        perm = stream(seed, "order", epoch).permutation(spe)
        for i in range(spe):
            pack = train_packs[int(perm[i])]
            draw = stream(seed, "sample", step)
            policy = TRAIN_POLICIES[int(draw.integers(0, len(TRAIN_POLICIES)))]
            budget = float(tcfg.budget_samples[int(draw.integers(0, len(tcfg.budget_samples)))])

            model.params.zero_grads()
            loss, l_det, l_bw = training_forward(model, pack, policy, budget,
                                                 tcfg.lambda_bw, tcfg.lambda_l1)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                dump = {
                    "step": step, "epoch": epoch, "policy": policy, "budget": budget,
                    "scene_id": pack.scene.scene_id, "loss": loss_val,
                    "l_det": l_det, "l_bw": l_bw,
                }
                dump_path = out_path + ".nandump.json"
                atomic_write_text(dump_path, json.dumps(dump, indent=1))
                raise NumericalError(f"non-finite loss at step {step}; diagnostics at {dump_path}")
            ag.backward(loss)
            grad_coverage.update(n for n, t in model.params.tensors.items() if t.grad is not None)
            norm = global_grad_norm(model.params.tensors)
            clip_grad_norm(model.params.tensors, tcfg.grad_clip)
            lr = lr_at(schedule, step)
            adamw_step(opt, model.params.tensors, lr)
            log_rows.append((step, lr, loss_val, l_det, l_bw, norm))
            step += 1

        val_ap = validate(model, val_packs)
        val_rows.append((epoch, val_ap))
        if val_ap > best_ap:
            best_ap = val_ap
            best_state = model.state_copy()
        if progress:
            progress(epoch, val_ap)

    final_state = model.state_copy()
    _save_state(out_path, best_state if best_state is not None else final_state, seed)
    stem = out_path[:-5] if out_path.endswith(".r2tc") else out_path
    _save_state(stem + ".final.r2tc", final_state, seed)
    _write_log(stem + ".train_log.csv", log_rows)
    _write_val_log(stem + ".val_log.csv", val_rows)
    return {
        "seed": seed,
        "steps": step,
        "best_val_ap": best_ap,
        "best_epoch": int(np.argmax([v for _, v in val_rows])) if val_rows else -1,
        "grad_coverage": grad_coverage,
        "final_loss": log_rows[-1][2] if log_rows else None,
    }


def _save_state(path, arrays, seed):
    out = dict(arrays)
    out["meta.seed"] = np.array([seed], dtype=np.float32)
    write_checkpoint(path, out)


def _write_log(path, rows):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(LOG_FIELDS)
    for row in rows:
        w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    atomic_write_text(path, buf.getvalue())


def _write_val_log(path, rows):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(("epoch", "val_ap"))
    for epoch, ap in rows:
        w.writerow([epoch, repr(float(ap))])
    atomic_write_text(path, buf.getvalue())
