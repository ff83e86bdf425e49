"""Independent oracle implementations used to verify the package.

These deliberately re-derive results through different algorithms than the
package code: line of sight via a fine-step ray march with exact rational
refinement (the package uses orientation tests), AP via pure-Python PR
enumeration (the package vectorizes), gradients via central finite
differences.
"""

import math

import numpy as np


# -- line of sight / visibility ------------------------------------------------

def _exact_crossing_blocked(a, b, wall):
    """Exact parametric check on 2x-scaled integers: does segment a-b touch wall?"""
    ax, ay = int(round(a[0] * 2)), int(round(a[1] * 2))
    bx, by = int(round(b[0] * 2)), int(round(b[1] * 2))
    (wx0, wy0), (wx1, wy1) = wall
    wx0, wy0, wx1, wy1 = wx0 * 2, wy0 * 2, wx1 * 2, wy1 * 2
    if wy0 == wy1:  # horizontal wall: solve for the crossing of y = wy0
        q = by - ay
        p = wy0 - ay
        lo, hi = min(wx0, wx1), max(wx0, wx1)
        if q == 0:
            return ay == wy0 and max(min(ax, bx), lo) <= min(max(ax, bx), hi)
        if not (0 <= p <= q or q <= p <= 0):
            return False
        x_num = ax * q + p * (bx - ax)  # crossing x, scaled by q
        if q > 0:
            return lo * q <= x_num <= hi * q
        return hi * q <= x_num <= lo * q
    else:  # vertical wall
        q = bx - ax
        p = wx0 - ax
        lo, hi = min(wy0, wy1), max(wy0, wy1)
        if q == 0:
            return ax == wx0 and max(min(ay, by), lo) <= min(max(ay, by), hi)
        if not (0 <= p <= q or q <= p <= 0):
            return False
        y_num = ay * q + p * (by - ay)
        if q > 0:
            return lo * q <= y_num <= hi * q
        return hi * q <= y_num <= lo * q


def raymarch_blocked(a, cells, walls, step=0.05):
    """Fine-step ray march from point ``a`` to each cell.

    Walks every ray at spatial steps <= ``step``, brackets sign changes of
    the (linear) wall-line offset, and confirms bracketed candidates with
    exact integer arithmetic, so the verdict carries no float tolerance.
    """
    cells = np.asarray(cells, dtype=np.float64)
    n = len(cells)
    blocked = np.zeros(n, dtype=bool)
    if not walls or n == 0:
        return blocked
    d = cells - np.asarray(a, dtype=np.float64)
    lens = np.hypot(d[:, 0], d[:, 1])
    n_steps = max(1, int(math.ceil(lens.max() / step)))
    ts = np.linspace(0.0, 1.0, n_steps + 1)
    px = a[0] + ts[None, :] * d[:, 0:1]
    py = a[1] + ts[None, :] * d[:, 1:2]
    for wall in walls:
        (wx0, wy0), (wx1, wy1) = wall
        f = (px - wx0) * (wy1 - wy0) - (py - wy0) * (wx1 - wx0)
        sign = np.sign(f)
        bracket = (sign[:, :-1] * sign[:, 1:] <= 0).any(axis=1)
        for i in np.nonzero(bracket & ~blocked)[0]:
            if _exact_crossing_blocked(a, cells[i], wall):
                blocked[i] = True
    return blocked


def visibility_oracle(scene, agent, step=0.05):
    """Brute-force three-condition visibility map, independent of the package.

    Range via np.hypot, FOV via wrapped arctan2 angle difference, occlusion
    via the ray-march oracle (only evaluated on cells passing range + FOV).
    """
    cfg = scene.config
    grid = cfg.grid_size
    xs, ys = np.meshgrid(np.arange(grid), np.arange(grid))
    dx = xs - agent.x
    dy = ys - agent.y
    in_range = np.hypot(dx, dy) <= cfg.sensing_range
    ang = np.arctan2(dy, dx) - agent.heading
    ang = (ang + np.pi) % (2 * np.pi) - np.pi
    in_fov = np.abs(ang) <= math.radians(cfg.fov_deg) / 2.0
    in_fov |= (dx == 0) & (dy == 0)
    ok = in_range & in_fov
    cand = np.argwhere(ok)  # (m, 2) as (y, x)
    cells = cand[:, ::-1].astype(np.float64)
    blocked = raymarch_blocked((agent.x, agent.y), cells, scene.walls, step)
    same = (cells[:, 0] == agent.x) & (cells[:, 1] == agent.y)
    for (y, x), b, s in zip(cand, blocked, same):
        if b and not s:
            ok[y, x] = False
    return ok


# -- average precision -----------------------------------------------------------

def ap_oracle(pred, gt):
    """Pure-Python PR-curve enumeration and step integration."""
    pred = [float(v) for v in np.asarray(pred).ravel()]
    gt = [bool(v) for v in np.asarray(gt).ravel()]
    n_pos = sum(gt)
    points = []
    for i in range(1, 10):
        t = i / 10
        tp = fp = 0
        for p, g in zip(pred, gt):
            if p >= t:
                if g:
                    tp += 1
                else:
                    fp += 1
        precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
        recall = 1.0 if n_pos == 0 else tp / n_pos
        points.append((recall, precision))
    points.sort(key=lambda rp: rp[0])
    ap = 0.0
    prev_r = 0.0
    for j, (r, _) in enumerate(points):
        best = max(p for (r2, p) in points if r2 >= r)
        ap += (r - prev_r) * best
        prev_r = r
    return ap


# -- oracle policy mass ------------------------------------------------------------

def region_mass_oracle(scene):
    """Per-region heatmap mass by explicit block summation."""
    grid = scene.config.grid_size
    block = grid // 8
    mass = []
    for i in range(8):
        for j in range(8):
            total = 0.0
            for y in range(i * block, (i + 1) * block):
                for x in range(j * block, (j + 1) * block):
                    total += float(scene.gt_heatmap[y, x])
            mass.append(total)
    return mass


def topk_by_mass_oracle(mass, k):
    order = sorted(range(len(mass)), key=lambda i: (-mass[i], i))
    return sorted(order[:k])


# -- gradients ------------------------------------------------------------------

def fd_gradcheck(build_loss, tensors, rng, n_samples=6, h=1e-5):
    """Max relative error between analytic grads and central differences.

    ``build_loss`` re-runs the forward pass; analytic gradients must already
    be populated on ``tensors``.
    """
    worst = 0.0
    for t in tensors:
        flat = t.data.ravel()
        g = t.grad.ravel()
        idx = rng.choice(flat.size, size=min(n_samples, flat.size), replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + h
            up = build_loss().item()
            flat[k] = orig - h
            dn = build_loss().item()
            flat[k] = orig
            fd = (up - dn) / (2 * h)
            denom = max(abs(fd), abs(g[k]), 1e-8)
            worst = max(worst, abs(g[k] - fd) / denom)
    return worst


def directional_gradcheck(build_loss, tensors, rng, h=1e-5):
    """Directional derivative along one random direction over all tensors."""
    dirs = []
    for t in tensors:
        d = rng.normal(size=t.data.shape)
        d /= max(np.linalg.norm(d.ravel()), 1e-12)
        dirs.append(d / math.sqrt(len(tensors)))
    analytic = sum(float(np.sum(t.grad * d)) for t, d in zip(tensors, dirs))
    for t, d in zip(tensors, dirs):
        t.data += h * d
    up = build_loss().item()
    for t, d in zip(tensors, dirs):
        t.data -= 2 * h * d
    dn = build_loss().item()
    for t, d in zip(tensors, dirs):
        t.data += h * d
    fd = (up - dn) / (2 * h)
    return abs(analytic - fd) / max(abs(fd), abs(analytic), 1e-10)
