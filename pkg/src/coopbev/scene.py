"""Synthetic BEV scenes: objects, occlusion walls, agent FOV and observations.

Geometry lives on a lattice: cells are integer points, agents sit on edge
midpoints (half-integers), walls are axis-aligned integer segments.  All
intersection tests run on 2x-scaled int64 coordinates, so line-of-sight is
exact — no epsilon tuning, and the ray-march oracle in the tests can match
it bit for bit.

Wall sets nest across occlusion levels: a seed always lays out the full
high-occlusion set and a scene exposes the first 3/6/10 walls.  Objects
avoid the full set, which keeps the object layout identical across levels
and makes visible-cell counts monotone in the occlusion level.
"""

import dataclasses
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GenerationError
from .formats import atomic_write_text, read_array, write_array
from .rng import stream

OCCLUSION_WALLS = {"low": 3, "medium": 6, "high": 10}
WALL_LEN_MIN = 8
WALL_LEN_MAX = 16
SPLAT_TRUNC_RADIUS = 3.0
PLACE_ATTEMPTS = 1000

# scene ids are offset per split so the three splits never share a stream
SPLIT_OFFSETS = {"train": 0, "val": 100000, "test": 200000}


@dataclass(frozen=True)
class SceneConfig:
    grid_size: int = 64
    n_agents: int = 4
    n_objects: int = 20
    obs_noise_sigma: float = 0.5
    occlusion_level: str = "medium"
    fov_deg: float = 90.0
    sensing_range: float = 30.0
    splat_sigma: float = 1.0

    def __post_init__(self):
        if self.grid_size <= 0:
            raise ConfigError("grid_size must be positive")
        if self.n_objects < 0:
            raise ConfigError("n_objects must be >= 0")
        if self.obs_noise_sigma < 0:
            raise ConfigError("obs_noise_sigma must be >= 0")
        if self.occlusion_level not in OCCLUSION_WALLS:
            raise ConfigError(f"occlusion_level must be one of {sorted(OCCLUSION_WALLS)}")
        if self.n_agents != 4:
            raise ConfigError("agent placement is defined for exactly 4 agents")

    @property
    def n_walls(self):
        return OCCLUSION_WALLS[self.occlusion_level]


@dataclass(frozen=True)
class AgentPose:
    id: int
    x: float
    y: float
    heading: float


@dataclass
class Scene:
    config: SceneConfig
    seed: int
    scene_id: int
    objects: list          # [(x, y)] integer cells
    walls: list            # [((x0, y0), (x1, y1))] axis-aligned integer segments
    agents: list           # [AgentPose]
    gt_heatmap: np.ndarray  # (grid, grid) float32 in [0, 1], indexed [y, x]
    gt_binary: np.ndarray   # (grid, grid) bool, heatmap > 0.5


@dataclass
class Observation:
    channels: np.ndarray  # (2, grid, grid) float32; 0 = detections, 1 = visibility


def agent_poses(grid_size):
    """Four agents on the edge midpoints, heading at the grid center."""
    c = (grid_size - 1) / 2.0
    spots = [(c, 0.0), (grid_size - 1.0, c), (c, grid_size - 1.0), (0.0, c)]
    return [AgentPose(i, x, y, math.atan2(c - y, c - x)) for i, (x, y) in enumerate(spots)]


def _splat_max(heat, cx, cy, sigma, grid):
    """Fold one Gaussian splat into ``heat`` with per-cell max."""
    r = SPLAT_TRUNC_RADIUS
    x0 = max(0, int(math.ceil(cx - r)))
    x1 = min(grid - 1, int(math.floor(cx + r)))
    y0 = max(0, int(math.ceil(cy - r)))
    y1 = min(grid - 1, int(math.floor(cy + r)))
    if x0 > x1 or y0 > y1:
        return
    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    ys = np.arange(y0, y1 + 1, dtype=np.float64)
    d2 = (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2
    vals = np.where(d2 <= r * r, np.exp(-d2 / (2.0 * sigma * sigma)), 0.0)
    patch = heat[y0:y1 + 1, x0:x1 + 1]
    np.maximum(patch, vals, out=patch)


def splat_heatmap(positions, grid, sigma):
    heat = np.zeros((grid, grid), dtype=np.float64)
    for cx, cy in positions:
        _splat_max(heat, float(cx), float(cy), sigma, grid)
    return heat.astype(np.float32)


def _wall_cells(wall):
    (x0, y0), (x1, y1) = wall
    if y0 == y1:
        return {(x, y0) for x in range(min(x0, x1), max(x0, x1) + 1)}
    return {(x0, y) for y in range(min(y0, y1), max(y0, y1) + 1)}


def _place_walls(rng, grid, count):
    """Axis-aligned segments, length 8-16 cells, mutually non-overlapping."""
    walls = []
    occupied = set()
    for _ in range(count):
        for attempt in range(PLACE_ATTEMPTS):
            length = int(rng.integers(WALL_LEN_MIN, WALL_LEN_MAX + 1))
            horizontal = bool(rng.integers(0, 2))
            if length >= grid:
                continue
            if horizontal:
                x0 = int(rng.integers(0, grid - length))
                y0 = int(rng.integers(0, grid))
                wall = ((x0, y0), (x0 + length, y0))
            else:
                x0 = int(rng.integers(0, grid))
                y0 = int(rng.integers(0, grid - length))
                wall = ((x0, y0), (x0, y0 + length))
            cells = _wall_cells(wall)
            if cells & occupied:
                continue
            walls.append(wall)
            occupied |= cells
            break
        else:
            raise GenerationError(f"could not place wall {len(walls)} after {PLACE_ATTEMPTS} attempts")
    return walls, occupied


def generate_scene(config, seed, scene_id):
    """Deterministic scene for (config, seed, scene_id).

    Objects are placed uniformly (without replacement) on cells free of the
    full high-occlusion wall set, so the same seed yields the same object
    layout at every occlusion level.
    """
    grid = config.grid_size
    all_walls, occupied = _place_walls(stream(seed, "walls", scene_id), grid, OCCLUSION_WALLS["high"])
    walls = all_walls[:config.n_walls]

    free = [(x, y) for y in range(grid) for x in range(grid) if (x, y) not in occupied]
    if config.n_objects > len(free):
        raise GenerationError(f"{config.n_objects} objects do not fit on {len(free)} free cells")
    rng = stream(seed, "objects", scene_id)
    picks = rng.choice(len(free), size=config.n_objects, replace=False)
    objects = [free[i] for i in sorted(int(i) for i in picks)]

    heat = splat_heatmap(objects, grid, config.splat_sigma)
    return Scene(
        config=config,
        seed=int(seed),
        scene_id=int(scene_id),
        objects=objects,
        walls=walls,
        agents=agent_poses(grid),
        gt_heatmap=heat,
        gt_binary=heat > 0.5,
    )


# -- line of sight ---------------------------------------------------------

def _scale2(v):
    """Scale a coordinate by 2 onto the integer lattice, exactly."""
    s = v * 2.0
    r = round(s)
    if abs(s - r) > 1e-9:
        raise ConfigError(f"coordinate {v} is not on the half-integer lattice")
    return int(r)


def _walls_scaled(walls):
    return np.array([[x0 * 2, y0 * 2, x1 * 2, y1 * 2] for (x0, y0), (x1, y1) in walls],
                    dtype=np.int64).reshape(-1, 4)


def _segments_blocked(ax, ay, bx, by, walls2):
    """Vectorized exact segment-vs-walls test on 2x integer coordinates.

    a is a single point, b an (n, 2) batch.  A touch (shared endpoint,
    collinear overlap) counts as blocked.  Returns (n,) bool.
    """
    n = bx.shape[0]
    blocked = np.zeros(n, dtype=bool)
    for cx0, cy0, cx1, cy1 in walls2:
        dxw = cx1 - cx0
        dyw = cy1 - cy0
        # orientation of a and b relative to the wall line
        d1 = dxw * (ay - cy0) - dyw * (ax - cx0)
        d2 = dxw * (by - cy0) - dyw * (bx - cx0)
        # orientation of wall endpoints relative to each ray
        rdx = bx - ax
        rdy = by - ay
        d3 = rdx * (cy0 - ay) - rdy * (cx0 - ax)
        d4 = rdx * (cy1 - ay) - rdy * (cx1 - ax)
        proper = ((d1 > 0) & (d2 < 0) | (d1 < 0) & (d2 > 0)) & \
                 ((d3 > 0) & (d4 < 0) | (d3 < 0) & (d4 > 0))
        touch = np.zeros(n, dtype=bool)
        if d1 == 0:
            touch |= _on_segment(cx0, cy0, cx1, cy1, np.asarray(ax), np.asarray(ay))
        touch |= (d2 == 0) & _on_segment(cx0, cy0, cx1, cy1, bx, by)
        touch |= (d3 == 0) & _on_segment_arr(ax, ay, bx, by, cx0, cy0)
        touch |= (d4 == 0) & _on_segment_arr(ax, ay, bx, by, cx1, cy1)
        blocked |= proper | touch
    return blocked


def _on_segment(px0, py0, px1, py1, qx, qy):
    """Is collinear point q within the bounding box of segment p0-p1?"""
    return (np.minimum(px0, px1) <= qx) & (qx <= np.maximum(px0, px1)) & \
           (np.minimum(py0, py1) <= qy) & (qy <= np.maximum(py0, py1))


def _on_segment_arr(ax, ay, bx, by, qx, qy):
    return (np.minimum(ax, bx) <= qx) & (qx <= np.maximum(ax, bx)) & \
           (np.minimum(ay, by) <= qy) & (qy <= np.maximum(ay, by))


def line_of_sight(scene, src, dst):
    """True iff the open channel src->dst crosses no wall (touch blocks)."""
    if src == dst:
        return True
    ax, ay = _scale2(src[0]), _scale2(src[1])
    bx = np.array([_scale2(dst[0])], dtype=np.int64)
    by = np.array([_scale2(dst[1])], dtype=np.int64)
    walls2 = _walls_scaled(scene.walls)
    return not bool(_segments_blocked(ax, ay, bx, by, walls2)[0])


def visible(scene, agent, cell):
    """Range + FOV + line-of-sight check for a single cell."""
    cfg = scene.config
    vx = cell[0] - agent.x
    vy = cell[1] - agent.y
    dist2 = vx * vx + vy * vy
    if dist2 > cfg.sensing_range ** 2:
        return False
    if dist2 > 0:
        hx, hy = math.cos(agent.heading), math.sin(agent.heading)
        cos_half = math.cos(math.radians(cfg.fov_deg) / 2.0)
        if hx * vx + hy * vy < cos_half * math.sqrt(dist2):
            return False
    return line_of_sight(scene, (agent.x, agent.y), tuple(cell))


def visibility_map(scene, agent):
    """(grid, grid) bool map of cells the agent can see."""
    cfg = scene.config
    grid = cfg.grid_size
    xs, ys = np.meshgrid(np.arange(grid), np.arange(grid))
    vx = xs.ravel() - agent.x
    vy = ys.ravel() - agent.y
    dist2 = vx * vx + vy * vy
    ok = dist2 <= cfg.sensing_range ** 2

    hx, hy = math.cos(agent.heading), math.sin(agent.heading)
    dot = hx * vx + hy * vy
    cos_half = math.cos(math.radians(cfg.fov_deg) / 2.0)
    with np.errstate(invalid="ignore"):
        ang_ok = dot >= cos_half * np.sqrt(dist2)
    ang_ok |= dist2 == 0  # the agent's own cell counts as angle 0
    ok &= ang_ok

    if scene.walls and ok.any():
        ax, ay = _scale2(agent.x), _scale2(agent.y)
        idx = np.nonzero(ok)[0]
        bx = xs.ravel()[idx].astype(np.int64) * 2
        by = ys.ravel()[idx].astype(np.int64) * 2
        same = (bx == ax) & (by == ay)
        blocked = _segments_blocked(ax, ay, bx, by, _walls_scaled(scene.walls))
        ok[idx[blocked & ~same]] = False
    return ok.reshape(grid, grid)


def render_observation(scene, agent, seed):
    """Noisy detections (channel 0) + visibility mask (channel 1).

    Visibility is tested at the true object cell; the splat is drawn at the
    noise-perturbed position and then masked, so noise never leaks objects
    through walls.  The noise stream is keyed by (seed, scene_id, agent id).
    """
    cfg = scene.config
    grid = cfg.grid_size
    vmap = visibility_map(scene, agent)
    rng = stream(seed, "obs", scene.scene_id, agent.id)

    det = np.zeros((grid, grid), dtype=np.float64)
    for (ox, oy) in scene.objects:
        noise = rng.normal(0.0, cfg.obs_noise_sigma, size=2)
        if not vmap[oy, ox]:
            continue  # draw consumed first so streams align across layouts
        _splat_max(det, ox + noise[0], oy + noise[1], cfg.splat_sigma, grid)
    det *= vmap
    channels = np.stack([det.astype(np.float32), vmap.astype(np.float32)])
    return Observation(channels=channels)


def gt_region_mass(scene, region_grid=8):
    """Ground-truth heatmap mass per region (row-major region index)."""
    grid = scene.config.grid_size
    block = grid // region_grid
    h = scene.gt_heatmap.reshape(region_grid, block, region_grid, block)
    return h.sum(axis=(1, 3), dtype=np.float64).ravel()


# -- scene files ------------------------------------------------------------

def scene_paths(directory, scene_id):
    base = os.path.join(directory, f"scene_{scene_id}")
    return base + ".json", base + ".r2ta"


def save_scene(scene, directory):
    jpath, apath = scene_paths(directory, scene.scene_id)
    doc = {
        "version": 1,
        "seed": scene.seed,
        "scene_id": scene.scene_id,
        "config": dataclasses.asdict(scene.config),
        "agents": [dataclasses.asdict(a) for a in scene.agents],
        "objects": [list(o) for o in scene.objects],
        "walls": [[list(p) for p in w] for w in scene.walls],
    }
    atomic_write_text(jpath, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    write_array(apath, scene.gt_heatmap.ravel())
    return jpath, apath


def load_scene(jpath):
    with open(jpath) as fh:
        doc = json.load(fh)
    if doc.get("version") != 1:
        raise ConfigError(f"{jpath}: unsupported scene version {doc.get('version')}")
    cfg = SceneConfig(**doc["config"])
    grid = cfg.grid_size
    heat = read_array(jpath[:-5] + ".r2ta").reshape(grid, grid)
    return Scene(
        config=cfg,
        seed=doc["seed"],
        scene_id=doc["scene_id"],
        objects=[tuple(o) for o in doc["objects"]],
        walls=[tuple(tuple(p) for p in w) for w in doc["walls"]],
        agents=[AgentPose(**a) for a in doc["agents"]],
        gt_heatmap=heat,
        gt_binary=heat > 0.5,
    )


def load_split(directory):
    """All scenes of a split directory, ordered by scene id."""
    names = sorted(f for f in os.listdir(directory) if f.startswith("scene_") and f.endswith(".json"))
    if not names:
        raise ConfigError(f"no scene files under {directory}")
    return [load_scene(os.path.join(directory, n)) for n in
            sorted(names, key=lambda n: int(n[6:-5]))]
