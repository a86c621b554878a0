"""Synthetic scene generation: pedestrians on a 2-D ground plane, a
distance-to-link blockage model, and pinhole depth-camera rendering.

Geometry conventions:
  - world coordinates are meters on the ground plane;
  - a camera has a position, a heading angle (radians, world frame) and a
    horizontal field of view; its optical axis is horizontal at height
    CAMERA_HEIGHT_M;
  - pedestrians are vertical cylinders (radius, height) whose base follows
    a constant-speed segment walk, optionally ping-ponging forever;
  - depth pixels are clamp(axial_depth / max_render_depth, 0, 1) with
    background exactly 1.0 and nearer bodies overwriting farther ones.

Received power per BS is clear-sky power minus pedestrian blockage
(capped at twice the full depth) plus optional seeded Gaussian jitter.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import LinkBudget
from .trace import Trace

FRAME_HEIGHT = 40
FRAME_WIDTH = 40
CAMERA_HEIGHT_M = 1.0


@dataclass(frozen=True)
class CameraPose:
    position: tuple
    heading_rad: float
    fov_rad: float

    def __post_init__(self):
        if len(self.position) != 2:
            raise ValueError("camera position must be (x, y)")
        if not 0.0 < self.fov_rad < math.pi:
            raise ValueError(f"fov must lie in (0, pi), got {self.fov_rad}")
        if not math.isfinite(self.heading_rad):
            raise ValueError("heading must be finite")


@dataclass(frozen=True)
class PedestrianPath:
    start: tuple
    end: tuple
    speed_mps: float
    start_epoch: int = 0
    body_radius_m: float = 0.25
    body_height_m: float = 1.7
    loop: bool = True

    def __post_init__(self):
        if len(self.start) != 2 or len(self.end) != 2:
            raise ValueError("path endpoints must be (x, y)")
        if not self.speed_mps > 0:
            raise ValueError(f"speed must be positive, got {self.speed_mps}")
        if not isinstance(self.start_epoch, int) or self.start_epoch < 0:
            raise ValueError(f"start_epoch must be a non-negative integer, got {self.start_epoch!r}")
        if self.body_radius_m <= 0 or self.body_height_m <= 0:
            raise ValueError("body radius and height must be positive")


@dataclass(frozen=True)
class SceneConfig:
    bs_positions: tuple
    sta_position: tuple
    cameras: tuple
    clear_sky_dbm: tuple
    budgets: tuple
    pedestrians: tuple = field(default_factory=tuple)
    blockage_depth_db: float = 15.0
    blockage_radius_m: float = 0.3
    ramp_width_m: float = 0.2
    max_render_depth_m: float = 10.0
    power_jitter_db: float = 0.0
    epoch_interval_ms: int = 30
    num_epochs: int = 1000
    seed: int = 0

    def __post_init__(self):
        if len(self.bs_positions) < 1:
            raise ValueError("need at least one BS")
        if len(self.cameras) < 1:
            raise ValueError("need at least one camera")
        if len(self.clear_sky_dbm) != len(self.bs_positions):
            raise ValueError("one clear-sky power per BS required")
        if len(self.budgets) != len(self.bs_positions):
            raise ValueError("one link budget per BS required")
        if self.blockage_depth_db < 0:
            raise ValueError("blockage depth must be non-negative")
        if self.blockage_radius_m <= 0 or self.ramp_width_m <= 0:
            raise ValueError("blockage radius and ramp width must be positive")
        if self.max_render_depth_m <= 0:
            raise ValueError("max render depth must be positive")
        if self.power_jitter_db < 0:
            raise ValueError("power jitter must be non-negative")
        if not isinstance(self.epoch_interval_ms, int) or self.epoch_interval_ms < 1:
            raise ValueError("epoch_interval_ms must be a positive integer")
        if not isinstance(self.num_epochs, int) or self.num_epochs < 1:
            raise ValueError("num_epochs must be a positive integer")


# -- kinematics and blockage ----------------------------------------------


def pedestrian_position(path: PedestrianPath, epoch: int, epoch_interval_ms: int):
    """Cylinder base position at `epoch`, or None when absent.

    Absent means: before start_epoch, or (non-loop paths) after arrival.
    Looping paths ping-pong between the endpoints forever.
    """
    if epoch < path.start_epoch:
        return None
    dx = path.end[0] - path.start[0]
    dy = path.end[1] - path.start[1]
    leg = math.hypot(dx, dy)
    if leg == 0.0:
        return (float(path.start[0]), float(path.start[1]))
    elapsed_s = (epoch - path.start_epoch) * epoch_interval_ms / 1000.0
    dist = path.speed_mps * elapsed_s
    if path.loop:
        s = math.fmod(dist, 2.0 * leg)
        if s > leg:
            s = 2.0 * leg - s
    else:
        if dist > leg:
            return None
        s = dist
    frac = s / leg
    return (path.start[0] + frac * dx, path.start[1] + frac * dy)


def point_segment_distance(point, seg_a, seg_b) -> float:
    """Euclidean distance from a point to the segment [seg_a, seg_b]."""
    px, py = point
    ax, ay = seg_a
    bx, by = seg_b
    vx, vy = bx - ax, by - ay
    seg_len_sq = vx * vx + vy * vy
    if seg_len_sq == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * vx + (py - ay) * vy) / seg_len_sq
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * vx), py - (ay + t * vy))


def _attenuation_profile(distance_m, full_db, radius_m, ramp_m):
    """Per-pedestrian attenuation: full inside radius, linear ramp outside."""
    if distance_m <= radius_m:
        return full_db
    if distance_m < radius_m + ramp_m:
        return full_db * (1.0 - (distance_m - radius_m) / ramp_m)
    return 0.0


def blockage_attenuation_db(scene: SceneConfig, positions, bs_index: int) -> float:
    """Total attenuation (dB) on the BS->STA link from present pedestrians.

    positions: iterable of (x, y) or None, one entry per pedestrian.
    The sum is capped at twice the configured full depth.
    """
    if not 1 <= bs_index <= len(scene.bs_positions):
        raise ValueError(f"bs_index {bs_index} outside 1..{len(scene.bs_positions)}")
    seg_a = scene.bs_positions[bs_index - 1]
    seg_b = scene.sta_position
    total = 0.0
    for pos in positions:
        if pos is None:
            continue
        d = point_segment_distance(pos, seg_a, seg_b)
        total += _attenuation_profile(
            d, scene.blockage_depth_db, scene.blockage_radius_m, scene.ramp_width_m
        )
    return min(total, 2.0 * scene.blockage_depth_db)


# -- rendering --------------------------------------------------------------


def render_depth_frame(scene: SceneConfig, cylinders, camera_index: int) -> np.ndarray:
    """Render pedestrian cylinders into a (H, W) float32 depth frame.

    cylinders: iterable of (x, y, radius_m, height_m). Bodies behind the
    camera or whose center falls outside the horizontal field of view
    paint nothing. Painter's order: farther bodies first, so the nearest
    body wins where silhouettes overlap.
    """
    if not 1 <= camera_index <= len(scene.cameras):
        raise ValueError(f"camera_index {camera_index} outside 1..{len(scene.cameras)}")
    cam = scene.cameras[camera_index - 1]
    frame = np.ones((FRAME_HEIGHT, FRAME_WIDTH), dtype=np.float32)
    hx, hy = math.cos(cam.heading_rad), math.sin(cam.heading_rad)
    rx, ry = math.sin(cam.heading_rad), -math.cos(cam.heading_rad)
    half_tan = math.tan(cam.fov_rad / 2.0)
    f_px = (FRAME_WIDTH / 2.0) / half_tan

    visible = []
    for (x, y, radius, height) in cylinders:
        vx, vy = x - cam.position[0], y - cam.position[1]
        depth = vx * hx + vy * hy
        if depth <= 1e-9:
            continue
        lateral = vx * rx + vy * ry
        if abs(lateral) > half_tan * depth:
            continue
        visible.append((depth, lateral, radius, height))

    for depth, lateral, radius, height in sorted(visible, key=lambda v: -v[0]):
        value = min(max(depth / scene.max_render_depth_m, 0.0), 1.0)
        u_center = FRAME_WIDTH / 2.0 + f_px * lateral / depth
        half_w = f_px * radius / depth
        c_lo = max(0, math.ceil(u_center - half_w - 0.5))
        c_hi = min(FRAME_WIDTH - 1, math.floor(u_center + half_w - 0.5))
        if c_lo > c_hi:
            continue
        v_top = FRAME_HEIGHT / 2.0 + f_px * (CAMERA_HEIGHT_M - height) / depth
        v_bot = FRAME_HEIGHT / 2.0 + f_px * CAMERA_HEIGHT_M / depth
        r_lo = max(0, math.ceil(v_top - 0.5))
        r_hi = min(FRAME_HEIGHT - 1, math.floor(v_bot - 0.5))
        if r_lo > r_hi:
            continue
        frame[r_lo : r_hi + 1, c_lo : c_hi + 1] = np.float32(value)
    return frame


# -- synthesis ---------------------------------------------------------------


def synthesize_trace(scene: SceneConfig) -> Trace:
    """Produce a Trace from a scene; bit-identical for identical configs."""
    t_count = scene.num_epochs
    n_ped = len(scene.pedestrians)
    positions = [
        [pedestrian_position(p, t, scene.epoch_interval_ms) for t in range(t_count)]
        for p in scene.pedestrians
    ]

    frames = np.empty((len(scene.cameras), t_count, FRAME_HEIGHT, FRAME_WIDTH),
                      dtype=np.float32)
    for t in range(t_count):
        cylinders = [
            (pos[0], pos[1], ped.body_radius_m, ped.body_height_m)
            for ped, pos in ((scene.pedestrians[p], positions[p][t]) for p in range(n_ped))
            if pos is not None
        ]
        for i in range(1, len(scene.cameras) + 1):
            frames[i - 1, t] = render_depth_frame(scene, cylinders, i)

    num_bs = len(scene.bs_positions)
    powers = np.empty((num_bs, t_count), dtype=np.float64)
    for j in range(1, num_bs + 1):
        atten = np.array(
            [
                blockage_attenuation_db(scene, [positions[p][t] for p in range(n_ped)], j)
                for t in range(t_count)
            ],
            dtype=np.float64,
        )
        powers[j - 1] = scene.clear_sky_dbm[j - 1] - atten
    if scene.power_jitter_db > 0.0:
        rng = np.random.default_rng(scene.seed)
        powers += rng.normal(0.0, scene.power_jitter_db, size=powers.shape)

    return Trace(
        frames,
        powers,
        scene.budgets,
        scene.epoch_interval_ms,
        seed=scene.seed,
        provenance=f"synthetic scene, seed={scene.seed}",
    )


def reference_scenario(num_epochs: int = 6000, seed: int = 42) -> SceneConfig:
    """Fixed two-BS scene used by the comparison studies.

    Layout: the STA sits at the origin, BS1 east of it, BS2 north.
    Pedestrians 1-2 alternate across the BS1 link (dips of roughly 0.65 s
    about every 1.3 s) and are visible only to camera 1, which looks east
    along the link region. A pair walking in step crosses the BS2 link
    (their attenuations add, so BS2 drops much deeper than BS1 does) and
    is visible only to camera 2. Capacities order as
    BS1 clear > BS2 clear > BS1 blocked >> BS2 blocked, and the blocked
    fractions are set so that switching during a BS1 dip pays off when
    camera 2 shows the BS2 link clear but is a losing bet on average:
    only the two-camera agent can tell those cases apart.
    """
    fov = math.radians(80.0)
    return SceneConfig(
        bs_positions=((6.0, 0.0), (0.0, 6.0)),
        sta_position=(0.0, 0.0),
        cameras=(
            CameraPose(position=(0.8, -0.3), heading_rad=0.0, fov_rad=fov),
            CameraPose(position=(2.5, 4.2), heading_rad=math.pi, fov_rad=fov),
        ),
        clear_sky_dbm=(-60.0, -58.0),
        budgets=(LinkBudget(40e6, -173.0), LinkBudget(20e6, -173.0)),
        pedestrians=(
            PedestrianPath(start=(2.8, 1.72), end=(2.8, -1.72), speed_mps=1.3),
            PedestrianPath(start=(4.2, -1.72), end=(4.2, 1.72), speed_mps=1.3,
                           start_epoch=44),
            PedestrianPath(start=(-0.8, 3.0), end=(0.8, 3.0), speed_mps=0.5),
            PedestrianPath(start=(-0.8, 3.0), end=(0.8, 3.0), speed_mps=0.5),
        ),
        blockage_depth_db=25.0,
        blockage_radius_m=0.3,
        ramp_width_m=0.2,
        max_render_depth_m=10.0,
        power_jitter_db=0.5,
        epoch_interval_ms=30,
        num_epochs=num_epochs,
        seed=seed,
    )


# -- JSON io -----------------------------------------------------------------


def scene_to_dict(scene: SceneConfig) -> dict:
    return {
        "bs_positions": [list(p) for p in scene.bs_positions],
        "sta_position": list(scene.sta_position),
        "cameras": [
            {"position": list(c.position), "heading_rad": c.heading_rad,
             "fov_rad": c.fov_rad}
            for c in scene.cameras
        ],
        "clear_sky_dbm": list(scene.clear_sky_dbm),
        "budgets": [
            {"bandwidth_hz": b.bandwidth_hz, "noise_psd_dbm_hz": b.noise_psd_dbm_hz}
            for b in scene.budgets
        ],
        "pedestrians": [
            {"start": list(p.start), "end": list(p.end), "speed_mps": p.speed_mps,
             "start_epoch": p.start_epoch, "body_radius_m": p.body_radius_m,
             "body_height_m": p.body_height_m, "loop": p.loop}
            for p in scene.pedestrians
        ],
        "blockage_depth_db": scene.blockage_depth_db,
        "blockage_radius_m": scene.blockage_radius_m,
        "ramp_width_m": scene.ramp_width_m,
        "max_render_depth_m": scene.max_render_depth_m,
        "power_jitter_db": scene.power_jitter_db,
        "epoch_interval_ms": scene.epoch_interval_ms,
        "num_epochs": scene.num_epochs,
        "seed": scene.seed,
    }


def scene_from_dict(data: dict) -> SceneConfig:
    try:
        return SceneConfig(
            bs_positions=tuple(tuple(p) for p in data["bs_positions"]),
            sta_position=tuple(data["sta_position"]),
            cameras=tuple(
                CameraPose(position=tuple(c["position"]),
                           heading_rad=float(c["heading_rad"]),
                           fov_rad=float(c["fov_rad"]))
                for c in data["cameras"]
            ),
            clear_sky_dbm=tuple(float(v) for v in data["clear_sky_dbm"]),
            budgets=tuple(
                LinkBudget(float(b["bandwidth_hz"]), float(b["noise_psd_dbm_hz"]))
                for b in data["budgets"]
            ),
            pedestrians=tuple(
                PedestrianPath(
                    start=tuple(p["start"]), end=tuple(p["end"]),
                    speed_mps=float(p["speed_mps"]),
                    start_epoch=int(p.get("start_epoch", 0)),
                    body_radius_m=float(p.get("body_radius_m", 0.25)),
                    body_height_m=float(p.get("body_height_m", 1.7)),
                    loop=bool(p.get("loop", True)),
                )
                for p in data.get("pedestrians", [])
            ),
            blockage_depth_db=float(data.get("blockage_depth_db", 15.0)),
            blockage_radius_m=float(data.get("blockage_radius_m", 0.3)),
            ramp_width_m=float(data.get("ramp_width_m", 0.2)),
            max_render_depth_m=float(data.get("max_render_depth_m", 10.0)),
            power_jitter_db=float(data.get("power_jitter_db", 0.0)),
            epoch_interval_ms=int(data.get("epoch_interval_ms", 30)),
            num_epochs=int(data["num_epochs"]),
            seed=int(data.get("seed", 0)),
        )
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed scene config: {e}") from e


def load_scene(path) -> SceneConfig:
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"unparseable scene file {path}: {e}") from e
    return scene_from_dict(data)


def save_scene(scene: SceneConfig, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(json.dumps(scene_to_dict(scene), indent=2, sort_keys=True) + "\n")
