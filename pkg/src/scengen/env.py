"""Kinematic multi-lane highway environment.

Vehicles follow a discrete-time bicycle-free point model:

    x'     = x + v * cos(theta) * dt      (position uses the pre-update v)
    y'     = y + v * sin(theta) * dt
    v'     = clip(v + dv, 0, v_max)
    theta' = theta + dtheta

Episodes terminate on the first of: AV-BV collision, BV-BV collision,
any vehicle leaving the paved width, or the frame horizon. Exactly one
event label is reported per step, with collision labels taking priority
over departure and departure over horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StructuralError
from .geometry import OrientedRect, rect_min_distance, rect_overlap
from .scenario import Scene, VehicleAction, VehicleState, ZERO_ACTION

G = 9.81

EVENT_AV_COLLISION = "av_collision"
EVENT_BV_COLLISION = "bv_collision"
EVENT_ROAD_DEPARTURE = "road_departure"
EVENT_HORIZON = "horizon"
EVENT_NONE = "none"

TERMINAL_EVENTS = (
    EVENT_AV_COLLISION,
    EVENT_BV_COLLISION,
    EVENT_ROAD_DEPARTURE,
    EVENT_HORIZON,
)


@dataclass(frozen=True)
class RoadConfig:
    lane_count: int = 3
    lane_width: float = 3.75
    length: float = 1000.0

    @property
    def width(self) -> float:
        return self.lane_count * self.lane_width

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    def lane_of(self, y: float) -> int:
        lane = int(y // self.lane_width)
        return min(max(lane, 0), self.lane_count - 1)


@dataclass(frozen=True)
class VehicleDims:
    length: float = 5.0
    width: float = 2.0


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.04
    horizon: int = 100
    r_b: float = 10.0
    v_max: float = 40.0
    accel_min: float = -0.8 * G
    accel_max: float = 0.6 * G
    dtheta_rate: float = 0.2
    road: RoadConfig = field(default_factory=RoadConfig)
    dims: VehicleDims = field(default_factory=VehicleDims)

    @property
    def dv_limits(self) -> tuple[float, float]:
        # per-frame speed change bounds, m/s
        return (self.accel_min * self.dt, self.accel_max * self.dt)

    @property
    def dtheta_limits(self) -> tuple[float, float]:
        # per-frame heading change bounds, rad
        return (-self.dtheta_rate * self.dt, self.dtheta_rate * self.dt)


def action_limits(cfg: EnvConfig, n_vehicles: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """(lo, hi) arrays for a flattened [dv, dtheta] * n_vehicles action."""
    dv_lo, dv_hi = cfg.dv_limits
    dth_lo, dth_hi = cfg.dtheta_limits
    lo = np.tile([dv_lo, dth_lo], n_vehicles)
    hi = np.tile([dv_hi, dth_hi], n_vehicles)
    return lo, hi


def clamp_action(act: VehicleAction, cfg: EnvConfig) -> VehicleAction:
    dv_lo, dv_hi = cfg.dv_limits
    dth_lo, dth_hi = cfg.dtheta_limits
    return VehicleAction(
        dv=min(max(act.dv, dv_lo), dv_hi),
        dtheta=min(max(act.dtheta, dth_lo), dth_hi),
    )


def step_kinematics(state: VehicleState, act: VehicleAction, cfg: EnvConfig) -> VehicleState:
    """Advance one vehicle a single frame. Inputs are assumed pre-clamped."""
    x = state.x + state.v * math.cos(state.theta) * cfg.dt
    y = state.y + state.v * math.sin(state.theta) * cfg.dt
    v = min(max(state.v + act.dv, 0.0), cfg.v_max)
    theta = state.theta + act.dtheta
    return VehicleState(x=x, y=y, v=v, theta=theta)


def footprint(state: VehicleState, dims: VehicleDims) -> OrientedRect:
    return OrientedRect(
        cx=state.x,
        cy=state.y,
        half_len=dims.length / 2.0,
        half_wid=dims.width / 2.0,
        angle=state.theta,
    )


def min_av_bv_distance(scene: Scene, dims: VehicleDims) -> float:
    """Smallest footprint distance between the AV and any BV (0 on contact)."""
    if not scene.bvs:
        raise StructuralError("scene has no BVs")
    av_rect = footprint(scene.av, dims)
    return min(rect_min_distance(av_rect, footprint(bv, dims)) for bv in scene.bvs)


def _off_road(state: VehicleState, cfg: EnvConfig) -> bool:
    corners = footprint(state, cfg.dims).corners()
    return bool(corners[:, 1].min() < 0.0 or corners[:, 1].max() > cfg.road.width)


def detect_event(scene: Scene, cfg: EnvConfig) -> str:
    """Terminal event label for the scene, or 'none'."""
    rects = [footprint(v, cfg.dims) for v in scene.vehicles()]
    av = rects[0]
    for r in rects[1:]:
        if rect_overlap(av, r):
            return EVENT_AV_COLLISION
    n = len(rects)
    for i in range(1, n):
        for j in range(i + 1, n):
            if rect_overlap(rects[i], rects[j]):
                return EVENT_BV_COLLISION
    for v in scene.vehicles():
        if _off_road(v, cfg):
            return EVENT_ROAD_DEPARTURE
    if scene.t >= cfg.horizon:
        return EVENT_HORIZON
    return EVENT_NONE


def bv_reward(scene: Scene, event: str, cfg: EnvConfig) -> float:
    """Adversarial reward: negative AV clearance plus the event bounty.

    +r_b when the AV is struck, -r_b when the BVs crash into each other
    or anyone leaves the road, 0 otherwise.
    """
    r_dis = -min_av_bv_distance(scene, cfg.dims)
    if event == EVENT_AV_COLLISION:
        r_col = cfg.r_b
    elif event in (EVENT_BV_COLLISION, EVENT_ROAD_DEPARTURE):
        r_col = -cfg.r_b
    else:
        r_col = 0.0
    return r_dis + r_col


def av_reward(scene: Scene, event: str, cfg: EnvConfig) -> float:
    """Driving reward: speed incentive centered at v_max/2, crash penalty."""
    r = (scene.av.v - cfg.v_max / 2.0) / cfg.v_max
    if event == EVENT_AV_COLLISION:
        r -= cfg.r_b
    return r


@dataclass(frozen=True)
class StepOutcome:
    next_scene: Scene
    bv_reward: float
    av_reward: float
    event: str
    av_action: VehicleAction

    @property
    def done(self) -> bool:
        return self.event != EVENT_NONE


def advance_scene(
    scene: Scene,
    av_action: VehicleAction,
    bv_actions,
    cfg: EnvConfig,
) -> StepOutcome:
    """Apply explicit actions for every vehicle and advance one frame."""
    if scene.t >= cfg.horizon:
        raise StructuralError(f"stepping past horizon (t={scene.t})")
    if len(bv_actions) != scene.n_bvs:
        raise StructuralError(
            f"{scene.n_bvs} BVs but {len(bv_actions)} BV actions"
        )
    av_act = clamp_action(av_action, cfg)
    bv_acts = tuple(clamp_action(a, cfg) for a in bv_actions)
    nxt = Scene(
        t=scene.t + 1,
        av=step_kinematics(scene.av, av_act, cfg),
        bvs=tuple(step_kinematics(s, a, cfg) for s, a in zip(scene.bvs, bv_acts)),
    )
    event = detect_event(nxt, cfg)
    return StepOutcome(
        next_scene=nxt,
        bv_reward=bv_reward(nxt, event, cfg),
        av_reward=av_reward(nxt, event, cfg),
        event=event,
        av_action=av_act,
    )


def env_step(scene: Scene, bv_actions, av_policy, cfg: EnvConfig) -> StepOutcome:
    """Advance one frame, querying the AV model for its action."""
    av_action = av_policy.act(scene)
    return advance_scene(scene, av_action, bv_actions, cfg)


class NddInitPool:
    """Initial scenes drawn uniformly from recorded segment head frames."""

    def __init__(self, scenes):
        scenes = list(scenes)
        if not scenes:
            raise ConfigError("initial-scene pool is empty")
        n = scenes[0].n_bvs
        for s in scenes:
            if s.n_bvs != n:
                raise StructuralError("mixed BV counts in init pool")
        self.scenes = scenes
        self.n_bvs = n

    def sample(self, rng: np.random.Generator, cfg: EnvConfig) -> Scene:
        idx = int(rng.integers(len(self.scenes)))
        base = self.scenes[idx]
        return Scene(t=0, av=base.av, bvs=base.bvs)


class SyntheticInit:
    """Random collision-free initial scenes around a reference position."""

    def __init__(self, n_bvs: int, speed_range=(15.0, 35.0), spread: float = 40.0):
        if n_bvs < 1:
            raise ConfigError("need at least one BV")
        self.n_bvs = n_bvs
        self.speed_range = speed_range
        self.spread = spread

    def sample(self, rng: np.random.Generator, cfg: EnvConfig) -> Scene:
        road = cfg.road
        lo, hi = self.speed_range
        for _ in range(200):
            x0 = road.length * 0.3
            av = VehicleState(
                x=x0,
                y=road.lane_center(road.lane_count // 2),
                v=float(rng.uniform(lo, hi)),
                theta=0.0,
            )
            bvs = []
            for _ in range(self.n_bvs):
                lane = int(rng.integers(road.lane_count))
                bvs.append(
                    VehicleState(
                        x=x0 + float(rng.uniform(-self.spread, self.spread)),
                        y=road.lane_center(lane),
                        v=float(rng.uniform(lo, hi)),
                        theta=0.0,
                    )
                )
            scene = Scene(t=0, av=av, bvs=tuple(bvs))
            if detect_event(scene, cfg) in (EVENT_NONE, EVENT_HORIZON):
                return scene
        raise ConfigError("could not sample a collision-free initial scene")


def env_reset(cfg: EnvConfig, init, rng: np.random.Generator) -> Scene:
    """Draw a collision-free initial scene from the configured source."""
    for _ in range(50):
        scene = init.sample(rng, cfg)
        if detect_event(scene, cfg) in (EVENT_NONE, EVENT_HORIZON):
            return scene
    raise ConfigError("initial-scene source keeps producing colliding scenes")
