"""Driving models for the AV under test and for background vehicles.

Every policy exposes reset(scene, rng) and act(scene). AV policies
return a single VehicleAction for the vehicle in slot 0; BV policies
return one action per background vehicle. Episode-local state (ongoing
lane changes, per-episode speed draws) lives on the policy instance and
is cleared by reset.

Lane changes are executed open-loop: a constant heading rate for the
first half of the maneuver, mirrored in the second half, sized so the
lateral displacement is one lane width at the current speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import EnvConfig, action_limits
from .errors import ConfigError, StructuralError
from .nn import MlpParams, mlp_forward, sample_squashed, split_head
from .scenario import Scene, VehicleAction, VehicleState, flatten_scene

LC_DURATION_S = 2.0


def lane_change_profile(v: float, direction: int, cfg: EnvConfig) -> list:
    """Per-frame dtheta sequence for a one-lane lateral move.

    With position updated before heading, a ramp of h steps at rate d
    displaces laterally by v*dt*d*h^2, which fixes d for a given h. The
    maneuver is stretched beyond its nominal duration when the per-frame
    heading limit binds (slow vehicles).
    """
    dt = cfg.dt
    dth_max = cfg.dtheta_limits[1]
    v = max(v, 1.0)
    half = max(int(round(LC_DURATION_S / (2.0 * dt))), 1)
    delta = cfg.road.lane_width / (v * dt * half * half)
    if delta > dth_max:
        half = int(math.ceil(math.sqrt(cfg.road.lane_width / (v * dt * dth_max))))
        delta = cfg.road.lane_width / (v * dt * half * half)
    return [direction * delta] * half + [-direction * delta] * half


def _clamp(val, lo, hi):
    return min(max(val, lo), hi)


class UniformPolicy:
    """Constant-velocity AV: zero acceleration, zero steering."""

    def reset(self, scene: Scene, rng) -> None:
        pass

    def act(self, scene: Scene) -> VehicleAction:
        return VehicleAction(0.0, 0.0)


@dataclass(frozen=True)
class CarFollowingParams:
    accel_max: float = 2.0
    decel_max: float = 4.5
    tau: float = 1.0
    v_desired: float = 33.3
    lc_safety_gap: float = 10.0
    lc_incentive_gain: float = 0.1


def _bumper_gap(rear: VehicleState, front: VehicleState, length: float) -> float:
    return front.x - rear.x - length


def _lane_leader(me: VehicleState, others, lane: int, cfg: EnvConfig):
    """Nearest vehicle ahead whose center sits in the given lane."""
    best = None
    for o in others:
        if cfg.road.lane_of(o.y) != lane or o.x <= me.x:
            continue
        if best is None or o.x < best.x:
            best = o
    return best


def _lane_follower(me: VehicleState, others, lane: int, cfg: EnvConfig):
    best = None
    for o in others:
        if cfg.road.lane_of(o.y) != lane or o.x > me.x:
            continue
        if best is None or o.x > best.x:
            best = o
    return best


class KraussPolicy:
    """Safe-speed car follower with incentive-gated lane changes.

    The speed controller brakes for any vehicle ahead of (or beside) the
    ego whose lateral position, now or one projected second out, crosses
    the ego's corridor; this covers cut-ins, not just same-lane leaders.
    """

    LAT_CORRIDOR = 3.0  # m, center-to-center threat band
    PREDICT_S = 1.0

    def __init__(self, params: CarFollowingParams = CarFollowingParams(), cfg: EnvConfig = EnvConfig()):
        self.p = params
        self.cfg = cfg
        self._profile: list = []
        self._brake_frames = 0

    def reset(self, scene: Scene, rng) -> None:
        self._profile = []
        self._brake_frames = 0

    # -- speed control ---------------------------------------------------

    def _safe_speed(self, me: VehicleState, other: VehicleState) -> float:
        gap = max(_bumper_gap(me, other, self.cfg.dims.length), 0.0)
        v_l = max(other.v, 0.0)
        return v_l + (gap - v_l * self.p.tau) / (me.v / self.p.decel_max + self.p.tau)

    def _threats(self, me: VehicleState, others):
        length = self.cfg.dims.length
        for o in others:
            if o.x + length / 2.0 < me.x - length / 2.0:
                continue  # fully behind
            dy_now = abs(o.y - me.y)
            dy_pred = abs(o.y + o.v * math.sin(o.theta) * self.PREDICT_S - me.y)
            if min(dy_now, dy_pred) < self.LAT_CORRIDOR:
                yield o

    def _follow_speed(self, me: VehicleState, others) -> float:
        v_target = min(self.p.v_desired, me.v + self.p.accel_max * self.cfg.dt)
        for o in self._threats(me, others):
            v_target = min(v_target, self._safe_speed(me, o))
        return max(v_target, 0.0)

    # -- lane choice -------------------------------------------------------

    def _lane_speed(self, me: VehicleState, others, lane: int) -> float:
        leader = _lane_leader(me, others, lane, self.cfg)
        if leader is None:
            return self.p.v_desired
        return min(self.p.v_desired, self._safe_speed(me, leader))

    def _lane_is_safe(self, me: VehicleState, others, lane: int) -> bool:
        leader = _lane_leader(me, others, lane, self.cfg)
        follower = _lane_follower(me, others, lane, self.cfg)
        if leader is not None and _bumper_gap(me, leader, self.cfg.dims.length) <= self.p.lc_safety_gap:
            return False
        if follower is not None and _bumper_gap(follower, me, self.cfg.dims.length) <= self.p.lc_safety_gap:
            return False
        return True

    def _maybe_start_lane_change(self, me: VehicleState, others) -> None:
        road = self.cfg.road
        lane = road.lane_of(me.y)
        v_here = self._lane_speed(me, others, lane)
        need = self.p.lc_incentive_gain * self.p.v_desired
        best_gain, best_dir = need, 0
        for direction in (-1, 1):
            target = lane + direction
            if not 0 <= target < road.lane_count:
                continue
            if not self._lane_is_safe(me, others, target):
                continue
            gain = self._lane_speed(me, others, target) - v_here
            if gain > best_gain:
                best_gain, best_dir = gain, direction
        if best_dir != 0:
            self._profile = lane_change_profile(me.v, best_dir, self.cfg)

    # -- evasion -----------------------------------------------------------

    def _dest_lane(self, o: VehicleState, vy: float) -> int:
        """Lane a laterally moving vehicle is headed for."""
        road = self.cfg.road
        j = road.lane_of(o.y)
        if vy > 0:
            dest = j + 1 if o.y >= road.lane_center(j) else j
        else:
            dest = j - 1 if o.y <= road.lane_center(j) else j
        return min(max(dest, 0), road.lane_count - 1)

    def _find_intruder(self, me: VehicleState, others):
        """(vehicle, kind) for the most pressing path invader, else None.

        kind 'merge': a neighbor steering into the ego's lane while the
        longitudinal windows overlap. kind 'tail': a faster same-lane
        follower the ego cannot outrun. Both need steering, not braking.
        """
        length = self.cfg.dims.length
        width = self.cfg.dims.width
        my_lane = self.cfg.road.lane_of(me.y)
        for o in others:
            dy = o.y - me.y
            dx = o.x - me.x
            vy_o = o.v * math.sin(o.theta)
            vx_rel = o.v * math.cos(o.theta) - me.v * math.cos(me.theta)
            if abs(dy) < width and dx < 0 and vx_rel > 0.5 and abs(vy_o) <= 0.5:
                gap = -dx - length
                if gap / vx_rel < 4.5 or gap < 8.0:
                    return o, "tail"
                continue
            if abs(vy_o) < 0.3 or dy * vy_o >= 0:
                continue  # not drifting toward me
            if self._dest_lane(o, vy_o) != my_lane and abs(dy) > width:
                continue  # headed for some other lane
            t_arr = max((abs(dy) - width) / abs(vy_o), 0.0)
            dx_arr = dx + vx_rel * t_arr
            if t_arr < 4.0 and min(abs(dx), abs(dx_arr)) < 2.0 * length:
                return o, "merge"
        return None

    def _lane_clear_for_evasion(self, me, others, lane, ignore) -> bool:
        """Relaxed occupancy check for emergency moves; skips the intruder."""
        rest = [o for o in others if o is not ignore]
        leader = _lane_leader(me, rest, lane, self.cfg)
        follower = _lane_follower(me, rest, lane, self.cfg)
        min_gap = 3.0
        if leader is not None and _bumper_gap(me, leader, self.cfg.dims.length) <= min_gap:
            return False
        if follower is not None and _bumper_gap(follower, me, self.cfg.dims.length) <= min_gap:
            return False
        return True

    def _plan_evasion(self, me: VehicleState, others) -> None:
        """Pick a response to a path invader, if any.

        The response depends on where the intruder is. A tailgater gets a
        lane dodge. A cut-in from ahead gets braking at the vehicle's
        physical limit, which holds the gap open even when the intruder
        brakes through its merge. One closing in from a rear quarter gets
        a step away when the far lane is open, and nothing otherwise:
        braking there only backs the ego into the sweep, and darting into
        the intruder's own lane bets on a longitudinal plan it can't see.
        """
        hit = self._find_intruder(me, others)
        if hit is None:
            return
        o, kind = hit
        road = self.cfg.road
        my_lane = road.lane_of(me.y)
        width = self.cfg.dims.width
        if kind == "tail":
            first = 1 if me.y < road.width / 2.0 else -1
            dirs = (first, -first)
        else:
            dirs = (1 if o.y < me.y else -1,)
            if o.x > me.x:
                vy_o = abs(o.v * math.sin(o.theta))
                t_arr = max((abs(o.y - me.y) - width) / max(vy_o, 0.5), 0.0)
                frames = int((t_arr + 0.5) / self.cfg.dt) + 1
                self._brake_frames = max(self._brake_frames, frames)
        for d in dirs:
            target = my_lane + d
            if not 0 <= target < road.lane_count:
                continue
            if target == road.lane_of(o.y):
                continue
            if not self._lane_clear_for_evasion(me, others, target, o):
                continue
            self._profile = lane_change_profile(me.v, d, self.cfg)
            return

    def act(self, scene: Scene) -> VehicleAction:
        me = scene.av
        others = scene.bvs
        v_target = self._follow_speed(me, others)
        dv = _clamp(
            v_target - me.v,
            -self.p.decel_max * self.cfg.dt,
            self.p.accel_max * self.cfg.dt,
        )
        if not self._profile:
            self._plan_evasion(me, others)
            if not self._profile and not self._brake_frames:
                self._maybe_start_lane_change(me, others)
        if self._brake_frames:
            self._brake_frames -= 1
            dv = self.cfg.dv_limits[0]
        dtheta = self._profile.pop(0) if self._profile else 0.0
        if dtheta == 0.0 and abs(me.theta) > 1e-9:
            # straighten residual heading left over from clamped maneuvers
            dtheta = _clamp(-me.theta, *self.cfg.dtheta_limits)
        return VehicleAction(dv=dv, dtheta=dtheta)


@dataclass(frozen=True)
class FvdmParams:
    kappa: float = 0.41
    lam: float = 0.5
    v1: float = 6.75
    v2: float = 7.91
    c1: float = 0.13
    c2: float = 1.57
    l_c: float = 5.0
    lc_safety_gap: float = 10.0
    lc_incentive_gain: float = 0.1


class FvdmPolicy:
    """Full velocity difference car follower (forward-looking only).

    a = kappa * (V(dx) - v) + lam * (v_leader - v) with the usual
    tanh-shaped optimal velocity function; dx is the center-to-center
    headway to the nearest same-lane leader.
    """

    def __init__(self, params: FvdmParams = FvdmParams(), cfg: EnvConfig = EnvConfig()):
        self.p = params
        self.cfg = cfg
        self._profile: list = []

    def reset(self, scene: Scene, rng) -> None:
        self._profile = []

    def optimal_velocity(self, dx: float) -> float:
        return self.p.v1 + self.p.v2 * math.tanh(self.p.c1 * (dx - self.p.l_c) - self.p.c2)

    @property
    def _v_free(self) -> float:
        return self.p.v1 + self.p.v2

    def _accel(self, me: VehicleState, leader) -> float:
        if leader is None:
            return self.p.kappa * (self._v_free - me.v)
        dx = leader.x - me.x
        return self.p.kappa * (self.optimal_velocity(dx) - me.v) + self.p.lam * (
            leader.v - me.v
        )

    def _lane_speed(self, me: VehicleState, others, lane: int) -> float:
        leader = _lane_leader(me, others, lane, self.cfg)
        if leader is None:
            return self._v_free
        return self.optimal_velocity(leader.x - me.x)

    def _maybe_start_lane_change(self, me: VehicleState, others) -> None:
        road = self.cfg.road
        lane = road.lane_of(me.y)
        v_here = self._lane_speed(me, others, lane)
        need = self.p.lc_incentive_gain * self._v_free
        best_gain, best_dir = need, 0
        for direction in (-1, 1):
            target = lane + direction
            if not 0 <= target < road.lane_count:
                continue
            leader = _lane_leader(me, others, target, self.cfg)
            follower = _lane_follower(me, others, target, self.cfg)
            if leader is not None and _bumper_gap(me, leader, self.cfg.dims.length) <= self.p.lc_safety_gap:
                continue
            if follower is not None and _bumper_gap(follower, me, self.cfg.dims.length) <= self.p.lc_safety_gap:
                continue
            gain = self._lane_speed(me, others, target) - v_here
            if gain > best_gain:
                best_gain, best_dir = gain, direction
        if best_dir != 0:
            self._profile = lane_change_profile(me.v, best_dir, self.cfg)

    def act(self, scene: Scene) -> VehicleAction:
        me = scene.av
        leader = _lane_leader(me, scene.bvs, self.cfg.road.lane_of(me.y), self.cfg)
        dv = _clamp(self._accel(me, leader) * self.cfg.dt, *self.cfg.dv_limits)
        if not self._profile:
            self._maybe_start_lane_change(me, scene.bvs)
        dtheta = self._profile.pop(0) if self._profile else 0.0
        return VehicleAction(dv=dv, dtheta=dtheta)


class RearSensitiveFvdmPolicy(FvdmPolicy):
    """FVDM variant that also yields to a tailgating follower.

    When the rear gap is tighter than the front one, the velocity
    difference term couples to the follower, easing the ego forward.
    """

    def act(self, scene: Scene) -> VehicleAction:
        me = scene.av
        lane = self.cfg.road.lane_of(me.y)
        leader = _lane_leader(me, scene.bvs, lane, self.cfg)
        follower = _lane_follower(me, scene.bvs, lane, self.cfg)
        accel = self._accel(me, leader)
        if follower is not None:
            rear_gap = me.x - follower.x
            front_gap = (leader.x - me.x) if leader is not None else math.inf
            if rear_gap < front_gap:
                accel += self.p.lam * max(follower.v - me.v, 0.0)
        dv = _clamp(accel * self.cfg.dt, *self.cfg.dv_limits)
        if not self._profile:
            self._maybe_start_lane_change(me, scene.bvs)
        dtheta = self._profile.pop(0) if self._profile else 0.0
        return VehicleAction(dv=dv, dtheta=dtheta)


class DrBvPolicy:
    """Disturbance baseline: per-episode constant speeds, coin-flip lane moves.

    Each BV draws a target speed once per episode and holds it. At every
    decision tick (1 s default) an idle BV flips a fair coin between
    keeping its lane and starting a lane change; illegal directions are
    redirected to the only legal neighbor.
    """

    ACCEL_COMFORT = 2.0  # m/s^2 toward the drawn cruise speed

    def __init__(self, cfg: EnvConfig = EnvConfig(), speed_range=(15.0, 35.0), tick_s: float = 1.0):
        self.cfg = cfg
        self.speed_range = speed_range
        self.tick_frames = max(int(round(tick_s / cfg.dt)), 1)
        self._rng = None
        self._targets: list = []
        self._profiles: list = []

    def reset(self, scene: Scene, rng) -> None:
        self._rng = rng
        lo, hi = self.speed_range
        self._targets = [float(rng.uniform(lo, hi)) for _ in scene.bvs]
        self._profiles = [[] for _ in scene.bvs]

    def act(self, scene: Scene):
        if self._rng is None or len(self._targets) != scene.n_bvs:
            raise StructuralError("policy not reset for this scene")
        road = self.cfg.road
        actions = []
        for i, bv in enumerate(scene.bvs):
            if not self._profiles[i] and scene.t % self.tick_frames == 0:
                if self._rng.random() < 0.5:
                    direction = -1 if self._rng.random() < 0.5 else 1
                    lane = road.lane_of(bv.y)
                    if not 0 <= lane + direction < road.lane_count:
                        direction = -direction
                    self._profiles[i] = lane_change_profile(bv.v, direction, self.cfg)
            dtheta = self._profiles[i].pop(0) if self._profiles[i] else 0.0
            step = self.ACCEL_COMFORT * self.cfg.dt
            dv = _clamp(self._targets[i] - bv.v, -step, step)
            actions.append(VehicleAction(dv=dv, dtheta=dtheta))
        return tuple(actions)


def _swap_controlled(scene: Scene, idx: int) -> Scene:
    """View of the scene with BV idx in the controlled slot."""
    others = (scene.av,) + tuple(b for j, b in enumerate(scene.bvs) if j != idx)
    return Scene(t=scene.t, av=scene.bvs[idx], bvs=others)


class RuleBvPolicy:
    """Drives every BV with an independent copy of a rule-based AV model."""

    def __init__(self, factory):
        self.factory = factory
        self._units: list = []

    def reset(self, scene: Scene, rng) -> None:
        self._units = [self.factory() for _ in scene.bvs]
        for i, unit in enumerate(self._units):
            unit.reset(_swap_controlled(scene, i), rng)

    def act(self, scene: Scene):
        if len(self._units) != scene.n_bvs:
            raise StructuralError("policy not reset for this scene")
        return tuple(
            unit.act(_swap_controlled(scene, i)) for i, unit in enumerate(self._units)
        )


class LearnedBvPolicy:
    """Adapter from a trained policy network to the BV action interface."""

    def __init__(self, net: MlpParams, cfg: EnvConfig, mode: str = "stochastic"):
        if mode not in ("stochastic", "deterministic"):
            raise ConfigError(f"unknown policy mode {mode!r}")
        self.net = net
        self.cfg = cfg
        self.mode = mode
        self._rng = None

    def reset(self, scene: Scene, rng) -> None:
        self._rng = rng

    def act_vector(self, scene: Scene) -> np.ndarray:
        state = flatten_scene(scene)
        if self.net.sizes[0] != state.size:
            raise StructuralError(
                f"network expects input dim {self.net.sizes[0]}, scene gives {state.size}"
            )
        head = split_head(mlp_forward(self.net, state))
        limits = action_limits(self.cfg, scene.n_bvs)
        action, _ = sample_squashed(
            head, limits, rng=self._rng, deterministic=self.mode == "deterministic"
        )
        return action[0]

    def act(self, scene: Scene):
        vec = self.act_vector(scene)
        return tuple(
            VehicleAction(dv=vec[2 * i], dtheta=vec[2 * i + 1])
            for i in range(scene.n_bvs)
        )


class LearnedAvPolicy:
    """Adapter from a trained policy network to the AV action interface."""

    def __init__(self, net: MlpParams, cfg: EnvConfig, mode: str = "deterministic"):
        if mode not in ("stochastic", "deterministic"):
            raise ConfigError(f"unknown policy mode {mode!r}")
        self.net = net
        self.cfg = cfg
        self.mode = mode
        self._rng = None

    def reset(self, scene: Scene, rng) -> None:
        self._rng = rng

    def act(self, scene: Scene) -> VehicleAction:
        state = flatten_scene(scene)
        if self.net.sizes[0] != state.size:
            raise StructuralError(
                f"network expects input dim {self.net.sizes[0]}, scene gives {state.size}"
            )
        head = split_head(mlp_forward(self.net, state))
        limits = action_limits(self.cfg, 1)
        action, _ = sample_squashed(
            head, limits, rng=self._rng, deterministic=self.mode == "deterministic"
        )
        return VehicleAction(dv=float(action[0, 0]), dtheta=float(action[0, 1]))
