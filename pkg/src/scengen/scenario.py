"""Scenario data model: vehicle states, scenes, episodes, transitions.

A scene holds one autonomous vehicle (AV) plus N background vehicles
(BVs) at a single frame together with the actions applied at that frame.
Flattening order is [x, y, v, theta] per vehicle with the AV first, which
fixes the layout of every state vector fed to the learning code.

Scenario logs are line-delimited text: a comment header with dt/outcome,
then one frame per line as

    t av.x av.y av.v av.theta av.dv av.dtheta [bv_i x y v theta dv dtheta ...]

with all floats printed as 6-decimal fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParseError, StructuralError

OUTCOMES = ("av_collision", "bv_collision", "road_departure", "horizon")

STATE_FIELDS = 4  # x, y, v, theta
ACTION_FIELDS = 2  # dv, dtheta


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    v: float
    theta: float


@dataclass(frozen=True)
class VehicleAction:
    dv: float = 0.0
    dtheta: float = 0.0


ZERO_ACTION = VehicleAction(0.0, 0.0)


@dataclass(frozen=True)
class Scene:
    t: int
    av: VehicleState
    bvs: tuple[VehicleState, ...]
    av_action: VehicleAction = ZERO_ACTION
    bv_actions: tuple[VehicleAction, ...] = ()

    def __post_init__(self):
        if self.bv_actions and len(self.bv_actions) != len(self.bvs):
            raise StructuralError(
                f"{len(self.bvs)} BVs but {len(self.bv_actions)} BV actions"
            )
        if not self.bv_actions:
            object.__setattr__(self, "bv_actions", (ZERO_ACTION,) * len(self.bvs))

    @property
    def n_bvs(self) -> int:
        return len(self.bvs)

    def vehicles(self) -> tuple[VehicleState, ...]:
        return (self.av,) + self.bvs


@dataclass
class Scenario:
    frames: list[Scene]
    dt: float
    outcome: str


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


def flatten_scene(scene: Scene) -> np.ndarray:
    """State vector [x, y, v, theta] per vehicle, AV in slot 0."""
    out = np.empty(STATE_FIELDS * (scene.n_bvs + 1))
    for i, veh in enumerate(scene.vehicles()):
        out[STATE_FIELDS * i : STATE_FIELDS * (i + 1)] = (veh.x, veh.y, veh.v, veh.theta)
    return out


def flatten_bv_actions(scene: Scene) -> np.ndarray:
    """Action vector [dv, dtheta] per BV, same vehicle order as the state."""
    out = np.empty(ACTION_FIELDS * scene.n_bvs)
    for i, act in enumerate(scene.bv_actions):
        out[ACTION_FIELDS * i : ACTION_FIELDS * (i + 1)] = (act.dv, act.dtheta)
    return out


def unflatten_scene(
    state: np.ndarray,
    bv_actions: np.ndarray | None = None,
    av_action: VehicleAction = ZERO_ACTION,
    t: int = 0,
) -> Scene:
    """Inverse of flatten_scene (+ flatten_bv_actions when given)."""
    state = np.asarray(state, dtype=float)
    if state.ndim != 1 or state.size % STATE_FIELDS != 0 or state.size < 2 * STATE_FIELDS:
        raise StructuralError(f"bad state vector of size {state.shape}")
    n_veh = state.size // STATE_FIELDS
    vehicles = [
        VehicleState(*state[STATE_FIELDS * i : STATE_FIELDS * (i + 1)])
        for i in range(n_veh)
    ]
    n_bvs = n_veh - 1
    if bv_actions is None:
        acts = (ZERO_ACTION,) * n_bvs
    else:
        bv_actions = np.asarray(bv_actions, dtype=float)
        if bv_actions.size != ACTION_FIELDS * n_bvs:
            raise StructuralError(
                f"expected {ACTION_FIELDS * n_bvs} action values, got {bv_actions.size}"
            )
        acts = tuple(
            VehicleAction(*bv_actions[ACTION_FIELDS * i : ACTION_FIELDS * (i + 1)])
            for i in range(n_bvs)
        )
    return Scene(t=t, av=vehicles[0], bvs=tuple(vehicles[1:]), bv_actions=acts)


def validate_scenario(sc: Scenario) -> list[str]:
    """Structural check; returns a list of problems (empty when valid)."""
    problems = []
    if sc.dt <= 0:
        problems.append(f"dt must be positive, got {sc.dt}")
    if sc.outcome not in OUTCOMES:
        problems.append(f"unknown outcome {sc.outcome!r}")
    if not sc.frames:
        problems.append("scenario has no frames")
        return problems
    n = sc.frames[0].n_bvs
    for k, scene in enumerate(sc.frames):
        if scene.n_bvs != n:
            problems.append(f"frame {k}: vehicle count changed ({scene.n_bvs} != {n})")
        want = sc.frames[0].t + k
        if scene.t != want:
            problems.append(f"frame {k}: index {scene.t}, expected {want}")
    return problems


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_scenario_log(sc: Scenario, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# dt={_fmt(sc.dt)} outcome={sc.outcome}\n")
        for scene in sc.frames:
            parts = [str(scene.t)]
            for veh, act in zip(scene.vehicles(), (scene.av_action,) + scene.bv_actions):
                parts += [_fmt(veh.x), _fmt(veh.y), _fmt(veh.v), _fmt(veh.theta)]
                parts += [_fmt(act.dv), _fmt(act.dtheta)]
            fh.write(" ".join(parts) + "\n")


def read_scenario_log(path) -> Scenario:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"empty scenario log {path}")
    header = lines[0]
    if not header.startswith("#"):
        raise ParseError("missing header line", line=1)
    dt = None
    outcome = None
    for tok in header[1:].split():
        key, _, val = tok.partition("=")
        if key == "dt":
            dt = float(val)
        elif key == "outcome":
            outcome = val
    if dt is None or outcome is None:
        raise ParseError("header must carry dt= and outcome=", line=1)

    frames = []
    n_tokens = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        toks = line.split()
        if n_tokens is None:
            n_tokens = len(toks)
            per_veh = STATE_FIELDS + ACTION_FIELDS
            if (n_tokens - 1) % per_veh != 0 or n_tokens < 1 + 2 * per_veh:
                raise ParseError(f"frame line has {n_tokens} fields", line=lineno)
        elif len(toks) != n_tokens:
            raise ParseError(
                f"expected {n_tokens} fields, got {len(toks)}", line=lineno
            )
        try:
            t = int(toks[0])
            vals = [float(x) for x in toks[1:]]
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        per_veh = STATE_FIELDS + ACTION_FIELDS
        n_veh = len(vals) // per_veh
        vehicles = []
        actions = []
        for i in range(n_veh):
            chunk = vals[per_veh * i : per_veh * (i + 1)]
            vehicles.append(VehicleState(*chunk[:STATE_FIELDS]))
            actions.append(VehicleAction(*chunk[STATE_FIELDS:]))
        frames.append(
            Scene(
                t=t,
                av=vehicles[0],
                bvs=tuple(vehicles[1:]),
                av_action=actions[0],
                bv_actions=tuple(actions[1:]),
            )
        )
    if not frames:
        raise ParseError(f"scenario log {path} has a header but no frames")
    return Scenario(frames=frames, dt=dt, outcome=outcome)


def scene_with_actions(scene: Scene, av_action: VehicleAction, bv_actions) -> Scene:
    """Copy of the scene annotated with the actions applied at its frame."""
    return replace(scene, av_action=av_action, bv_actions=tuple(bv_actions))
