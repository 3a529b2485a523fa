"""Naturalistic driving data pipeline.

Ingests drone-recorded highway tracks (HighD-style CSV: frame, id, x, y,
width, height, xVelocity, laneId; width/height follow the HighD naming,
i.e. longitudinal/lateral footprint extent), derives per-frame actions
from consecutive rows, cuts multi-vehicle segments where a small group
stays mutually close, applies kinematic plausibility filters, and turns
the survivors into flattened transitions relabeled with the adversarial
reward (no collisions occur in recorded data, so the bounty term is 0).

A synthetic generator with the same CSV schema provides corpora for
tests and desk-scale training: clustered lane-keeping traffic with
conservative gaps that passes every filter by construction.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .env import EnvConfig
from .errors import ConfigError, ParseError, SchemaError, StructuralError
from .geometry import OrientedRect, rect_min_distance
from .scenario import (
    Scene,
    Transition,
    VehicleAction,
    VehicleState,
    flatten_bv_actions,
    flatten_scene,
)

REQUIRED_COLUMNS = ("frame", "id", "x", "y", "width", "height", "xVelocity", "laneId")

HEADING_EPS = 1e-3  # m of displacement below which heading carries over


@dataclass(frozen=True)
class TrackRow:
    frame: int
    vehicle_id: int
    x: float
    y: float
    width: float  # longitudinal extent (HighD naming)
    height: float  # lateral extent
    v: float
    lane_id: int


@dataclass(frozen=True)
class FilterSpec:
    v_min: float = 0.0
    v_max: float = 40.0
    a_min: float = -0.8 * 9.81
    a_max: float = 0.6 * 9.81
    min_frames: int = 10
    tol: float = 1e-9  # closed-interval boundary slack


@dataclass
class Segment:
    vehicle_ids: tuple
    av_id: int
    frame_lo: int
    frame_hi: int  # inclusive
    states: dict  # vehicle_id -> list[VehicleState]
    actions: dict  # vehicle_id -> list[VehicleAction], one shorter
    dims: dict  # vehicle_id -> (length, width)
    dt: float

    @property
    def n_frames(self) -> int:
        return self.frame_hi - self.frame_lo + 1

    def head_scene(self) -> Scene:
        bv_ids = [vid for vid in self.vehicle_ids if vid != self.av_id]
        return Scene(
            t=0,
            av=self.states[self.av_id][0],
            bvs=tuple(self.states[vid][0] for vid in bv_ids),
        )


def parse_tracks(source) -> list:
    """Read a tracks CSV into TrackRow records sorted by (id, frame).

    source may be a path or a file-like object. A missing column raises
    SchemaError naming it; an unparseable cell raises ParseError with its
    line number.
    """
    if hasattr(source, "read"):
        fh = source
        close = False
    else:
        fh = open(source, newline="")
        close = True
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError("empty tracks file")
        for col in REQUIRED_COLUMNS:
            if col not in reader.fieldnames:
                raise SchemaError(f"missing required column {col!r}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            try:
                rows.append(
                    TrackRow(
                        frame=int(rec["frame"]),
                        vehicle_id=int(rec["id"]),
                        x=float(rec["x"]),
                        y=float(rec["y"]),
                        width=float(rec["width"]),
                        height=float(rec["height"]),
                        v=float(rec["xVelocity"]),
                        lane_id=int(rec["laneId"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise ParseError(f"bad cell ({exc})", line=lineno) from None
    finally:
        if close:
            fh.close()
    rows.sort(key=lambda r: (r.vehicle_id, r.frame))
    return rows


def derive_actions(rows: list, dt: float):
    """Per-frame states and actions for one vehicle's contiguous rows.

    Heading comes from frame-to-frame displacement (carried over when the
    vehicle is nearly stationary); dv/dtheta are first differences. The
    final frame has no action. Returns (states, actions) with
    len(actions) == len(states) - 1.
    """
    if len(rows) < 2:
        raise StructuralError("need at least two frames to derive actions")
    for a, b in zip(rows, rows[1:]):
        if b.frame != a.frame + 1:
            raise StructuralError(
                f"vehicle {a.vehicle_id}: frames {a.frame}->{b.frame} not contiguous"
            )
    thetas = []
    prev = 0.0
    for a, b in zip(rows, rows[1:]):
        dx, dy = b.x - a.x, b.y - a.y
        if math.hypot(dx, dy) > HEADING_EPS:
            prev = math.atan2(dy, dx)
        thetas.append(prev)
    thetas.append(thetas[-1])  # last frame carries the previous heading

    states = [
        VehicleState(x=r.x, y=r.y, v=r.v, theta=th) for r, th in zip(rows, thetas)
    ]
    actions = [
        VehicleAction(dv=rows[k + 1].v - rows[k].v, dtheta=thetas[k + 1] - thetas[k])
        for k in range(len(rows) - 1)
    ]
    return states, actions


def _max_cliques(vertices, edges):
    """Bron-Kerbosch with pivoting; deterministic via sorted vertices."""
    adj = {v: set() for v in vertices}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    cliques = []

    def expand(r, p, x):
        if not p and not x:
            cliques.append(frozenset(r))
            return
        pivot = max(p | x, key=lambda v: len(adj[v] & p))
        for v in sorted(p - adj[pivot]):
            expand(r | {v}, p & adj[v], x & adj[v])
            p = p - {v}
            x = x | {v}

    expand(set(), set(vertices), set())
    return cliques


def extract_segments(
    rows: list,
    proximity: float = 50.0,
    min_frames: int = 10,
    group_sizes=(2, 5),
    dt: float = 0.04,
) -> list:
    """Cut maximal windows where 2-5 vehicles stay mutually within range.

    Mutual proximity per frame is a clique in the distance graph; a group
    survives over the maximal contiguous frame run in which it remains a
    clique, and each surviving group yields one Segment per choice of the
    vehicle playing the AV.
    """
    lo_size, hi_size = group_sizes
    by_frame: dict = {}
    by_vehicle: dict = {}
    for r in rows:
        by_frame.setdefault(r.frame, {})[r.vehicle_id] = r
        by_vehicle.setdefault(r.vehicle_id, {})[r.frame] = r

    group_frames: dict = {}
    for frame in sorted(by_frame):
        present = by_frame[frame]
        ids = sorted(present)
        edges = []
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                ra, rb = present[a], present[b]
                if math.hypot(ra.x - rb.x, ra.y - rb.y) <= proximity:
                    edges.append((a, b))
        for clique in _max_cliques(ids, edges):
            if lo_size <= len(clique) <= hi_size:
                group_frames.setdefault(clique, []).append(frame)

    segments = []
    for group in sorted(group_frames, key=lambda g: tuple(sorted(g))):
        frames = group_frames[group]
        runs = []
        start = prev = frames[0]
        for f in frames[1:]:
            if f == prev + 1:
                prev = f
                continue
            runs.append((start, prev))
            start = prev = f
        runs.append((start, prev))
        for lo, hi in runs:
            if hi - lo + 1 < min_frames:
                continue
            ids = tuple(sorted(group))
            states = {}
            actions = {}
            dims = {}
            for vid in ids:
                veh_rows = [by_vehicle[vid][f] for f in range(lo, hi + 1)]
                st, ac = derive_actions(veh_rows, dt)
                states[vid] = st
                actions[vid] = ac
                dims[vid] = (veh_rows[0].width, veh_rows[0].height)
            for av_id in ids:
                segments.append(
                    Segment(
                        vehicle_ids=ids,
                        av_id=av_id,
                        frame_lo=lo,
                        frame_hi=hi,
                        states=states,
                        actions=actions,
                        dims=dims,
                        dt=dt,
                    )
                )
    return segments


def filter_kinematics(segment: Segment, spec: FilterSpec = FilterSpec()) -> bool:
    """True when every speed and acceleration sits inside the closed bounds."""
    if segment.n_frames < spec.min_frames:
        return False
    for vid in segment.vehicle_ids:
        for st in segment.states[vid]:
            if st.v < spec.v_min - spec.tol or st.v > spec.v_max + spec.tol:
                return False
        for ac in segment.actions[vid]:
            a = ac.dv / segment.dt
            if a < spec.a_min - spec.tol or a > spec.a_max + spec.tol:
                return False
    return True


def build_transitions(segment: Segment, cfg: EnvConfig) -> list:
    """Flattened (s, a, r, s', done) records for one segment.

    The reward is the adversarial distance term recomputed from the
    recorded footprints; the bounty term is zero since recorded traffic
    contains no collisions. BV actions are clamped into the environment
    limits. done marks only the final transition.
    """
    bv_ids = [vid for vid in segment.vehicle_ids if vid != segment.av_id]
    dv_lo, dv_hi = cfg.dv_limits
    dth_lo, dth_hi = cfg.dtheta_limits

    def scene_at(k: int) -> Scene:
        return Scene(
            t=k,
            av=segment.states[segment.av_id][k],
            bvs=tuple(segment.states[vid][k] for vid in bv_ids),
        )

    def rect_of(vid: int, k: int) -> OrientedRect:
        st = segment.states[vid][k]
        length, width = segment.dims[vid]
        return OrientedRect(st.x, st.y, length / 2.0, width / 2.0, st.theta)

    out = []
    n = segment.n_frames
    for k in range(n - 1):
        acts = []
        for vid in bv_ids:
            a = segment.actions[vid][k]
            acts.append(
                VehicleAction(
                    dv=min(max(a.dv, dv_lo), dv_hi),
                    dtheta=min(max(a.dtheta, dth_lo), dth_hi),
                )
            )
        scene = Scene(
            t=k,
            av=segment.states[segment.av_id][k],
            bvs=tuple(segment.states[vid][k] for vid in bv_ids),
            bv_actions=tuple(acts),
        )
        av_rect = rect_of(segment.av_id, k + 1)
        reward = -min(
            rect_min_distance(av_rect, rect_of(vid, k + 1)) for vid in bv_ids
        )
        out.append(
            Transition(
                state=flatten_scene(scene),
                action=flatten_bv_actions(scene),
                reward=reward,
                next_state=flatten_scene(scene_at(k + 1)),
                done=(k == n - 2),
            )
        )
    return out


# -- synthetic corpus ------------------------------------------------------


@dataclass(frozen=True)
class GenConfig:
    n_clusters: int = 20
    cluster_size: tuple = (2, 5)  # inclusive range
    n_frames: int = 100
    dt: float = 0.04
    speed_range: tuple = (20.0, 32.0)
    speed_wiggle: float = 0.3  # m/s sinusoidal amplitude
    lane_change_prob: float = 0.15  # per cluster per episode
    lane_count: int = 3
    lane_width: float = 3.75
    vehicle_length: float = 5.0
    vehicle_width: float = 2.0
    cluster_spacing: float = 400.0
    same_lane_gap: float = 22.0  # center-to-center within a lane
    lane_stagger: float = 8.0  # longitudinal offset between lanes
    jitter: float = 1.5


def _cluster_slots(size: int, gc: GenConfig, rng) -> list:
    """(lane, base_x) placements: <=2 per lane, staggered across lanes."""
    lanes = list(rng.permutation(gc.lane_count))
    lo_lanes = (size + 1) // 2  # at most two vehicles per lane
    hi_lanes = min(size, gc.lane_count)
    n_lanes = int(rng.integers(lo_lanes, hi_lanes + 1))
    slots = []
    for k in range(size):
        lane = int(lanes[k % n_lanes])
        row = k // n_lanes
        base = lane * gc.lane_stagger + row * gc.same_lane_gap
        slots.append((lane, base + float(rng.uniform(-gc.jitter, gc.jitter))))
    return slots


def synth_ndd(gc: GenConfig, rng) -> list:
    """Generate clustered lane-keeping traffic as TrackRow records.

    Clusters are far apart so segment extraction sees each one as a
    single mutually-close group. Within a cluster all vehicles share a
    base speed (plus a small sinusoid), keeping gaps conservative over
    the whole recording. Occasionally one vehicle drifts into an empty
    neighbor lane along a smooth lateral profile.
    """
    lo_size, hi_size = gc.cluster_size
    rows = []
    vid = 0
    for c in range(gc.n_clusters):
        size = int(rng.integers(lo_size, hi_size + 1))
        slots = _cluster_slots(size, gc, rng)
        base_x = 100.0 + c * gc.cluster_spacing
        base_v = float(rng.uniform(*gc.speed_range))
        lanes_used = {lane for lane, _ in slots}
        free_lanes = [l for l in range(gc.lane_count) if l not in lanes_used]

        mover = -1
        mover_start = 0
        mover_target = 0
        if free_lanes and rng.random() < gc.lane_change_prob:
            mover = int(rng.integers(size))
            mover_start = int(rng.integers(5, max(gc.n_frames // 2, 6)))
            cand = [l for l in free_lanes if abs(l - slots[mover][0]) == 1]
            if cand:
                mover_target = int(cand[0])
            else:
                mover = -1

        for k, (lane, offset) in enumerate(slots):
            veh_id = vid
            vid += 1
            phase = float(rng.uniform(0.0, 2.0 * math.pi))
            period = float(rng.uniform(4.0, 8.0))
            y0 = (lane + 0.5) * gc.lane_width
            x = base_x + offset
            lc_frames = int(3.0 / gc.dt)
            for f in range(gc.n_frames):
                t = f * gc.dt
                v = base_v + gc.speed_wiggle * math.sin(
                    2.0 * math.pi * t / period + phase
                )
                y = y0
                if k == mover and f >= mover_start:
                    frac = min((f - mover_start) / lc_frames, 1.0)
                    shift = (mover_target - lane) * gc.lane_width
                    y = y0 + shift * 0.5 * (1.0 - math.cos(math.pi * frac))
                lane_now = min(max(int(y // gc.lane_width), 0), gc.lane_count - 1)
                rows.append(
                    TrackRow(
                        frame=f,
                        vehicle_id=veh_id,
                        x=x,
                        y=y,
                        width=gc.vehicle_length,
                        height=gc.vehicle_width,
                        v=v,
                        lane_id=lane_now,
                    )
                )
                x += v * gc.dt
    rows.sort(key=lambda r: (r.vehicle_id, r.frame))
    return rows


def write_tracks_csv(rows: list, path) -> None:
    """Write TrackRow records in the ingestible CSV schema."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REQUIRED_COLUMNS)
        for r in sorted(rows, key=lambda r: (r.frame, r.vehicle_id)):
            w.writerow(
                [
                    r.frame,
                    r.vehicle_id,
                    f"{r.x:.6f}",
                    f"{r.y:.6f}",
                    f"{r.width:.2f}",
                    f"{r.height:.2f}",
                    f"{r.v:.6f}",
                    r.lane_id,
                ]
            )


def tracks_csv_text(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(REQUIRED_COLUMNS)
    for r in sorted(rows, key=lambda r: (r.frame, r.vehicle_id)):
        w.writerow(
            [
                r.frame,
                r.vehicle_id,
                f"{r.x:.6f}",
                f"{r.y:.6f}",
                f"{r.width:.2f}",
                f"{r.height:.2f}",
                f"{r.v:.6f}",
                r.lane_id,
            ]
        )
    return buf.getvalue()


@dataclass
class IngestReport:
    n_rows: int = 0
    n_vehicles: int = 0
    n_groups: int = 0
    n_segments: int = 0
    n_rejected: int = 0
    n_transitions: int = 0
    by_bv_count: dict = field(default_factory=dict)


def ingest(
    rows: list,
    cfg: EnvConfig,
    proximity: float = 50.0,
    min_frames: int = 10,
    filter_spec: FilterSpec | None = None,
):
    """rows -> (accepted segments, transitions, report)."""
    spec = filter_spec or FilterSpec(min_frames=min_frames)
    segments = extract_segments(
        rows, proximity=proximity, min_frames=min_frames, dt=cfg.dt
    )
    report = IngestReport(
        n_rows=len(rows),
        n_vehicles=len({r.vehicle_id for r in rows}),
        n_groups=len({(s.vehicle_ids, s.frame_lo) for s in segments}),
    )
    kept = []
    transitions = []
    for seg in segments:
        if not filter_kinematics(seg, spec):
            report.n_rejected += 1
            continue
        kept.append(seg)
        transitions.extend(build_transitions(seg, cfg))
        n_bvs = len(seg.vehicle_ids) - 1
        report.by_bv_count[n_bvs] = report.by_bv_count.get(n_bvs, 0) + 1
    report.n_segments = len(kept)
    report.n_transitions = len(transitions)
    return kept, transitions, report


# -- transition store -------------------------------------------------------


def save_transition_store(path, segments, transitions, report: IngestReport) -> None:
    """Persist ingested transitions grouped by BV count.

    Each group carries its flattened transition arrays plus the head
    frames of its source segments so trainers can start episodes from
    recorded configurations.
    """
    from .nn import save_arrays

    groups: dict = {}
    for tr in transitions:
        g = tr.action.size // 2
        if tr.state.size != 4 * (g + 1):
            raise StructuralError(
                f"transition dims disagree: state {tr.state.size}, action {tr.action.size}"
            )
        groups.setdefault(g, []).append(tr)
    heads: dict = {}
    for seg in segments:
        g = len(seg.vehicle_ids) - 1
        heads.setdefault(g, []).append(flatten_scene(seg.head_scene()))
    arrays = {}
    for g, trs in sorted(groups.items()):
        arrays[f"g{g}_state"] = np.stack([t.state for t in trs])
        arrays[f"g{g}_action"] = np.stack([t.action for t in trs])
        arrays[f"g{g}_reward"] = np.array([t.reward for t in trs])
        arrays[f"g{g}_next"] = np.stack([t.next_state for t in trs])
        arrays[f"g{g}_done"] = np.array([float(t.done) for t in trs])
        arrays[f"g{g}_heads"] = np.stack(heads.get(g, [np.zeros(4 * (g + 1))]))
    meta = {
        "kind": "transition_store",
        "groups": sorted(groups),
        "report": {
            "n_rows": report.n_rows,
            "n_vehicles": report.n_vehicles,
            "n_groups": report.n_groups,
            "n_segments": report.n_segments,
            "n_rejected": report.n_rejected,
            "n_transitions": report.n_transitions,
            "by_bv_count": {str(k): v for k, v in report.by_bv_count.items()},
        },
    }
    save_arrays(path, arrays, meta)


def load_transition_store(path):
    """(groups, meta) from a stored ingest result.

    groups maps BV count -> dict of state/action/reward/next/done/heads
    arrays.
    """
    from .nn import load_arrays

    arrays, meta = load_arrays(path)
    if meta.get("kind") != "transition_store":
        raise StructuralError(f"{path}: not a transition store")
    groups = {}
    for g in meta["groups"]:
        groups[int(g)] = {
            key: arrays[f"g{g}_{key}"]
            for key in ("state", "action", "reward", "next", "done", "heads")
        }
    return groups, meta


def store_replay_buffer(groups: dict, n_bvs: int, capacity: int):
    """Offline replay buffer for one BV-count group of a loaded store."""
    from .replay import ReplayBuffer

    if n_bvs not in groups:
        raise ConfigError(
            f"store has no {n_bvs}-BV transitions (available: {sorted(groups)})"
        )
    g = groups[n_bvs]
    n = g["state"].shape[0]
    buf = ReplayBuffer(max(capacity, n), g["state"].shape[1], g["action"].shape[1])
    for i in range(n):
        buf.push(g["state"][i], g["action"][i], g["reward"][i], g["next"][i], g["done"][i])
    return buf


def store_init_pool(groups: dict, n_bvs: int):
    """Initial-scene pool rebuilt from stored segment head frames."""
    from .env import NddInitPool
    from .scenario import unflatten_scene

    if n_bvs not in groups:
        raise ConfigError(
            f"store has no {n_bvs}-BV segments (available: {sorted(groups)})"
        )
    heads = groups[n_bvs]["heads"]
    return NddInitPool([unflatten_scene(h) for h in heads])
