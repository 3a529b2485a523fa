"""Evaluation rollouts and risk/exposure metrics.

Collision rate is the percentage of evaluation episodes ending in an
AV collision. Time/distance-normalized risk divides collision count by
the summed duration (CPS, 1/s) and summed AV travel distance (CPM, 1/m)
over *all* episodes, collision-free ones included. Average collision
time/distance are means over the colliding episodes only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import EnvConfig, EVENT_AV_COLLISION, env_reset, env_step
from .errors import StructuralError
from .scenario import Scenario, Scene, scene_with_actions


@dataclass
class EpisodeLog:
    outcome: str
    duration: float  # s
    av_distance: float  # m traveled by the AV
    seed: int = 0
    scenario: Scenario | None = None


def run_episode(
    av_policy,
    bv_policy,
    env_cfg: EnvConfig,
    init,
    rng: np.random.Generator,
    keep_scenario: bool = False,
    seed: int = 0,
) -> EpisodeLog:
    scene = env_reset(env_cfg, init, rng)
    av_policy.reset(scene, rng)
    bv_policy.reset(scene, rng)
    frames = []
    distance = 0.0
    while True:
        bv_actions = bv_policy.act(scene)
        out = env_step(scene, bv_actions, av_policy, env_cfg)
        if keep_scenario:
            frames.append(scene_with_actions(scene, out.av_action, bv_actions))
        distance += scene.av.v * env_cfg.dt
        scene = out.next_scene
        if out.done:
            if keep_scenario:
                frames.append(scene)
            break
    steps = scene.t - 0
    scenario = Scenario(frames=frames, dt=env_cfg.dt, outcome=out.event) if keep_scenario else None
    return EpisodeLog(
        outcome=out.event,
        duration=steps * env_cfg.dt,
        av_distance=distance,
        seed=seed,
        scenario=scenario,
    )


def run_evaluation(
    av_policy,
    bv_policy,
    n_episodes: int,
    env_cfg: EnvConfig,
    init,
    rng: np.random.Generator,
    keep_scenarios: bool = False,
    seed: int = 0,
) -> list:
    return [
        run_episode(av_policy, bv_policy, env_cfg, init, rng, keep_scenarios, seed)
        for _ in range(n_episodes)
    ]


@dataclass
class MetricsReport:
    n_episodes: int
    n_collisions: int
    cr: float  # percent
    act: float | None  # s, None when no collisions
    acd: float | None  # m, None when no collisions
    cps: float  # collisions per second of evaluation
    cpm_per_m: float  # collisions per meter of AV travel
    cpm_per_100m: float
    total_time: float
    total_distance: float


def compute_metrics(logs: list) -> MetricsReport:
    if not logs:
        raise StructuralError("no episodes to score")
    n = len(logs)
    col = [ep for ep in logs if ep.outcome == EVENT_AV_COLLISION]
    n_col = len(col)
    total_time = sum(ep.duration for ep in logs)
    total_dist = sum(ep.av_distance for ep in logs)
    act = sum(ep.duration for ep in col) / n_col if n_col else None
    acd = sum(ep.av_distance for ep in col) / n_col if n_col else None
    cps = n_col / total_time if total_time > 0 else 0.0
    cpm = n_col / total_dist if total_dist > 0 else 0.0
    return MetricsReport(
        n_episodes=n,
        n_collisions=n_col,
        cr=100.0 * n_col / n,
        act=act,
        acd=acd,
        cps=cps if n_col else 0.0,
        cpm_per_m=cpm if n_col else 0.0,
        cpm_per_100m=(100.0 * cpm) if n_col else 0.0,
        total_time=total_time,
        total_distance=total_dist,
    )


# -- state-space distributions ----------------------------------------------


@dataclass
class GapHistograms:
    follow_counts: np.ndarray
    follow_edges: np.ndarray
    lateral_counts: np.ndarray
    lateral_edges: np.ndarray
    n_vehicle_frames: int


def _scene_gaps(scene: Scene, cfg: EnvConfig):
    """(following, lateral) gap samples contributed by one scene."""
    vehicles = scene.vehicles()
    length = cfg.dims.length
    follow = []
    lateral = []
    for i, me in enumerate(vehicles):
        my_lane = cfg.road.lane_of(me.y)
        leader_dx = None
        near_dy = None
        for j, other in enumerate(vehicles):
            if i == j:
                continue
            if cfg.road.lane_of(other.y) == my_lane and other.x > me.x:
                dx = other.x - me.x
                if leader_dx is None or dx < leader_dx:
                    leader_dx = dx
            if abs(other.x - me.x) < length:  # longitudinal footprints overlap
                dy = other.y - me.y
                if near_dy is None or abs(dy) < abs(near_dy):
                    near_dy = dy
        if leader_dx is not None:
            follow.append(leader_dx - length)  # bumper-to-bumper
        if near_dy is not None:
            lateral.append(near_dy)
    return follow, lateral


def gap_distributions(
    scenarios: list,
    cfg: EnvConfig,
    follow_edges=None,
    lateral_edges=None,
) -> GapHistograms:
    """Histogram following distances and lateral offsets over all frames."""
    if follow_edges is None:
        follow_edges = np.arange(0.0, 52.0, 2.0)
    if lateral_edges is None:
        lateral_edges = np.arange(-6.0, 6.25, 0.5)
    follow_edges = np.asarray(follow_edges, dtype=float)
    lateral_edges = np.asarray(lateral_edges, dtype=float)
    follow_all = []
    lateral_all = []
    frames = 0
    for sc in scenarios:
        for scene in sc.frames:
            f, l = _scene_gaps(scene, cfg)
            follow_all.extend(f)
            lateral_all.extend(l)
            frames += len(scene.vehicles())
    fc, _ = np.histogram(follow_all, bins=follow_edges)
    lc, _ = np.histogram(lateral_all, bins=lateral_edges)
    return GapHistograms(
        follow_counts=fc,
        follow_edges=follow_edges,
        lateral_counts=lc,
        lateral_edges=lateral_edges,
        n_vehicle_frames=frames,
    )


@dataclass
class CollisionDistanceHists:
    edges: np.ndarray
    probability: np.ndarray  # shares among colliding episodes, sums to 1
    frequency: np.ndarray  # collisions per meter of total travel, sums to CPM


def collision_distance_distribution(logs: list, edges=None) -> CollisionDistanceHists:
    """Where (in AV travel distance) collisions happen.

    The probability view normalizes within colliding episodes; the
    frequency view divides by total distance over all episodes so its
    bin sum reproduces collisions-per-meter exactly.
    """
    if edges is None:
        edges = np.arange(0.0, 165.0, 15.0)
    edges = np.asarray(edges, dtype=float)
    col_d = [ep.av_distance for ep in logs if ep.outcome == EVENT_AV_COLLISION]
    total_dist = sum(ep.av_distance for ep in logs)
    counts, _ = np.histogram(col_d, bins=edges)
    n_col = counts.sum()
    prob = counts / n_col if n_col else np.zeros_like(counts, dtype=float)
    freq = counts / total_dist if total_dist > 0 else np.zeros_like(counts, dtype=float)
    return CollisionDistanceHists(edges=edges, probability=prob, frequency=freq)


def pca_project(samples: np.ndarray, q_values=None):
    """Project rows onto the top-2 principal directions.

    Returns (points, explained, q) where explained holds each
    component's share of total variance and q carries the optional
    per-row weights through unchanged (for rendering). Rank-deficient
    inputs are padded with zero components.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise StructuralError("need a (n>=2, d) sample matrix")
    q = None
    if q_values is not None:
        q = np.asarray(q_values, dtype=float).reshape(-1)
        if q.size != x.shape[0]:
            raise StructuralError(
                f"{x.shape[0]} sample rows but {q.size} weights"
            )
    xc = x - x.mean(axis=0)
    cov = (xc.T @ xc) / (x.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    total = vals.sum()
    d = x.shape[1]
    comps = []
    explained = []
    for k in range(2):
        if k < d and total > 0 and vals[k] > 0:
            v = vecs[:, k]
            # deterministic sign: largest-magnitude coordinate positive
            pivot = np.argmax(np.abs(v))
            if v[pivot] < 0:
                v = -v
            comps.append(v)
            explained.append(vals[k] / total)
        else:
            comps.append(np.zeros(d))
            explained.append(0.0)
    points = xc @ np.stack(comps, axis=1)
    return points, np.asarray(explained), q


def ema(values, coef: float = 0.99) -> np.ndarray:
    """Exponential smoothing with the given persistence coefficient."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    acc = None
    for i, v in enumerate(values):
        acc = v if acc is None else coef * acc + (1.0 - coef) * v
        out[i] = acc
    return out
