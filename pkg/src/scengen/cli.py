"""Command-line entry point.

One binary with subcommands covering the whole pipeline: generate or
ingest track data, train the adversarial background traffic, train and
fine-tune the AV model, evaluate matchups, and export report tables.
Every command is deterministic given (config, seed); outputs land under
--out next to a manifest.json describing the run.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import config as cfgmod
from .env import EnvConfig, SyntheticInit
from .errors import ConfigError, ScengenError, StructuralError
from .metrics import (
    EpisodeLog,
    collision_distance_distribution,
    compute_metrics,
    gap_distributions,
    pca_project,
    run_evaluation,
)
from .ndd import (
    GenConfig,
    ingest,
    load_transition_store,
    parse_tracks,
    save_transition_store,
    store_init_pool,
    store_replay_buffer,
    synth_ndd,
    write_tracks_csv,
)
from .nn import MlpParams, load_mlp, mlp_forward, save_mlp
from .policies import (
    DrBvPolicy,
    FvdmPolicy,
    KraussPolicy,
    LearnedAvPolicy,
    LearnedBvPolicy,
    RearSensitiveFvdmPolicy,
    RuleBvPolicy,
    UniformPolicy,
)
from .scenario import read_scenario_log, write_scenario_log
from .trainer import (
    BvTrainer,
    finetune_alternate,
    load_checkpoint_nets,
    train_av_sac,
    write_training_log,
)

AV_NAMES = ("uniform", "sumo", "fvdm", "rear-fvdm")
BV_NAMES = ("dr", "fvdm")


# -- shared plumbing ---------------------------------------------------------


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _write_manifest(out_dir, command, config_path, seeds, started, extra=None):
    finished = time.time()
    payload = f"{command}|{out_dir}|{started}".encode()
    manifest = {
        "command": command,
        "config": config_path,
        "seeds": list(seeds),
        "out": out_dir,
        "run_id": hashlib.sha1(payload).hexdigest()[:12],
        "started": started,
        "finished": finished,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _csv_writer(fh, columns):
    w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    return w


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def _resolve_av(spec: str, env_cfg: EnvConfig):
    if spec == "uniform":
        return UniformPolicy()
    if spec == "sumo":
        return KraussPolicy(cfg=env_cfg)
    if spec == "fvdm":
        return FvdmPolicy(cfg=env_cfg)
    if spec == "rear-fvdm":
        return RearSensitiveFvdmPolicy(cfg=env_cfg)
    if os.path.exists(spec):
        net = _load_policy_net(spec)
        return LearnedAvPolicy(net, env_cfg, mode="deterministic")
    raise ConfigError(
        f"unknown AV model {spec!r}; valid names: {', '.join(AV_NAMES)}, "
        "or the path of a trained policy"
    )


def _resolve_bv(spec: str, env_cfg: EnvConfig):
    if spec == "dr":
        return DrBvPolicy(cfg=env_cfg)
    if spec == "fvdm":
        return RuleBvPolicy(lambda: FvdmPolicy(cfg=env_cfg))
    if os.path.exists(spec):
        net = _load_policy_net(spec)
        return LearnedBvPolicy(net, env_cfg, mode="stochastic")
    raise ConfigError(
        f"unknown BV model {spec!r}; valid names: {', '.join(BV_NAMES)}, "
        "or the path of a trained policy"
    )


def _load_policy_net(path: str) -> MlpParams:
    try:
        return load_mlp(path)
    except StructuralError:
        net, _, _, _, _ = load_checkpoint_nets(path)
        return net


def _net_n_bvs(net: MlpParams) -> int:
    return net.sizes[0] // 4 - 1


def _make_init(args, groups, n_bvs: int):
    if groups is not None:
        return store_init_pool(groups, n_bvs)
    return SyntheticInit(n_bvs=n_bvs)


def _load_store(path):
    if path is None:
        return None
    if not os.path.exists(path):
        raise ConfigError(f"transition store not found: {path}")
    groups, _ = load_transition_store(path)
    return groups


# -- synth-ndd ---------------------------------------------------------------


def cmd_synth_ndd(args) -> int:
    started = time.time()
    cfg = cfgmod.load_config(args.config)
    sec = cfg["synth_ndd"]
    seed = args.seed if args.seed is not None else int(sec["seed"])
    gen = GenConfig(
        n_clusters=int(sec["n_clusters"]),
        n_frames=int(sec["n_frames"]),
        lane_count=int(cfg["env"]["lane_count"]),
        lane_width=float(cfg["env"]["lane_width"]),
        dt=float(cfg["env"]["dt"]),
    )
    rows = synth_ndd(gen, np.random.default_rng(seed))
    out = _ensure_out(args.out)
    path = os.path.join(out, "tracks.csv")
    write_tracks_csv(rows, path)
    _write_manifest(out, "synth-ndd", args.config, [seed], started)
    print(json.dumps({"rows": len(rows), "vehicles": len({r.vehicle_id for r in rows}), "path": path}))
    return 0


# -- ingest ------------------------------------------------------------------


def cmd_ingest(args) -> int:
    started = time.time()
    cfg = cfgmod.load_config(args.config)
    sec = cfg["ingest"]
    env_cfg = cfgmod.env_config(cfg)
    rows = []
    for k, src in enumerate(args.input):
        if not os.path.exists(src):
            raise ConfigError(f"input file not found: {src}")
        file_rows = parse_tracks(src)
        if k > 0:
            # keep ids unique across files
            from dataclasses import replace as _rep

            file_rows = [_rep(r, vehicle_id=r.vehicle_id + k * 1_000_000) for r in file_rows]
        rows.extend(file_rows)
    segments, transitions, report = ingest(
        rows,
        env_cfg,
        proximity=float(sec["proximity"]),
        min_frames=int(sec["min_frames"]),
    )
    summary = {
        "n_rows": report.n_rows,
        "n_vehicles": report.n_vehicles,
        "n_groups": report.n_groups,
        "n_segments": report.n_segments,
        "n_rejected": report.n_rejected,
        "n_transitions": report.n_transitions,
        "by_bv_count": {str(k): v for k, v in sorted(report.by_bv_count.items())},
    }
    print(json.dumps(summary, indent=2))
    if args.dry_run:
        return 0
    out = _ensure_out(args.out)
    save_transition_store(os.path.join(out, "transitions.bin"), segments, transitions, report)
    with open(os.path.join(out, "ingest_report.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, "ingest", args.config, [], started, {"inputs": list(args.input)})
    return 0


# -- training ----------------------------------------------------------------


def cmd_train_bv(args) -> int:
    started = time.time()
    cfg = cfgmod.load_config(args.config)
    sec = cfg["train_bv"]
    env_cfg = cfgmod.env_config(cfg)
    tc = cfgmod.train_config(
        sec,
        seed=args.seed,
        sim_real_ratio=None if args.ratio is None else cfgmod.parse_ratio(args.ratio),
        beta=args.beta,
        epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        warm_start=args.warm_start,
        eval_episodes=args.eval_episodes,
        hidden=None if args.hidden is None else tuple(int(h) for h in args.hidden.split(",")),
    )
    n_bvs = args.n_bvs if args.n_bvs is not None else int(sec["n_bvs"])
    av_policy = _resolve_av(args.av or sec["av"], env_cfg)
    groups = _load_store(args.ndd)
    from .replay import sim_batch_size

    needs_real = sim_batch_size(tc.batch_size, tc.sim_real_ratio) < tc.batch_size
    offline = None
    if needs_real:
        if groups is None:
            raise ConfigError("this sim/real ratio mixes recorded data; pass --ndd")
        offline = store_replay_buffer(groups, n_bvs, tc.buffer_capacity)
    init = _make_init(args, groups, n_bvs)
    out = _ensure_out(args.out)
    if args.resume:
        trainer = BvTrainer.load(args.resume, env_cfg, init, av_policy, offline)
        for _ in range(tc.epochs):
            trainer.run_epoch()
            trainer.evaluate()
    else:
        trainer = BvTrainer(tc, env_cfg, init, av_policy, offline)
        trainer.train()
    trainer.save(os.path.join(out, "checkpoint.bin"))
    save_mlp(
        os.path.join(out, "policy.bin"),
        trainer.policy_net,
        {"role": "bv_policy", "n_bvs": n_bvs},
    )
    write_training_log(trainer.log, os.path.join(out, "train_log.csv"))
    _write_manifest(out, "train-bv", args.config, [tc.seed], started,
                    {"env_steps": trainer.env_steps, "train_collisions": trainer.train_collisions})
    print(json.dumps({"steps": trainer.step, "env_steps": trainer.env_steps,
                      "train_collisions": trainer.train_collisions}))
    return 0


def cmd_train_av(args) -> int:
    started = time.time()
    cfg = cfgmod.load_config(args.config)
    sec = cfg["train_av"]
    env_cfg = cfgmod.env_config(cfg)
    tc = cfgmod.train_config(
        sec,
        seed=args.seed,
        epochs=args.epochs,
        steps_per_epoch=args.steps_per_epoch,
        warm_start=args.warm_start,
        hidden=None if args.hidden is None else tuple(int(h) for h in args.hidden.split(",")),
    )
    n_bvs = args.n_bvs if args.n_bvs is not None else int(sec["n_bvs"])
    bv_policy = _resolve_bv(args.bv or sec["bv"], env_cfg)
    groups = _load_store(args.ndd)
    init = _make_init(args, groups, n_bvs)
    out = _ensure_out(args.out)
    trainer = train_av_sac(tc, env_cfg, init, bv_policy)
    save_mlp(
        os.path.join(out, "policy.bin"),
        trainer.agent.policy.net,
        {"role": "av_policy", "n_bvs": n_bvs},
    )
    write_training_log(trainer.log, os.path.join(out, "train_log.csv"))
    _write_manifest(out, "train-av", args.config, [tc.seed], started,
                    {"env_steps": trainer.env_steps})
    print(json.dumps({"steps": trainer.step, "env_steps": trainer.env_steps}))
    return 0


def cmd_finetune(args) -> int:
    started = time.time()
    cfg = cfgmod.load_config(args.config)
    sec = cfg["finetune"]
    env_cfg = cfgmod.env_config(cfg)
    seed = args.seed if args.seed is not None else int(sec["seed"])
    phases = args.phases if args.phases is not None else int(sec["phases"])
    phase_len = args.phase_len if args.phase_len is not None else int(sec["phase_len"])
    bv_cfg = cfgmod.train_config(cfg["train_bv"], seed=seed)
    av_cfg = cfgmod.train_config(cfg["train_av"], seed=seed)
    av_net = _load_policy_net(args.av_checkpoint)
    bv_net = _load_policy_net(args.bv_checkpoint) if args.bv_checkpoint else None
    n_bvs = _net_n_bvs(av_net)
    groups = _load_store(args.ndd)
    from .replay import sim_batch_size

    offline = None
    if sim_batch_size(bv_cfg.batch_size, bv_cfg.sim_real_ratio) < bv_cfg.batch_size:
        if groups is None:
            raise ConfigError("this sim/real ratio mixes recorded data; pass --ndd")
        offline = store_replay_buffer(groups, n_bvs, bv_cfg.buffer_capacity)
    init = _make_init(args, groups, n_bvs)
    out = _ensure_out(args.out)
    log, bv_tr, av_tr = finetune_alternate(
        bv_cfg,
        av_cfg,
        env_cfg,
        init,
        av_net,
        offline,
        phases=phases,
        phase_len=phase_len,
        eval_episodes=int(sec["eval_episodes"]),
        bv_net=bv_net,
    )
    write_training_log(log, os.path.join(out, "finetune_log.csv"))
    final_av = av_tr.agent.policy.net if av_tr is not None else av_net
    save_mlp(os.path.join(out, "av_policy.bin"), final_av,
             {"role": "av_policy", "n_bvs": n_bvs})
    save_mlp(os.path.join(out, "bv_policy.bin"), bv_tr.agent.policy.net,
             {"role": "bv_policy", "n_bvs": n_bvs})
    _write_manifest(out, "finetune", args.config, [seed], started,
                    {"phases": phases, "phase_len": phase_len})
    print(json.dumps({"rows": len(log)}))
    return 0


# -- evaluation --------------------------------------------------------------

METRIC_COLUMNS = (
    "seed", "episodes", "collisions", "cr", "act", "acd",
    "cps", "cpm_per_m", "cpm_per_100m", "total_time", "total_distance",
)


def cmd_evaluate(args) -> int:
    started = time.time()
    cfg = cfgmod.load_config(args.config)
    sec = cfg["evaluate"]
    env_cfg = cfgmod.env_config(cfg)
    episodes = args.episodes if args.episodes is not None else int(sec["episodes"])
    seeds = _parse_seeds(args.seeds) if args.seeds else [int(s) for s in sec["seeds"]]
    bv_policy = _resolve_bv(args.bv, env_cfg)
    av_policy = _resolve_av(args.av, env_cfg)
    n_bvs = args.n_bvs if args.n_bvs is not None else int(sec["n_bvs"])
    for pol in (bv_policy, av_policy):
        if isinstance(pol, (LearnedBvPolicy, LearnedAvPolicy)):
            n_net = _net_n_bvs(pol.net)
            if args.n_bvs is not None and n_net != args.n_bvs:
                raise ConfigError(
                    f"checkpoint was trained with {n_net} BVs, got --n-bvs {args.n_bvs}"
                )
            n_bvs = n_net
    groups = _load_store(args.ndd)
    init = _make_init(args, groups, n_bvs)
    out = _ensure_out(args.out)
    keep = not args.no_scenarios
    if keep:
        _ensure_out(os.path.join(out, "scenarios"))

    rows = []
    episode_rows = []
    for seed in seeds:
        rng = np.random.default_rng([seed, 7])
        logs = run_evaluation(
            av_policy, bv_policy, episodes, env_cfg, init, rng,
            keep_scenarios=keep, seed=seed,
        )
        for i, ep in enumerate(logs):
            episode_rows.append({
                "seed": seed, "episode": i, "outcome": ep.outcome,
                "duration": ep.duration, "av_distance": ep.av_distance,
            })
            if keep and ep.scenario is not None:
                write_scenario_log(
                    ep.scenario,
                    os.path.join(out, "scenarios", f"ep_{seed}_{i:04d}.log"),
                )
        rep = compute_metrics(logs)
        rows.append({
            "seed": seed, "episodes": rep.n_episodes, "collisions": rep.n_collisions,
            "cr": rep.cr, "act": rep.act, "acd": rep.acd, "cps": rep.cps,
            "cpm_per_m": rep.cpm_per_m, "cpm_per_100m": rep.cpm_per_100m,
            "total_time": rep.total_time, "total_distance": rep.total_distance,
        })
    mean_row = {"seed": "mean"}
    for col in METRIC_COLUMNS[1:]:
        vals = [r[col] for r in rows if r[col] is not None]
        mean_row[col] = float(np.mean(vals)) if vals else None
    with open(os.path.join(out, "metrics.csv"), "w", newline="") as fh:
        w = _csv_writer(fh, METRIC_COLUMNS)
        for r in rows + [mean_row]:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    with open(os.path.join(out, "episodes.csv"), "w", newline="") as fh:
        w = _csv_writer(fh, ("seed", "episode", "outcome", "duration", "av_distance"))
        for r in episode_rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    _write_manifest(out, "evaluate", args.config, seeds, started,
                    {"bv": args.bv, "av": args.av, "episodes": episodes})
    print(json.dumps({"cr": mean_row["cr"], "cps": mean_row["cps"],
                      "cpm_per_100m": mean_row["cpm_per_100m"]}))
    return 0


def _parse_seeds(text: str):
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}; expected comma-separated integers") from None


# -- report ------------------------------------------------------------------


def _hist_rows(edges, values):
    return [
        {"bin_left": edges[i], "bin_right": edges[i + 1], "value": float(values[i])}
        for i in range(len(values))
    ]


def cmd_report(args) -> int:
    started = time.time()
    cfg = cfgmod.load_config(args.config)
    sec = cfg["report"]
    env_cfg = cfgmod.env_config(cfg)
    logs_dir = args.logs
    episodes_path = os.path.join(logs_dir, "episodes.csv")
    if not os.path.exists(episodes_path):
        raise ConfigError(f"no episodes.csv under {logs_dir}; run evaluate first")
    episode_logs = _read_episode_logs(episodes_path)
    if not episode_logs:
        raise ConfigError(f"{episodes_path} holds no episodes")
    scen_dir = os.path.join(logs_dir, "scenarios")
    scenarios = []
    if os.path.isdir(scen_dir):
        for name in sorted(os.listdir(scen_dir)):
            if name.endswith(".log"):
                scenarios.append(read_scenario_log(os.path.join(scen_dir, name)))
    out = _ensure_out(args.out)

    if scenarios:
        follow_edges = np.arange(0.0, float(sec["follow_max_m"]) + float(sec["follow_bin_m"]),
                                 float(sec["follow_bin_m"]))
        lat_edges = np.arange(-float(sec["lateral_max_m"]),
                              float(sec["lateral_max_m"]) + float(sec["lateral_bin_m"]),
                              float(sec["lateral_bin_m"]))
        gaps = gap_distributions(scenarios, env_cfg, follow_edges, lat_edges)
        _write_hist(os.path.join(out, "following_gap.csv"), gaps.follow_edges, gaps.follow_counts)
        _write_hist(os.path.join(out, "lateral_gap.csv"), gaps.lateral_edges, gaps.lateral_counts)

    dist_edges = np.arange(0.0, float(sec["distance_max_m"]) + float(sec["distance_bin_m"]),
                           float(sec["distance_bin_m"]))
    dist = collision_distance_distribution(episode_logs, dist_edges)
    with open(os.path.join(out, "collision_distance.csv"), "w", newline="") as fh:
        w = _csv_writer(fh, ("bin_left", "bin_right", "probability", "frequency"))
        for i in range(len(dist.probability)):
            w.writerow({
                "bin_left": _fmt(float(dist.edges[i])),
                "bin_right": _fmt(float(dist.edges[i + 1])),
                "probability": _fmt(float(dist.probability[i])),
                "frequency": _fmt(float(dist.frequency[i])),
            })

    wrote_pca = False
    if args.checkpoint:
        _write_pca(args, sec, out)
        wrote_pca = True
    _write_manifest(out, "report", args.config, [int(sec["seed"])], started,
                    {"logs": logs_dir, "pca": wrote_pca})
    print(json.dumps({"episodes": len(episode_logs), "scenarios": len(scenarios),
                      "pca": wrote_pca}))
    return 0


def _read_episode_logs(path):
    logs = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            logs.append(EpisodeLog(
                outcome=rec["outcome"],
                duration=float(rec["duration"]),
                av_distance=float(rec["av_distance"]),
                seed=int(rec["seed"]),
                scenario=None,
            ))
    return logs


def _write_hist(path, edges, values):
    with open(path, "w", newline="") as fh:
        w = _csv_writer(fh, ("bin_left", "bin_right", "value"))
        for row in _hist_rows(edges, values):
            w.writerow({k: _fmt(float(v)) for k, v in row.items()})


def _write_pca(args, sec, out):
    """Project buffered state-actions to 2-D, weighted by critic value."""
    policy, q1, q2, buf, meta = load_checkpoint_nets(args.checkpoint)
    rows = []
    sources = []
    if buf:
        sa_sim = np.concatenate([buf["state"], buf["action"]], axis=1)
        rows.append(sa_sim)
        sources.extend(["sim"] * sa_sim.shape[0])
    if args.ndd:
        groups = _load_store(args.ndd)
        n_bvs = _net_n_bvs(policy)
        if n_bvs in groups:
            g = groups[n_bvs]
            sa_real = np.concatenate([g["state"], g["action"]], axis=1)
            rows.append(sa_real)
            sources.extend(["real"] * sa_real.shape[0])
    if not rows:
        raise ConfigError("checkpoint holds no rollouts and no --ndd store given")
    sa = np.concatenate(rows, axis=0)
    sources = np.array(sources)
    cap = int(sec["pca_samples"])
    if sa.shape[0] > cap:
        keep = np.random.default_rng(int(sec["seed"])).choice(
            sa.shape[0], size=cap, replace=False
        )
        keep.sort()
        sa = sa[keep]
        sources = sources[keep]
    q = np.minimum(mlp_forward(q1, sa)[:, 0], mlp_forward(q2, sa)[:, 0])
    points, explained, q = pca_project(sa, q)
    with open(os.path.join(out, "pca.csv"), "w", newline="") as fh:
        w = _csv_writer(fh, ("pc1", "pc2", "q", "source"))
        for i in range(points.shape[0]):
            w.writerow({
                "pc1": _fmt(float(points[i, 0])),
                "pc2": _fmt(float(points[i, 1])),
                "q": _fmt(float(q[i])),
                "source": sources[i],
            })
    with open(os.path.join(out, "pca_explained.json"), "w") as fh:
        json.dump({"explained": [float(e) for e in explained]}, fh)
        fh.write("\n")


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="scengen",
        description="Adversarial traffic scenario generation toolkit.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="YAML config path (or $SCENGEN_CONFIG)")
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("synth-ndd", help="generate a synthetic track corpus")
    common(sp)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_synth_ndd)

    sp = sub.add_parser("ingest", help="parse tracks, cut segments, build transitions")
    common(sp)
    sp.add_argument("--input", nargs="+", required=True, help="track CSV file(s)")
    sp.add_argument("--dry-run", action="store_true", help="print the report, write nothing")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("train-bv", help="train adversarial background vehicles")
    common(sp)
    sp.add_argument("--ndd", default=None, help="transition store from ingest")
    sp.add_argument("--av", default=None, help="AV model name or policy path")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--ratio", default=None, help="sim:real mix (number or 'inf')")
    sp.add_argument("--beta", type=float, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--steps-per-epoch", type=int, default=None)
    sp.add_argument("--warm-start", type=int, default=None)
    sp.add_argument("--eval-episodes", type=int, default=None)
    sp.add_argument("--hidden", default=None, help="comma-separated layer widths")
    sp.add_argument("--n-bvs", type=int, default=None)
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train_bv)

    sp = sub.add_parser("train-av", help="train the AV driving model")
    common(sp)
    sp.add_argument("--ndd", default=None)
    sp.add_argument("--bv", default=None, help="BV model name or policy path")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--steps-per-epoch", type=int, default=None)
    sp.add_argument("--warm-start", type=int, default=None)
    sp.add_argument("--hidden", default=None)
    sp.add_argument("--n-bvs", type=int, default=None)
    sp.set_defaults(func=cmd_train_av)

    sp = sub.add_parser("finetune", help="alternate BV and AV training phases")
    common(sp)
    sp.add_argument("--av-checkpoint", required=True)
    sp.add_argument("--bv-checkpoint", default=None)
    sp.add_argument("--ndd", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--phases", type=int, default=None)
    sp.add_argument("--phase-len", type=int, default=None)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("evaluate", help="run matchup episodes and report risk metrics")
    common(sp)
    sp.add_argument("--bv", required=True, help="'dr', 'fvdm', or a trained policy path")
    sp.add_argument("--av", required=True, help="AV model name or policy path")
    sp.add_argument("--episodes", type=int, default=None)
    sp.add_argument("--seeds", default=None, help="comma-separated seed list")
    sp.add_argument("--ndd", default=None, help="transition store for initial scenes")
    sp.add_argument("--n-bvs", type=int, default=None)
    sp.add_argument("--no-scenarios", action="store_true", help="skip scenario logs")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="histograms and projections from evaluation logs")
    common(sp)
    sp.add_argument("--logs", required=True, help="an evaluate output directory")
    sp.add_argument("--checkpoint", default=None, help="trainer checkpoint for the value map")
    sp.add_argument("--ndd", default=None, help="transition store for recorded samples")
    sp.set_defaults(func=cmd_report)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ScengenError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
