"""Command-line surface.

Subcommands: make-data, train-traj, train-motion, generate,
analyze-schedule, eval.  All outputs are deterministic per --seed and
written with fixed formatting, so reruns are byte-identical.

Exit codes: 0 ok, 2 usage or configuration problem, 3 numeric failure.
"""

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import config as config_mod
from . import denoiser, engine, schedule, svg
from .data import LABELS, apply_norm, fit_norm, generate_dataset, \
    load_dataset, save_dataset
from .errors import InvalidArgument, NumericFailure, TraildiffError
from .goals import Box, Circle, KeyframeGoal, KeyframeSet, ObstacleGoal, SdfMap
from .guidance import GuidanceConfig
from .metrics import MetricReport, encode_features, gaussian_frechet, \
    keyframe_errors, slip_score, trajectory_diversity
from .pipeline import MotionModel, PipelineConfig, TrajModel, \
    single_stage, stage1_trajectory, stage2_motion
from .projection import build_projector
from .seq import ABS, RAW, TrajSeq
from .svg import line_plot, overhead_plot

TASKS = ("text_only", "keyframes", "trajectory", "obstacle")


def _fail(msg):
    raise InvalidArgument(msg)


def _channel_names(n):
    base = ["rot", "pos_x", "pos_z", "speed"]
    return base[:n] + [f"pose_{i:02d}" for i in range(max(0, n - 4))]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (str, int)) else repr(float(v))
                        for v in row])


# -- option files -------------------------------------------------------------------

def _read_lines(path, what):
    try:
        text = Path(path).read_text()
    except OSError as e:
        _fail(f"cannot read {what} file {path}: {e}")
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            yield ln, line.split()


def read_keyframes(path):
    pairs = []
    for ln, parts in _read_lines(path, "keyframes"):
        if len(parts) != 3:
            _fail(f"{path}:{ln}: expected 'frame x z', got {' '.join(parts)!r}")
        try:
            pairs.append((int(parts[0]), (float(parts[1]), float(parts[2]))))
        except ValueError:
            _fail(f"{path}:{ln}: bad number in {' '.join(parts)!r}")
    if not pairs:
        _fail(f"{path}: no keyframes found")
    return KeyframeSet.from_pairs(pairs)


def read_world(path):
    shapes = []
    for ln, parts in _read_lines(path, "world"):
        kind, args = parts[0], parts[1:]
        try:
            vals = [float(a) for a in args]
        except ValueError:
            _fail(f"{path}:{ln}: bad number in {' '.join(parts)!r}")
        if kind == "circle" and len(vals) == 3:
            shapes.append(Circle(center=(vals[0], vals[1]), radius=vals[2]))
        elif kind == "box" and len(vals) == 4:
            shapes.append(Box(lo=(vals[0], vals[1]), hi=(vals[2], vals[3])))
        else:
            _fail(f"{path}:{ln}: expected 'circle cx cz r' or "
                  f"'box x0 z0 x1 z1', got {' '.join(parts)!r}")
    if not shapes:
        _fail(f"{path}: no obstacles found")
    return shapes


def read_trajectory(path):
    """Dense trajectory CSV: frame,rot,x,z or frame,x,z per line."""
    rows = []
    for ln, parts in _read_lines(path, "trajectory"):
        parts = " ".join(parts).replace(",", " ").split()
        if parts[0] == "frame":
            continue  # header
        if len(parts) not in (3, 4):
            _fail(f"{path}:{ln}: expected 'frame[,rot],x,z'")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            _fail(f"{path}:{ln}: bad number")
    if len(rows) < 2:
        _fail(f"{path}: need at least 2 trajectory rows")
    rows.sort(key=lambda r: r[0])
    frames = [int(r[0]) for r in rows]
    if frames != list(range(frames[0], frames[0] + len(frames))):
        _fail(f"{path}: trajectory frames must be consecutive")
    arr = np.asarray(rows, dtype=np.float64)
    if arr.shape[1] == 4:
        data = arr[:, 1:4].T
    else:
        x, z = arr[:, 1], arr[:, 2]
        dx, dz = np.gradient(x), np.gradient(z)
        rot = np.arctan2(dz, dx)
        data = np.stack([rot, x, z])
    return TrajSeq(data, frame=ABS, space=RAW)


# -- config + checkpoint plumbing --------------------------------------------------

def _load_cfg(args):
    if getattr(args, "config", None):
        return config_mod.load_config(args.config)
    return config_mod.default_config()


def _label_id(name):
    if name is None:
        return None
    if name not in LABELS:
        _fail(f"unknown label {name!r} (choose from {', '.join(LABELS)})")
    return LABELS.index(name)


def _traj_model(path):
    ck = ckpt_io.load_checkpoint(path, kind=ckpt_io.KIND_TRAJECTORY)
    params = engine.param_tensors(ck.ema if ck.ema else ck.params)
    return TrajModel(params, ck.cfg, ck.stats), ck


def _motion_model(path):
    ck = ckpt_io.load_checkpoint(path, kind=ckpt_io.KIND_MOTION)
    params = engine.param_tensors(ck.ema if ck.ema else ck.params)
    return MotionModel(params, ck.cfg, ck.stats), ck


def _check_compatible(a, b):
    if a.sched.descriptor() != b.sched.descriptor():
        _fail(f"checkpoints disagree on the noise schedule: "
              f"{a.sched.descriptor()} vs {b.sched.descriptor()}")


def _guidance_from(cfg, args):
    g = cfg["guidance"]
    s = args.guidance_s if getattr(args, "guidance_s", None) is not None \
        else g["s"]
    return GuidanceConfig(s=s, t_stop=g["t_stop"], p=g["p"])


def _pipeline_from(cfg, args, gcfg):
    p = cfg["pipeline"]
    tau_given = getattr(args, "tau", None) is not None
    tau = args.tau if tau_given else p["tau"]
    seed = args.seed if getattr(args, "seed", None) is not None else p["seed"]
    use_p2p = p["use_p2p"] or tau_given  # an explicit --tau implies p2p
    return PipelineConfig(tau=tau, guidance=gcfg, mode=p["mode"],
                          use_p2p=use_p2p, c_emphasis=cfg["motion"]["c_emphasis"],
                          seed=seed,
                          full_traj_imputation=p["full_traj_imputation"])


# -- commands -----------------------------------------------------------------------

def cmd_make_data(args):
    cfg = _load_cfg(args)
    out = args.out or cfg["data"]["path"]
    if out is None:
        _fail("config field data.path is required but not set "
              "(or pass --out)")
    ds = generate_dataset(config_mod.dataset_spec_from(cfg))
    save_dataset(out, ds)
    print(f"wrote {len(ds.labels)} sequences to {out}")
    return 0


def _train(args, section, kind):
    cfg = _load_cfg(args)
    data_path = args.data or cfg["data"]["path"]
    if data_path is None:
        _fail("config field data.path is required but not set "
              "(or pass --data)")
    ds = load_dataset(data_path)
    sched = config_mod.schedule_from(cfg)
    tcfg = config_mod.train_config_from(cfg, section)

    if kind == ckpt_io.KIND_TRAJECTORY:
        raw = ds.data[:, :3]
        proj = None
    else:
        raw = ds.data
        proj = build_projector(raw.shape[1], c=cfg["motion"]["c_emphasis"],
                               seed=cfg["motion"]["projector_seed"])
    stats = fit_norm(raw)
    normed = apply_norm(stats, raw)
    train_data = proj.apply(normed) if proj is not None else normed

    net_cfg = config_mod.denoiser_from(cfg, section, in_channels=raw.shape[1])
    if net_cfg.cond_vocab < len(LABELS):
        _fail(f"{section}.cond_vocab must cover the {len(LABELS)} labels")

    if args.resume:
        ck = ckpt_io.load_checkpoint(args.resume, kind=kind)
        if ck.cfg != net_cfg:
            _fail(f"resume checkpoint was trained with a different "
                  f"model config: {ck.cfg} vs {net_cfg}")
        if ck.sched.descriptor() != sched.descriptor():
            _fail("resume checkpoint uses a different noise schedule")
        params = engine.param_tensors(ck.params, requires_grad=True)
        ema = {k: v.copy() for k, v in ck.ema.items()} if ck.ema else None
        opt = None
        if ck.opt is not None:
            opt = {"m": {k: v.copy() for k, v in ck.opt["m"].items()},
                   "v": {k: v.copy() for k, v in ck.opt["v"].items()}}
        start = ck.step
    else:
        params = denoiser.init_params(net_cfg, seed=tcfg.seed)
        ema = opt = None
        start = 0

    if args.dry_run:
        one = dataclasses.replace(tcfg, total_samples=tcfg.batch_size)
        engine.train(params, net_cfg, one, (train_data, ds.labels), sched,
                     ema=ema, opt=opt)
        print("dry run ok: config valid, model built, 1 step trained")
        return 0

    out = args.out
    if out is None:
        _fail("--out is required to write the checkpoint")

    def save(done, params_, ema_, opt_):
        ckpt_io.save_checkpoint(out, ckpt_io.Checkpoint(
            kind=kind, cfg=net_cfg, sched=sched, stats=stats,
            params={k: t.data for k, t in params_.items()},
            proj=proj, ema=ema_, opt=opt_, step=done))

    engine.train(params, net_cfg, tcfg, (train_data, ds.labels), sched,
                 ema=ema, opt=opt, start_step=start,
                 log_path=str(out) + ".log.csv",
                 checkpoint_every=cfg[section]["checkpoint_every"],
                 on_checkpoint=save, log_every=max(1, tcfg.n_steps // 200))
    print(f"trained {tcfg.n_steps - start} steps, checkpoint at {out}")
    return 0


def cmd_train_traj(args):
    return _train(args, "trajectory", ckpt_io.KIND_TRAJECTORY)


def cmd_train_motion(args):
    return _train(args, "motion", ckpt_io.KIND_MOTION)


def _task_inputs(args, cfg):
    """Task flag -> (goal, keys, given_traj, obstacles)."""
    keys = read_keyframes(args.keyframes) if args.keyframes else None
    obstacles = read_world(args.world) if args.world else None
    given = read_trajectory(args.trajectory) \
        if getattr(args, "trajectory", None) else None

    if args.task == "text_only":
        return None, None, None, None
    if args.task == "keyframes":
        if keys is None:
            _fail("--task keyframes needs --keyframes FILE")
        return KeyframeGoal(keys=keys, p=cfg["guidance"]["p"]), keys, None, None
    if args.task == "trajectory":
        if given is None:
            _fail("--task trajectory needs --trajectory FILE")
        return None, keys, given, None
    # obstacle
    if obstacles is None:
        _fail("--task obstacle needs --world FILE")
    goal = ObstacleGoal(SdfMap(tuple(obstacles)),
                        c_safe=cfg["guidance"]["c_safe"])
    return goal, keys, None, obstacles


def _run_pipeline(args, cfg, n_samples):
    gcfg = _guidance_from(cfg, args)
    pcfg = _pipeline_from(cfg, args, gcfg)
    goal, keys, given, obstacles = _task_inputs(args, cfg)
    if pcfg.use_p2p and keys is None and given is None:
        _fail("p2p imputation (use_p2p/--tau) needs --keyframes")
    cond = _label_id(args.label)
    n_frames = args.n_frames or cfg["data"]["n_frames"]

    if pcfg.mode == "single_stage":
        if args.motion_checkpoint is None:
            _fail("single_stage mode needs --motion-checkpoint")
        if given is not None:
            _fail("--task trajectory requires the two_stage mode")
        motion, mck = _motion_model(args.motion_checkpoint)
        sched = mck.sched
        outs = single_stage(motion, mck.proj, sched, keys, goal, pcfg,
                            cond=cond, n_frames=n_frames,
                            n_samples=n_samples)
    else:
        if args.motion_checkpoint is None:
            _fail("two_stage mode needs --motion-checkpoint")
        motion, mck = _motion_model(args.motion_checkpoint)
        sched = mck.sched
        if given is not None:
            z_star = [given] * n_samples
        else:
            if args.traj_checkpoint is None:
                _fail("two_stage mode needs --traj-checkpoint "
                      "(or --task trajectory with a given trajectory)")
            traj, tck = _traj_model(args.traj_checkpoint)
            _check_compatible(tck, mck)
            z_star = stage1_trajectory(traj, sched, goal, keys, pcfg,
                                       cond=cond, n_frames=n_frames,
                                       n_samples=n_samples)
            if n_samples == 1:
                z_star = [z_star]
        outs = []
        for i, z in enumerate(z_star):
            sub = dataclasses.replace(pcfg, seed=pcfg.seed + i)
            outs.append(stage2_motion(motion, mck.proj, sched, z, keys,
                                      goal, sub, cond=cond,
                                      n_frames=n_frames))
    if not isinstance(outs, list):
        outs = [outs]
    return outs, keys, obstacles


def cmd_generate(args):
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outs, keys, obstacles = _run_pipeline(args, cfg, args.n_samples)

    names = _channel_names(outs[0].data.shape[0])
    for i, m in enumerate(outs):
        rows = [[f] + list(m.data[:, f]) for f in range(m.data.shape[1])]
        _write_csv(out_dir / f"sample_{i:03d}.csv", ["frame"] + names, rows)
    trajs = [m.data[1:3] for m in outs]
    (out_dir / "overhead.svg").write_text(
        overhead_plot(trajs, keys=keys, obstacles=obstacles,
                      title=f"{args.task} ({len(outs)} samples)"))
    print(f"wrote {len(outs)} samples + overhead.svg to {out_dir}")
    return 0


def cmd_analyze_schedule(args):
    sched = schedule.build_schedule(args.kind, args.T,
                                    beta_start=args.beta_start,
                                    beta_end=args.beta_end)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = sched.coefficient_table()
    _write_csv(out_dir / "schedule.csv",
               ["t", "beta", "alpha_bar", "post_a", "post_b",
                "eps_c", "eps_d", "sigma2"],
               [[int(r[0])] + list(r[1:]) for r in table])
    shares = sched.contribution_shares()
    (out_dir / "shares.svg").write_text(
        line_plot(shares[:, 0],
                  [("x0 share a/(a+b)", shares[:, 1]),
                   ("eps share d/(c+d)", shares[:, 2])],
                  title=f"{args.kind} T={sched.T}"))
    print(f"wrote schedule.csv + shares.svg to {out_dir}")
    return 0


def _report_for(outs, keys, ref_feats):
    n = len(outs)
    if keys is not None:
        te, le, ae = keyframe_errors(outs, keys)
    else:
        te = le = ae = 0.0
    feats = encode_features(np.stack([m.data for m in outs]))
    return MetricReport(
        traj_diversity=trajectory_diversity(outs) if n >= 2 else 0.0,
        traj_error=te, loc_error=le, avg_error=ae,
        slip_score=float(np.mean([slip_score(m) for m in outs])),
        frechet=gaussian_frechet(ref_feats, feats),
        sample_count=n)


def cmd_eval(args):
    cfg = _load_cfg(args)
    data_path = args.data or cfg["data"]["path"]
    if data_path is None:
        _fail("config field data.path is required but not set "
              "(or pass --data)")
    ds = load_dataset(data_path)
    n_frames = args.n_frames or cfg["data"]["n_frames"]
    ref = ds.data[:, :, :n_frames]
    ref_feats = encode_features(ref)

    if args.n_samples < 2:
        _fail("--n-samples must be at least 2 for the metric suite")

    if args.tau_sweep:
        try:
            taus = [int(p) for p in args.tau_sweep.split(",")]
        except ValueError:
            _fail(f"bad --tau-sweep {args.tau_sweep!r}: "
                  f"expected comma-separated integers")
        rows = []
        for tau in taus:
            args.tau = tau
            outs, keys, _ = _run_pipeline(args, cfg, args.n_samples)
            r = _report_for(outs, keys, ref_feats)
            rows.append([tau, r.traj_diversity, r.traj_error, r.loc_error,
                         r.avg_error, r.slip_score, r.frechet,
                         r.sample_count])
        _write_csv(args.out,
                   ["tau", "traj_diversity", "traj_error", "loc_error",
                    "avg_error", "slip_score", "frechet", "sample_count"],
                   rows)
        print(f"wrote tau sweep ({len(rows)} rows) to {args.out}")
        return 0

    outs, keys, _ = _run_pipeline(args, cfg, args.n_samples)
    report = _report_for(outs, keys, ref_feats)
    Path(args.out).write_text(report.to_record())
    print(f"wrote metric report to {args.out}")
    return 0


# -- argument surface ---------------------------------------------------------------

def _add_common_sampling(p):
    p.add_argument("--config", help="run configuration INI")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--traj-checkpoint", help="trajectory model checkpoint")
    p.add_argument("--motion-checkpoint", help="motion model checkpoint")
    p.add_argument("--keyframes", help="keyframe file: 'frame x z' lines")
    p.add_argument("--world", help="obstacle file: circle/box lines")
    p.add_argument("--trajectory", help="dense trajectory CSV to follow")
    p.add_argument("--label", help=f"condition label ({', '.join(LABELS)})")
    p.add_argument("--tau", type=int, help="p2p imputation active for t >= tau")
    p.add_argument("--guidance-s", type=float, help="guidance strength")
    p.add_argument("--seed", type=int, help="sampling seed")
    p.add_argument("--n-frames", type=int, help="frames per sample")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="traildiff",
        description="guided trajectory/pose diffusion toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="generate the synthetic dataset")
    p.add_argument("--config", help="run configuration INI")
    p.add_argument("--out", help="dataset path (default: data.path)")
    p.set_defaults(fn=cmd_make_data)

    for name, fn in (("train-traj", cmd_train_traj),
                     ("train-motion", cmd_train_motion)):
        p = sub.add_parser(name, help=f"{name.split('-')[1]} model training")
        p.add_argument("--config", help="run configuration INI")
        p.add_argument("--data", help="dataset path (default: data.path)")
        p.add_argument("--out", help="checkpoint output path")
        p.add_argument("--resume", help="resume from this checkpoint")
        p.add_argument("--dry-run", action="store_true",
                       help="validate config, run 1 step, write nothing")
        p.set_defaults(fn=fn)

    p = sub.add_parser("generate", help="sample motions to CSV + SVG")
    _add_common_sampling(p)
    p.add_argument("--n-samples", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("analyze-schedule",
                       help="dump schedule coefficients and shares")
    p.add_argument("--kind", required=True, choices=("cosine", "linear"))
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--beta-start", type=float)
    p.add_argument("--beta-end", type=float)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_analyze_schedule)

    p = sub.add_parser("eval", help="batched generation + metric report")
    _add_common_sampling(p)
    p.add_argument("--data", help="reference dataset (default: data.path)")
    p.add_argument("--n-samples", type=int, default=16)
    p.add_argument("--tau-sweep", help="comma-separated tau values")
    p.add_argument("--out", required=True, help="report file path")
    p.set_defaults(fn=cmd_eval)
    return ap


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except TraildiffError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
