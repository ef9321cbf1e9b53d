"""Trained toy models shared by the acceptance tests.

Four nets on the synthetic dataset at T=1000: an epsilon trajectory net,
an x0-parameterized twin trained identically, and two motion nets that
differ only in emphasis strength (c=1 vs c=10). Training runs once per
recipe (a few minutes each on one core) and lands in .cache/zoo as
ordinary checkpoints, keyed by a digest of everything that feeds the
run, so edits here invalidate stale models instead of loading them.

Set TRAILDIFF_TEST_CACHE to move the cache directory.
"""

import functools
import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np

from traildiff import checkpoint as ckpt_io
from traildiff import data as data_mod
from traildiff import denoiser, engine
from traildiff.pipeline import MotionModel, TrajModel
from traildiff.projection import build_projector
from traildiff.schedule import build_schedule

DSPEC = data_mod.DatasetSpec(n_per_label=32, n_frames=64, n_channels=17,
                             noise_sigma=0.02, seed=0)
HOLDOUT_SPEC = data_mod.DatasetSpec(n_per_label=4, n_frames=64, n_channels=17,
                                    noise_sigma=0.02, seed=1)
SCHED_KIND, SCHED_T = "cosine", 1000

TRAIN = dict(batch_size=16, lr=2e-4, ema_beta=0.999, seed=0)

RECIPES = {
    "traj_eps": dict(kind="trajectory", target="epsilon", base=16,
                     mults=(1.0,), steps=8000),
    "traj_x0": dict(kind="trajectory", target="x0", base=16,
                    mults=(1.0,), steps=8000),
    "motion_c1": dict(kind="motion", target="x0", base=24,
                      mults=(1.0,), steps=6000, c=1.0),
    "motion_c10": dict(kind="motion", target="x0", base=24,
                       mults=(1.0,), steps=6000, c=10.0),
}


def cache_dir():
    root = os.environ.get("TRAILDIFF_TEST_CACHE")
    base = Path(root) if root else Path(__file__).resolve().parent.parent / ".cache"
    d = base / "zoo"
    d.mkdir(parents=True, exist_ok=True)
    return d


@functools.lru_cache(maxsize=None)
def dataset():
    return data_mod.generate_dataset(DSPEC)


@functools.lru_cache(maxsize=None)
def holdout():
    return data_mod.generate_dataset(HOLDOUT_SPEC)


@functools.lru_cache(maxsize=None)
def schedule():
    return build_schedule(SCHED_KIND, SCHED_T)


def _digest(name):
    recipe = RECIPES[name]
    blob = json.dumps({"dataset": DSPEC.descriptor(), "train": TRAIN,
                       "recipe": recipe, "sched": [SCHED_KIND, SCHED_T]},
                      sort_keys=True, default=list)
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


def _net_cfg(recipe, in_channels):
    return denoiser.DenoiserConfig(
        in_channels=in_channels, base_channels=recipe["base"],
        channel_multipliers=recipe["mults"], groups=4,
        prediction_target=recipe["target"], cond_vocab=7,
        cond_dim=32, time_dim=32)


def _train(name):
    recipe = RECIPES[name]
    ds = dataset()
    sched = schedule()
    if recipe["kind"] == "trajectory":
        raw = ds.data[:, :3]
        proj = None
    else:
        raw = ds.data
        proj = build_projector(ds.data.shape[1], c=recipe["c"], seed=0)
    stats = data_mod.fit_norm(raw)
    train_data = data_mod.apply_norm(stats, raw).astype(np.float32)
    if proj is not None:
        train_data = proj.apply(train_data).astype(np.float32)

    cfg = _net_cfg(recipe, raw.shape[1])
    params = denoiser.init_params(cfg, seed=TRAIN["seed"])
    tcfg = engine.TrainConfig(total_samples=TRAIN["batch_size"] * recipe["steps"],
                              **TRAIN)
    params, ema, opt = engine.train(params, cfg, tcfg, (train_data, ds.labels),
                                    sched)
    return ckpt_io.Checkpoint(
        kind=recipe["kind"], cfg=cfg, sched=sched, stats=stats,
        params={k: t.data for k, t in params.items()}, proj=proj, ema=ema,
        opt=opt, step=tcfg.n_steps)


# Wall-clock training cost per model actually trained in this process;
# cache hits count as zero. The acceptance budget for the keyframe
# criterion charges itself with these.
TRAIN_SECONDS = {}


def checkpoint(name):
    """Load the cached model, training it first if absent or stale."""
    path = cache_dir() / f"{name}-{_digest(name)}.gmdc"
    if path.exists():
        TRAIN_SECONDS.setdefault(name, 0.0)
        return ckpt_io.load_checkpoint(path)
    t0 = time.perf_counter()
    ck = _train(name)
    TRAIN_SECONDS[name] = time.perf_counter() - t0
    ckpt_io.save_checkpoint(path, ck)
    return ck


def traj_model(name):
    ck = checkpoint(name)
    return TrajModel(engine.param_tensors(ck.ema), ck.cfg, ck.stats)


def motion_model(name):
    ck = checkpoint(name)
    return MotionModel(engine.param_tensors(ck.ema), ck.cfg, ck.stats), ck.proj
