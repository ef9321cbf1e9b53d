"""Compare the compiled kernel core against the numpy fallback.

Runs the hot ops (1-D conv and group norm, forward and backward) at
denoiser-like shapes under both backends and prints a speedup table,
plus a whole-net training-step comparison. The fallback is forced by
re-importing with TRAILDIFF_KERNELS=numpy in a subprocess, so one
invocation measures both sides:

    python3 benchmarks/bench_kernels.py

Mish is not in the table because it has a single (numpy) implementation:
a compiled scalar loop measured ~2x slower than numpy's vectorized
transcendentals, so it was dropped from the extension.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np

SHAPES = {
    "conv1d fwd": None,
    "conv1d bwd_x": None,
    "conv1d bwd_w": None,
    "group_norm fwd": None,
    "group_norm bwd": None,
    "train step": None,
}

B, CIN, COUT, M, K, GROUPS = 16, 32, 32, 64, 3, 4


def bench(fn, *args, repeat=30):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def run_suite():
    from traildiff import kernels

    rng = np.random.default_rng(0)
    x = rng.standard_normal((B, CIN, M)).astype(np.float32)
    w = rng.standard_normal((COUT, CIN, K)).astype(np.float32)
    gy = rng.standard_normal((B, COUT, M)).astype(np.float32)
    gx = rng.standard_normal((B, CIN, M)).astype(np.float32)

    y, rstd = kernels.group_norm_forward(x, GROUPS)
    out = {
        "conv1d fwd": bench(kernels.conv1d_forward, x, w),
        "conv1d bwd_x": bench(kernels.conv1d_backward_x, gy, w),
        "conv1d bwd_w": bench(kernels.conv1d_backward_w, x, gy, K),
        "group_norm fwd": bench(kernels.group_norm_forward, x, GROUPS),
        "group_norm bwd": bench(kernels.group_norm_backward, gx, y, rstd, GROUPS),
        "train step": bench_train_step(),
    }
    return kernels.BACKEND, out


def bench_train_step():
    from traildiff import data as data_mod
    from traildiff import denoiser, engine
    from traildiff.schedule import build_schedule

    spec = data_mod.DatasetSpec(n_per_label=4, n_frames=M, n_channels=17, seed=0)
    ds = data_mod.generate_dataset(spec)
    stats = data_mod.fit_norm(ds.data)
    normed = data_mod.apply_norm(stats, ds.data).astype(np.float32)
    cfg = denoiser.DenoiserConfig(in_channels=17, base_channels=CIN,
                                  channel_multipliers=(1.0,), groups=GROUPS,
                                  prediction_target="x0", cond_vocab=7,
                                  cond_dim=32, time_dim=32)
    params = denoiser.init_params(cfg, seed=0)
    tcfg = engine.TrainConfig(batch_size=B, lr=1e-4, total_samples=B, seed=0)
    sched = build_schedule("cosine", 100)
    m, v = engine.init_opt_state(params)
    ema = engine.init_ema(params)

    def step():
        engine.train_step(params, cfg, tcfg, normed, ds.labels, sched,
                          0, m, v, ema)

    return bench(step, repeat=10)


def main():
    if len(sys.argv) > 1 and sys.argv[1] == "--one-backend":
        backend, res = run_suite()
        print(json.dumps({"backend": backend, "results": res}))
        return

    rows = []
    for force in (None, "numpy"):
        env = dict(os.environ)
        env.pop("TRAILDIFF_KERNELS", None)
        if force:
            env["TRAILDIFF_KERNELS"] = force
        out = subprocess.run([sys.executable, __file__, "--one-backend"],
                             capture_output=True, text=True, env=env, check=True)
        rows.append(json.loads(out.stdout.strip().splitlines()[-1]))

    a, b = rows
    if a["backend"] == b["backend"]:
        print(f"only the {a['backend']} backend is available; "
              "build the extension (pip install -e .) to compare")
        return

    name_w = max(len(k) for k in SHAPES)
    print(f"shapes: x ({B}, {CIN}, {M}) f32, conv k={K}, groups={GROUPS}\n")
    print(f"{'op':<{name_w}}  {a['backend']:>12}  {b['backend']:>12}  speedup")
    for op in SHAPES:
        ta, tb = a["results"][op], b["results"][op]
        print(f"{op:<{name_w}}  {ta * 1e6:>10.1f}us  {tb * 1e6:>10.1f}us  "
              f"{tb / ta:>6.2f}x")


if __name__ == "__main__":
    main()
