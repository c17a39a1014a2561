"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is warmed up once per backend (so JIT compilation is excluded)
and the best of ``--repeat`` wall-clock timings is reported.
"""

import argparse
import time

import numpy as np

from selfboost import _accel, kernels, synth
from selfboost.eemd import DecompositionConfig, eemd
from selfboost.forecaster import ArchitectureConfig, TrainConfig, build_model, prepare_data, train
from selfboost.selection import FeatureGrouping


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(4096).cumsum()
    kx = np.sort(rng.choice(4096, 400, replace=False)).astype(np.float64)
    ky = rng.standard_normal(kx.size)
    conv_x = rng.standard_normal((32, 12, 8))
    conv_w = rng.standard_normal((32, 3, 8))
    conv_b = rng.standard_normal(32)
    conv_g = rng.standard_normal((32, 10, 32))
    H, I = 64, 32
    gru_x = rng.standard_normal((32, 5, I))
    h0 = np.zeros((32, H))
    gp = tuple(rng.standard_normal(s) * 0.1 for s in [(H, I)] * 3 + [(H, H)] * 3 + [(H,)] * 3)
    _, cache = kernels.gru_forward(gru_x, h0, gp)
    gru_g = rng.standard_normal((32, 5, H))
    series = synth.generate("two_tone_trend", 1000, seed=0)
    dcfg = DecompositionConfig(ensemble_size=20, rng_seed=0)

    imfset = eemd(series, DecompositionConfig(ensemble_size=10))
    grouping = FeatureGrouping((0, 1), tuple(range(2, imfset.num_components)), (), 2)
    arch = ArchitectureConfig()
    data = prepare_data(series, imfset, arch.lag, arch.horizon)
    tcfg = TrainConfig(epochs=2, early_stop_patience=10)

    def train_two_epochs():
        model = build_model(arch, grouping, 0, data.norm_stats, data.channel_names)
        train(model, data.train, data.val, tcfg)

    return {
        "local_extrema[4096]": lambda: kernels.local_extrema(x),
        "natural_spline[400 knots]": lambda: kernels.natural_spline(kx, ky, 4096),
        "conv1d fwd+bwd": lambda: (kernels.conv1d_forward(conv_x, conv_w, conv_b),
                                   kernels.conv1d_backward(conv_x, conv_w, conv_g)),
        "gru fwd+bwd": lambda: (kernels.gru_forward(gru_x, h0, gp),
                                kernels.gru_backward(cache, gru_g)),
        "eemd[1000, N=20]": lambda: eemd(series, dcfg),
        "train[2 epochs]": train_two_epochs,
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    table = cases()
    print(f"{'kernel':<28}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, fn in table.items():
        timings = {}
        for b in ("numba", "numpy"):
            previous = _accel.set_backend(b)
            try:
                timings[b] = best_of(fn, args.repeat)
            finally:
                _accel.set_backend(previous)
        print(f"{name:<28}{1e3 * timings['numba']:>12.3f}{1e3 * timings['numpy']:>12.3f}"
              f"{timings['numpy'] / timings['numba']:>9.1f}x")


if __name__ == "__main__":
    main()
