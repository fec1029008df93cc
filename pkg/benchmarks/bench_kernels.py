"""Time the compiled and numpy kernels on one synthetic instance.

    python3 benchmarks/bench_kernels.py --n 2000 --m 2000 --degree 50 --groups 8
"""

import argparse
import timeit

import numpy as np

from impmc import _kernels_py, kernels
from impmc.cluster import _view
from impmc.model import GroupModel
from impmc.mp import MpConfig, _side_tables, init_messages
from impmc.synth import SynthSpec, generate, separated_model


def build(args):
    data, _, _ = generate(SynthSpec(args.n, args.m, separated_model(4, 4), "fixed_degree",
                                    degree=args.degree, rng_seed=args.seed))
    rng = np.random.default_rng(args.seed)
    model = GroupModel.random(args.groups, args.groups, data.r_max, rng)
    state = init_messages(data, model, MpConfig(init_jitter=0.1))
    wu, wm = _side_tables(model)
    mp_args = (data.users, data.movies, data.ratings - 1, data.user_ptr, data.movie_ptr,
               data.movie_order, wu, wm, state.x, state.y, state.y0, state.x0, 0.0)
    v = _view(data, "users")
    critics = rng.uniform(1, data.r_max, size=(args.groups, v.n_coord))
    pi = rng.dirichlet(np.ones(args.groups), size=v.n_ent)
    return data, {
        "update_messages": lambda be, t: be.update_messages(*mp_args, t),
        "masked_sq_dist": lambda be, t: be.masked_sq_dist(v.ent_ptr, v.ent_eidx, v.coords, v.ratings, critics),
        "centroid_sums": lambda be, t: be.centroid_sums(v.coord_ptr, v.coord_eidx, v.ents, v.ratings, pi, v.n_coord),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--m", type=int, default=2000)
    p.add_argument("--degree", type=int, default=50)
    p.add_argument("--groups", type=int, default=8)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    data, cases = build(args)
    backends = {"python": _kernels_py}
    if "cython" in kernels.available_backends():
        backends["cython"] = kernels.get_backend("cython")
    print(f"edges={data.num_edges} groups={args.groups} threads={args.threads}")
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases.items():
        best = {}
        for b, be in backends.items():
            fn(be, args.threads)  # warm up
            best[b] = min(timeit.repeat(lambda: fn(be, args.threads), number=1, repeat=args.repeat))
        speed = f"{best['python'] / best['cython']:.1f}x" if "cython" in best else "-"
        print(f"{name:<18}" + "".join(f"{best[b] * 1e3:>10.2f}ms" for b in backends) + f"{speed:>10}")


if __name__ == "__main__":
    main()
