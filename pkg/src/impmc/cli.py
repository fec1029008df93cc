"""Command-line front end: ``impmc <command> ...``.

Every command writes its outputs plus ``run_config.txt`` (flat ``key =
value``, values JSON-encoded) into ``--out-dir``.  ``impmc rerun
run_config.txt`` replays a stored configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import kernels
from .cluster import ClusterConfig, cluster_model, save_codebook
from .data import (
    IdIndex,
    RatingsFormatError,
    SplitSpec,
    cold_start_split,
    degree_stats,
    load_pairs,
    load_ratings,
    save_dataset,
    save_id_map,
    save_ratings,
    split_holdout,
    write_csv,
)
from .model import GroupModel
from .mp import (
    PAIR_MODES, LeakageError, MessageState, MessageUnderflowError, MpConfig, exact_oracle, posteriors, run,
)
from .pipeline import METHODS, ImpConfig, average_rows, best_per_cap, holdout_queries, predict_methods, sweep
from .predict import Predictions, predict_posteriors, rmse
from .synth import SynthSpec, generate, point_mass_model, save_groups, separated_model

log = logging.getLogger("impmc")

PATH_KEYS = ("ratings", "model", "queries", "state", "state_model", "holdout", "model_file")
NON_CONFIG_KEYS = ("func", "config")


def _f(x: float) -> str:
    return repr(float(x))


def _float_arg(text: str) -> float:
    return float(text)  # accepts "inf"


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _grid(text: str) -> list[tuple[int, int]]:
    out = []
    for item in text.split(","):
        gu, _, gv = item.strip().partition("x")
        out.append((int(gu), int(gv or gu)))
    return out


# --------------------------------------------------------------------------
# run config


def write_run_config(out_dir: Path, args: argparse.Namespace) -> None:
    lines = []
    for key, val in sorted(vars(args).items()):
        if key in NON_CONFIG_KEYS:
            continue
        if key in PATH_KEYS and val is not None:
            val = str(Path(val).resolve())
        lines.append(f"{key} = {json.dumps(val)}")
    (out_dir / "run_config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_run_config(path: str | Path) -> dict:
    cfg = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, _, val = line.partition(" = ")
        cfg[key.strip()] = json.loads(val)
    return cfg


# --------------------------------------------------------------------------
# shared builders


def _mp_config(args) -> MpConfig:
    return MpConfig(
        max_iters=args.max_iters, tol=args.tol, damping=args.damping, update_w=args.update_w,
        init_jitter=args.jitter, rng_seed=args.seed, smoothing=args.smoothing,
        threads=args.threads, backend=args.backend,
    )


def _beta(args) -> float:
    return math.inf if args.hard or args.beta is None else args.beta


def _imp_config(args, g_u=None, g_v=None) -> ImpConfig:
    return ImpConfig(
        g_u=g_u or args.gu, g_v=g_v or args.gv, inner_iters=args.inner_iters, beta=_beta(args),
        split_noise_sigma=args.split_sigma, smoothing=args.smoothing,
        uniform_priors=args.uniform_priors, mp=_mp_config(args),
    )


def _load_train(args):
    return load_ratings(args.ratings, args.format, args.rmax)


def _with_pairs(train, path, as_ratings: bool):
    """Load queries or a holdout file in the training index space."""
    uix, mix = IdIndex(train.user_ids), IdIndex(train.movie_ids)
    if as_ratings:
        other = load_ratings(path, None, train.r_max, uix, mix)
    else:
        other = load_pairs(path, uix, mix)
    if len(uix) != train.num_users or len(mix) != train.num_movies:
        train = train.extended(uix.ids, mix.ids)
    if as_ratings and (other.num_users, other.num_movies) != (train.num_users, train.num_movies):
        other = other.extended(uix.ids, mix.ids)
    return train, other


def _write_predictions(path: Path, train, preds: Predictions) -> None:
    uid, mid = train.user_ids, train.movie_ids
    write_csv(path, ["user_id", "movie_id", "prediction"],
              ((uid[n], mid[m], _f(v)) for n, m, v in zip(preds.users, preds.movies, preds.values)))


def _write_posteriors(path: Path, train, post) -> None:
    uid, mid = train.user_ids, train.movie_ids
    header = ["user_id", "movie_id"] + [f"p{r}" for r in range(1, post.ratings.shape[1] + 1)]
    write_csv(path, header, ([uid[n], mid[m]] + [_f(p) for p in row]
                             for (n, m), row in zip(post.queries, post.ratings)))


def _load_model(args, data) -> GroupModel:
    model = GroupModel.load(args.model)
    if model.r_max != data.r_max:
        raise ValueError(f"model r_max {model.r_max} does not match --rmax {data.r_max}")
    return model


# --------------------------------------------------------------------------
# commands


def cmd_init(args, out: Path) -> None:
    data = _load_train(args)
    beta = _beta(args)
    ucfg = ClusterConfig(args.gu, args.inner_iters, beta, args.split_sigma, args.seed)
    mcfg = ClusterConfig(args.gv, args.inner_iters, beta, args.split_sigma, args.seed)
    model, ucb, mcb = cluster_model(data, ucfg, mcfg, args.smoothing, args.uniform_priors)
    model.save(out / "model.txt")
    save_codebook(ucb, out / "codebook_users.txt")
    save_codebook(mcb, out / "codebook_movies.txt")
    save_id_map(data.user_ids, out / "users.tsv")
    save_id_map(data.movie_ids, out / "movies.tsv")


def _train(args, data, model):
    state, trained, trace = run(data, model, _mp_config(args))
    return state, trained, trace


def cmd_train(args, out: Path) -> None:
    data = _load_train(args)
    model = _load_model(args, data)
    state, trained, trace = _train(args, data, model)
    write_csv(out / "trace.csv", ["iteration", "delta", "seconds"], trace.rows(args.timings))
    state.save(out / "state.npz")
    trained.save(out / "model_trained.txt")


def _query_posteriors(args, train, q):
    model = _load_model(args, train)
    if args.oracle:
        hit = train.contains(q[:, 0], q[:, 1])
        if hit.any():
            raise LeakageError("query pair is in the training set")
        return exact_oracle(train, model, q)
    if args.state:
        state = MessageState.load(args.state)
        if args.state_model:
            model = GroupModel.load(args.state_model)
        if state.y0.shape[0] != train.num_users or state.x0.shape[0] != train.num_movies:
            raise ValueError("stored message state does not match the ratings' entities")
    else:
        state, model, _ = _train(args, train, model)
    return posteriors(state, train, model, q, getattr(args, "pairs", "factorized"), _mp_config(args))


def cmd_predict(args, out: Path) -> None:
    train, (qu, qm) = _with_pairs(_load_train(args), args.queries, as_ratings=False)
    q = np.column_stack([qu, qm])
    post = _query_posteriors(args, train, q)
    _write_predictions(out / "predictions.csv", train, predict_posteriors(post))
    _write_posteriors(out / "posteriors.csv", train, post)


def cmd_oracle(args, out: Path) -> None:
    args.oracle = True
    cmd_predict(args, out)


METRIC_HEADER = ["method", "obs_per_user", "rmse", "rmse_deg_lt3", "rmse_deg_lt5", "rmse_deg_ge5", "n_holdout"]


def _metric_row(method, train, rep):
    opu = train.num_edges / train.num_users if train.num_users else 0.0
    return [method, _f(opu), _f(rep.rmse)] + [_f(rep.buckets[b]) for b in ("lt3", "lt5", "ge5")] + [rep.n]


def _read_predictions(path, train) -> Predictions:
    uix, mix = IdIndex(train.user_ids), IdIndex(train.movie_ids)
    users, movies, vals = [], [], []
    with open(path, encoding="utf-8") as f:
        header = f.readline()
        if not header.startswith("user_id"):
            raise RatingsFormatError(f"{path}: expected a predictions CSV header")
        for lineno, line in enumerate(f, 2):
            if not line.strip():
                continue
            u, m, v = line.rstrip("\n").split(",")
            nu, nm = uix.get(u), mix.get(m)
            if nu is None or nm is None:
                raise RatingsFormatError(f"{path}:{lineno}: unknown id")
            users.append(nu)
            movies.append(nm)
            vals.append(float(v))
    return Predictions(users, movies, vals)


def cmd_eval(args, out: Path) -> None:
    train, holdout = _with_pairs(_load_train(args), args.holdout, as_ratings=True)
    rows = []
    for spec in args.predictions or []:
        name, _, path = spec.rpartition("=")
        preds = _read_predictions(path, train)
        rows.append(_metric_row(name or Path(path).stem, train, rmse(preds, holdout, train)))
    methods = [m for m in (args.methods or "").split(",") if m]
    if methods:
        q = holdout_queries(holdout)
        if "imp" in methods and args.model:
            others = [m for m in methods if m != "imp"]
            preds = predict_methods(train, q, others, _imp_config(args), args.seed) if others else {}
            post = _query_posteriors(args, train, q)
            preds["imp"] = predict_posteriors(post)
            preds = {m: preds[m] for m in methods}
        else:
            preds = predict_methods(train, q, methods, _imp_config(args), args.seed)
        for m, p in preds.items():
            _write_predictions(out / f"predictions_{m}.csv", train, p)
            rows.append(_metric_row(m, train, rmse(p, holdout, train)))
    if not rows:
        raise ValueError("nothing to evaluate: give --methods and/or --predictions")
    write_csv(out / "metrics.csv", METRIC_HEADER, rows)


def cmd_synth(args, out: Path) -> None:
    gu = args.gu_synth or args.g
    gv = args.gv_synth or args.g
    if args.model_file:
        model = GroupModel.load(args.model_file)
    elif args.point_mass is not None:
        model = point_mass_model(gu, gv, args.rmax, args.point_mass)
    else:
        model = separated_model(gu, gv, args.rmax, spread=args.spread)
    if args.bernoulli is not None:
        spec = SynthSpec(args.n, args.m, model, "bernoulli", obs_per_user=args.bernoulli, rng_seed=args.seed)
    else:
        spec = SynthSpec(args.n, args.m, model, "fixed_degree", degree=args.fixed_degree, rng_seed=args.seed)
    data, ug, vg = generate(spec)
    save_dataset(data, out)
    save_groups(data.user_ids, ug, out / "user_groups.tsv")
    save_groups(data.movie_ids, vg, out / "movie_groups.tsv")
    model.save(out / "model_true.txt")


SWEEP_HEADER = ["method", "k", "seed", "gu", "gv", "rmse", "rmse_deg_lt3", "rmse_deg_lt5",
                "rmse_deg_ge5", "n_holdout"]
AVG_HEADER = ["method", "k", "gu", "gv", "n_seeds", "rmse", "rmse_deg_lt3", "rmse_deg_lt5",
              "rmse_deg_ge5", "n_holdout"]


def _avg_row(a):
    return [a.method, a.cap, a.g_u, a.g_v, a.n_seeds, _f(a.rmse)] + \
        [_f(a.buckets[b]) for b in ("lt3", "lt5", "ge5")] + [_f(a.n_holdout)]


def cmd_sweep(args, out: Path) -> None:
    data = _load_train(args)
    methods = [m for m in args.methods.split(",") if m]
    holdout_size = args.holdout_size if args.holdout_size and args.holdout_size > 0 else None
    cfg = _imp_config(args)
    cfg = replace(cfg, mp=replace(cfg.mp, threads=1))
    rows = sweep(data, args.caps, methods, args.seeds, cfg, holdout_size, args.holdout_order,
                 args.grid, args.threads)
    write_csv(out / "sweep.csv", SWEEP_HEADER, (
        [r.method, r.cap, r.seed, r.g_u if r.method != "movie_avg" else 0,
         r.g_v if r.method != "movie_avg" else 0, _f(r.report.rmse)]
        + [_f(r.report.buckets[b]) for b in ("lt3", "lt5", "ge5")] + [r.report.n]
        for r in rows))
    avgs = average_rows(rows)
    write_csv(out / "sweep_avg.csv", AVG_HEADER, (_avg_row(a) for a in avgs))
    meta = [
        f"holdout_order = {args.holdout_order}",
        f"holdout_size = {holdout_size if holdout_size is not None else 'remainder'}",
        "movie_avg_unseen_movie = global training mean",
        "predictions_clipped = true",
    ]
    if args.grid:
        write_csv(out / "sweep_best.csv", AVG_HEADER, (_avg_row(a) for a in best_per_cap(avgs)))
        meta.append("grid_selection = best mean validation RMSE per cap (selection uses the "
                    "same validation pairs it is scored on; optimistic by construction)")
    (out / "sweep_meta.txt").write_text("\n".join(meta) + "\n", encoding="utf-8")


def cmd_split(args, out: Path) -> None:
    data = _load_train(args)
    if args.cap is not None:
        train, held = cold_start_split(data, args.cap, args.holdout_size or None, args.seed, args.holdout_order)
    else:
        train, held = split_holdout(data, SplitSpec(args.holdout_size, args.seed, "uniform_pairs"))
    save_ratings(train, out / "train.tsv")
    save_ratings(held, out / "holdout.tsv")
    save_id_map(data.user_ids, out / "users.tsv")
    save_id_map(data.movie_ids, out / "movies.tsv")


def cmd_stats(args, out: Path) -> None:
    stats = degree_stats(_load_train(args))
    summary = stats.summary(args.thresholds)
    text = "\n".join(f"{k} = {v!r}" for k, v in summary.items()) + "\n"
    (out / "degree_stats.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


# --------------------------------------------------------------------------
# parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rmax", type=int, default=5)
    g.add_argument("--out-dir", default="impmc_out")
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--format", choices=["tsv", "csv"], default=None, help="ratings format (default: by suffix)")
    g.add_argument("--backend", choices=["auto", "cython", "python"], default="auto")
    return p


def _cluster_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("clustering")
    g.add_argument("--gu", type=int, default=4, help="user groups (power of 2)")
    g.add_argument("--gv", type=int, default=4, help="movie groups (power of 2)")
    g.add_argument("--hard", action="store_true", help="hard K-means (the default unless --beta is given)")
    g.add_argument("--beta", type=_float_arg, default=None, help="soft-assignment inverse temperature")
    g.add_argument("--inner-iters", type=int, default=10)
    g.add_argument("--split-sigma", type=float, default=None)
    g.add_argument("--smoothing", type=float, default=1.0)
    g.add_argument("--uniform-priors", action="store_true")
    return p


def _mp_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("message passing")
    g.add_argument("--max-iters", type=int, default=50)
    g.add_argument("--tol", type=_float_arg, default=1e-6)
    g.add_argument("--damping", type=float, default=0.0)
    g.add_argument("--update-w", action="store_true")
    g.add_argument("--jitter", type=float, default=0.01)
    g.add_argument("--timings", action="store_true", help="fill the seconds column of trace.csv")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impmc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common, cl, mpf = _common(), _cluster_flags(), _mp_flags()

    p = sub.add_parser("init", parents=[common, cl], help="cluster users/movies and write the initial model")
    p.add_argument("ratings")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", parents=[common, cl, mpf], help="run message passing")
    p.add_argument("ratings")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("predict", cmd_predict, "posteriors and predictions for query pairs"),
                                 ("oracle", cmd_oracle, "exact posteriors by enumeration (tiny instances)")):
        p = sub.add_parser(name, parents=[common, cl, mpf], help=helptext)
        p.add_argument("ratings")
        p.add_argument("--model", required=True)
        p.add_argument("--queries", required=True)
        p.add_argument("--state", default=None, help="state.npz from `train` (otherwise trains inline)")
        p.add_argument("--state-model", default=None, help="model_trained.txt matching --state")
        p.add_argument("--oracle", action="store_true", default=(name == "oracle"))
        p.add_argument("--pairs", choices=PAIR_MODES, default="factorized",
                       help="conditioned: clamp each query user's group to capture same-component dependence")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", parents=[common, cl, mpf], help="RMSE of methods or prediction files on a holdout")
    p.add_argument("ratings")
    p.add_argument("--holdout", required=True)
    p.add_argument("--methods", default=None, help=f"comma list from {','.join(METHODS)}")
    p.add_argument("--predictions", action="append", help="NAME=PATH of a predictions CSV; repeatable")
    p.add_argument("--model", default=None, help="initial model for imp (otherwise clustered)")
    p.add_argument("--state", default=None)
    p.add_argument("--state-model", default=None)
    p.set_defaults(func=cmd_eval, oracle=False)

    p = sub.add_parser("synth", parents=[common], help="sample a synthetic ratings dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--g", type=int, default=4, help="groups on both sides")
    p.add_argument("--gu", dest="gu_synth", type=int, default=None)
    p.add_argument("--gv", dest="gv_synth", type=int, default=None)
    p.add_argument("--point-mass", type=int, default=None, help="every w slice is a point mass on this rating")
    p.add_argument("--model", dest="model_file", default=None, help="true model file")
    p.add_argument("--spread", type=float, default=0.5)
    s = p.add_mutually_exclusive_group(required=True)
    s.add_argument("--fixed-degree", type=int)
    s.add_argument("--bernoulli", type=float, metavar="OBS_PER_USER")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", parents=[common, cl, mpf], help="RMSE versus observations per user")
    p.add_argument("ratings")
    p.add_argument("--caps", type=_int_list, required=True)
    p.add_argument("--methods", default="imp,kmeans,movie_avg")
    p.add_argument("--seeds", type=_int_list, default=[1, 2, 3, 4, 5])
    p.add_argument("--holdout-size", type=int, default=1000, help="0 keeps the whole remainder")
    p.add_argument("--holdout-order", choices=["after", "before"], default="after")
    p.add_argument("--grid", type=_grid, default=None, help="e.g. 2x2,4x4,8x8")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("split", parents=[common], help="write train/holdout files")
    p.add_argument("ratings")
    p.add_argument("--holdout-size", type=int, default=1000)
    p.add_argument("--cap", type=int, default=None, help="per-user cap; holdout comes from the remainder")
    p.add_argument("--holdout-order", choices=["after", "before"], default="after")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", parents=[common], help="degree statistics")
    p.add_argument("ratings")
    p.add_argument("--thresholds", type=_int_list, default=[3, 5, 10])
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("rerun", help="replay a stored run_config.txt")
    p.add_argument("config")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=None)
    return parser


def _validate(args) -> None:
    for key in ("gu", "gv"):
        g = getattr(args, key, None)
        if g is not None and (g < 1 or g & (g - 1)):
            raise ValueError(f"target_groups must be a power of 2 (--{key} {g})")
    if getattr(args, "threads", 1) < 1:
        raise ValueError("--threads must be >= 1")


def dispatch(args: argparse.Namespace) -> None:
    _validate(args)
    kernels.backend = kernels.get_backend(args.backend)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    args.func(args, out)
    write_run_config(out, args)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "rerun":
        stored = read_run_config(args.config)
        if isinstance(stored.get("grid"), list):
            stored["grid"] = [tuple(g) for g in stored["grid"]]
        rerun_args = argparse.Namespace(**stored, func=COMMANDS[stored["command"]])
        if args.out_dir is not None:
            rerun_args.out_dir = args.out_dir
        if args.threads is not None:
            rerun_args.threads = args.threads
        args = rerun_args
    try:
        dispatch(args)
    except (RatingsFormatError, ValueError, LeakageError, MessageUnderflowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "init": cmd_init, "train": cmd_train, "predict": cmd_predict, "oracle": cmd_oracle,
    "eval": cmd_eval, "synth": cmd_synth, "sweep": cmd_sweep, "split": cmd_split, "stats": cmd_stats,
}


if __name__ == "__main__":
    sys.exit(main())
