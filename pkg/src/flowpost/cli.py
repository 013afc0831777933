"""``flowpost`` command-line interface.

Every command writes its CSV artifact plus a ``<out>.manifest.json`` run
manifest (command, seed, config hash). Exit codes: 0 success, 2 bad input
(unknown task, malformed file or flag), 3 numeric failure during a run.
The ``FLOWPOST_SEED`` environment variable overrides any ``--seed`` flag.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .cfm import ArchConfig, JointDataset, TrainConfig, default_arch, train
from .checkpoint import load_model, save_model
from .errors import (ConfigurationError, IntegrationError, NonFiniteGradientError,
                     ShapeError, TrainingDivergedError)
from .inference import FIG_TAUS, count_crossings, credible_boundary
from .metrics import MetricReport, c2st, hausdorff, sliced_w2, w2_1d
from .ode import OdeConfig, compute_rank, conditioning_contexts, sample_posterior
from .tasks import get_task

log = logging.getLogger("flowpost")

EXIT_INPUT = 2
EXIT_NUMERIC = 3
MODE_ALIASES = {"exact": "exact_ytraj", "exact_ytraj": "exact_ytraj", "fixed_y": "fixed_y"}


# ---------------------------------------------------------------------------
# I/O helpers


def write_csv(path, array, header):
    np.savetxt(path, np.atleast_2d(array), delimiter=",", header=",".join(header),
               comments="", fmt="%.17g")


def read_csv(path):
    """Returns ``(header, array)`` for a headed, comma-separated file."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"no such file: {path}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as err:
        raise ConfigurationError(f"malformed CSV {path}: {err}") from None
    if data.shape[1] != len(header):
        raise ConfigurationError(f"{path}: header has {len(header)} columns, rows {data.shape[1]}")
    return header, data


def dataset_header(n, d):
    return [f"y_{i}" for i in range(n)] + [f"theta_{j}" for j in range(d)]


def read_dataset(path):
    header, data = read_csv(path)
    ycols = [i for i, h in enumerate(header) if h.startswith("y_")]
    tcols = [i for i, h in enumerate(header) if h.startswith("theta_")]
    if not ycols or not tcols or len(ycols) + len(tcols) != len(header):
        raise ConfigurationError(f"{path}: expected columns y_0.. and theta_0..")
    return JointDataset(data[:, ycols], data[:, tcols], task=str(path))


def parse_vector(text, name="--obs"):
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigurationError(f"{name} must be a comma-separated list of reals") from None
    if not vals or not np.all(np.isfinite(vals)):
        raise ConfigurationError(f"{name} must hold finite reals")
    return np.array(vals)


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_manifest(out, command, seed, config, extra=None):
    man = {"command": command, "version": __version__, "seed": seed,
           "config": config, "config_hash": config_hash(config)}
    man.update(extra or {})
    with open(f"{out}.manifest.json", "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=str)
    return man


def resolve_seed(seed):
    env = os.environ.get("FLOWPOST_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"FLOWPOST_SEED={env!r} is not an integer") from None
    return int(seed)


def _ode_config(args):
    mode = MODE_ALIASES.get(getattr(args, "mode", "exact"))
    if mode is None:
        raise ConfigurationError(f"unknown mode {args.mode!r}")
    return OdeConfig(args.integrator, args.steps, mode).validate()


def _check_obs(model, obs):
    if obs.size != model.n:
        raise ShapeError(f"--obs has length {obs.size}, model expects {model.n}")
    return obs


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    seed = resolve_seed(args.seed)
    task = get_task(args.task, prior=args.prior, n=args.n)
    ds = task.simulate_joint(args.num, seed=seed)
    write_csv(args.out, ds.data, dataset_header(ds.n, ds.d))
    meta = {"task": task.name, "prior": task.prior_name, "num": args.num, "seed": seed,
            "n": ds.n, "d": ds.d, "meta": task.meta}
    with open(f"{args.out}.meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=str)
    write_manifest(args.out, "simulate", seed, meta)
    print(f"wrote {len(ds)} rows to {args.out}")


def _load_train_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"no such config file: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"config {path} is not valid JSON: {err}") from None
    if not isinstance(cfg, dict) or set(cfg) - {"train", "arch"}:
        raise ConfigurationError("config must be an object with optional 'train' and 'arch' keys")
    return cfg


def cmd_train(args):
    ds = read_dataset(args.data)
    cfg = _load_train_config(args.config)
    try:
        tc = TrainConfig(**cfg.get("train", {}))
        arch = ArchConfig.from_dict(cfg["arch"]) if "arch" in cfg else default_arch(ds.n)
    except TypeError as err:
        raise ConfigurationError(f"bad config field: {err}") from None
    for key in ("steps", "batch", "lr", "theta_scale"):
        if getattr(args, key) is not None:
            setattr(tc, key, getattr(args, key))
    if args.kind is not None:
        arch.kind = args.kind
    if args.source is not None:
        tc.source = args.source
    tc.seed = resolve_seed(args.seed if args.seed is not None else tc.seed)
    model, hist = train(ds, arch, tc)
    save_model(model, args.out)
    config = {"train": asdict(tc), "arch": arch.to_dict()}
    write_manifest(args.out, "train", tc.seed, config,
                   {"trainings": 1, "final_loss": float(hist[-min(100, len(hist)):].mean())})
    print(f"trained {arch.kind} field for {tc.steps} steps; saved {args.out}")


def cmd_sample(args):
    seed = resolve_seed(args.seed)
    model = load_model(args.model)
    obs = _check_obs(model, parse_vector(args.obs))
    oc = _ode_config(args)
    draws = sample_posterior(model, obs, args.num, oc, np.random.default_rng(seed))
    write_csv(args.out, draws.theta, [f"theta_{j}" for j in range(model.d)])
    write_manifest(args.out, "sample", seed, {**asdict(oc), "num": args.num, "obs": obs.tolist(),
                                              "model": str(args.model)},
                   {"mode": oc.mode})
    print(f"wrote {args.num} draws to {args.out}")


def cmd_credible(args):
    seed = resolve_seed(args.seed)
    model = load_model(args.model)
    obs = _check_obs(model, parse_vector(args.obs))
    taus = parse_vector(args.tau_list, "--tau-list")
    oc = _ode_config(args)
    ctx = conditioning_contexts(model, obs, oc)
    rng = np.random.default_rng(seed)
    sets = [credible_boundary(model, obs, t, args.m, oc, rng, contexts=ctx) for t in taus]
    paths = []
    for cs in sets:
        path = f"{args.out_prefix}_tau{cs.tau:g}.csv"
        table = np.column_stack([np.full(len(cs.boundary), cs.tau), cs.boundary])
        write_csv(path, table, ["tau"] + [f"bx_{j + 1}" for j in range(model.d)])
        paths.append(path)
    crossings = count_crossings(sets, model, oc)
    write_manifest(args.out_prefix, "credible", seed,
                   {**asdict(oc), "taus": taus.tolist(), "m": args.m, "obs": obs.tolist()},
                   {"files": paths, "crossings": crossings})
    print(f"wrote {len(paths)} boundary files; crossings: {crossings}")


def cmd_rank(args):
    model = load_model(args.model)
    obs = _check_obs(model, parse_vector(args.obs))
    if Path(args.theta).exists():
        _, theta = read_csv(args.theta)
    else:
        theta = np.array([parse_vector(r, "--theta") for r in args.theta.split(";")])
    if theta.shape[1] != model.d:
        raise ShapeError(f"theta has {theta.shape[1]} columns, model expects {model.d}")
    oc = _ode_config(args)
    res = compute_rank(model, obs, theta, oc)
    out = np.column_stack([res.rank, res.sign])
    write_csv(args.out, out, ["rank"] + [f"sign_{j}" for j in range(model.d)])
    write_manifest(args.out, "rank", None, {**asdict(oc), "obs": obs.tolist()})
    print(f"wrote {len(res.rank)} ranks to {args.out}")


METRICS = {
    "w2": lambda a, b, s: w2_1d(a, b, seed=s),
    "sliced_w2": lambda a, b, s: sliced_w2(a, b, seed=s),
    "c2st": lambda a, b, s: c2st(a, b, seed=s),
    "hausdorff": lambda a, b, s: hausdorff(a, b),
}


def cmd_eval(args):
    seed = resolve_seed(args.seed)
    _, a = read_csv(args.a)
    _, b = read_csv(args.b)
    value = METRICS[args.metric](a, b, seed)
    rep = MetricReport(args.metric, float(value), {"a": str(args.a), "b": str(args.b)}, seed)
    print(json.dumps(rep.to_dict()))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rep.to_dict(), fh, indent=2)


def cmd_bench(args):
    from . import experiments

    names = experiments.BENCHES if args.name == "all" else [args.name]
    seed = resolve_seed(args.seed)
    results = []
    for name in names:
        res = experiments.run_bench(name, seed=seed, quick=args.quick)
        for r in res:
            print(r.line())
        results.extend(res)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump([r.to_dict() for r in results], fh, indent=2, default=str)
        write_manifest(args.out, "bench", seed, {"names": list(names), "quick": args.quick})
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------------------
# parser


def _add_ode_flags(p):
    p.add_argument("--mode", default="exact", choices=sorted(MODE_ALIASES))
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--integrator", default="rk4", choices=["rk4", "euler"])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def build_parser():
    from .experiments import BENCHES

    ap = _Parser(prog="flowpost", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a joint (y, theta) dataset")
    p.add_argument("--task", required=True)
    p.add_argument("--num", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prior", default=None)
    p.add_argument("--n", type=int, default=None, help="data dimension (conjugate task)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit a block-triangular field by flow matching")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="JSON with optional 'train'/'arch' objects")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--kind", choices=["plain", "monotone"], default=None)
    p.add_argument("--source", choices=["gaussian", "spherical_uniform"], default=None)
    p.add_argument("--theta-scale", type=float, default=None,
                   help="radius of the theta-source in standardized units")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="posterior draws for one observation")
    p.add_argument("--model", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--num", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_ode_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("credible", help="credible-set boundaries for a tau grid")
    p.add_argument("--model", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--tau-list", default=",".join(str(t) for t in FIG_TAUS))
    p.add_argument("--m", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", default="credible")
    _add_ode_flags(p)
    p.set_defaults(func=cmd_credible)

    p = sub.add_parser("rank", help="vector ranks of parameter values")
    p.add_argument("--model", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--theta", required=True, help="CSV file or 'a,b;c,d' rows")
    p.add_argument("--out", default="ranks.csv")
    _add_ode_flags(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("eval", help="distance between two CSV samples")
    p.add_argument("--metric", required=True, choices=sorted(METRICS))
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="end-to-end experiment with pass/fail summary")
    p.add_argument("--name", default="all", choices=["all", *BENCHES])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="reduced budgets for smoke runs")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except (ConfigurationError, ShapeError, KeyError) as err:
        print(f"flowpost: error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (IntegrationError, TrainingDivergedError, NonFiniteGradientError) as err:
        print(f"flowpost: numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
