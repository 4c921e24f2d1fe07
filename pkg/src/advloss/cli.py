"""Command-line entry point.

Every option can also come from a flat ``key=value`` file passed with
``--config`` (keys are the long flag names with ``-`` spelled ``_``).
Precedence: command-line flag, then config file, then built-in default.
Failures exit nonzero after one ``error<TAB>Kind<TAB>message`` line on stderr.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import datasets, expr, gradcheck, kernels
from .attack import NORMS, AttackSpec
from .errors import AdvLossError, ConfigError
from .losses import resolve_loss
from .model import accuracy, load_model, save_model, train
from .riskeval import (approx_risk, find_landscape_anchors, landscape_grid, write_landscape_csv,
                       write_reports)
from .search import SearchConfig, run_search, write_search_log

_SEARCH_DEFAULTS = SearchConfig()
_ATTACK_DEFAULTS = AttackSpec()


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


# option name -> (type, default, help); shared by argparse and config files
COMMON = {
    "seed": (int, 0, "master random seed"),
    "workers": (int, 1, "worker processes (results do not depend on this)"),
    "out": (str, None, "output path"),
}
ATTACK = {
    "norm": (str, _ATTACK_DEFAULTS.norm, "threat model: linf or l2"),
    "eps": (float, _ATTACK_DEFAULTS.epsilon, "perturbation budget"),
    "steps": (int, _ATTACK_DEFAULTS.steps, "PGD iterations"),
    "step_size": (float, None, "PGD step size (default 2.5*eps/steps)"),
    "random_start": (_bool, True, "start from a random point in the ball"),
}
COMMANDS = {
    "gen-data": {
        "kind": (str, "blobs", "blobs, rings or idx"),
        "n": (int, 1000, "number of samples"),
        "dims": (int, 2, "input dimension"),
        "classes": (int, 3, "number of classes"),
        "spread": (float, None, "per-class noise scale"),
        "images": (str, None, "IDX image file (kind=idx)"),
        "labels": (str, None, "IDX label file (kind=idx)"),
    },
    "train": {
        "data": (str, None, "training dataset file"),
        "hidden": (_ints, (32, 32), "hidden layer widths, comma separated"),
        "epochs": (int, 30, "training epochs"),
        "lr": (float, 0.1, "SGD learning rate"),
        "batch_size": (int, 64, "minibatch size"),
        "at_mode": (str, "none", "none or fgsm"),
        "at_eps": (float, 0.0, "FGSM training budget"),
    },
    "search": {
        "model": (str, None, "model file"),
        "data": (str, None, "dataset file for fitness"),
        "generations": (int, _SEARCH_DEFAULTS.generations, "generations"),
        "max_depth": (int, _SEARCH_DEFAULTS.max_depth, "depth limit"),
        "population_size": (int, _SEARCH_DEFAULTS.population_size, "population size"),
        "tournament_size": (int, _SEARCH_DEFAULTS.tournament_size, "tournament size"),
        "crossover_rate": (float, _SEARCH_DEFAULTS.crossover_rate, "crossover probability per pair"),
        "mutation_rate": (float, _SEARCH_DEFAULTS.mutation_rate, "mutation probability per individual"),
        "fitness_samples": (int, _SEARCH_DEFAULTS.fitness_samples, "size of the fitness slice"),
        "log": (str, None, "search log CSV (default: <out>.log.csv)"),
        **ATTACK,
    },
    "eval": {
        "model": (str, None, "model file"),
        "data": (str, None, "dataset file"),
        "loss": (str, "ce", "loss names or expression files, comma separated"),
        "batch_size": (int, 256, "attack batch size"),
        **ATTACK,
    },
    "landscape": {
        "model": (str, None, "model file"),
        "data": (str, None, "dataset file"),
        "hc_loss": (str, "ce", "handcrafted loss"),
        "bs_loss": (str, "bs5", "searched loss"),
        "grid_losses": (str, "zero_one,ce,cw,bs5", "losses to tabulate, comma separated"),
        "resolution": (int, 21, "grid points per axis"),
        "limit": (int, 1000, "samples scanned for an anchor point"),
        **ATTACK,
    },
    "gradcheck": {
        "trees": (int, 100, "random trees to check"),
        "points": (int, 50, "model input points to check"),
    },
    "simplify": {
        "expr": (str, None, "expression file"),
    },
}
REQUIRED = {
    "train": ("data", "out"),
    "search": ("model", "data", "out"),
    "eval": ("model", "data"),
    "landscape": ("model", "data", "out"),
    "simplify": ("expr", "out"),
    "gen-data": ("out",),
}


def options(command):
    return {**COMMON, **COMMANDS[command]}


def read_config(path, command):
    """Parse a ``key=value`` file; unknown keys and bad values raise ConfigError."""
    known = options(command)
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r} for {command}")
            try:
                out[key] = known[key][0](value.strip())
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve(command, cli_values, config_path=None):
    """Merge defaults, config file and flags into one dict."""
    known = options(command)
    merged = {k: spec[1] for k, spec in known.items()}
    if config_path:
        merged.update(read_config(config_path, command))
    merged.update({k: v for k, v in cli_values.items() if k in known and v is not None})
    missing = [k for k in REQUIRED.get(command, ()) if merged.get(k) is None]
    if missing:
        raise ConfigError(f"{command} needs: {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return merged


def build_parser():
    parser = argparse.ArgumentParser(prog="advloss", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command)
        p.add_argument("--config", help="flat key=value file")
        for key, (typ, default, help_) in options(command).items():
            flag = "--" + key.replace("_", "-")
            if key == "random_start":
                p.add_argument("--no-random-start", dest=key, action="store_const", const=False,
                               default=None, help="start PGD at the clean input")
            elif key == "norm":
                p.add_argument(flag, dest=key, choices=NORMS, default=None, help=help_)
            else:
                shown = ",".join(map(str, default)) if isinstance(default, tuple) else default
                p.add_argument(flag, dest=key, type=typ, default=None,
                               help=f"{help_} (default: {shown})")
    return parser


def _attack(cfg):
    return AttackSpec(norm=cfg["norm"], epsilon=cfg["eps"], steps=cfg["steps"],
                      step_size=cfg["step_size"], random_start=cfg["random_start"], seed=cfg["seed"])


def _emit(pairs, stream=None):
    stream = stream or sys.stdout
    for key, value in pairs:
        if isinstance(value, float):
            value = f"{value:.6f}"
        print(f"{key}={value}", file=stream)


# --------------------------------------------------------------------------
# commands

def cmd_gen_data(cfg):
    kind = cfg["kind"]
    extra = {} if cfg["spread"] is None else {"spread": cfg["spread"]}
    if kind == "blobs":
        ds = datasets.make_blobs(cfg["n"], cfg["dims"], cfg["classes"], cfg["seed"], **extra)
    elif kind == "rings":
        ds = datasets.make_rings(cfg["n"], cfg["dims"], cfg["classes"], cfg["seed"], **extra)
    elif kind == "idx":
        if not (cfg["images"] and cfg["labels"]):
            raise ConfigError("kind=idx needs --images and --labels")
        ds = datasets.load_idx_subset(cfg["images"], cfg["labels"], cfg["n"], cfg["classes"],
                                      cfg["dims"], cfg["seed"])
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    datasets.save_dataset(ds, cfg["out"])
    _emit([("samples", len(ds)), ("dims", ds.input_dim), ("classes", ds.num_classes)])


def cmd_train(cfg):
    ds = datasets.load_dataset(cfg["data"])
    history = []
    model = train(ds, hidden=cfg["hidden"], epochs=cfg["epochs"], lr=cfg["lr"],
                  batch_size=cfg["batch_size"], at_mode=cfg["at_mode"], epsilon=cfg["at_eps"],
                  seed=cfg["seed"], history=history)
    save_model(model, cfg["out"])
    final_loss = history[-1][1] if history else float("nan")
    _emit([("train_loss", float(final_loss)), ("train_accuracy", accuracy(model, ds))])


def search_config(cfg):
    return SearchConfig(
        generations=cfg["generations"], max_depth=cfg["max_depth"],
        population_size=cfg["population_size"], tournament_size=cfg["tournament_size"],
        crossover_rate=cfg["crossover_rate"], mutation_rate=cfg["mutation_rate"],
        fitness_samples=cfg["fitness_samples"], attack=_attack(cfg), seed=cfg["seed"],
    )


def cmd_search(cfg):
    model = load_model(cfg["model"])
    ds = datasets.load_dataset(cfg["data"])
    config = search_config(cfg)
    result = run_search(config, model, ds, workers=cfg["workers"])
    log_path = cfg["log"] or cfg["out"] + ".log.csv"
    write_search_log(config, result.log, log_path)
    expr.save_expr(result.best_tree, cfg["out"])
    _emit([("best_fitness", result.best_fitness), ("best_expression", result.best_expression)])


def cmd_eval(cfg):
    model = load_model(cfg["model"])
    ds = datasets.load_dataset(cfg["data"])
    spec = _attack(cfg)
    reports = [approx_risk(model, resolve_loss(name.strip()), ds, spec,
                           batch_size=cfg["batch_size"], workers=cfg["workers"])
               for name in cfg["loss"].split(",") if name.strip()]
    write_reports(reports, cfg["out"] or sys.stdout)


def cmd_landscape(cfg):
    model = load_model(cfg["model"])
    ds = datasets.load_dataset(cfg["data"])
    spec = _attack(cfg)
    hc, bs = resolve_loss(cfg["hc_loss"]), resolve_loss(cfg["bs_loss"])
    found = find_landscape_anchors(model, hc, bs, ds, spec, cfg["limit"])
    if found is None:
        raise AdvLossError(f"no sample in the first {cfg['limit']} where {bs.name} succeeds and {hc.name} fails")
    i, x_hc, x_bs = found
    losses = [resolve_loss(n.strip()) for n in cfg["grid_losses"].split(",") if n.strip()]
    alphas, betas, grids = landscape_grid(model, losses, ds.features[i:i + 1], ds.labels[i:i + 1],
                                          x_hc, x_bs, cfg["resolution"])
    os.makedirs(cfg["out"], exist_ok=True)
    for name, values in grids.items():
        write_landscape_csv(alphas, betas, values, os.path.join(cfg["out"], f"{name}.csv"))
    _emit([("sample", i), ("grids", len(grids))])


def cmd_gradcheck(cfg):
    results = gradcheck.run_all(cfg["seed"], cfg["trees"], cfg["points"])
    lines = [f"{'check':<20} {'max_rel_err':>12} {'checked':>8} {'skipped':>8} result"]
    for r in results:
        lines.append(f"{r.name:<20} {r.max_rel_err:12.6e} {r.checked:8d} {r.skipped:8d} "
                     f"{'pass' if r.ok else 'FAIL'}")
    text = "\n".join(lines) + "\n"
    if cfg["out"]:
        with open(cfg["out"], "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0 if all(r.ok for r in results) else 1


def cmd_simplify(cfg):
    tree = expr.load_expr(cfg["expr"])
    simple = expr.simplify(tree)
    expr.save_expr(simple, cfg["out"])
    _emit([("size_before", tree.size), ("size_after", simple.size), ("expression", expr.to_text(simple))])


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "search": cmd_search,
    "eval": cmd_eval,
    "landscape": cmd_landscape,
    "gradcheck": cmd_gradcheck,
    "simplify": cmd_simplify,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger(__name__).info("kernel backend: %s", kernels.BACKEND)
    try:
        cfg = resolve(args.command, vars(args), args.config)
        with np.errstate(all="ignore"):
            code = HANDLERS[args.command](cfg)
    except (AdvLossError, OSError, ValueError, KeyError, ArithmeticError) as exc:
        message = str(exc).replace("\t", " ").replace("\n", " ")
        print(f"error\t{type(exc).__name__}\t{message}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
