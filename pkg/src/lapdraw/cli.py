"""Command line entry point.

Each subcommand resolves its settings from built-in defaults, an optional
JSON config file and explicit flags (in that order), writes the resolved
config into a fresh versioned run directory and puts every CSV, checkpoint
and figure next to it. The run directory is printed on stdout.

Errors are reported as one JSON line on stderr. Bad configuration exits
with status 2, failures during a run with status 1.
"""
from __future__ import annotations

import csv
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import approx, plotting
from .chain import ChainModel
from .evaluate import baseline_report, objective_gap
from .gridworld import MazeError, feature_dim, load_maze
from .objective import LapRepConfig, embed_table, train_repr
from .replay import ReplayBuffer, collect_transitions
from .seeding import substream
from .shaping import (
    DqnConfig, GoalTask, RewardKind, dqn_train, mix_distance_grid, pretrain_embedding,
)


class ConfigError(ValueError):
    pass


def _items(v):
    # comma separated text from flags, or a JSON list from a config file
    if isinstance(v, (list, tuple)):
        return list(v)
    return [x.strip() for x in str(v).split(",") if x.strip()]


def _floats(v):
    return [float(x) for x in _items(v)]


def _ints(v):
    return [int(x) for x in _items(v)]


def _words(v):
    return [str(x) for x in _items(v)]


def _opt_int(v):
    return None if v is None or v == "" else int(v)


def _opt_float(v):
    return None if v is None or v == "" else float(v)


# key -> (default, parser); keys double as flag names with "_" replaced by "-"
REPR_KEYS = {
    "maze": ("fourroom", str),
    "repr": ("index", str),
    "d": (20, int),
    "beta": (None, _opt_float),
    "delta": (1.0, float),
    "lambda": (0.0, float),
    "batch": (32, int),
    "steps": (20_000, int),
    "lr": (1e-3, float),
    "hidden": (None, lambda v: None if v in (None, "") else _ints(v)),
    "n_transitions": (10_000, int),
    "episode_len": (50, int),
    "seed": (0, int),
}

SCHEMAS = {
    "collect": {
        "maze": ("fourroom", str),
        "n_transitions": (10_000, int),
        "episode_len": (50, int),
        "seed": (0, int),
    },
    "exact": {
        "maze": ("fourroom", str),
        "d": (20, int),
        "lambda": (0.0, float),
        "reset_delta": (None, _opt_float),
    },
    "train-repr": {**REPR_KEYS, "buffer": (None, lambda v: None if v in (None, "") else str(v))},
    "eval-repr": {
        "checkpoint": (None, str),
        "maze": (None, str),
        "repr": (None, str),
        "d": (None, _opt_int),
        "lambda": (0.0, float),
        "n_transitions": (None, _opt_int),
    },
    "baseline": {
        "maze": ("fourroom", str),
        "repr": ("index", str),
        "d": (20, int),
        "lambda": (0.0, float),
        "n_transitions": (10_000, int),
        "episode_len": (50, int),
        "seed": (0, int),
    },
    "train-agent": {
        "maze": ("oneroom", str),
        "kinds": ("sparse,l2,rawmix,mix", _words),
        "seeds": ("0", _ints),
        "steps": (20_000, int),
        "pretrain_steps": (30_000, int),
        "eval_every": (2_000, int),
        "eval_episodes": (50, int),
        "batch": (32, int),
        "lr": (1e-3, float),
        "learning_starts": (1_000, int),
        "train_every": (1, int),
    },
    "sweep-beta": {
        **{k: v for k, v in REPR_KEYS.items() if k != "beta"},
        "repr": ("position", str),
        "n_transitions": (2_000, int),
        "betas": ("0.1,0.5,1,2,5", _floats),
        "seeds": ("0", _ints),
    },
}

# settings that never change results and so stay out of the hash
_RUNTIME_KEYS = {"out", "jobs"}


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def resolve_config(command: str, config_path, flags: dict) -> dict:
    schema = SCHEMAS[command]
    raw = {}
    if config_path is not None:
        try:
            raw = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        raw = {k.replace("-", "_"): v for k, v in raw.items()}
        unknown = sorted(set(raw) - set(schema))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    for k, v in flags.items():
        if v is not None:
            raw[k] = v
    out = {}
    for key, (default, parse) in schema.items():
        value = raw.get(key, default)
        try:
            out[key] = None if value is None else parse(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None
    if out.get("repr") is not None and out["repr"] not in ("index", "position"):
        raise ConfigError(f"repr must be index or position, not {out['repr']!r}")
    if "kinds" in out:
        for k in out["kinds"]:
            if k not in {r.value for r in RewardKind}:
                raise ConfigError(f"unknown reward kind {k!r}")
    if command == "eval-repr" and out["checkpoint"] is None:
        raise ConfigError("eval-repr needs a checkpoint")
    if out.get("maze") is not None:
        try:
            load_maze(out["maze"])
        except (OSError, MazeError) as exc:
            raise ConfigError(f"cannot load maze {out['maze']!r}: {exc}") from None
    return {k: _jsonable(v) for k, v in out.items()}


def config_hash(cfg: dict) -> str:
    body = json.dumps({k: v for k, v in cfg.items() if k not in _RUNTIME_KEYS}, sort_keys=True)
    return hashlib.sha256(body.encode()).hexdigest()[:12]


def new_run_dir(out: Path, command: str, chash: str) -> Path:
    """First unused ``<command>-<hash>-v<k>`` directory; earlier runs are never touched."""
    out.mkdir(parents=True, exist_ok=True)
    k = 1
    while True:
        path = out / f"{command}-{chash}-v{k}"
        try:
            path.mkdir()
            return path
        except FileExistsError:
            k += 1


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows, chash: str) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*header, "config_hash"])
        for row in rows:
            w.writerow([*(_fmt(v) for v in row), chash])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class Run:
    def __init__(self, command: str, cfg: dict, out: Path):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.dir = new_run_dir(Path(out), command, self.hash)
        resolved = {"command": command, "config_hash": self.hash, **cfg}
        (self.dir / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")

    def csv(self, name, header, rows):
        return write_csv(self.dir / name, header, rows, self.hash)

    def path(self, name) -> Path:
        return self.dir / name


def _buffer(spec, cfg):
    return collect_transitions(spec, cfg["n_transitions"], cfg["episode_len"], substream(cfg["seed"], "collect"))


def _repr_config(cfg, beta=None, seed=None) -> LapRepConfig:
    return LapRepConfig(
        d=cfg["d"], beta=cfg.get("beta") if beta is None else beta, delta_scale=cfg["delta"],
        lam=cfg["lambda"], batch=cfg["batch"], steps=cfg["steps"], lr=cfg["lr"],
        seed=cfg["seed"] if seed is None else seed,
        hidden=None if cfg["hidden"] is None else tuple(cfg["hidden"]),
    )


def _embedding_rows(spec, Phi):
    return [(i, x, y, *Phi[i]) for i, (x, y) in enumerate(spec.open_cells)]


def cmd_collect(run: Run):
    cfg = run.cfg
    spec = load_maze(cfg["maze"])
    buf = _buffer(spec, cfg)
    rows = [(e, t, s) for e, traj in enumerate(buf.states) for t, s in enumerate(traj)]
    run.csv("buffer.csv", ["episode", "step", "state"], rows)
    counts = np.bincount(buf.states[:, :-1].ravel(), minlength=spec.n_states)
    run.csv("visits.csv", ["state", "x", "y", "count"],
            [(i, x, y, c) for i, ((x, y), c) in enumerate(zip(spec.open_cells, counts))])
    plotting.plot_heatmap(plotting.cell_grid(spec, counts), run.path("visits.png"), title="state visits")


def cmd_exact(run: Run):
    cfg = run.cfg
    spec = load_maze(cfg["maze"])
    ch = ChainModel.build(spec, cfg["lambda"], cfg["reset_delta"])
    eig = ch.eig(cfg["d"])
    run.csv("eigenvalues.csv", ["k", "eigenvalue"], enumerate(eig.values))
    run.csv("eigenfunctions.csv", ["state", "x", "y", *[f"f{k}" for k in range(cfg["d"])]],
            _embedding_rows(spec, eig.functions))
    run.csv("optimum.csv", ["d", "optimal_value"], [(cfg["d"], float(np.sum(eig.values)))])
    plotting.plot_eigenfunctions(spec, eig.functions, eig.values, run.path("eigenfunctions.png"))


def cmd_train_repr(run: Run):
    cfg = run.cfg
    spec = load_maze(cfg["maze"])
    buf = ReplayBuffer.load_csv(cfg["buffer"], spec) if cfg["buffer"] else _buffer(spec, cfg)
    params, log = train_repr(_repr_config(cfg), buf, spec, cfg["repr"])
    approx.save(params, run.path("model.bin"))
    run.csv("train_log.csv", ["step", "attractive", "repulsive", "total"], log.rows())
    run.csv("embedding.csv", ["state", "x", "y", *[f"e{k}" for k in range(cfg["d"])]],
            _embedding_rows(spec, embed_table(params, spec, cfg["repr"])))
    plotting.plot_train_log(log.rows(), run.path("train_log.png"))


def _training_config(checkpoint) -> dict:
    """Config of the train-repr run that wrote ``checkpoint``, if it sits next to it."""
    path = Path(checkpoint).parent / "config.json"
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError):
        return {}


def cmd_eval_repr(run: Run):
    trained = _training_config(run.cfg["checkpoint"])
    cfg = {**run.cfg, "seed": trained.get("seed", "")}
    for key, fallback in (("maze", "fourroom"), ("n_transitions", 0)):
        if cfg[key] is None:
            cfg[key] = trained.get(key, fallback)
    spec = load_maze(cfg["maze"])
    params = approx.load(cfg["checkpoint"])
    d = cfg["d"] or params.sizes[-1]
    # without an explicit repr, a 2-wide input layer means (x, y) positions
    kind = cfg["repr"] or ("position" if params.sizes[0] == 2 else "index")
    if params.sizes[0] != feature_dim(spec, kind):
        raise ValueError(f"checkpoint input width {params.sizes[0]} does not fit {kind} features of {cfg['maze']}")
    cfg = {**cfg, "repr": kind}
    Phi = embed_table(params, spec, kind)
    ch = ChainModel.build(spec, cfg["lambda"])
    rep = objective_gap(Phi, ch, d, "graph_drawing", cfg["n_transitions"])
    _report_csv(run, [rep], cfg)


def _report_csv(run, reports, cfg=None):
    cfg = run.cfg if cfg is None else cfg
    header = ["method", "maze", "repr", "d", "n_transitions", "seed", "projected_objective",
              "optimal", "gap", "effective_rank"]
    extra = {"maze": cfg["maze"], "repr": cfg["repr"], "seed": cfg.get("seed", "")}
    run.csv("results.csv", header, [[{**r.as_dict(), **extra}[h] for h in header] for r in reports])


def cmd_baseline(run: Run):
    cfg = run.cfg
    spec = load_maze(cfg["maze"])
    ch = ChainModel.build(spec, cfg["lambda"])
    rep = baseline_report(_buffer(spec, cfg), ch, cfg["repr"], cfg["d"])
    _report_csv(run, [rep])


def _sweep_point(args):
    cfg, beta, seed = args
    spec = load_maze(cfg["maze"])
    c = dict(cfg, seed=seed)
    params, _ = train_repr(_repr_config(c, beta=beta), _buffer(spec, c), spec, cfg["repr"])
    ch = ChainModel.build(spec, cfg["lambda"])
    return objective_gap(embed_table(params, spec, cfg["repr"]), ch, cfg["d"]).gap


def cmd_sweep_beta(run: Run, jobs: int = 1):
    cfg = run.cfg
    tasks = [(cfg, b, s) for b in cfg["betas"] for s in cfg["seeds"]]
    gaps = _map(_sweep_point, tasks, jobs)
    rows = [(b, s, g) for (_, b, s), g in zip(tasks, gaps)]
    run.csv("beta_sweep.csv", ["beta", "seed", "gap"], rows)
    mean = [np.mean([g for b2, _, g in rows if b2 == b]) for b in cfg["betas"]]
    plotting.plot_beta_sweep(cfg["betas"], mean, run.path("beta_sweep.png"), default_beta=cfg["d"] / 20)


def _agent_seed(args):
    cfg, seed = args
    spec = load_maze(cfg["maze"])
    task = GoalTask.from_spec(spec)
    phi = None
    if "mix" in cfg["kinds"]:
        phi = pretrain_embedding(spec, seed, steps=cfg["pretrain_steps"])
    curves = {}
    for kind in cfg["kinds"]:
        dq = DqnConfig(total_steps=cfg["steps"], seed=seed, eval_every=cfg["eval_every"],
                       eval_episodes=cfg["eval_episodes"], batch=cfg["batch"], lr=cfg["lr"],
                       learning_starts=cfg["learning_starts"], train_every=cfg["train_every"])
        curves[kind] = dqn_train(task, kind, dq, phi).curve
    grid = None if phi is None else mix_distance_grid(task, phi)
    return curves, grid


def cmd_train_agent(run: Run, jobs: int = 1):
    cfg = run.cfg
    spec = load_maze(cfg["maze"])
    results = _map(_agent_seed, [(cfg, s) for s in cfg["seeds"]], jobs)
    rows = []
    for seed, (curves, grid) in zip(cfg["seeds"], results):
        for kind in cfg["kinds"]:
            rows += [(steps, rate, seed, kind, cfg["maze"]) for steps, rate in curves[kind]]
        if grid is not None:
            h, w = grid.shape
            run.csv(f"mix_distance_seed{seed}.csv", ["y", *[f"x{x}" for x in range(w)]],
                    [(y, *grid[y]) for y in range(h)])
            plotting.plot_heatmap(grid, run.path(f"mix_distance_seed{seed}.png"), goal=spec.goal,
                                  title=f"{cfg['maze']} embedding distance to goal")
    run.csv("curves.csv", ["env_steps", "success_rate", "seed", "kind", "maze"], rows)
    by_kind = {k: [res[0][k] for res in results] for k in cfg["kinds"]}
    plotting.plot_success_curves(by_kind, run.path("curves.png"), title=cfg["maze"])


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


COMMANDS = {
    "collect": cmd_collect,
    "exact": cmd_exact,
    "train-repr": cmd_train_repr,
    "eval-repr": cmd_eval_repr,
    "baseline": cmd_baseline,
    "train-agent": cmd_train_agent,
    "sweep-beta": cmd_sweep_beta,
}
_PARALLEL = {"train-agent", "sweep-beta"}


def _make_command(name):
    def callback(config, out, jobs=1, **flags):
        flags = {k.rstrip("_"): v for k, v in flags.items()}
        cfg = resolve_config(name, config, flags)
        run = Run(name, cfg, out)
        if name in _PARALLEL:
            COMMANDS[name](run, jobs=jobs)
        else:
            COMMANDS[name](run)
        click.echo(str(run.dir))

    params = [
        click.Option(["--config"], type=click.Path(dir_okay=False), default=None, help="JSON config file."),
        click.Option(["--out"], type=click.Path(file_okay=False), default="runs", show_default=True,
                     help="Parent directory for run outputs."),
    ]
    if name in _PARALLEL:
        params.append(click.Option(["--jobs"], type=int, default=1, show_default=True,
                                   help="Worker processes (one per seed or sweep point)."))
    for key in SCHEMAS[name]:
        flag = "--" + key.replace("_", "-")
        # python keyword; the trailing underscore is stripped again in the callback
        dest = key + "_" if key == "lambda" else key
        params.append(click.Option([flag, dest], default=None, help=f"Overrides '{key}'."))
    return click.Command(name, callback=callback, params=params, help=COMMANDS[name].__doc__)


cmd_collect.__doc__ = "Collect uniform-policy episodes into a buffer CSV."
cmd_exact.__doc__ = "Exact Laplacian eigenvalues and eigenfunctions of a maze."
cmd_train_repr.__doc__ = "Train an embedding on the penalized graph drawing objective."
cmd_eval_repr.__doc__ = "Score a trained checkpoint by its objective gap."
cmd_baseline.__doc__ = "Score the stacked-transition SVD baseline."
cmd_train_agent.__doc__ = "Train DQN agents with each reward kind and record success curves."
cmd_sweep_beta.__doc__ = "Objective gap as a function of the penalty weight."

cli = click.Group("lapdraw", help="Laplacian representation experiments.",
                  commands={n: _make_command(n) for n in COMMANDS})


def _fail(kind: str, message: str, code: int) -> int:
    line = json.dumps({"error": kind, "message": " ".join(str(message).split())})
    click.echo(line, err=True)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rv = cli.main(argv, prog_name="lapdraw", standalone_mode=False)
    except ConfigError as exc:
        return _fail("ConfigError", exc, 2)
    except click.exceptions.Abort:
        return _fail("Aborted", "aborted", 1)
    except click.ClickException as exc:
        return _fail(type(exc).__name__, exc.format_message(), 2)
    except Exception as exc:  # noqa: BLE001 - any runtime failure becomes exit 1
        return _fail(type(exc).__name__, exc, 1)
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
