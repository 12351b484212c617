"""Command-line entry point.

Every command reads a sectioned ``key = value`` config file (``--config``),
applies ``--set section.key=value`` overrides on top of it, writes its outputs
plus a ``manifest.json`` into ``output.dir`` and prints one ``key=value``
summary line on stdout.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

COMMANDS = ("gen-data", "train", "predict", "evaluate", "poincare", "kl", "bound")


class ConfigError(ValueError):
    pass


# --- configuration ------------------------------------------------------------------

# per-system defaults for keys left unset (step sizes and sampling follow the
# usual benchmark settings; henon_heiles and pcr3bp sample around a reference orbit)
SYSTEM_DEFAULTS = {
    "kepler2d": {"h": "0.1", "scheme": "orbital_box"},
    "henon_heiles": {"h": "0.5", "scheme": "gaussian_tube", "sigma": "0.01", "energy": "0.0833333333333333",
                     "ref_time": "50"},
    "pcr3bp": {"h": "0.1", "scheme": "gaussian_tube", "sigma": "0.05",
               "ref_state": "0, 1.4142135623730951, 0.5, 0", "ref_time": "10"},
    "standard_map": {"h": "1", "scheme": "gaussian_tube", "sigma": "0.5", "ref_state": "0.1, 0.1"},
    "harmonic": {"h": "0.1", "scheme": "uniform_box", "low": "-1.5", "high": "1.5"},
    "free_particle": {"h": "0.1", "scheme": "uniform_box"},
}

BASE_DEFAULTS = {
    "system": {"tag": "kepler2d", "mu": "0.01", "K": "1.2"},
    "dataset": {"seq_len": "2", "n_sequences": "1000", "seed": "0", "tau": "0.001", "format": "both",
                "ref_points": "1000"},
    "net": {"kind": "gfnn", "hidden": "200, 100, 50, 20", "activation": "tanh", "seed": "0",
            "predict_scheme": "euler"},
    "train": {"batch_size": "200", "epochs": "20", "lr0": "0.01", "lr_schedule": "step", "lr_decay": "0.5",
              "lr_step_epochs": "5", "seed": "0", "checkpoint_every": "0"},
    "predict": {"model": "", "n_steps": "1000", "abs_tol": "1e-12", "max_iter": "100"},
    "diagnostics": {"skip": "10", "bins": "100", "plane": "0", "direction": "1"},
    "bound": {"L": "1", "delta": "0", "h": "0.1", "T": "10"},
    "output": {"dir": "out"},
}


def load_config(path: str | None, overrides: list[str]) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case-sensitive (K vs k)
    cp.read_dict(BASE_DEFAULTS)
    if path is not None:
        if not Path(path).is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as err:
            raise ConfigError(f"cannot parse {path}: {err}") from err
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not section or not name:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, name, value.strip())
    tag = cp.get("system", "tag")
    if tag not in SYSTEM_DEFAULTS:
        raise ConfigError(f"system.tag: unknown system {tag!r}")
    for k, v in SYSTEM_DEFAULTS[tag].items():
        if not cp.has_option("dataset", k):
            cp.set("dataset", k, v)
    return cp


def _get(cp, section, key, conv=str, default=None):
    if not cp.has_option(section, key) or cp.get(section, key).strip() == "":
        if default is not None:
            return default
        raise ConfigError(f"{section}.{key}: missing value")
    raw = cp.get(section, key).strip()
    try:
        return conv(raw)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({err})") from err


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.split(",") if v.strip())


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.split(",") if v.strip())


def _bool(raw: str) -> bool:
    v = raw.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def config_dict(cp) -> dict:
    return {s: dict(cp.items(s)) for s in cp.sections()}


# --- builders from config -------------------------------------------------------------


def build_system(cp):
    from .systems import SystemSpec

    tag = _get(cp, "system", "tag")
    kw = {}
    if tag == "pcr3bp":
        kw["mu"] = _get(cp, "system", "mu", float)
    if tag == "standard_map":
        kw["K"] = _get(cp, "system", "K", float)
    if tag in ("harmonic", "free_particle") and cp.has_option("system", "dim"):
        kw["dim"] = _get(cp, "system", "dim", int)
    try:
        return SystemSpec(tag, **kw)
    except ValueError as err:
        raise ConfigError(f"system: {err}") from err


def _henon_heiles_ref(energy: float):
    # zero position, momentum split evenly between both coordinates: H = energy
    import math

    if not energy > 0:
        raise ConfigError("dataset.energy must be positive")
    s = math.sqrt(energy)
    return (s, s, 0.0, 0.0)


def build_scheme(cp, system):
    from .dataset import SamplingScheme

    tag = _get(cp, "dataset", "scheme")
    kw = {}
    for key in ("a_range", "e_range", "anomaly_range", "periapsis_range"):
        if cp.has_option("dataset", key):
            kw[key] = _get(cp, "dataset", key, _floats)
    for key in ("sigma", "low", "high", "ref_time"):
        if cp.has_option("dataset", key):
            kw[key] = _get(cp, "dataset", key, float)
    kw["ref_points"] = _get(cp, "dataset", "ref_points", int)
    if tag == "gaussian_tube":
        if cp.has_option("dataset", "ref_state"):
            kw["ref_state"] = _get(cp, "dataset", "ref_state", _floats)
        elif system.tag == "henon_heiles":
            kw["ref_state"] = _henon_heiles_ref(_get(cp, "dataset", "energy", float))
        if kw.get("ref_state") is not None and len(kw["ref_state"]) != 2 * system.d:
            raise ConfigError(f"dataset.ref_state: need {2 * system.d} values for {system.tag}")
    try:
        return SamplingScheme(tag, **kw)
    except ValueError as err:
        raise ConfigError(f"dataset: {err}") from err


def build_train_config(cp, out_dir: Path):
    from .training import TrainConfig

    kw = dict(batch_size=_get(cp, "train", "batch_size", int), epochs=_get(cp, "train", "epochs", int),
              lr0=_get(cp, "train", "lr0", float), lr_schedule=_get(cp, "train", "lr_schedule"),
              lr_decay=_get(cp, "train", "lr_decay", float), lr_step_epochs=_get(cp, "train", "lr_step_epochs", int),
              seed=_get(cp, "train", "seed", int), checkpoint_every=_get(cp, "train", "checkpoint_every", int))
    if kw["checkpoint_every"]:
        kw["checkpoint_dir"] = str(out_dir / "checkpoint")
    try:
        return TrainConfig(**kw)
    except ValueError as err:
        raise ConfigError(f"train: {err}") from err


# --- trajectory files ------------------------------------------------------------------


def write_trajectory_csv(path, traj, header: dict, iterations=None) -> None:
    import numpy as np

    d = traj.d
    cols = ["step", "t"] + [f"p_{i + 1}" for i in range(d)] + [f"q_{i + 1}" for i in range(d)]
    data = [np.arange(len(traj)), traj.times, traj.states]
    fmt = ["%d", "%.17g"] + ["%.17g"] * (2 * d)
    if iterations is not None:
        cols.append("iterations")
        it = np.concatenate([[0], np.asarray(iterations)]).astype(np.int64)
        data.append(it[: len(traj)])
        fmt.append("%d")
    rows = np.column_stack([np.asarray(c, dtype=np.float64) for c in data])
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header) + "\n")
        fh.write(",".join(cols) + "\n")
        np.savetxt(fh, rows, fmt=fmt, delimiter=",")


def read_trajectory_csv(path):
    """Returns ``(Trajectory, header)``."""
    import numpy as np

    from .systems import Trajectory

    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ConfigError(f"{path}: missing trajectory header line")
        header = json.loads(first[2:])
        cols = fh.readline().strip().split(",")
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    d = header["d"]
    p = rows[:, 2:2 + d]
    q = rows[:, 2 + d:2 + 2 * d]
    info = {}
    if "iterations" in cols:
        info["iterations"] = rows[1:, cols.index("iterations")].astype(np.int64)
    h = header["h"]
    return Trajectory(h, np.concatenate([p, q], axis=1), t0=float(rows[0, 1]), info=info), header


def _write_manifest(out_dir: Path, command: str, cp, extra: dict) -> None:
    doc = {"command": command, "config": config_dict(cp), **extra}
    (out_dir / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _summary(**kv) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.10g}"
        return str(v)

    return " ".join(f"{k}={fmt(v)}" for k, v in kv.items())


# --- commands ---------------------------------------------------------------------------


def cmd_gen_data(cp, out_dir: Path) -> str:
    from .dataset import generate_dataset, write_binary, write_csv

    system = build_system(cp)
    scheme = build_scheme(cp, system)
    h = _get(cp, "dataset", "h", float)
    ds = generate_dataset(system, scheme, h, _get(cp, "dataset", "seq_len", int),
                          _get(cp, "dataset", "n_sequences", int), _get(cp, "dataset", "seed", int),
                          tau=_get(cp, "dataset", "tau", float))
    fmt = _get(cp, "dataset", "format")
    if fmt not in ("csv", "binary", "both"):
        raise ConfigError("dataset.format: expected csv, binary or both")
    files = []
    if fmt in ("csv", "both"):
        write_csv(ds, out_dir / "dataset.csv")
        files.append("dataset.csv")
    if fmt in ("binary", "both"):
        write_binary(ds, out_dir / "dataset.bin")
        files.append("dataset.bin")
    _write_manifest(out_dir, "gen-data", cp, {"files": files})
    return _summary(command="gen-data", system=system.tag, scheme=scheme.tag, h=h,
                    n_sequences=ds.n_sequences, seq_len=ds.seq_len, out=out_dir / files[0])


def _dataset_path(cp) -> Path:
    if cp.has_option("dataset", "path") and cp.get("dataset", "path").strip():
        return Path(cp.get("dataset", "path").strip())
    out = Path(_get(cp, "output", "dir"))
    for name in ("dataset.bin", "dataset.csv"):
        if (out / name).is_file():
            return out / name
    raise FileNotFoundError("no dataset: set dataset.path or run gen-data into output.dir first")


def cmd_train(cp, out_dir: Path) -> str:
    import numpy as np

    from .dataset import extract_pairs, read_dataset
    from .net import init_net, save_net
    from .training import BaselineModel, train_baseline, train_gfnn

    path = _dataset_path(cp)
    ds = read_dataset(path)
    system = build_system(cp)
    if system.tag != ds.system.tag or system.d != ds.d:
        raise ConfigError(f"system.tag {system.tag} does not match dataset system {ds.system.tag}")
    kind = _get(cp, "net", "kind")
    hidden = _get(cp, "net", "hidden", _ints)
    act = _get(cp, "net", "activation")
    nseed = _get(cp, "net", "seed", int)
    cfg = build_train_config(cp, out_dir)
    resume = None
    if cp.has_option("train", "resume") and cp.get("train", "resume").strip():
        resume = cp.get("train", "resume").strip()
    n = 2 * ds.d
    meta = {"kind": kind, "system": ds.system.tag, "params": ds.system.params(), "h": ds.h}
    if kind == "gfnn":
        net, history = train_gfnn(extract_pairs(ds), init_net((n,) + hidden + (1,), nseed, act), ds.h, cfg, resume)
    elif kind in ("vfnn", "hnn"):
        scheme = _get(cp, "net", "predict_scheme")
        out_dim = n if kind == "vfnn" else 1
        model0 = BaselineModel(kind, init_net((n,) + hidden + (out_dim,), nseed, act), scheme, ds.system.separable)
        model, history = train_baseline(ds, model0, cfg, resume)
        net = model.net
        meta["predict_scheme"] = scheme
        meta["separable"] = ds.system.separable
    else:
        raise ConfigError(f"net.kind: expected gfnn, vfnn or hnn, got {kind!r}")
    net.meta.update(meta)
    save_net(net, out_dir / "model.json")
    with open(out_dir / "history.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(history):
            fh.write(f"{i},{v:.17g}\n")
    _write_manifest(out_dir, "train", cp, {"dataset": str(path), "files": ["model.json", "history.csv"]})
    final = float(history[-1]) if history else float("nan")
    if not np.isfinite(final):
        raise FloatingPointError("training produced a non-finite loss")
    return _summary(command="train", kind=kind, epochs=len(history), final_loss=final, out=out_dir / "model.json")


def _reference_rollout(system, x0, h, n, tau):
    from .dataset import default_integrator
    from .systems import Trajectory, reference_integrate, standard_map_orbit

    if system.discrete:
        return Trajectory(1.0, standard_map_orbit(x0, system.K, n, wrap=True))
    every = int(round(h / tau))
    if every < 1 or abs(every * tau - h) > 1e-12 * max(1.0, h):
        raise ConfigError(f"predict: h = {h} is not a multiple of dataset.tau = {tau}")
    return reference_integrate(system, x0, tau, n * h, default_integrator(system), record_every=every)


def cmd_predict(cp, out_dir: Path) -> str:
    import numpy as np

    from .genfun import GenFunMap, SolverConfig, SolverError, gf_rollout
    from .net import load_net
    from .training import BaselineModel, baseline_rollout

    system = build_system(cp)
    n = _get(cp, "predict", "n_steps", int)
    if n < 1:
        raise ConfigError("predict.n_steps must be >= 1")
    x0 = np.array(_get(cp, "predict", "initial_state", _floats))
    if len(x0) != 2 * system.d:
        raise ConfigError(f"predict.initial_state: need {2 * system.d} values [p..., q...]")
    model = _get(cp, "predict", "model")
    wrap = 2 * np.pi if system.discrete else None
    header = {"format": "gfnn-trajectory", "system": system.tag, "params": system.params(), "d": system.d}
    iterations = None
    if model == "reference":
        h = _get(cp, "dataset", "h", float)
        traj = _reference_rollout(system, x0, h, n, _get(cp, "dataset", "tau", float))
        header["kind"] = "reference"
    else:
        net = load_net(model)
        kind = net.meta.get("kind", "gfnn")
        h = float(net.meta.get("h", _get(cp, "dataset", "h", float)))
        header["kind"] = kind
        if kind == "gfnn":
            solver = SolverConfig(abs_tol=_get(cp, "predict", "abs_tol", float),
                                  max_iter=_get(cp, "predict", "max_iter", int))
            try:
                traj = gf_rollout(GenFunMap(net, h, solver), x0, n, wrap=wrap)
            except SolverError as err:
                if err.partial is not None:
                    header["partial"] = True
                    header["h"] = h
                    write_trajectory_csv(out_dir / "trajectory.csv", err.partial, header)
                raise
            iterations = traj.info["iterations"]
        else:
            scheme = cp.get("predict", "scheme", fallback="").strip() or net.meta.get("predict_scheme", "euler")
            bm = BaselineModel(kind, net, scheme, bool(net.meta.get("separable", False)))
            traj = baseline_rollout(bm, x0, h, n, wrap=wrap)
    header["h"] = traj.h
    write_trajectory_csv(out_dir / "trajectory.csv", traj, header, iterations)
    _write_manifest(out_dir, "predict", cp, {"files": ["trajectory.csv"]})
    final = traj.states[-1]
    kv = dict(command="predict", kind=header["kind"], n_steps=n, h=traj.h,
              final_norm=float(np.linalg.norm(final)))
    if iterations is not None:
        kv["mean_iterations"] = float(np.mean(iterations))
    kv["out"] = out_dir / "trajectory.csv"
    return _summary(**kv)


def _paths(cp, key) -> list[str]:
    raw = _get(cp, "diagnostics", key)
    return [p.strip() for p in raw.split(",") if p.strip()]


def cmd_evaluate(cp, out_dir: Path) -> str:
    import numpy as np

    from .diagnostics import conserved_drift, fit_report, trajectory_error, write_error_csv, write_summary_csv
    from .systems import DomainError

    truth, th = read_trajectory_csv(_get(cp, "diagnostics", "truth"))
    system = build_system(cp)
    window = None
    if cp.has_option("diagnostics", "fit_window"):
        w = _get(cp, "diagnostics", "fit_window", _floats)
        if len(w) != 2:
            raise ConfigError("diagnostics.fit_window: need two values")
        window = w
    rows = []
    for k, path in enumerate(_paths(cp, "pred")):
        pred, ph = read_trajectory_csv(path)
        if pred.states.shape != truth.states.shape:
            raise ConfigError(f"{path}: {pred.states.shape} states, truth has {truth.states.shape}")
        rep = trajectory_error(pred, truth)
        label = ph.get("kind", f"pred{k}")
        row = {"method": label, "file": path, "final_error": float(rep.total[-1])}
        if np.all(rep.total == 0):
            row.update(regime="exact")
        else:
            skip = _get(cp, "diagnostics", "skip", int)
            err = rep.total
            if window is None:
                window = (float(rep.times[min(skip, len(err) - 1)]), float(rep.times[-1]))
            try:
                fit_report(rep, window)
                row.update(power_slope=rep.power_slope, exp_rate=rep.exp_rate, regime=rep.preferred)
            except ValueError as err_:
                row.update(regime="unfit", note=str(err_))
        extra = {}
        if not system.discrete:
            try:
                drift = conserved_drift(pred, system, strict=False)
                extra = {f"{name}_drift": v for name, v in drift.items()}
                row["final_energy_drift"] = float(drift["energy"][-1])
            except DomainError:
                pass
        write_error_csv(rep, out_dir / f"errors_{k}_{label}.csv", extra)
        rows.append(row)
    write_summary_csv(rows, out_dir / "summary.csv")
    _write_manifest(out_dir, "evaluate", cp, {"files": ["summary.csv"]})
    parts = {"command": "evaluate", "n_methods": len(rows)}
    for r in rows:
        parts[f"{r['method']}_regime"] = r["regime"]
        if "power_slope" in r:
            parts[f"{r['method']}_slope"] = r["power_slope"]
    parts["out"] = out_dir / "summary.csv"
    return _summary(**parts)


def cmd_poincare(cp, out_dir: Path) -> str:
    from .diagnostics import poincare_section, write_section_csv

    traj, _ = read_trajectory_csv(_get(cp, "diagnostics", "traj"))
    sec = poincare_section(traj, _get(cp, "diagnostics", "plane", int), _get(cp, "diagnostics", "direction", int))
    write_section_csv(sec, out_dir / "section.csv")
    _write_manifest(out_dir, "poincare", cp, {"files": ["section.csv"]})
    return _summary(command="poincare", n_points=len(sec), out=out_dir / "section.csv")


def cmd_kl(cp, out_dir: Path) -> str:
    import numpy as np

    from .diagnostics import marginal_kl, write_summary_csv

    truth, _ = read_trajectory_csv(_get(cp, "diagnostics", "truth"))
    bins = _get(cp, "diagnostics", "bins", int)
    system = build_system(cp)
    lo, hi = (0.0, 2 * np.pi)
    if cp.has_option("diagnostics", "kl_range"):
        lo, hi = _get(cp, "diagnostics", "kl_range", _floats)
    rows = []
    for path in _paths(cp, "pred"):
        pred, ph = read_trajectory_csv(path)
        a, b = pred.states, truth.states
        if system.discrete:
            a, b = np.mod(a, 2 * np.pi), np.mod(b, 2 * np.pi)
        names = [f"p_{i + 1}" for i in range(pred.d)] + [f"q_{i + 1}" for i in range(pred.d)]
        row = {"method": ph.get("kind", path), "file": path}
        for c, name in enumerate(names):
            row[f"kl_{name}"] = marginal_kl(a[:, c], b[:, c], bins, (lo, hi))
        rows.append(row)
    write_summary_csv(rows, out_dir / "kl.csv")
    _write_manifest(out_dir, "kl", cp, {"files": ["kl.csv"]})
    parts = {"command": "kl"}
    for r in rows:
        for k, v in r.items():
            if k.startswith("kl_"):
                parts[f"{r['method']}_{k}"] = v
    parts["out"] = out_dir / "kl.csv"
    return _summary(**parts)


def cmd_bound(cp, out_dir: Path) -> str:
    from .training import euler_error_bound

    L, delta = _get(cp, "bound", "L", float), _get(cp, "bound", "delta", float)
    h, T = _get(cp, "bound", "h", float), _get(cp, "bound", "T", float)
    try:
        b = euler_error_bound(L, delta, h, T)
    except ValueError as err:
        raise ConfigError(f"bound: {err}") from err
    with open(out_dir / "bound.csv", "w") as fh:
        fh.write("L,delta,h,T,bound\n")
        fh.write(",".join(f"{v:.17g}" for v in (L, delta, h, T, b)) + "\n")
    _write_manifest(out_dir, "bound", cp, {"files": ["bound.csv"]})
    return _summary(command="bound", L=L, delta=delta, h=h, T=T, bound=b)


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate,
            "poincare": cmd_poincare, "kl": cmd_kl, "bound": cmd_bound}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gfnn", description="Generating-function networks for symplectic prediction")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("-c", "--config", help="sectioned key = value config file")
    ap.add_argument("-s", "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override a config value (repeatable; wins over the file)")
    ap.add_argument("-o", "--out", help="shorthand for --set output.dir=OUT")
    ap.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _limit_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        _limit_threads(args.threads)  # only effective if numpy is not loaded yet
    import logging

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    from .genfun import SolverError
    from .net import NonFiniteError
    from .systems import DomainError
    from .training import TrainingError

    overrides = list(args.set)
    if args.out:
        overrides.append(f"output.dir={args.out}")
    try:
        cp = load_config(args.config, overrides)
        out_dir = Path(_get(cp, "output", "dir"))
        out_dir.mkdir(parents=True, exist_ok=True)
        line = HANDLERS[args.command](cp, out_dir)
    except (SolverError, TrainingError, NonFiniteError, DomainError, FloatingPointError) as err:
        step = getattr(err, "step", None)
        print(f"numeric failure{'' if step is None else f' at step {step}'}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError, KeyError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    print(line)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
