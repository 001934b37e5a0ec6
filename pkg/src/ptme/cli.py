"""Command-line front end: generate, train, ptme, optimize, report.

Every run writes a ``manifest.txt`` with the fully resolved configuration;
a manifest is itself a valid ``--config`` file, so re-running a command
against a saved manifest reproduces all deterministic outputs byte for
byte.  Precedence: explicit flags > config file > built-in defaults.
All randomness flows from seed flags; nothing is seeded from the clock.

Exit codes: 0 success, 2 configuration error (no outputs written),
1 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import harness, pso, sampling, surrogate, traffic
from .sampling import ConfigurationError, Dataset, DesignSpace
from .traffic import InstanceFormatError

__all__ = ["main"]


class CliConfigError(Exception):
    pass


# -- config-file merging -----------------------------------------------------

def _read_config_file(path: str) -> dict[str, str]:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliConfigError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _merge_config(args: argparse.Namespace, defaults: dict) -> dict:
    """Flags override config-file keys override defaults."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        file_values = _read_config_file(args.config)
        for key, raw in file_values.items():
            if key == "command" or key.startswith("info_"):
                continue
            if key not in defaults:
                raise CliConfigError(f"unknown config key {key!r}")
            merged[key] = _coerce(raw, defaults[key])
    for key in defaults:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    return merged


def _coerce(raw: str, default):
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _parse_seeds(spec: str) -> list[int]:
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in spec.split(",") if s]


def _parse_int_list(spec: str) -> tuple[int, ...]:
    return tuple(int(s) for s in spec.split(",") if s)


def _resolve_objective(cfg: dict):
    """Objective + space from preset/instance-file/synthetic settings."""
    chosen = [k for k in ("preset", "instance_file", "synthetic") if cfg.get(k)]
    if len(chosen) != 1:
        raise CliConfigError("choose exactly one of --preset, --instance-file, "
                             "--synthetic")
    if cfg.get("preset"):
        return traffic.TrafficObjective(traffic.load_preset(cfg["preset"]))
    if cfg.get("instance_file"):
        return traffic.TrafficObjective(traffic.load_instance(cfg["instance_file"]))
    space = DesignSpace.signal_timing(int(cfg["dim"]))
    return traffic.SyntheticObjective(cfg["synthetic"], space)


def _objective_keys(cfg: dict) -> dict:
    return {k: cfg[k] for k in ("preset", "instance_file", "synthetic", "dim")
            if cfg.get(k)}


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands --------------------------------------------------------------

GENERATE_DEFAULTS = dict(preset="", instance_file="", synthetic="", dim=10,
                         method="lhs", n=100, seed=1, jobs=1, out="ptme_out")


def cmd_generate(args) -> int:
    cfg = _merge_config(args, GENERATE_DEFAULTS)
    objective = _resolve_objective(cfg)
    if cfg["method"] not in ("urs", "lhs"):
        raise CliConfigError(f"unknown method {cfg['method']!r}")
    if cfg["n"] < 1:
        raise CliConfigError("n must be >= 1")
    space = objective.space

    sampler = (sampling.uniform_random_sample if cfg["method"] == "urs"
               else sampling.latin_hypercube_sample)
    x = sampler(space, cfg["n"], cfg["seed"])
    if space.integer_valued:
        x = sampling.quantize(x, space)
    y = harness.evaluate_rows(objective, x, cfg["jobs"])

    out = _out_dir(cfg)
    sampling.matrix_to_csv(x, out / "design.csv")
    sampling.dataset_to_csv(Dataset(x, y), out / "dataset.csv")
    manifest = {"command": "generate", **_objective_keys(cfg),
                "method": cfg["method"], "n": cfg["n"], "seed": cfg["seed"],
                "jobs": cfg["jobs"],
                "info_space_dim": space.dim,
                "info_integer_space": space.integer_valued}
    if space.integer_valued:
        manifest["info_design_entropy_bits"] = harness.average_entropy(x, space)
    harness.write_manifest(out / "manifest.txt", manifest)
    print(f"wrote {out / 'design.csv'} and {out / 'dataset.csv'} "
          f"({cfg['n']} rows, dim {space.dim})")
    return 0


TRAIN_DEFAULTS = dict(preset="", instance_file="", synthetic="", dim=10,
                      dataset="", seed=1, epochs=100, batch_size=32,
                      learning_rate=1e-4, out="ptme_out")


def cmd_train(args) -> int:
    cfg = _merge_config(args, TRAIN_DEFAULTS)
    objective = _resolve_objective(cfg)
    if not cfg["dataset"]:
        raise CliConfigError("--dataset is required")
    try:
        data = sampling.dataset_from_csv(cfg["dataset"])
    except (OSError, ConfigurationError) as exc:
        raise CliConfigError(str(exc)) from None
    space = objective.space
    if data.x.shape[1] != space.dim:
        raise CliConfigError(f"dataset has {data.x.shape[1]} columns, "
                             f"objective space has {space.dim}")

    params = surrogate.TrainParams(epochs=cfg["epochs"],
                                   batch_size=cfg["batch_size"],
                                   learning_rate=cfg["learning_rate"])
    model = surrogate.build(surrogate.MlpSpec.for_dim(space.dim),
                            cfg["seed"], space)
    result = surrogate.train(model, data, params, cfg["seed"])

    out = _out_dir(cfg)
    surrogate.save_model(result.model, out / "model.bin")
    harness.write_manifest(out / "manifest.txt", {
        "command": "train", **_objective_keys(cfg),
        "dataset": cfg["dataset"], "seed": cfg["seed"],
        "epochs": cfg["epochs"], "batch_size": cfg["batch_size"],
        "learning_rate": cfg["learning_rate"],
        "info_final_train_mse": result.final_mse,
        "info_hidden_dims": "x".join(str(h) for h in result.model.spec.hidden_dims),
    })
    print(f"wrote {out / 'model.bin'} (final training MSE {result.final_mse:.6f})")
    return 0


PTME_DEFAULTS = dict(preset="", instance_file="", synthetic="", dim=10,
                     methods="urs,lhs", sizes="100,1000,10000", n_test=1000,
                     trials=10, seed=1, k=1, jobs=1, rapl_root="",
                     epochs=100, batch_size=32, learning_rate=1e-4,
                     out="ptme_out")


def cmd_ptme(args) -> int:
    cfg = _merge_config(args, PTME_DEFAULTS)
    objective_spec = _objective_keys(cfg)
    if cfg.get("preset"):
        objective_id = cfg["preset"]
    elif cfg.get("synthetic"):
        objective_id = f"synthetic:{cfg['synthetic']}"
    else:
        raise CliConfigError("the ptme study needs --preset or --synthetic")
    try:
        study = harness.StudyConfig(
            objective=objective_id,
            methods=tuple(cfg["methods"].split(",")),
            train_sizes=_parse_int_list(cfg["sizes"]),
            n_test=cfg["n_test"], trials=cfg["trials"], seed=cfg["seed"],
            batch_k=cfg["k"], synthetic_dim=cfg["dim"], n_jobs=cfg["jobs"],
            train_params=surrogate.TrainParams(
                epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                learning_rate=cfg["learning_rate"]),
        )
        harness.resolve_objective(study)
    except (ConfigurationError, ValueError) as exc:
        raise CliConfigError(str(exc)) from None

    probe = (harness.EnergyProbe.discover(cfg["rapl_root"]) if cfg["rapl_root"]
             else None)
    report = harness.run_study(study, probe=probe)
    out = _out_dir(cfg)
    harness.write_study_outputs(report, out, extra_manifest={
        "command": "ptme", **objective_spec,
        "methods": cfg["methods"], "sizes": cfg["sizes"],
        "k": cfg["k"], "rapl_root": cfg["rapl_root"],
    })
    print(f"study complete: {len(report.cells)} cells -> {out}")
    return 0


OPTIMIZE_DEFAULTS = dict(preset="", instance_file="", synthetic="", dim=10,
                         mode="pso", model="", seeds="1", swarm_size=100,
                         max_fe=30_000, jobs=1, out="ptme_out")


def cmd_optimize(args) -> int:
    cfg = _merge_config(args, OPTIMIZE_DEFAULTS)
    objective = _resolve_objective(cfg)
    space = objective.space
    seeds = _parse_seeds(cfg["seeds"])
    if not seeds:
        raise CliConfigError("empty seed list")
    if cfg["mode"] not in ("pso", "sapso"):
        raise CliConfigError(f"unknown mode {cfg['mode']!r}")
    params = pso.PsoParams(swarm_size=cfg["swarm_size"],
                           max_evaluations=cfg["max_fe"])

    model = None
    if cfg["mode"] == "sapso":
        if not cfg["model"]:
            raise CliConfigError("sapso mode needs --model")
        try:
            model = surrogate.load_model(cfg["model"])
        except (OSError, ValueError) as exc:
            raise CliConfigError(str(exc)) from None
        if model.spec.input_dim != space.dim:
            raise CliConfigError(
                f"model expects {model.spec.input_dim} inputs, "
                f"space has {space.dim}")

    out = _out_dir(cfg)
    finals = []
    if cfg["mode"] == "pso":
        results = _run_many(pso.pso_run, [(objective, space, params, s) for s in seeds],
                            cfg["jobs"])
        for seed, result in zip(seeds, results):
            pso.write_trajectory(out / f"trajectory_pso_seed{seed}.csv",
                                 result.trajectory)
            finals.append(result.best_value)
    else:
        for seed in seeds:
            result = pso.sapso_run(model, objective, space, params, seed)
            pso.write_trajectory(out / f"trajectory_sapso_seed{seed}.csv",
                                 result.trajectory)
            finals.append(result.real_value)

    label = cfg["mode"]
    summaries = [pso.five_number_summary(label, finals)]
    pso.write_comparison(out / "comparison.csv", summaries, [])
    harness.write_manifest(out / "manifest.txt", {
        "command": "optimize", **_objective_keys(cfg),
        "mode": cfg["mode"], "model": cfg["model"], "seeds": cfg["seeds"],
        "swarm_size": cfg["swarm_size"], "max_fe": cfg["max_fe"],
        "jobs": cfg["jobs"],
        "info_median_final": summaries[0]["median"],
    })
    print(f"{label}: {len(seeds)} runs, median final {summaries[0]['median']:.6f}")
    return 0


def _run_many(fn, argument_tuples, jobs: int):
    if jobs <= 1 or len(argument_tuples) == 1:
        return [fn(*a) for a in argument_tuples]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *a) for a in argument_tuples]
        return [f.result() for f in futures]


REPORT_DEFAULTS = dict(study_dir="")


def cmd_report(args) -> int:
    cfg = _merge_config(args, REPORT_DEFAULTS)
    study_dir = Path(cfg["study_dir"] or ".")
    summary = study_dir / "study_summary.csv"
    if not summary.exists():
        raise CliConfigError(f"{summary} not found")
    rows = _read_summary(summary)
    normalized = _normalize_summary(rows)
    out = study_dir / "study_normalized.csv"
    with open(out, "w") as fh:
        fh.write("method,quantity,size,mean,normalized,ideal_linear\n")
        for r in normalized:
            fh.write(f"{r['method']},{r['quantity']},{r['size']},"
                     f"{r['mean']!r},{r['normalized']!r},{r['ideal_linear']!r}\n")
    for r in normalized:
        print(f"{r['method']:>4} {r['quantity']:<16} size {r['size']:>7}: "
              f"{r['normalized']:8.3f}x (ideal {r['ideal_linear']:g}x)")
    return 0


def _read_summary(path: Path) -> list[dict]:
    rows = []
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    for line in lines[1:]:
        parts = line.split(",")
        row = dict(zip(header, parts))
        if row.get("stdv", "") == "":
            continue  # distribution extras carry no per-trial series
        rows.append({"method": row["method"], "size": int(row["size"]),
                     "quantity": row["quantity"], "mean": float(row["mean"])})
    return rows


def _normalize_summary(rows: list[dict]) -> list[dict]:
    sizes = sorted({r["size"] for r in rows})
    if not sizes:
        raise CliConfigError("summary holds no rows")
    baseline = sizes[0]
    base = {(r["method"], r["quantity"]): r["mean"]
            for r in rows if r["size"] == baseline}
    out = []
    for r in rows:
        b = base.get((r["method"], r["quantity"]))
        if not b:
            continue
        out.append({**r, "normalized": r["mean"] / b,
                    "ideal_linear": r["size"] / baseline})
    return out


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ptme",
        description="Surrogate evaluation (precision/time/memory/energy) "
                    "and surrogate-assisted swarm optimization.")
    sub = parser.add_subparsers(dest="command", required=True)

    def objective_flags(p):
        p.add_argument("--preset", choices=traffic.PRESET_NAMES)
        p.add_argument("--instance-file", dest="instance_file")
        p.add_argument("--synthetic", choices=("sphere", "rastrigin-like", "linear"))
        p.add_argument("--dim", type=int, help="dimension for --synthetic")

    p = sub.add_parser("generate", help="sample a design and evaluate it")
    objective_flags(p)
    p.add_argument("--method", choices=("urs", "lhs"))
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a surrogate from a dataset CSV")
    objective_flags(p)
    p.add_argument("--dataset")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ptme", help="run the measurement study")
    objective_flags(p)
    p.add_argument("--methods")
    p.add_argument("--sizes")
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, help="inferences per measured region")
    p.add_argument("--jobs", type=int)
    p.add_argument("--rapl-root", dest="rapl_root")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_ptme)

    p = sub.add_parser("optimize", help="run PSO or surrogate-assisted PSO")
    objective_flags(p)
    p.add_argument("--mode", choices=("pso", "sapso"))
    p.add_argument("--model")
    p.add_argument("--seeds", help="e.g. 1..10 or 3,5,8")
    p.add_argument("--swarm-size", dest="swarm_size", type=int)
    p.add_argument("--max-fe", dest="max_fe", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("report", help="rebuild the normalized table of a study")
    p.add_argument("--study-dir", dest="study_dir")
    p.add_argument("--config")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, InstanceFormatError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
