"""Measurement-protocol orchestration and the statistics behind the reports.

``run_study`` executes the full procedure: sample one common test set with
true objective values, then for every (sampling method, training size) cell
run T independent trials -- fresh training sample, measured training
region, measured per-sample inference over the common test set -- and
aggregate precision metrics plus the time/memory/energy statistics of
every measured region.

The statistical helpers (Mann-Whitney U, log-normal moment fitting,
per-variable design entropy, normalization against the smallest size) are
module-level functions so they can be tested against independent oracles.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .sampling import (
    ConfigurationError,
    Dataset,
    DesignSpace,
    latin_hypercube_sample,
    quantize,
    uniform_random_sample,
)
from .surrogate import MlpSpec, TrainParams, build, predict, train
from .telemetry import EnergyProbe, MeasurementRecord, default_probe, measure
from .traffic import PRESET_NAMES, SyntheticObjective, TrafficObjective, load_preset

__all__ = [
    "StudyConfig",
    "CellResult",
    "PtmeStudyReport",
    "run_study",
    "mann_whitney_u",
    "fit_lognormal",
    "average_entropy",
    "normalize_report",
    "summary_rows",
    "write_study_outputs",
    "evaluate_rows",
    "resolve_objective",
    "derive_seed",
]

SIGNIFICANCE_LEVEL = 0.05
EXACT_MW_LIMIT = 20


# -- statistics -------------------------------------------------------------

def mann_whitney_u(a, b, method: str = "auto") -> tuple[float, float]:
    """Mann-Whitney U of the first sample and the two-sided p value.

    Small samples (both sides <= 20) are handled by exact enumeration of
    the rank-sum distribution over all C(n_a+n_b, n_a) group assignments,
    which stays valid under ties; larger samples use the tie-corrected
    normal approximation with continuity correction.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    n_a, n_b = a.size, b.size
    pooled = np.concatenate([a, b])
    double_ranks = _double_midranks(pooled)
    u_a = (float(np.sum(double_ranks[:n_a])) - n_a * (n_a + 1)) / 2.0

    if method == "auto":
        method = "exact" if max(n_a, n_b) <= EXACT_MW_LIMIT else "approx"
    if method == "exact":
        p = _mw_exact_p(double_ranks, n_a)
    elif method == "approx":
        p = _mw_approx_p(u_a, pooled, n_a, n_b)
    else:
        raise ValueError(f"unknown method {method!r}")
    return u_a, p


def _double_midranks(pooled: np.ndarray) -> np.ndarray:
    """Twice the fractional ranks; integers even when ties give .5 ranks."""
    order = np.argsort(pooled, kind="stable")
    n = pooled.size
    doubled = np.empty(n, dtype=np.int64)
    i = 0
    sorted_vals = pooled[order]
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        doubled[order[i : j + 1]] = (i + 1) + (j + 1)  # 2 * midrank
        i = j + 1
    return doubled


def _mw_exact_p(double_ranks: np.ndarray, n_a: int) -> float:
    total_sum = int(double_ranks.sum())
    ways = np.zeros((n_a + 1, total_sum + 1), dtype=np.float64)
    ways[0, 0] = 1.0
    for r in double_ranks:
        r = int(r)
        hi = min(n_a, len(double_ranks))
        for k in range(hi, 0, -1):
            ways[k, r:] += ways[k - 1, : total_sum + 1 - r]
    dist = ways[n_a]
    count = dist.sum()
    observed = int(double_ranks[:n_a].sum())
    p_low = dist[: observed + 1].sum() / count
    p_high = dist[observed:].sum() / count
    return min(1.0, 2.0 * min(p_low, p_high))


def _mw_approx_p(u_a: float, pooled: np.ndarray, n_a: int, n_b: int) -> float:
    n = n_a + n_b
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (n * (n - 1))
    sigma_sq = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if sigma_sq <= 0:
        return 1.0
    mu = n_a * n_b / 2.0
    diff = u_a - mu
    correction = 0.5 if diff > 0 else (-0.5 if diff < 0 else 0.0)
    z = (diff - correction) / math.sqrt(sigma_sq)
    return math.erfc(abs(z) / math.sqrt(2.0))


def fit_lognormal(y) -> tuple[float, float]:
    """Arithmetic mean and variance implied by a log-normal ML fit.

    mu and sigma^2 are the mean and population variance of ln(y); the
    returned moments are exp(mu + sigma^2/2) and
    (exp(sigma^2) - 1) exp(2 mu + sigma^2).
    """
    arr = np.asarray(y, dtype=float)
    if arr.size == 0 or np.any(arr <= 0):
        raise ValueError("log-normal fit requires a nonempty, positive sample")
    ln = np.log(arr)
    mu = float(ln.mean())
    s2 = float(ln.var())
    mean = math.exp(mu + s2 / 2.0)
    var = (math.exp(s2) - 1.0) * math.exp(2.0 * mu + s2)
    return mean, var


def average_entropy(matrix: np.ndarray, space: DesignSpace) -> float:
    """Mean per-free-variable Shannon entropy (bits) over the integer grid."""
    if not space.integer_valued:
        raise ConfigurationError("entropy is defined over integer-valued spaces")
    x = np.asarray(matrix)
    if np.any(x != np.round(x)):
        raise ConfigurationError("matrix must be quantized before computing entropy")
    free = np.flatnonzero(space.free_mask)
    if free.size == 0:
        return 0.0
    total = 0.0
    n = x.shape[0]
    for j in free:
        lo, hi = int(space.lower[j]), int(space.upper[j])
        counts = np.bincount(x[:, j].astype(int) - lo, minlength=hi - lo + 1)
        p = counts[counts > 0] / n
        total += float(-(p * np.log2(p)).sum())
    return total / free.size


# -- study configuration and report -----------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    """Protocol parameters; defaults are the desk-scale setup."""

    objective: str                       # preset name or "synthetic:<name>"
    methods: tuple[str, ...] = ("urs", "lhs")
    train_sizes: tuple[int, ...] = (100, 1_000, 10_000)
    n_test: int = 1_000
    trials: int = 10
    seed: int = 1
    batch_k: int = 1
    synthetic_dim: int = 10
    n_jobs: int = 1
    train_params: TrainParams = field(default_factory=TrainParams)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.n_test < 2:
            raise ConfigurationError("n_test must be >= 2")
        if self.batch_k < 1:
            raise ConfigurationError("batch_k must be >= 1")
        if not self.train_sizes:
            raise ConfigurationError("at least one training size is required")
        if any(b <= a for a, b in zip(self.train_sizes, self.train_sizes[1:])):
            raise ConfigurationError("training sizes must be strictly increasing")
        bad = [m for m in self.methods if m not in ("urs", "lhs")]
        if bad or not self.methods:
            raise ConfigurationError(f"methods must be 'urs'/'lhs', got {self.methods}")


@dataclass
class CellResult:
    """Everything recorded for one (method, size) cell across T trials."""

    method: str
    size: int
    batch_k: int
    train_records: list[MeasurementRecord]
    infer_records: list[MeasurementRecord]
    pairs: np.ndarray                    # (trials * n_test, 2): true, predicted
    mape_per_trial: list[float]
    rmse_per_trial: list[float]
    tau_a_per_trial: list[float]
    tau_b_per_trial: list[float]
    final_train_mse: list[float]
    train_y_mean: float                  # raw sample moments, pooled trials
    train_y_var: float
    lognormal_mean: float                # fitted arithmetic moments
    lognormal_var: float
    design_entropy: float | None

    def pooled_metrics(self) -> dict[str, float]:
        yt, yp = self.pairs[:, 0], self.pairs[:, 1]
        return {
            "mape": metrics.mape(yt, yp),
            "rmse": metrics.rmse(yt, yp),
            "tau_a": metrics.kendall_tau_a(yt, yp),
            "tau_b": metrics.kendall_tau_b(yt, yp),
        }


@dataclass
class PtmeStudyReport:
    config: StudyConfig
    space_dim: int
    cells: list[CellResult]
    test_x: np.ndarray
    test_y: np.ndarray
    energy_available: bool
    tau_mismatch: bool

    def cell(self, method: str, size: int) -> CellResult:
        for c in self.cells:
            if c.method == method and c.size == size:
                return c
        raise KeyError((method, size))


def derive_seed(*parts: int) -> int:
    """Deterministic child seed for a named stream of the study."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def resolve_objective(config: StudyConfig):
    """Objective callable with a ``space`` attribute, from the config id."""
    if config.objective in PRESET_NAMES:
        return TrafficObjective(load_preset(config.objective))
    if config.objective.startswith("synthetic:"):
        name = config.objective.split(":", 1)[1]
        return SyntheticObjective(name, DesignSpace.signal_timing(config.synthetic_dim))
    raise ConfigurationError(
        f"unknown objective {config.objective!r}; use a preset name or synthetic:<name>")


def evaluate_rows(objective, x: np.ndarray, n_jobs: int = 1) -> np.ndarray:
    """True objective values for every design row, optionally in parallel.

    Safe to parallelize: evaluation happens outside any measured region.
    """
    rows = list(np.asarray(x))
    if n_jobs <= 1 or len(rows) < 4:
        return np.array([objective(r) for r in rows], dtype=float)
    chunk = max(1, len(rows) // (n_jobs * 8))
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return np.array(list(pool.map(objective, rows, chunksize=chunk)), dtype=float)


_SAMPLERS = {"urs": uniform_random_sample, "lhs": latin_hypercube_sample}


def _sample(method: str, space: DesignSpace, n: int, seed: int) -> np.ndarray:
    x = _SAMPLERS[method](space, n, seed)
    return quantize(x, space) if space.integer_valued else x


def run_study(config: StudyConfig,
              probe: EnergyProbe | None = None) -> PtmeStudyReport:
    """Execute the measurement protocol for every (method, size) cell.

    Deterministic per config seed, except for the energy/time/memory
    readings themselves.
    """
    objective = resolve_objective(config)
    space = objective.space
    if probe is None:
        probe = default_probe()

    test_x = _sample("urs", space, config.n_test, derive_seed(config.seed, 0))
    test_y = evaluate_rows(objective, test_x, config.n_jobs)
    if np.any(test_y == 0):
        raise ConfigurationError("objective produced zero values; MAPE undefined")

    spec = MlpSpec.for_dim(space.dim)
    cells: list[CellResult] = []
    tau_mismatch = False
    energy_seen = False

    for mi, method in enumerate(config.methods):
        for si, size in enumerate(config.train_sizes):
            cell = _run_cell(config, objective, space, spec, probe,
                             method, mi, size, si, test_x, test_y)
            energy_seen = energy_seen or any(r.energy_available
                                             for r in cell.train_records)
            for ta, tb in zip(cell.tau_a_per_trial, cell.tau_b_per_trial):
                if ta != tb:
                    tau_mismatch = True
            cells.append(cell)

    return PtmeStudyReport(config, space.dim, cells, test_x, test_y,
                           energy_seen, tau_mismatch)


def _run_cell(config, objective, space, spec, probe, method, mi, size, si,
              test_x, test_y) -> CellResult:
    train_records: list[MeasurementRecord] = []
    infer_records: list[MeasurementRecord] = []
    pairs = []
    mape_list, rmse_list, tau_a_list, tau_b_list, mse_list = [], [], [], [], []
    pooled_train_y = []
    entropy = None

    for trial in range(config.trials):
        sample_seed = derive_seed(config.seed, 1, mi, si, trial)
        x_train = _sample(method, space, size, sample_seed)
        y_train = evaluate_rows(objective, x_train, config.n_jobs)
        pooled_train_y.append(y_train)
        if trial == 0 and space.integer_valued:
            entropy = average_entropy(x_train, space)

        model = build(spec, derive_seed(config.seed, 2, mi, si, trial), space)
        data = Dataset(x_train, y_train)
        train_seed = derive_seed(config.seed, 3, mi, si, trial)
        result, record = measure(
            lambda: train(model, data, config.train_params, train_seed), probe)
        train_records.append(record)
        mse_list.append(result.final_mse)

        predict(model, test_x[0])  # warm any lazy numpy state before timing
        preds = np.empty(config.n_test)
        k = config.batch_k
        for start in range(0, config.n_test, k):
            block = test_x[start : start + k]
            out, rec = measure(lambda: [predict(model, row) for row in block],
                               probe)
            preds[start : start + len(block)] = out
            infer_records.append(rec)

        mape_list.append(metrics.mape(test_y, preds))
        rmse_list.append(metrics.rmse(test_y, preds))
        tau_a_list.append(metrics.kendall_tau_a(test_y, preds))
        tau_b_list.append(metrics.kendall_tau_b(test_y, preds))
        pairs.append(np.column_stack([test_y, preds]))

    all_train_y = np.concatenate(pooled_train_y)
    ln_mean, ln_var = fit_lognormal(all_train_y)
    return CellResult(
        method=method, size=size, batch_k=config.batch_k,
        train_records=train_records, infer_records=infer_records,
        pairs=np.vstack(pairs),
        mape_per_trial=mape_list, rmse_per_trial=rmse_list,
        tau_a_per_trial=tau_a_list, tau_b_per_trial=tau_b_list,
        final_train_mse=mse_list,
        train_y_mean=float(all_train_y.mean()),
        train_y_var=float(all_train_y.var()),
        lognormal_mean=ln_mean, lognormal_var=ln_var,
        design_entropy=entropy,
    )


# -- aggregation and reporting -----------------------------------------------

def _cell_quantities(cell: CellResult) -> dict[str, list[float]]:
    """Per-cell lists backing the summary statistics.

    Inference time and energy are per sample (region values divided by the
    batch factor); inference memory stays a per-region high-water mark.
    """
    k = cell.batch_k
    out = {
        "train_time_s": [r.wall_time for r in cell.train_records],
        "train_peak_mb": [r.peak_memory / 2**20 for r in cell.train_records],
        "infer_time_s": [r.wall_time / k for r in cell.infer_records],
        "infer_peak_kb": [r.peak_memory / 2**10 for r in cell.infer_records],
        "mape": cell.mape_per_trial,
        "rmse": cell.rmse_per_trial,
        "tau_a": cell.tau_a_per_trial,
        "tau_b": cell.tau_b_per_trial,
    }
    if any(r.energy_available for r in cell.train_records):
        out["train_cpu_j"] = [r.cpu_energy for r in cell.train_records
                              if r.cpu_energy is not None]
        out["train_dram_j"] = [r.dram_energy for r in cell.train_records
                               if r.dram_energy is not None]
    if any(r.energy_available for r in cell.infer_records):
        out["infer_cpu_j"] = [r.cpu_energy / k for r in cell.infer_records
                              if r.cpu_energy is not None]
        out["infer_dram_j"] = [r.dram_energy / k for r in cell.infer_records
                               if r.dram_energy is not None]
    return out

# metrics where smaller is better, for the significance convention
_SMALLER_IS_BETTER = {"train_time_s", "train_peak_mb", "train_cpu_j",
                      "train_dram_j", "infer_time_s", "infer_peak_kb",
                      "infer_cpu_j", "infer_dram_j", "mape", "rmse"}


def summary_rows(report: PtmeStudyReport) -> list[dict]:
    """One row per (method, size, quantity) with mean/stdv and flags.

    ``smaller_sig`` marks the cell significantly smaller than the other
    method's cell at the same size (Mann-Whitney, p < 0.05);
    ``min_across_sizes`` marks the per-method minimum of the mean.
    """
    values: dict[tuple[str, int, str], list[float]] = {}
    for cell in report.cells:
        for quantity, series in _cell_quantities(cell).items():
            values[(cell.method, cell.size, quantity)] = series

    rows = []
    for (method, size, quantity), series in values.items():
        arr = np.asarray(series, dtype=float)
        smaller_sig = False
        others = [m for m in report.config.methods if m != method]
        if others:
            rival = values.get((others[0], size, quantity))
            if rival and arr.mean() < np.mean(rival):
                _, p = mann_whitney_u(arr, rival)
                smaller_sig = p < SIGNIFICANCE_LEVEL
        rows.append({
            "method": method, "size": size, "quantity": quantity,
            "mean": float(arr.mean()), "stdv": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
            "n": int(arr.size), "smaller_sig": smaller_sig,
            "min_across_sizes": False,
        })

    for method in report.config.methods:
        quantities = {r["quantity"] for r in rows if r["method"] == method}
        for quantity in quantities:
            group = [r for r in rows if r["method"] == method
                     and r["quantity"] == quantity]
            best = min(group, key=lambda r: r["mean"])
            best["min_across_sizes"] = True
    return rows


def normalize_report(report: PtmeStudyReport,
                     baseline_size: int | None = None) -> list[dict]:
    """Every quantity divided by its mean at the baseline (smallest) size.

    Includes the ideal linear reference, i.e. the plain size ratio.
    """
    sizes = report.config.train_sizes
    if baseline_size is None:
        baseline_size = min(sizes)
    if baseline_size not in sizes:
        raise ConfigurationError(f"baseline size {baseline_size} not in {sizes}")

    rows = []
    for method in report.config.methods:
        base_cell = report.cell(method, baseline_size)
        base_values = {q: float(np.mean(v))
                       for q, v in _cell_quantities(base_cell).items()}
        for size in sizes:
            cell = report.cell(method, size)
            for quantity, series in _cell_quantities(cell).items():
                base = base_values.get(quantity)
                if base is None or base == 0:
                    continue
                mean = float(np.mean(series))
                rows.append({
                    "method": method, "quantity": quantity, "size": size,
                    "mean": mean, "normalized": mean / base,
                    "ideal_linear": size / baseline_size,
                })
    return rows


def write_study_outputs(report: PtmeStudyReport, outdir: str | Path,
                        extra_manifest: dict | None = None):
    """Write study_raw.csv, study_summary.csv, study_normalized.csv and
    manifest.txt into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    def fmt(v):
        if isinstance(v, bool):
            return "1" if v else "0"
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    with open(outdir / "study_raw.csv", "w") as fh:
        fh.write("method,size,phase,region,samples_in_region,wall_time_s,"
                 "peak_memory_bytes,cpu_energy_j,dram_energy_j,energy_available\n")
        for cell in report.cells:
            for i, r in enumerate(cell.train_records):
                fh.write(f"{cell.method},{cell.size},train,{i},{cell.size},"
                         f"{fmt(r.wall_time)},{r.peak_memory},{fmt(r.cpu_energy)},"
                         f"{fmt(r.dram_energy)},{fmt(r.energy_available)}\n")
            for i, r in enumerate(cell.infer_records):
                n_regions_per_trial = -(-report.config.n_test // cell.batch_k)
                last = i % n_regions_per_trial == n_regions_per_trial - 1
                samples = (report.config.n_test - (n_regions_per_trial - 1) * cell.batch_k
                           if last else cell.batch_k)
                fh.write(f"{cell.method},{cell.size},infer,{i},{samples},"
                         f"{fmt(r.wall_time)},{r.peak_memory},{fmt(r.cpu_energy)},"
                         f"{fmt(r.dram_energy)},{fmt(r.energy_available)}\n")

    with open(outdir / "study_summary.csv", "w") as fh:
        fh.write("method,size,quantity,mean,stdv,n,smaller_sig,min_across_sizes\n")
        for row in summary_rows(report):
            fh.write(",".join(fmt(row[k]) for k in
                              ("method", "size", "quantity", "mean", "stdv",
                               "n", "smaller_sig", "min_across_sizes")) + "\n")
        for cell in report.cells:
            fh.write(f"{cell.method},{cell.size},train_y_mean,{fmt(cell.train_y_mean)},,,,\n")
            fh.write(f"{cell.method},{cell.size},train_y_var,{fmt(cell.train_y_var)},,,,\n")
            fh.write(f"{cell.method},{cell.size},lognormal_mean,{fmt(cell.lognormal_mean)},,,,\n")
            fh.write(f"{cell.method},{cell.size},lognormal_var,{fmt(cell.lognormal_var)},,,,\n")
            if cell.design_entropy is not None:
                fh.write(f"{cell.method},{cell.size},design_entropy_bits,"
                         f"{fmt(cell.design_entropy)},,,,\n")

    with open(outdir / "study_normalized.csv", "w") as fh:
        fh.write("method,quantity,size,mean,normalized,ideal_linear\n")
        for row in normalize_report(report):
            fh.write(",".join(fmt(row[k]) for k in
                              ("method", "quantity", "size", "mean",
                               "normalized", "ideal_linear")) + "\n")

    manifest = study_manifest(report)
    if extra_manifest:
        manifest.update(extra_manifest)
    write_manifest(outdir / "manifest.txt", manifest)


def study_manifest(report: PtmeStudyReport) -> dict:
    cfg = report.config
    return {
        "objective": cfg.objective,
        "methods": ",".join(cfg.methods),
        "sizes": ",".join(str(s) for s in cfg.train_sizes),
        "n_test": cfg.n_test,
        "trials": cfg.trials,
        "seed": cfg.seed,
        "batch_k": cfg.batch_k,
        "n_jobs": cfg.n_jobs,
        "epochs": cfg.train_params.epochs,
        "batch_size": cfg.train_params.batch_size,
        "learning_rate": cfg.train_params.learning_rate,
        "info_space_dim": report.space_dim,
        "info_energy_available": report.energy_available,
        "info_tau_mismatch": report.tau_mismatch,
        "info_inputs_quantized_to_integers": True,
        "info_targets_standardized": True,
        "info_inputs_scaled_to_unit_box": True,
        "info_entropy_base": 2,
        "info_inference_memory_per_region": True,
    }


def write_manifest(path: str | Path, manifest: dict):
    lines = [f"{k}={manifest[k]}" for k in manifest]
    Path(path).write_text("\n".join(lines) + "\n")
