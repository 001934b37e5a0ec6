"""Global-best particle swarm optimization, plain and surrogate-assisted.

Both run modes share one swarm core, so a surrogate that reproduces the
true objective yields exactly the same trajectory as the plain run under
the same seed.  The surrogate-assisted mode routes every in-loop fitness
evaluation to the surrogate and spends exactly one true evaluation, on
the final best particle.

Mechanics: random initial positions in bounds, zero initial velocities,
per-dimension U(0,1) draws in the velocity update, per-dimension velocity
clamp at a fraction of the variable range, hard position clamp to bounds,
inertia decreasing linearly over the planned update generations.  Integer
spaces keep continuous particle positions and quantize only at evaluation
time.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .harness import mann_whitney_u
from .sampling import DesignSpace, quantize
from .surrogate import MlpModel, predict_batch

__all__ = [
    "PsoParams",
    "PsoResult",
    "SapsoResult",
    "velocity_update",
    "pso_run",
    "sapso_run",
    "compare_runs",
    "five_number_summary",
    "write_trajectory",
    "write_comparison",
]


@dataclass(frozen=True)
class PsoParams:
    swarm_size: int = 100
    max_evaluations: int = 30_000
    phi1: float = 2.05
    phi2: float = 2.05
    inertia_start: float = 0.5
    inertia_end: float = 0.1
    velocity_clamp: float = 0.5   # fraction of each variable's range

    def __post_init__(self):
        if self.swarm_size < 1 or self.max_evaluations < self.swarm_size:
            raise ValueError("need swarm_size >= 1 and max_evaluations >= swarm_size")


@dataclass
class PsoResult:
    best_x: np.ndarray
    best_value: float
    trajectory: list[tuple[int, int, float]]   # (generation, evaluations, best)
    max_velocity_fraction: float


@dataclass
class SapsoResult:
    best_x: np.ndarray
    surrogate_value: float
    real_value: float
    trajectory: list[tuple[int, int, float]]
    surrogate_evaluations: int
    real_evaluations: int


def velocity_update(v, x, pbest, gbest, w, phi1, phi2, r1, r2):
    """One unclamped velocity update; attraction terms vanish at x=p=b."""
    return w * v + phi1 * r1 * (pbest - x) + phi2 * r2 * (gbest - x)


def _as_batch_evaluator(fn, space: DesignSpace):
    if isinstance(fn, MlpModel):
        return lambda x: predict_batch(fn, x)
    return lambda x: np.array([fn(row) for row in x], dtype=float)


def _swarm_core(evaluator, space: DesignSpace, params: PsoParams, seed: int):
    rng = np.random.default_rng(seed)
    n, dim = params.swarm_size, space.dim
    lower, upper = space.lower, space.upper
    span = upper - lower
    vmax = params.velocity_clamp * span

    def evaluate(positions):
        if space.integer_valued:
            return evaluator(quantize(positions, space))
        return evaluator(positions)

    x = rng.uniform(lower, upper, size=(n, dim))
    v = np.zeros((n, dim))
    fitness = evaluate(x)
    pbest = x.copy()
    pbest_f = fitness.copy()
    best_i = int(np.argmin(pbest_f))
    gbest = pbest[best_i].copy()
    gbest_f = float(pbest_f[best_i])

    evaluations = n
    generation = 0
    trajectory = [(generation, evaluations, gbest_f)]
    planned_updates = max(0, -(-(params.max_evaluations - n) // n))
    max_vel_frac = 0.0
    free = space.free_mask

    while evaluations < params.max_evaluations:
        if planned_updates > 1:
            frac = generation / (planned_updates - 1)
        else:
            frac = 0.0
        w = params.inertia_start + (params.inertia_end - params.inertia_start) * frac

        r1 = rng.random((n, dim))
        r2 = rng.random((n, dim))
        v = velocity_update(v, x, pbest, gbest, w, params.phi1, params.phi2, r1, r2)
        np.clip(v, -vmax, vmax, out=v)
        if free.any():
            frac_now = np.abs(v[:, free]) / span[free]
            max_vel_frac = max(max_vel_frac, float(frac_now.max()))
        x = x + v
        np.clip(x, lower, upper, out=x)

        fitness = evaluate(x)
        improved = fitness < pbest_f
        pbest[improved] = x[improved]
        pbest_f[improved] = fitness[improved]
        best_i = int(np.argmin(pbest_f))
        if pbest_f[best_i] < gbest_f:
            gbest_f = float(pbest_f[best_i])
            gbest = pbest[best_i].copy()

        evaluations += n
        generation += 1
        trajectory.append((generation, evaluations, gbest_f))

    best_x = quantize(gbest[None, :], space)[0] if space.integer_valued else gbest
    return best_x, gbest_f, trajectory, max_vel_frac


def pso_run(objective, space: DesignSpace, params: PsoParams,
            seed: int) -> PsoResult:
    """Plain PSO: every fitness evaluation calls the true objective."""
    evaluator = _as_batch_evaluator(objective, space)
    best_x, best_f, trajectory, mv = _swarm_core(evaluator, space, params, seed)
    return PsoResult(best_x, best_f, trajectory, mv)


def sapso_run(surrogate, real_objective, space: DesignSpace,
              params: PsoParams, seed: int) -> SapsoResult:
    """Surrogate-assisted PSO; one true evaluation, on the final best."""
    if isinstance(surrogate, MlpModel) and surrogate.spec.input_dim != space.dim:
        raise ValueError(
            f"surrogate expects {surrogate.spec.input_dim} inputs, space has {space.dim}")
    evaluator = _as_batch_evaluator(surrogate, space)
    best_x, best_f, trajectory, _ = _swarm_core(evaluator, space, params, seed)
    real_value = float(real_objective(best_x))
    return SapsoResult(best_x, best_f, real_value, trajectory,
                       surrogate_evaluations=trajectory[-1][1],
                       real_evaluations=1)


def five_number_summary(label: str, values) -> dict:
    if len(values) == 0:
        raise ValueError(f"group {label!r} is empty")
    arr = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return {
        "label": label, "n": int(arr.size), "min": float(arr.min()),
        "q1": float(q1), "median": float(med), "q3": float(q3),
        "max": float(arr.max()),
    }


def compare_runs(groups: list[tuple[str, list[float]]]):
    """Boxplot-ready five-number summaries plus pairwise Mann-Whitney flags."""
    if len(groups) < 2:
        raise ValueError("need at least two result groups to compare")
    summaries = [five_number_summary(label, values) for label, values in groups]
    pairwise = []
    for i, (label_a, a) in enumerate(groups):
        for label_b, b in groups[i + 1 :]:
            u, p = mann_whitney_u(a, b)
            pairwise.append({
                "group_a": label_a, "group_b": label_b,
                "u": u, "p": p, "significant": p < 0.05,
            })
    return summaries, pairwise


def write_trajectory(path: str | Path, trajectory):
    with open(path, "w") as fh:
        fh.write("generation,FE,best_fitness\n")
        for gen, fe, best in trajectory:
            fh.write(f"{gen},{fe},{best!r}\n")


def write_comparison(path: str | Path, summaries, pairwise):
    with open(path, "w") as fh:
        fh.write("label,n,min,q1,median,q3,max\n")
        for s in summaries:
            fh.write(f"{s['label']},{s['n']},{s['min']!r},{s['q1']!r},"
                     f"{s['median']!r},{s['q3']!r},{s['max']!r}\n")
        fh.write("\ngroup_a,group_b,U,p,significant\n")
        for row in pairwise:
            fh.write(f"{row['group_a']},{row['group_b']},{row['u']!r},"
                     f"{row['p']!r},{int(row['significant'])}\n")
