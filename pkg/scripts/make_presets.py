"""Regenerate the bundled traffic instances under src/ptme/presets/.

The three desk-scale grids mirror the dimensionality of the reference
city networks: 190, 370 and 378 total signal phases.
"""

from pathlib import Path

from ptme.traffic import build_grid_instance, write_instance

OUT = Path(__file__).resolve().parents[1] / "src" / "ptme" / "presets"

PRESETS = [
    dict(name="malaga-like", rows=7, cols=8,
         phase_counts=[4] * 22 + [3] * 34,
         n_vehicles=130, sim_time=400, seed=1001),
    dict(name="stockholm-like", rows=5, cols=15,
         phase_counts=[5] * 70 + [4] * 5,
         n_vehicles=140, sim_time=460, seed=1002,
         trip_distance=(4, 10)),
    dict(name="paris-like", rows=7, cols=10,
         phase_counts=[6] * 28 + [5] * 42,
         n_vehicles=140, sim_time=440, seed=1003,
         trip_distance=(4, 10)),
]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for cfg in PRESETS:
        instance = build_grid_instance(**cfg)
        path = OUT / f"{cfg['name']}.txt"
        write_instance(instance, path)
        print(f"{path}: {instance.total_phases} phases, "
              f"{len(instance.links)} links, {len(instance.vehicles)} vehicles")


if __name__ == "__main__":
    main()
