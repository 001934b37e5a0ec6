"""Signal-plan objective backed by a deterministic point-queue simulation.

The decision vector is one integer duration per signal phase, flattened in
intersection order.  Evaluating a plan runs a discrete 1-second-step
simulation: every intersection cycles through its phases for the planned
durations; a vehicle traverses a link in the link's travel time, queues at
the stop line, and crosses onto its next link when its approach shows
green and the next link has spare capacity (FIFO per approach, head-of-line
blocking).  Queue admission order is deterministic, all state is integer,
and results are bit-reproducible.

Accounting rules:
  * travel time counts departure-to-arrival steps for delivered vehicles
    and departure-to-horizon for undelivered ones;
  * waiting time counts every step a vehicle wants to move but cannot,
    whether blocked at its origin, by a red signal, or by a full link.

The scalar objective combines total travel time, total waiting time and an
undelivered-vehicle penalty, divided by the squared delivered count plus
the plan's green/red duration ratio P; lower is better.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sampling import DesignSpace

__all__ = [
    "InstanceFormatError",
    "Link",
    "Vehicle",
    "TrafficInstance",
    "SimOutcome",
    "green_red_ratio",
    "simulate",
    "objective",
    "objective_detailed",
    "synthetic_objective",
    "SyntheticObjective",
    "TrafficObjective",
    "parse_instance",
    "write_instance",
    "load_preset",
    "build_grid_instance",
    "PRESET_NAMES",
]

PRESET_NAMES = ("malaga-like", "stockholm-like", "paris-like")


class InstanceFormatError(ValueError):
    """Malformed instance description."""


@dataclass(frozen=True)
class Link:
    source: int
    target: int
    travel_time: int
    capacity: int


@dataclass(frozen=True)
class Vehicle:
    depart: int
    route: tuple[int, ...]  # node ids, length >= 2


@dataclass(frozen=True)
class SimOutcome:
    travel_time: int      # TT_v, seconds
    waiting_time: int     # TT_EP, seconds
    delivered: int        # NV_D
    undelivered: int      # NV_ND


@dataclass
class TrafficInstance:
    """Static problem data; reusable across many plan evaluations."""

    name: str
    n_nodes: int
    n_intersections: int
    phases: list[list[tuple[int, int]]]   # per intersection: (green, red) counts
    links: list[Link]
    vehicles: list[Vehicle]
    sim_time: int

    # derived, filled in __post_init__
    phase_offsets: list[int] = field(init=False, repr=False)
    zero_red_phases: int = field(init=False, repr=False)
    _route_links: list[list[int]] = field(init=False, repr=False)
    _signal_phase: list[int | None] = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_intersections > self.n_nodes:
            raise InstanceFormatError("more intersections than nodes")
        if len(self.phases) != self.n_intersections:
            raise InstanceFormatError("phase list length != intersection count")
        if self.sim_time < 0:
            raise InstanceFormatError("sim_time must be >= 0")
        offsets, total = [], 0
        for plist in self.phases:
            if not plist:
                raise InstanceFormatError("every intersection needs >= 1 phase")
            offsets.append(total)
            total += len(plist)
        self.phase_offsets = offsets
        self.zero_red_phases = sum(1 for plist in self.phases
                                   for _, r in plist if r == 0)

        index = {}
        for i, ln in enumerate(self.links):
            if not (0 <= ln.source < self.n_nodes and 0 <= ln.target < self.n_nodes):
                raise InstanceFormatError(f"link {i} references an unknown node")
            if ln.travel_time < 1 or ln.capacity < 1:
                raise InstanceFormatError(f"link {i} needs travel_time and capacity >= 1")
            index[(ln.source, ln.target)] = i

        # round-robin approach-to-phase assignment at the downstream node
        incoming_seen = [0] * self.n_nodes
        signal: list[int | None] = []
        for ln in self.links:
            v = ln.target
            if v < self.n_intersections:
                signal.append(incoming_seen[v] % len(self.phases[v]))
            else:
                signal.append(None)
            incoming_seen[v] += 1
        self._signal_phase = signal

        routes = []
        for k, veh in enumerate(self.vehicles):
            if len(veh.route) < 2:
                raise InstanceFormatError(f"vehicle {k} route needs >= 2 nodes")
            if veh.depart < 0:
                raise InstanceFormatError(f"vehicle {k} has a negative departure")
            try:
                routes.append([index[(a, b)] for a, b in zip(veh.route, veh.route[1:])])
            except KeyError as exc:
                raise InstanceFormatError(
                    f"vehicle {k} route uses a missing link {exc.args[0]}") from None
        self._route_links = routes

    @property
    def total_phases(self) -> int:
        return sum(len(p) for p in self.phases)

    def default_space(self) -> DesignSpace:
        return DesignSpace.signal_timing(self.total_phases)


def _plan_array(instance: TrafficInstance, plan) -> np.ndarray:
    arr = np.asarray(plan)
    if arr.ndim != 1 or arr.shape[0] != instance.total_phases:
        raise ValueError(
            f"plan must have {instance.total_phases} durations, got shape {arr.shape}")
    out = arr.astype(np.int64)
    if np.any(out != arr):
        raise ValueError("plan durations must be integers")
    if np.any(out < 1):
        raise ValueError("plan durations must be positive")
    return out


def green_red_ratio(instance: TrafficInstance, plan) -> float:
    """P = sum over phases of duration * greens / reds.

    Phases with a zero red count contribute nothing; they are counted in
    ``instance.zero_red_phases`` so callers can flag the configuration.
    """
    d = _plan_array(instance, plan)
    total = 0.0
    for i, plist in enumerate(instance.phases):
        off = instance.phase_offsets[i]
        for j, (g, r) in enumerate(plist):
            if r > 0:
                total += float(d[off + j]) * g / r
    return total


def simulate(instance: TrafficInstance, plan) -> SimOutcome:
    """Run the point-queue simulation for ``sim_time`` one-second steps."""
    d = _plan_array(instance, plan).tolist()
    horizon = instance.sim_time
    links = instance.links
    route_links = instance._route_links
    n_vehicles = len(instance.vehicles)

    # per-link green window inside its node cycle: (cycle, lo, hi), or None
    windows: list[tuple[int, int, int] | None] = []
    cumul: list[list[int]] = []
    for i, plist in enumerate(instance.phases):
        off = instance.phase_offsets[i]
        acc = [0]
        for j in range(len(plist)):
            acc.append(acc[-1] + d[off + j])
        cumul.append(acc)
    for ln, phase in zip(links, instance._signal_phase):
        if phase is None:
            windows.append(None)
        else:
            acc = cumul[ln.target]
            windows.append((acc[-1], acc[phase], acc[phase + 1]))

    travel = [ln.travel_time for ln in links]
    cap = [ln.capacity for ln in links]
    occ = [0] * len(links)
    depart = [veh.depart for veh in instance.vehicles]
    pos = [0] * n_vehicles
    delivered = [False] * n_vehicles

    dep_buckets: dict[int, list[int]] = {}
    for k, veh in enumerate(instance.vehicles):
        if veh.depart < horizon:
            dep_buckets.setdefault(veh.depart, []).append(k)
    fin_buckets: list[list[int]] = [[] for _ in range(horizon)]
    entry_queues: dict[int, deque] = {}
    stop_queues: dict[int, deque] = {}

    tt_travel = 0
    tt_wait = 0
    n_delivered = 0

    for t in range(horizon):
        for veh in dep_buckets.get(t, ()):
            entry_queues.setdefault(route_links[veh][0], deque()).append(veh)
        if entry_queues:
            for ln_id in sorted(entry_queues):
                q = entry_queues[ln_id]
                while q and occ[ln_id] < cap[ln_id]:
                    veh = q.popleft()
                    occ[ln_id] += 1
                    tt_wait += t - depart[veh]
                    fin = t + travel[ln_id] - 1
                    if fin < horizon:
                        fin_buckets[fin].append(veh)
                if not q:
                    del entry_queues[ln_id]

        for veh in fin_buckets[t]:
            route = route_links[veh]
            ln_id = route[pos[veh]]
            if pos[veh] == len(route) - 1:
                occ[ln_id] -= 1
                delivered[veh] = True
                n_delivered += 1
                tt_travel += t - depart[veh] + 1
            else:
                stop_queues.setdefault(ln_id, deque()).append((veh, t))

        if stop_queues:
            for ln_id in sorted(stop_queues):
                win = windows[ln_id]
                if win is not None:
                    cycle, lo, hi = win
                    tm = t % cycle
                    if not lo <= tm < hi:
                        continue
                q = stop_queues[ln_id]
                while q:
                    veh, join_t = q[0]
                    nxt = route_links[veh][pos[veh] + 1]
                    if occ[nxt] >= cap[nxt]:
                        break
                    q.popleft()
                    occ[ln_id] -= 1
                    occ[nxt] += 1
                    pos[veh] += 1
                    tt_wait += t - join_t
                    fin = t + travel[nxt]
                    if fin < horizon:
                        fin_buckets[fin].append(veh)
                if not q:
                    del stop_queues[ln_id]

    for q in stop_queues.values():
        for _, join_t in q:
            tt_wait += horizon - join_t
    for q in entry_queues.values():
        for veh in q:
            tt_wait += horizon - depart[veh]
    for veh in range(n_vehicles):
        if not delivered[veh]:
            tt_travel += max(0, horizon - depart[veh])

    return SimOutcome(tt_travel, tt_wait, n_delivered, n_vehicles - n_delivered)


def objective_from_outcome(outcome: SimOutcome, ratio: float,
                           sim_time: int) -> tuple[float, bool]:
    numerator = outcome.travel_time + outcome.waiting_time \
        + outcome.undelivered * sim_time
    denominator = outcome.delivered**2 + ratio
    if denominator == 0.0:
        return math.inf, True
    return numerator / denominator, False


def objective(instance: TrafficInstance, plan) -> float:
    """Scalar plan fitness; lower is better, +inf on a degenerate denominator."""
    return objective_detailed(instance, plan)[0]


def objective_detailed(instance: TrafficInstance, plan) -> tuple[float, SimOutcome, bool]:
    outcome = simulate(instance, plan)
    value, degenerate = objective_from_outcome(
        outcome, green_red_ratio(instance, plan), instance.sim_time)
    return value, outcome, degenerate


# -- synthetic oracle objectives ------------------------------------------

SYNTHETIC_SHIFT = 0.5
SYNTHETIC_OFFSET = 1.0

_SYNTHETIC = ("sphere", "rastrigin-like", "linear")


def synthetic_objective(name: str, x) -> float:
    """Closed-form test objectives, offset to stay strictly positive."""
    v = np.asarray(x, dtype=float)
    if name == "sphere":
        return SYNTHETIC_OFFSET + float(np.sum((v - SYNTHETIC_SHIFT) ** 2))
    if name == "rastrigin-like":
        z = v - SYNTHETIC_SHIFT
        return SYNTHETIC_OFFSET + float(np.sum(z * z - 10.0 * np.cos(2.0 * math.pi * z) + 10.0))
    if name == "linear":
        return SYNTHETIC_OFFSET + float(np.sum(v))
    raise ValueError(f"unknown synthetic objective {name!r}")


class SyntheticObjective:
    """Callable objective over a design space, for protocol and solver tests."""

    def __init__(self, name: str, space: DesignSpace):
        if name not in _SYNTHETIC:
            raise ValueError(f"unknown synthetic objective {name!r}")
        self.name = name
        self.space = space

    def __call__(self, x) -> float:
        return synthetic_objective(self.name, x)


class TrafficObjective:
    """The expensive objective: full simulation per evaluation."""

    def __init__(self, instance: TrafficInstance, space: DesignSpace | None = None):
        self.instance = instance
        self.space = space if space is not None else instance.default_space()
        if self.space.dim != instance.total_phases:
            raise ValueError("space dimension must equal the total phase count")

    @property
    def name(self) -> str:
        return self.instance.name

    def __call__(self, x) -> float:
        return objective(self.instance, np.asarray(x).astype(np.int64))


# -- instance files ---------------------------------------------------------

def parse_instance(text: str, origin: str = "<instance>") -> TrafficInstance:
    """Parse the plain-text instance format (see ``write_instance``)."""
    name = "unnamed"
    sim_time = None
    n_nodes = None
    phases: list[list[tuple[int, int]]] = []
    links: list[Link] = []
    vehicles: list[Vehicle] = []

    def fail(lineno, msg):
        raise InstanceFormatError(f"{origin}:{lineno}: {msg}")

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        try:
            if key == "name":
                name = parts[1]
            elif key == "sim_time":
                sim_time = int(parts[1])
            elif key == "nodes":
                n_nodes = int(parts[1])
            elif key == "intersection":
                idx = int(parts[1])
                if idx != len(phases):
                    fail(lineno, f"intersection {idx} out of order")
                plist = []
                for token in parts[2:]:
                    g, r = token.split(":")
                    plist.append((int(g), int(r)))
                if not plist:
                    fail(lineno, "intersection without phases")
                phases.append(plist)
            elif key == "link":
                links.append(Link(int(parts[1]), int(parts[2]),
                                  int(parts[3]), int(parts[4])))
            elif key == "vehicle":
                route = tuple(int(p) for p in parts[2:])
                vehicles.append(Vehicle(int(parts[1]), route))
            else:
                fail(lineno, f"unknown directive {key!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, InstanceFormatError):
                raise
            fail(lineno, f"malformed {key!r} line")
    if sim_time is None:
        raise InstanceFormatError(f"{origin}: missing sim_time")
    if n_nodes is None:
        raise InstanceFormatError(f"{origin}: missing nodes")
    try:
        return TrafficInstance(name, n_nodes, len(phases), phases,
                               links, vehicles, sim_time)
    except InstanceFormatError as exc:
        raise InstanceFormatError(f"{origin}: {exc}") from None


def write_instance(instance: TrafficInstance, path: str | Path):
    lines = [f"name {instance.name}",
             f"sim_time {instance.sim_time}",
             f"nodes {instance.n_nodes}"]
    for i, plist in enumerate(instance.phases):
        tokens = " ".join(f"{g}:{r}" for g, r in plist)
        lines.append(f"intersection {i} {tokens}")
    for ln in instance.links:
        lines.append(f"link {ln.source} {ln.target} {ln.travel_time} {ln.capacity}")
    for veh in instance.vehicles:
        route = " ".join(str(n) for n in veh.route)
        lines.append(f"vehicle {veh.depart} {route}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_instance(path: str | Path) -> TrafficInstance:
    path = Path(path)
    return parse_instance(path.read_text(), origin=str(path))


def load_preset(name: str) -> TrafficInstance:
    """Load one of the bundled desk-scale instances."""
    if name not in PRESET_NAMES:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    from importlib import resources

    text = resources.files("ptme.presets").joinpath(f"{name}.txt").read_text()
    return parse_instance(text, origin=f"preset:{name}")


# -- deterministic grid builder (used to generate the bundled presets) -----

def build_grid_instance(name: str, rows: int, cols: int,
                        phase_counts: list[int], n_vehicles: int,
                        sim_time: int, seed: int,
                        travel_range: tuple[int, int] = (1, 2),
                        capacity_range: tuple[int, int] = (10, 16),
                        trip_distance: tuple[int, int] = (4, 9),
                        max_depart_frac: float = 0.15) -> TrafficInstance:
    """Directed grid network with seeded demand.

    ``phase_counts`` gives the number of phases per node (length rows*cols).
    Greens are assigned round-robin over the incoming approaches, matching
    the simulator's movement-to-phase rule, and red counts fill the rest.

    The default ranges keep the network lightly congested with an early
    departure window, so nearly all trips complete within the horizon and
    the objective responds smoothly to green-share changes instead of
    being dominated by delivery-count jumps.
    """
    n_nodes = rows * cols
    if len(phase_counts) != n_nodes:
        raise ValueError("phase_counts length must equal node count")
    rng = np.random.default_rng(seed)

    links: list[Link] = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            for (nr, nc) in ((r, c + 1), (r + 1, c)):
                if nr >= rows or nc >= cols:
                    continue
                w = nr * cols + nc
                for (a, b) in ((v, w), (w, v)):
                    travel = int(rng.integers(travel_range[0], travel_range[1] + 1))
                    capacity = int(rng.integers(capacity_range[0], capacity_range[1] + 1))
                    links.append(Link(a, b, travel, capacity))

    incoming = [0] * n_nodes
    for ln in links:
        incoming[ln.target] += 1

    phases = []
    for v in range(n_nodes):
        fs = phase_counts[v]
        greens = [0] * fs
        for k in range(incoming[v]):
            greens[k % fs] += 1
        phases.append([(g, incoming[v] - g) for g in greens])

    vehicles = []
    max_depart = max(1, int(sim_time * max_depart_frac))
    for _ in range(n_vehicles):
        while True:
            o = int(rng.integers(0, n_nodes))
            dst = int(rng.integers(0, n_nodes))
            r0, c0 = divmod(o, cols)
            r1, c1 = divmod(dst, cols)
            dist = abs(r0 - r1) + abs(c0 - c1)
            if trip_distance[0] <= dist <= trip_distance[1]:
                break
        vehicles.append(Vehicle(int(rng.integers(0, max_depart)),
                                tuple(_l_path(o, dst, cols))))

    return TrafficInstance(name, n_nodes, n_nodes, phases, links,
                           vehicles, sim_time)


def _l_path(origin: int, dest: int, cols: int) -> list[int]:
    """Grid route: move along the row first, then along the column."""
    r0, c0 = divmod(origin, cols)
    r1, c1 = divmod(dest, cols)
    path = [origin]
    c = c0
    while c != c1:
        c += 1 if c1 > c else -1
        path.append(r0 * cols + c)
    r = r0
    while r != r1:
        r += 1 if r1 > r else -1
        path.append(r * cols + c1)
    return path
