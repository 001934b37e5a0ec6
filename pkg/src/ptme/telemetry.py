"""Energy, time and peak-memory instrumentation for measured code regions.

Energy comes from the Linux powercap (RAPL) counters: package domains plus
their dram subdomains, summed across sockets.  The counters are monotone
microjoule values that wrap at ``max_energy_range_uj``; deltas here are
wrap-corrected.  On hosts without readable counters the probe degrades to
``energy_available=False`` and regions still report time and memory.

Peak memory is the high-water mark of net heap allocation inside the
region, observed with ``tracemalloc``.  Only one measured region may be
open at a time in a process: training and inference measurements must
never interleave.
"""

from __future__ import annotations

import threading
import time
import tracemalloc
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, TypeVar

__all__ = [
    "MeasurementRecord",
    "EnergyProbe",
    "MeasurementProtocolError",
    "read_energy",
    "counter_delta",
    "measure",
    "default_probe",
]

DEFAULT_RAPL_ROOT = "/sys/class/powercap"

T = TypeVar("T")


class MeasurementProtocolError(RuntimeError):
    """A measured region was opened while another one is active."""


@dataclass(frozen=True)
class MeasurementRecord:
    """Resource usage of one measured region."""

    wall_time: float          # seconds
    peak_memory: int          # bytes, allocation high-water mark
    cpu_energy: float | None  # joules, None when energy is unavailable
    dram_energy: float | None
    energy_available: bool


@dataclass(frozen=True)
class RaplDomain:
    kind: str       # "package" or "dram"
    energy_path: Path
    max_range_uj: int


class EnergyProbe:
    """Readable RAPL counter files discovered under one powercap root."""

    def __init__(self, domains: list[RaplDomain]):
        self.domains = domains

    @property
    def available(self) -> bool:
        return len(self.domains) > 0

    @classmethod
    def discover(cls, root: str | Path = DEFAULT_RAPL_ROOT) -> "EnergyProbe":
        """Scan a powercap hierarchy; unreadable or missing counters are
        skipped so discovery never raises."""
        domains: list[RaplDomain] = []
        root = Path(root)
        try:
            entries = sorted(p for p in root.iterdir() if p.is_dir())
        except OSError:
            return cls([])
        for entry in entries:
            kind = _domain_kind(entry)
            if kind is None:
                continue
            domain = _load_domain(entry, kind)
            if domain is not None:
                domains.append(domain)
        return cls(domains)


def _domain_kind(path: Path) -> str | None:
    try:
        name = (path / "name").read_text().strip()
    except OSError:
        return None
    if name.startswith("package"):
        return "package"
    if name == "dram":
        return "dram"
    return None


def _load_domain(path: Path, kind: str) -> RaplDomain | None:
    energy = path / "energy_uj"
    try:
        int(energy.read_text().strip())
        max_range = int((path / "max_energy_range_uj").read_text().strip())
    except (OSError, ValueError):
        return None
    return RaplDomain(kind, energy, max_range)


def read_energy(probe: EnergyProbe) -> list[tuple[str, int, int]]:
    """Raw counter snapshot: (kind, value_uj, max_range_uj) per domain."""
    out = []
    for dom in probe.domains:
        value = int(dom.energy_path.read_text().strip())
        out.append((dom.kind, value, dom.max_range_uj))
    return out


def counter_delta(prev_uj: int, curr_uj: int, max_range_uj: int) -> int:
    """Microjoules elapsed between two counter reads, wrap-corrected."""
    if curr_uj >= prev_uj:
        return curr_uj - prev_uj
    return max_range_uj - prev_uj + curr_uj


def _energy_joules(before, after) -> tuple[float, float]:
    cpu = 0
    dram = 0
    for (kind, prev, rng), (_, curr, _) in zip(before, after):
        delta = counter_delta(prev, curr, rng)
        if kind == "package":
            cpu += delta
        else:
            dram += delta
    return cpu / 1e6, dram / 1e6


_region_lock = threading.Lock()
_default_probe: EnergyProbe | None = None


def default_probe() -> EnergyProbe:
    """Probe for the platform powercap root, discovered once per process."""
    global _default_probe
    if _default_probe is None:
        _default_probe = EnergyProbe.discover()
    return _default_probe


def measure(region: Callable[[], T],
            probe: EnergyProbe | None = None) -> tuple[T, MeasurementRecord]:
    """Run ``region`` and return its result plus a MeasurementRecord.

    Process-exclusive: a second region opened while one is active raises
    :class:`MeasurementProtocolError`.  Energy read failures mid-region
    degrade the record to ``energy_available=False`` instead of failing
    the run.
    """
    if probe is None:
        probe = default_probe()
    if not _region_lock.acquire(blocking=False):
        raise MeasurementProtocolError("a measured region is already active")
    try:
        before = None
        if probe.available:
            try:
                before = read_energy(probe)
            except OSError:
                before = None

        started_tracing = not tracemalloc.is_tracing()
        if started_tracing:
            tracemalloc.start()
        try:
            baseline, _ = tracemalloc.get_traced_memory()
            tracemalloc.reset_peak()

            t0 = time.perf_counter()
            result = region()
            wall = time.perf_counter() - t0

            _, peak = tracemalloc.get_traced_memory()
        finally:
            if started_tracing:
                tracemalloc.stop()
        peak_incr = max(0, peak - baseline)

        cpu = dram = None
        available = False
        if before is not None:
            try:
                after = read_energy(probe)
                cpu, dram = _energy_joules(before, after)
                available = True
            except OSError:
                cpu = dram = None
        record = MeasurementRecord(wall, peak_incr, cpu, dram, available)
        return result, record
    finally:
        _region_lock.release()
