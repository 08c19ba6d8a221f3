"""Delay schedules and asynchrony models.

Every realization is a pure function of (parameters, seed, iteration index),
so re-running a schedule reproduces it byte for byte.  All schedules respect
the causality constraint 0 <= tau_k <= k.

Worker-pool semantics: each of M workers always has one job in flight,
dispatched at the master's current update count; when a job arrives its
delay is the number of master updates since dispatch, the master count
then increments and the worker is re-dispatched.  Simultaneous arrivals
are processed lowest worker id first.  Under these rules each master
update can age at most the other M - 1 in-flight jobs, so the realized
average delay never exceeds M - 1.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import rng

SCHEDULE_KINDS = (
    "constant",
    "uniform-random",
    "two-speed",
    "linear-growth",
    "sqrt-floor",
)


@dataclass(frozen=True)
class DelaySchedule:
    """Declarative delay sequence specification.

    constant:       tau_k = min(k, tau)
    uniform-random: tau_k uniform on {0, ..., min(k, tau_max)}
    two-speed:      worker pool with one unit-speed worker and workers-1
                    slow workers (service time ratio); deterministic
    linear-growth:  tau_k = floor(alpha k + beta), clipped to k
    sqrt-floor:     tau_k = floor(sqrt(k))
    """

    kind: str
    tau: int = 0
    tau_max: int = 0
    alpha: float = 0.0
    beta: float = 0.0
    workers: int = 2
    ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and self.tau < 0:
            raise ValueError("constant delay must be non-negative")
        if self.kind == "uniform-random" and self.tau_max < 0:
            raise ValueError("tau_max must be non-negative")
        if self.kind == "linear-growth" and not (0.0 <= self.alpha < 1.0 and self.beta >= 0.0):
            raise ValueError("linear growth needs alpha in [0, 1) and beta >= 0")
        if self.kind == "two-speed" and (self.workers < 1 or self.ratio < 1.0):
            raise ValueError("two-speed needs workers >= 1 and ratio >= 1")


def realize(schedule: DelaySchedule, horizon: int) -> np.ndarray:
    """Delay sequence tau_0..tau_K for K = horizon."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    k = np.arange(horizon + 1)
    if schedule.kind == "constant":
        taus = np.minimum(k, schedule.tau)
    elif schedule.kind == "uniform-random":
        key = rng.split(schedule.seed, "uniform-delay")
        draws = rng.u64_block(key, 0, horizon + 1)
        taus = (draws % np.uint64(schedule.tau_max + 1)).astype(np.int64)
        taus = np.minimum(taus, k)
    elif schedule.kind == "linear-growth":
        taus = np.minimum(np.floor(schedule.alpha * k + schedule.beta).astype(np.int64), k)
    elif schedule.kind == "sqrt-floor":
        taus = np.floor(np.sqrt(k)).astype(np.int64)
    else:
        times = (1.0,) + (float(schedule.ratio),) * (schedule.workers - 1)
        model = WorkerModel(workers=schedule.workers, service="deterministic",
                            times=times, seed=schedule.seed)
        taus = model.realize(horizon).delays
    return taus.astype(np.int64)


@dataclass(frozen=True)
class WorkerRealization:
    delays: np.ndarray
    worker_ids: np.ndarray


@dataclass(frozen=True)
class WorkerModel:
    """Single-master worker pool; see the module docstring for semantics.

    service "deterministic" uses per-worker times; "exponential" draws each
    job duration from a per-worker exponential clock with the given rates,
    addressed by (seed, worker, job index).
    """

    workers: int
    service: str = "deterministic"
    times: tuple = None
    rates: tuple = None
    seed: int = 0

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if self.service not in ("deterministic", "exponential"):
            raise ValueError(f"unknown service model {self.service!r}")
        if self.service == "deterministic":
            times = self.times if self.times is not None else (1.0,) * self.workers
            times = tuple(float(t) for t in times)
            if len(times) != self.workers or any(t <= 0 for t in times):
                raise ValueError("need one positive service time per worker")
            object.__setattr__(self, "times", times)
        else:
            rates = self.rates if self.rates is not None else (1.0,) * self.workers
            rates = tuple(float(r) for r in rates)
            if len(rates) != self.workers or any(r <= 0 for r in rates):
                raise ValueError("need one positive rate per worker")
            object.__setattr__(self, "rates", rates)

    def _service_time(self, worker: int, job: int) -> float:
        if self.service == "deterministic":
            return self.times[worker]
        key = rng.split(self.seed, f"worker-{worker}")
        return rng.exponential(key, job, self.rates[worker])

    def realize(self, horizon: int) -> WorkerRealization:
        """First horizon + 1 master updates with their delays and sources."""
        count = horizon + 1
        delays = np.zeros(count, dtype=np.int64)
        sources = np.zeros(count, dtype=np.int64)
        # heap entries: (arrival time, worker id, dispatch count, job index)
        heap = [(self._service_time(m, 0), m, 0, 0) for m in range(self.workers)]
        heapq.heapify(heap)
        master = 0
        while master < count:
            arrival, worker, dispatched, job = heapq.heappop(heap)
            delays[master] = master - dispatched
            sources[master] = worker
            master += 1
            heapq.heappush(
                heap,
                (arrival + self._service_time(worker, job + 1), worker, master, job + 1),
            )
        return WorkerRealization(delays=delays, worker_ids=sources)


def worker_next_arrival(model: WorkerModel, upto: int) -> np.ndarray:
    """Arrival times of the first upto master updates (diagnostics only)."""
    heap = [(model._service_time(m, 0), m, 0) for m in range(model.workers)]
    heapq.heapify(heap)
    out = np.zeros(upto, dtype=np.float64)
    for idx in range(upto):
        arrival, worker, job = heapq.heappop(heap)
        out[idx] = arrival
        heapq.heappush(
            heap, (arrival + model._service_time(worker, job + 1), worker, job + 1)
        )
    return out


# ---------------------------------------------------------------------------
# Shared-memory reads
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SharedMemoryModel:
    """Inconsistent-read model over a window of recent updates.

    At step k a reader misses a subset J_k of the last tau updates
    {max(0, k - tau), ..., k - 1}; the composed read is
    x_hat = x_k - sum_{j in J_k} (x_{j+1} - x_j).  full-window misses the
    whole window; random-subset keeps each update independently with
    probability one half.  Block indices are uniform on {0, ..., blocks-1}.
    """

    blocks: int
    tau: int
    inclusion: str = "full-window"
    seed: int = 0

    def __post_init__(self):
        if self.blocks < 1 or self.tau < 0:
            raise ValueError("need blocks >= 1 and tau >= 0")
        if self.inclusion not in ("full-window", "random-subset"):
            raise ValueError(f"unknown inclusion rule {self.inclusion!r}")

    def sample_block(self, k: int) -> int:
        return rng.randint(rng.split(self.seed, "shm-block"), k, self.blocks)

    def sample_missing(self, k: int) -> np.ndarray:
        """Indices J_k of updates missing from the step-k read."""
        lo = max(0, k - self.tau)
        window = np.arange(lo, k)
        if self.inclusion == "full-window" or window.size == 0:
            return window
        key = rng.split(self.seed, "shm-window")
        base = k * (self.tau + 1)
        mask = np.array(
            [rng.uniform(key, base + (j - lo)) < 0.5 for j in window], dtype=bool
        )
        return window[mask]


def shm_compose_read(iterates, k: int, missing) -> np.ndarray:
    """x_hat_k = x_k - sum_{j in missing} (x_{j+1} - x_j).

    iterates must contain x_0..x_k (and x_{j+1} for each missing j < k).
    """
    x = np.array(iterates[k], dtype=np.float64, copy=True)
    for j in missing:
        x -= iterates[j + 1] - iterates[j]
    return x


# ---------------------------------------------------------------------------
# Multi-agent update schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentSchedule:
    """Update sets and read staleness for block fixed-point iterations.

    update "all-k": every agent updates at every step.  update "periodic":
    agent i updates when k is a multiple of (i mod (gap + 1)) + 1, so each
    window {k, ..., k + gap} contains an update and 0 is always an update
    step.  staleness "bounded" draws reads s_ij in [k - depth, k];
    "linear-growth" draws s_ij in [ceil((1 - alpha) k - beta), k] and
    requires all-k updates.  Own reads are always current: s_ii = k.
    """

    agents: int
    update: str = "all-k"
    gap: int = 0
    staleness: str = "bounded"
    depth: int = 0
    alpha: float = 0.0
    beta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.agents < 1:
            raise ValueError("need at least one agent")
        if self.update not in ("all-k", "periodic"):
            raise ValueError(f"unknown update rule {self.update!r}")
        if self.staleness not in ("bounded", "linear-growth"):
            raise ValueError(f"unknown staleness rule {self.staleness!r}")
        if self.update == "periodic" and self.gap < 0:
            raise ValueError("gap must be non-negative")
        if self.staleness == "bounded" and self.depth < 0:
            raise ValueError("depth must be non-negative")
        if self.staleness == "linear-growth":
            if not (0.0 < self.alpha < 1.0) or self.beta < 0.0:
                raise ValueError("linear growth needs alpha in (0, 1) and beta >= 0")
            if self.update != "all-k":
                raise ValueError("linear-growth staleness requires all-k updates")

    def updates_at(self, k: int) -> np.ndarray:
        if self.update == "all-k":
            return np.ones(self.agents, dtype=bool)
        periods = (np.arange(self.agents) % (self.gap + 1)) + 1
        return (k % periods) == 0

    def _read_lower_bound(self, k: int) -> int:
        if self.staleness == "bounded":
            return max(0, k - self.depth)
        return max(0, math.ceil((1.0 - self.alpha) * k - self.beta))

    def reads_at(self, k: int) -> np.ndarray:
        """s[i, j]: iterate index agent i reads for block j; -1 if idle."""
        active = self.updates_at(k)
        s = np.full((self.agents, self.agents), -1, dtype=np.int64)
        lo = self._read_lower_bound(k)
        key = rng.split(self.seed, "agent-reads")
        for i in range(self.agents):
            if not active[i]:
                continue
            for j in range(self.agents):
                if i == j:
                    s[i, j] = k
                else:
                    counter = (k * self.agents + i) * self.agents + j
                    s[i, j] = lo + rng.randint(key, counter, k - lo + 1)
        return s


@dataclass(frozen=True)
class AgentRealization:
    update_mask: np.ndarray  # (K+1, agents) bool
    reads: np.ndarray        # (K+1, agents, agents) int, -1 where idle
    taus: np.ndarray         # (K+1,) realized information ages


def realize_agents(schedule: AgentSchedule, horizon: int) -> AgentRealization:
    """Realize update sets, reads, and the information-age sequence.

    tau_k = k - min_{i, j} s_{ij, t_i(k)} where t_i(k) is agent i's most
    recent update step at or before k.
    """
    m = schedule.agents
    update_mask = np.zeros((horizon + 1, m), dtype=bool)
    reads = np.full((horizon + 1, m, m), -1, dtype=np.int64)
    taus = np.zeros(horizon + 1, dtype=np.int64)
    oldest_read = np.zeros(m, dtype=np.int64)  # min_j s_{ij, t_i(k)}
    for k in range(horizon + 1):
        s = schedule.reads_at(k)
        active = schedule.updates_at(k)
        update_mask[k] = active
        reads[k] = s
        for i in range(m):
            if active[i]:
                oldest_read[i] = int(np.min(s[i]))
        taus[k] = k - int(np.min(oldest_read))
    return AgentRealization(update_mask=update_mask, reads=reads, taus=taus)


# ---------------------------------------------------------------------------
# Statistics and serialization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleStats:
    length: int
    tau_ave: float
    tau_max: int

    @property
    def adaptive_threshold_floor(self) -> float:
        """min(2 tau_ave, tau_max): thresholds at or above it keep enough steps."""
        return min(2.0 * self.tau_ave, float(self.tau_max))


def schedule_stats(delays) -> ScheduleStats:
    delays = np.asarray(delays)
    if delays.size == 0:
        raise ValueError("empty delay sequence")
    return ScheduleStats(
        length=int(delays.size),
        tau_ave=float(np.mean(delays)),
        tau_max=int(np.max(delays)),
    )


def write_delay_csv(path, delays, workers=None, missing_sizes=None) -> None:
    """CSV with header k,tau[,worker][,Jk-size]."""
    delays = np.asarray(delays)
    header = "k,tau"
    if workers is not None:
        header += ",worker"
    if missing_sizes is not None:
        header += ",Jk-size"
    lines = [header]
    for k in range(delays.size):
        row = f"{k},{int(delays[k])}"
        if workers is not None:
            row += f",{int(workers[k])}"
        if missing_sizes is not None:
            row += f",{int(missing_sizes[k])}"
        lines.append(row)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
