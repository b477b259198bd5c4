"""Pull (packetizer) and push (independent jobs) execution of a divisible workload.

In pull mode a master hands out packets to whichever worker asks next, so all
workers finish within about one packet of each other. Workers may join while
the analysis runs: the master picks up newly announced workers on its periodic
poll, initializes the whole batch in parallel and then feeds them packets.

In push mode the work is cut into equal independent jobs up front and the
analysis is done when the last job is.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .analytic_model import rampup_time
from .errors import InputError, SimulationError
from .sim_engine import Simulation

ANNOUNCED = "announced"
INITIALIZING = "initializing"
IDLE = "idle"
BUSY = "busy"
DONE = "done"

_TRANSITIONS = {
    ANNOUNCED: {INITIALIZING},
    INITIALIZING: {IDLE},
    IDLE: {BUSY, DONE},
    BUSY: {IDLE},
    DONE: set(),
}


@dataclass
class Workload:
    total_work: float  # core-seconds at reference speed
    packet_target: float = 20.0  # seconds of processing per packet
    locality_map: dict = field(default_factory=dict)  # storage node -> fraction of work

    def __post_init__(self):
        if not math.isfinite(self.total_work) or self.total_work <= 0:
            raise InputError(f"total_work must be > 0, got {self.total_work}")
        if not math.isfinite(self.packet_target) or self.packet_target <= 0:
            raise InputError(f"packet_target must be > 0, got {self.packet_target}")
        fractions = list(self.locality_map.values())
        if any(f < 0 for f in fractions) or math.fsum(fractions) > 1 + 1e-12:
            raise InputError("locality fractions must be >= 0 and sum to at most 1")


@dataclass(frozen=True)
class Packet:
    id: int
    work: float
    location: Optional[str] = None


class _Done:
    def __repr__(self):
        return "Done"


Done = _Done()


@dataclass
class WorkerRecord:
    id: str
    arrival_time: float = 0.0
    init_duration: float = 0.0
    speed: float = 1.0
    local_node: Optional[str] = None
    state: str = ANNOUNCED
    # filled in by the simulation
    init_start: Optional[float] = None
    ready_time: Optional[float] = None
    done_time: Optional[float] = None
    busy_time: float = 0.0
    work_done: float = 0.0
    packets: int = 0

    def __post_init__(self):
        if self.arrival_time < 0 or not math.isfinite(self.arrival_time):
            raise InputError(f"worker {self.id}: arrival_time must be >= 0")
        if self.init_duration < 0:
            raise InputError(f"worker {self.id}: init_duration must be >= 0")
        if not self.speed > 0:
            raise InputError(f"worker {self.id}: speed must be > 0")

    def transition(self, new_state):
        if new_state not in _TRANSITIONS[self.state]:
            raise SimulationError(f"worker {self.id}: illegal transition {self.state} -> {new_state}")
        self.state = new_state


@dataclass
class WorkerStats:
    id: str
    arrival_time: float
    init_time: float
    busy_time: float
    idle_time: float
    packets: int
    work: float


@dataclass
class CompletionReport:
    time_to_results: float
    workers: list
    packets_granted: int
    serialized_work: float

    def worker(self, worker_id):
        return next(w for w in self.workers if w.id == worker_id)


@dataclass
class PullConfig:
    master_poll_interval: float = 10.0  # 0 discovers workers as soon as they are announced
    trace: bool = False


class PullMaster:
    """Packetizer plus the worker list it polls.

    Lives on a :class:`Simulation`; call :meth:`start` once, then feed it
    workers with :meth:`add_worker` at any time.
    """

    def __init__(self, sim, workload, poll_interval=10.0, on_finish=None):
        if poll_interval < 0:
            raise InputError("master_poll_interval must be >= 0")
        self.sim = sim
        self.workload = workload
        self.poll_interval = poll_interval
        self.on_finish = on_finish
        self.workers = {}
        self.announced = []
        self.granted = []
        self.outstanding = 0
        self.finish_time = None
        self.init_waves = []  # (time, [worker ids]) per poll that found workers
        total = workload.total_work
        self._pools = {}
        for node in sorted(workload.locality_map):
            share = workload.locality_map[node] * total
            if share > 0:
                self._pools[node] = share
        free = total - math.fsum(self._pools.values())
        if free > 1e-12 * total:
            self._pools[None] = free

    @property
    def remaining(self):
        return math.fsum(self._pools.values())

    @property
    def finished(self):
        return self.finish_time is not None

    def start(self):
        if self.poll_interval > 0:
            self.sim.schedule(self.sim.now, "master-poll", self._poll)

    def add_worker(self, worker, now=None):
        """Announce ``worker``; it is picked up at the master's next poll."""
        if worker.id in self.workers:
            raise InputError(f"worker {worker.id!r} already added")
        if worker.state != ANNOUNCED:
            raise InputError(f"worker {worker.id!r} must be announced, is {worker.state}")
        self.workers[worker.id] = worker
        self.announced.append(worker)
        if self.poll_interval == 0:
            self._init_wave()
        return True

    def _poll(self):
        if self.finished:
            return
        self._init_wave()
        self.sim.schedule_in(self.poll_interval, "master-poll", self._poll)

    def _init_wave(self):
        if not self.announced:
            return
        wave, self.announced = self.announced, []
        self.init_waves.append((self.sim.now, [w.id for w in wave]))
        for w in wave:
            w.transition(INITIALIZING)
            w.init_start = self.sim.now
            self.sim.schedule_in(
                w.init_duration, "worker-ready", lambda w=w: self._on_ready(w), detail=w.id
            )

    def _on_ready(self, worker):
        worker.transition(IDLE)
        worker.ready_time = self.sim.now
        self._request(worker)

    def _pick_pool(self, worker):
        if self._pools.get(worker.local_node, 0) > 0 and worker.local_node is not None:
            return worker.local_node
        if self._pools.get(None, 0) > 0:
            return None
        remote = [(-left, node) for node, left in self._pools.items() if node is not None and left > 0]
        return min(remote)[1] if remote else None

    def next_packet(self, worker_id, now=None):
        """Grant the next packet to an idle worker, or ``Done`` when nothing is left."""
        worker = self.workers.get(worker_id)
        if worker is None:
            raise SimulationError(f"packet request from unknown worker {worker_id!r}")
        if worker.state != IDLE:
            raise SimulationError(f"packet request from worker {worker_id!r} in state {worker.state}")
        pool = self._pick_pool(worker)
        left = self._pools.get(pool, 0.0)
        if left <= 0:
            return Done
        size = min(left, self.workload.packet_target * worker.speed)
        if left - size <= 1e-9 * size:
            size = left
            del self._pools[pool]
        else:
            self._pools[pool] = left - size
        packet = Packet(len(self.granted), size, pool)
        self.granted.append(packet)
        worker.transition(BUSY)
        worker.packets += 1
        self.outstanding += 1
        return packet

    def _request(self, worker):
        packet = self.next_packet(worker.id)
        if packet is Done:
            worker.transition(DONE)
            worker.done_time = self.sim.now
            return
        duration = packet.work / worker.speed
        self.sim.schedule_in(
            duration, "packet-done", lambda: self._on_packet_done(worker, packet, duration),
            detail=f"{worker.id}:{packet.id}",
        )

    def _on_packet_done(self, worker, packet, duration):
        worker.busy_time += duration
        worker.work_done += packet.work
        worker.transition(IDLE)
        self.outstanding -= 1
        if self.outstanding == 0 and not self._pools and not self.finished:
            self.finish_time = self.sim.now
            if self.on_finish is not None:
                self.on_finish()
        self._request(worker)

    def report(self):
        if not self.finished:
            raise SimulationError("pull analysis has not finished")
        stats = []
        for w in self.workers.values():
            init = 0.0 if w.init_start is None else ((w.ready_time or self.finish_time) - w.init_start)
            idle = 0.0
            if w.ready_time is not None:
                end = w.done_time if w.done_time is not None else self.finish_time
                idle = max(end - w.ready_time - w.busy_time, 0.0)
            stats.append(WorkerStats(w.id, w.arrival_time, init, w.busy_time, idle, w.packets, w.work_done))
        return CompletionReport(
            self.finish_time,
            stats,
            len(self.granted),
            math.fsum(p.work for p in self.granted),
        )


def _fresh(workers):
    return [
        replace(w, state=ANNOUNCED, init_start=None, ready_time=None, done_time=None,
                busy_time=0.0, work_done=0.0, packets=0)
        for w in workers
    ]


def simulate_pull(workload, arrivals, config=None, sim=None):
    """Run a pull analysis over a fixed schedule of worker arrivals."""
    config = config or PullConfig()
    arrivals = _fresh(arrivals)
    if not arrivals:
        raise InputError("pull simulation needs at least one worker")
    ids = [w.id for w in arrivals]
    if len(set(ids)) != len(ids):
        raise InputError("worker ids must be unique")
    sim = sim or Simulation(trace=config.trace)
    master = PullMaster(sim, workload, config.master_poll_interval, on_finish=sim.halt)
    # arrivals go in before the first poll so a worker at t=0 is seen by the t=0 poll
    for w in arrivals:
        sim.schedule(w.arrival_time, "worker-arrival", lambda w=w: master.add_worker(w), detail=w.id)
    master.start()
    sim.run_until()
    if not master.finished:
        raise SimulationError("pull simulation ran out of events before the work was done")
    return master.report()


def simulate_push(workload, arrivals, n_jobs, sim=None):
    """Split the work into ``n_jobs`` equal jobs started on the first arrivals."""
    if n_jobs < 1:
        raise InputError(f"n_jobs must be >= 1, got {n_jobs}")
    if len(arrivals) < n_jobs:
        raise InputError(f"{n_jobs} jobs need at least as many arrivals, got {len(arrivals)}")
    sim = sim or Simulation()
    slots = sorted(_fresh(arrivals), key=lambda w: w.arrival_time)[:n_jobs]
    chunk = workload.total_work / n_jobs
    ends = []

    def start(w):
        run = chunk / w.speed
        w.init_start = sim.now
        w.ready_time = sim.now + w.init_duration
        w.busy_time = run
        w.work_done = chunk
        w.packets = 1
        sim.schedule(w.ready_time + run, "packet-done", lambda: finish(w), detail=w.id)

    def finish(w):
        w.done_time = sim.now
        ends.append(sim.now)

    for w in slots:
        sim.schedule(w.arrival_time, "job-submit", lambda w=w: start(w), detail=w.id)
    sim.run_until()
    stats = [
        WorkerStats(w.id, w.arrival_time, w.init_duration, w.busy_time, 0.0, w.packets, w.work_done)
        for w in slots
    ]
    return CompletionReport(max(ends), stats, n_jobs, math.fsum(w.work_done for w in slots))


def rampup_arrivals(params, count=None, init_duration=0.0, speed=1.0, offset=0.0):
    """Workers arriving when the site's ramp-up curve reaches 1, 2, ... jobs.

    ``params`` must be in per-second units. ``count`` defaults to every job
    count the site can reach. ``offset`` shifts the job index (``k - offset``).
    """
    limit = params.max_jobs
    if count is None:
        if math.isinf(limit):
            raise InputError("count is required when the site has no job ceiling")
        count = math.ceil(limit + offset) - 1
    workers = []
    for k in range(1, count + 1):
        n = k - offset
        if n >= limit:
            break
        workers.append(WorkerRecord(f"w{k:04d}", rampup_time(params, n), init_duration, speed))
    return workers
