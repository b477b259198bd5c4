"""Queue-driven elastic scaling of a batch cluster.

:func:`evaluate` looks at a snapshot of the job queue and the nodes and decides
whether to ask the cloud for more VMs or to shut idle ones down. It is a pure
function. :class:`ElasticCluster` owns a batch queue on a simulation, polls
:func:`evaluate` periodically and forwards the decisions to a
:class:`~vaf.cloud_sim.Cloud`, swallowing cloud errors: whatever demand is
still there at the next poll gets requested again.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .cloud_sim import Cloud, CloudConfig
from .errors import CloudRequestError, InputError
from .sim_engine import Simulation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ElastiqConfig:
    poll_interval: float = 60.0
    waiting_jobs_threshold: int = 1
    waiting_time_threshold: float = 100.0
    jobs_per_vm: int = 4
    idle_time_threshold: float = 1800.0
    min_quota: int = 0
    max_quota: int = 10

    def __post_init__(self):
        for name in ("poll_interval", "waiting_time_threshold", "idle_time_threshold"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise InputError(f"{name} must be finite and >= 0, got {value}")
        if self.poll_interval <= 0:
            raise InputError("poll_interval must be > 0")
        if self.waiting_jobs_threshold < 1:
            raise InputError("waiting_jobs_threshold must be >= 1")
        if self.jobs_per_vm < 1:
            raise InputError("jobs_per_vm must be >= 1")
        if self.min_quota < 0:
            raise InputError("min_quota must be >= 0")
        if self.max_quota < self.min_quota:
            raise InputError(f"max_quota ({self.max_quota}) must be >= min_quota ({self.min_quota})")


@dataclass(frozen=True)
class NodeView:
    node_id: str
    running_jobs: int
    idle_since: Optional[float] = None


@dataclass(frozen=True)
class QueueSnapshot:
    waiting_jobs: tuple = ()  # (job id, waiting since)
    nodes: tuple = ()  # NodeView


@dataclass(frozen=True)
class FleetView:
    running: int
    pending_or_booting: int


@dataclass(frozen=True)
class RequestVMs:
    count: int


@dataclass(frozen=True)
class ShutdownVM:
    node_id: str


def _check_snapshot(snapshot, fleet):
    if fleet.running < 0 or fleet.pending_or_booting < 0:
        raise InputError(f"fleet counts must be >= 0, got {fleet}")
    seen = set()
    for node in snapshot.nodes:
        if node.node_id in seen:
            raise InputError(f"node {node.node_id!r} listed twice")
        seen.add(node.node_id)
        if node.running_jobs < 0:
            raise InputError(f"node {node.node_id!r} has negative job count")
        if (node.running_jobs == 0) != (node.idle_since is not None):
            raise InputError(f"node {node.node_id!r}: idle_since must be set exactly when idle")


def overdue_jobs(config, snapshot, now):
    return [job for job, since in snapshot.waiting_jobs if now - since >= config.waiting_time_threshold]


def evaluate(config, snapshot, fleet, now):
    """Scaling decisions for one poll.

    Scale up when at least ``waiting_jobs_threshold`` jobs have waited
    ``waiting_time_threshold`` or more: ask for enough VMs to hold them,
    minus VMs already on their way, never exceeding ``max_quota``. VMs are
    also requested to lift the fleet to ``min_quota``. Otherwise, shut down
    nodes idle for ``idle_time_threshold`` while staying at or above
    ``min_quota``.
    """
    _check_snapshot(snapshot, fleet)
    in_fleet = fleet.running + fleet.pending_or_booting
    want = 0
    overdue = overdue_jobs(config, snapshot, now)
    if len(overdue) >= config.waiting_jobs_threshold:
        want = math.ceil(len(overdue) / config.jobs_per_vm) - fleet.pending_or_booting
    want = max(want, config.min_quota - in_fleet)
    want = min(want, config.max_quota - in_fleet)
    if want >= 1:
        return [RequestVMs(want)]

    actions = []
    idle = sorted(
        (n for n in snapshot.nodes
         if n.running_jobs == 0 and now - n.idle_since >= config.idle_time_threshold),
        key=lambda n: (n.idle_since, n.node_id),
    )
    for node in idle:
        if fleet.running - (len(actions) + 1) < config.min_quota:
            break
        actions.append(ShutdownVM(node.node_id))
    return actions


@dataclass
class ApplyReport:
    granted: list = field(default_factory=list)
    shut_down: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (action, reason)


def apply(actions, cloud, now=None):
    """Forward actions to the cloud. Errors are recorded, never raised."""
    report = ApplyReport()
    for action in actions:
        try:
            if isinstance(action, RequestVMs):
                report.granted.extend(cloud.request_instances(action.count, now))
            elif isinstance(action, ShutdownVM):
                cloud.terminate_instance(action.node_id, now)
                report.shut_down.append(action.node_id)
            else:
                raise InputError(f"unknown action {action!r}")
        except (CloudRequestError, InputError) as exc:
            log.debug("ignoring failed %s: %s", action, exc)
            report.failures.append((action, f"{type(exc).__name__}: {exc}"))
    return report


@dataclass(frozen=True)
class Submission:
    time: float
    count: int
    duration: Optional[float]  # None: runs until released


@dataclass
class Job:
    id: str
    submit_time: float
    duration: Optional[float]
    on_start: Optional[Callable] = field(default=None, repr=False)
    start_time: Optional[float] = None
    end_time: Optional[float] = None
    node: Optional[str] = None
    restarts: int = 0
    withdrawn: bool = False
    _done_event: object = field(default=None, repr=False)


@dataclass
class _Node:
    id: str
    slots: int
    register_time: float
    running: dict = field(default_factory=dict)
    idle_since: Optional[float] = None


@dataclass
class TimelineRow:
    time: float
    running: int
    pending: int
    waiting_jobs: int
    action: str
    detail: str = ""


@dataclass
class Tick:
    time: float
    running: int
    pending: int
    waiting: int
    overdue: int
    actions: list
    report: ApplyReport


@dataclass
class ElasticReport:
    timeline: list
    ticks: list
    jobs: list
    instances: list
    drain_time: Optional[float]
    end_time: float

    @property
    def total_granted(self):
        return len(self.instances)

    @property
    def drained(self):
        return all(j.end_time is not None for j in self.jobs)


class ElasticCluster:
    """Batch queue, its nodes, and the polling autoscaler driving a cloud."""

    def __init__(self, sim, config=None, cloud_config=None, seed=0):
        self.sim = sim
        self.config = config or ElastiqConfig()
        self.cloud = Cloud(sim, cloud_config or CloudConfig(), seed,
                           on_register=self._on_register, on_deregister=self._on_deregister)
        self.jobs = {}
        self.waiting = deque()
        self.nodes = {}
        self.timeline = []
        self.ticks = []
        self.poll_event = None
        self.pending_submissions = 0

    # batch queue -----------------------------------------------------------

    def submit(self, duration=None, on_start=None, job_id=None):
        job = Job(job_id or f"job-{len(self.jobs) + 1:05d}", self.sim.now, duration, on_start)
        if job.id in self.jobs:
            raise InputError(f"duplicate job id {job.id!r}")
        self.jobs[job.id] = job
        self.waiting.append(job)
        self._dispatch()
        return job

    def release(self, job_id):
        """End a job that has no fixed duration."""
        job = self.jobs[job_id]
        if job.end_time is None and job.node is not None:
            self._finish(job)

    def withdraw(self, job_id):
        """Drop a job that is still waiting; it counts as ended now."""
        job = self.jobs[job_id]
        if job.node is not None or job.end_time is not None:
            raise InputError(f"job {job_id!r} is not waiting")
        self.waiting = deque(j for j in self.waiting if j.id != job_id)
        job.end_time = self.sim.now
        job.withdrawn = True
        self._row("withdraw", f"job={job.id}")

    def _dispatch(self):
        while self.waiting:
            node = next((n for n in self.nodes.values() if len(n.running) < n.slots), None)
            if node is None:
                return
            job = self.waiting.popleft()
            node.running[job.id] = job
            node.idle_since = None
            job.node = node.id
            job.start_time = self.sim.now
            if job.duration is not None:
                job._done_event = self.sim.schedule_in(
                    job.duration, "job-done", lambda job=job: self._finish(job), detail=job.id
                )
            if job.on_start is not None:
                job.on_start(job)

    def _finish(self, job):
        node = self.nodes[job.node]
        del node.running[job.id]
        job.end_time = self.sim.now
        self._row("job-done", f"job={job.id} node={node.id}")
        if not node.running:
            node.idle_since = self.sim.now
        self._dispatch()

    def _on_register(self, vm):
        self.nodes[vm.id] = _Node(vm.id, vm.slots, self.sim.now, idle_since=self.sim.now)
        self._row("register", f"node={vm.id} slots={vm.slots}")
        self._dispatch()

    def _on_deregister(self, vm):
        node = self.nodes.pop(vm.id)
        self._row("deregister", f"node={vm.id}")
        # jobs on a vanished node go back to the queue in submission order
        requeued = sorted(node.running.values(), key=lambda j: (j.submit_time, j.id))
        for job in requeued:
            if job._done_event is not None:
                self.sim.cancel(job._done_event)
            job.node = None
            job.start_time = None
            job.restarts += 1
        self.waiting = deque(sorted([*self.waiting, *requeued], key=lambda j: (j.submit_time, j.id)))
        self._dispatch()

    # autoscaler ------------------------------------------------------------

    def snapshot(self):
        waiting = tuple((j.id, j.submit_time) for j in self.waiting)
        nodes = tuple(NodeView(n.id, len(n.running), n.idle_since) for n in self.nodes.values())
        return QueueSnapshot(waiting, nodes)

    def fleet(self):
        return FleetView(len(self.nodes), self.cloud.in_flight())

    def _row(self, action, detail=""):
        self.timeline.append(TimelineRow(
            self.sim.now, len(self.nodes), self.cloud.in_flight(), len(self.waiting), action, detail
        ))

    def start(self):
        self.poll_event = self.sim.schedule(self.sim.now, "autoscaler-poll", self._poll)

    def stop(self):
        if self.poll_event is not None:
            self.sim.cancel(self.poll_event)
            self.poll_event = None

    def _poll(self):
        now = self.sim.now
        snap = self.snapshot()
        fleet = self.fleet()
        actions = evaluate(self.config, snap, fleet, now)
        self._row("tick")
        report = apply(actions, self.cloud, now)
        self.ticks.append(Tick(
            now, fleet.running, fleet.pending_or_booting, len(snap.waiting_jobs),
            len(overdue_jobs(self.config, snap, now)), actions, report,
        ))
        failed = {id(a) for a, _ in report.failures}
        for action, reason in report.failures:
            name = "request-failed" if isinstance(action, RequestVMs) else "shutdown-failed"
            what = f"count={action.count}" if isinstance(action, RequestVMs) else f"node={action.node_id}"
            self._row(name, f"{what} error={reason.split(':')[0]}")
        for action in actions:
            if id(action) in failed:
                continue
            if isinstance(action, RequestVMs):
                self._row("request", f"count={action.count} granted={len(report.granted)}")
            else:
                self._row("shutdown", f"node={action.node_id}")
        self.poll_event = self.sim.schedule_in(self.config.poll_interval, "autoscaler-poll", self._poll)

    def settled(self):
        """Nothing left to do: no jobs, nothing booting, fleet at the floor."""
        if self.pending_submissions or self.waiting or any(n.running for n in self.nodes.values()):
            return False
        if any(j.end_time is None for j in self.jobs.values()):
            return False
        if self.cloud.in_flight() or self.cloud.count("terminating"):
            return False
        return len(self.nodes) <= self.config.min_quota or self.cloud.config.capacity == 0

    def report(self):
        ends = [j.end_time for j in self.jobs.values() if j.end_time is not None]
        return ElasticReport(
            self.timeline, self.ticks, list(self.jobs.values()),
            list(self.cloud.instances.values()),
            max(ends) if ends and len(ends) == len(self.jobs) else None,
            self.sim.now,
        )


def schedule_submissions(cluster, script, on_start=None):
    """Enqueue ``job-submit`` events for every script entry."""
    for entry in sorted(script, key=lambda s: s.time):
        if entry.count < 0 or entry.time < 0:
            raise InputError(f"bad submission {entry}")
        if entry.duration is not None and entry.duration <= 0:
            raise InputError(f"job duration must be > 0, got {entry.duration}")

        def submit(entry=entry):
            cluster.pending_submissions -= 1
            for _ in range(entry.count):
                cluster.submit(entry.duration, on_start)

        cluster.pending_submissions += 1
        cluster.sim.schedule(entry.time, "job-submit", submit, detail=f"count={entry.count}")


def run_elastic_scenario(script, config=None, cloud_config=None, seed=0, horizon=None,
                         max_time=None, sim=None):
    """Closed loop: submissions, polling autoscaler, booting VMs, FCFS slots.

    Runs until the cluster has settled (everything done, fleet back at its
    floor) or, if ``horizon`` is given, exactly until that time. ``max_time``
    caps runs that can never settle.
    """
    sim = sim or Simulation()
    cluster = ElasticCluster(sim, config, cloud_config, seed)
    schedule_submissions(cluster, script)
    cluster.start()
    if horizon is not None:
        sim.run_until(horizon)
    else:
        last_submit = max((s.time for s in script), default=0.0)
        cap = max_time if max_time is not None else last_submit + 30 * 86400.0
        sim.run_until(lambda s: s.now > cap or cluster.settled())
    cluster.stop()
    return cluster.report()
