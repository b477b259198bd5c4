"""Scenario files: parsing, validation and execution.

A scenario is an INI-style file with the sections ``model``, ``workload``,
``arrivals``, ``cloud``, ``elastiq`` and ``output``. Durations accept unit
suffixes (``s``, ``min``, ``h``, ``d``) and bare numbers are seconds. Example::

    [model]
    preset = cern-2013

    [workload]
    scheduler = both
    total_work = 240h
    packet_target = 10s

    [arrivals]
    source = rampup
"""

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .analytic_model import (
    RampUpParams,
    optimal_job_count,
    pull_time_to_results,
    push_time_to_results,
)
from .autoscaler import ElasticCluster, ElastiqConfig, Submission, schedule_submissions
from .cloud_sim import CloudConfig, FailurePlan
from .errors import InputError
from .presets import latency_preset, rampup_preset
from .schedulers import (
    PullMaster,
    Workload,
    WorkerRecord,
    rampup_arrivals,
    simulate_pull,
    simulate_push,
    PullConfig,
)
from .sim_engine import Simulation
from .csvout import scenario_hash
from .units import SECONDS, parse_duration

SECTIONS = {
    "model": {"preset", "p0", "p1", "rate_unit"},
    "workload": {
        "scheduler", "total_work", "packet_target", "master_poll_interval",
        "init_duration", "speed", "n_jobs", "locality",
    },
    "arrivals": {"source", "times", "nodes", "count", "workers", "submissions"},
    "cloud": {
        "latency", "latency_mean", "latency_stddev", "capacity", "slots",
        "registration_delay", "teardown_delay", "failure",
    },
    "elastiq": {
        "poll_interval", "waiting_jobs_threshold", "waiting_time_threshold", "jobs_per_vm",
        "idle_time_threshold", "min_quota", "max_quota", "horizon",
    },
    "output": {"dir", "trace", "seed"},
}

SCHEDULERS = ("pull", "push", "both", "batch")
SOURCES = ("explicit", "rampup", "elastic")


class ConfigError(InputError):
    """Invalid scenario; ``path`` names the offending ``section.key``."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class Scenario:
    name: str
    hash: str
    params: RampUpParams  # per second
    scheduler: str
    workload: Optional[Workload]
    master_poll_interval: float
    init_duration: float
    speed: float
    n_jobs: object  # "optimal" or int
    source: str
    arrival_times: list = field(default_factory=list)
    arrival_nodes: list = field(default_factory=list)
    rampup_count: Optional[int] = None
    elastic_workers: int = 0
    submissions: list = field(default_factory=list)
    cloud: CloudConfig = field(default_factory=CloudConfig)
    elastiq: ElastiqConfig = field(default_factory=ElastiqConfig)
    horizon: Optional[float] = None
    seed: int = 0
    output_dir: Optional[str] = None
    trace: bool = False


class _Section:
    def __init__(self, parser, name):
        self.name = name
        self.items = dict(parser.items(name)) if parser.has_section(name) else {}

    def has(self, key):
        return key in self.items

    def _get(self, key, default, convert):
        if key not in self.items:
            return default
        raw = self.items[key]
        try:
            return convert(raw)
        except (ValueError, InputError) as exc:
            raise ConfigError(f"{self.name}.{key}", f"invalid value {raw!r} ({exc})") from None

    def str(self, key, default=None):
        return self._get(key, default, lambda s: s.strip())

    def duration(self, key, default=None):
        return self._get(key, default, parse_duration)

    def int(self, key, default=None):
        return self._get(key, default, int)

    def float(self, key, default=None):
        return self._get(key, default, float)

    def bool(self, key, default=False):
        def convert(s):
            s = s.strip().lower()
            if s in ("1", "yes", "true", "on"):
                return True
            if s in ("0", "no", "false", "off"):
                return False
            raise ValueError("expected yes/no")
        return self._get(key, default, convert)

    def choice(self, key, options, default):
        value = self.str(key, default)
        if value not in options:
            raise ConfigError(f"{self.name}.{key}", f"must be one of {', '.join(options)}, got {value!r}")
        return value


def preset_scenarios():
    folder = resources.files("vaf") / "scenarios"
    return sorted(p.name[:-4] for p in folder.iterdir() if p.name.endswith(".ini"))


def read_scenario_text(source):
    """Text of a scenario file path or of a shipped preset name."""
    path = Path(source)
    if path.exists():
        return path.read_text(), path.stem
    res = resources.files("vaf") / "scenarios" / f"{source}.ini"
    if res.is_file():
        return res.read_text(), str(source)
    raise InputError(
        f"no scenario file or preset named {source!r} (presets: {', '.join(preset_scenarios())})"
    )


def _parse_submissions(path, text):
    # "0s x 8 x 600s; 100s x 4 x 300s" -> (time, count, duration)
    script = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        parts = [p.strip() for p in chunk.split("x")]
        if len(parts) != 3:
            raise ConfigError(path, f"submission {chunk!r} must look like 'TIME x COUNT x DURATION'")
        try:
            duration = None if parts[2] in ("-", "none") else parse_duration(parts[2])
            script.append(Submission(parse_duration(parts[0]), int(parts[1]), duration))
        except (ValueError, InputError) as exc:
            raise ConfigError(path, f"bad submission {chunk!r} ({exc})") from None
    return script


def _wrap(path, build):
    try:
        return build()
    except InputError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from None


def parse_scenario(text, name="scenario", overrides=None):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc).splitlines()[0]) from None
    for key, value in (overrides or {}).items():
        section, _, option = key.partition(".")
        if not option:
            raise ConfigError(key, "override must be SECTION.KEY=VALUE")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, option, value)

    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(section, "unknown section")
        for key in parser.options(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")

    model = _Section(parser, "model")
    if model.has("preset"):
        if model.has("p0") or model.has("p1"):
            raise ConfigError("model.preset", "give either a preset or p0/p1, not both")
        params = _wrap("model.preset", lambda: rampup_preset(model.str("preset")))
    else:
        unit = model.choice("rate_unit", tuple(SECONDS), "h")
        params = _wrap("model.p0", lambda: RampUpParams(
            model.float("p0", 1.0), model.float("p1", 0.0)
        ).rescaled(1 / SECONDS[unit]))

    wl = _Section(parser, "workload")
    scheduler = wl.choice("scheduler", SCHEDULERS, "pull")
    workload = None
    if scheduler != "batch":
        if not wl.has("total_work"):
            raise ConfigError("workload.total_work", "required for pull/push scenarios")
        locality = {}
        for item in filter(None, (s.strip() for s in wl.str("locality", "").split(","))):
            node, _, frac = item.partition(":")
            try:
                locality[node.strip()] = float(frac)
            except ValueError:
                raise ConfigError("workload.locality", f"bad entry {item!r}, use NODE:FRACTION") from None
        workload = _wrap("workload", lambda: Workload(
            wl.duration("total_work"), wl.duration("packet_target", 20.0), locality
        ))
    n_jobs = wl.str("n_jobs", "optimal")
    if n_jobs != "optimal":
        n_jobs = wl.int("n_jobs")
        if n_jobs < 1:
            raise ConfigError("workload.n_jobs", "must be >= 1 or 'optimal'")

    arr = _Section(parser, "arrivals")
    source = arr.choice("source", SOURCES, "rampup")
    times, nodes, submissions = [], [], []
    if source == "explicit":
        if not arr.has("times"):
            raise ConfigError("arrivals.times", "required when source = explicit")
        times = [
            _wrap("arrivals.times", lambda t=t: parse_duration(t))
            for t in arr.str("times").split(",") if t.strip()
        ]
        if not times:
            raise ConfigError("arrivals.times", "no arrival times given")
        if any(t < 0 for t in times):
            raise ConfigError("arrivals.times", "arrival times must be >= 0")
        nodes = [n.strip() or None for n in arr.str("nodes", "").split(",")] if arr.has("nodes") else []
        if nodes and len(nodes) != len(times):
            raise ConfigError("arrivals.nodes", "must list one node per arrival time")
    if source == "elastic":
        submissions = _parse_submissions("arrivals.submissions", arr.str("submissions", ""))
    elif scheduler == "batch":
        raise ConfigError("workload.scheduler", "batch scenarios need arrivals.source = elastic")
    workers = arr.int("workers", 0)
    if source == "elastic" and scheduler != "batch" and workers < 1:
        raise ConfigError("arrivals.workers", "elastic pull scenarios need workers >= 1")
    if scheduler in ("push", "both") and source == "elastic":
        raise ConfigError("workload.scheduler", "push scenarios need explicit or rampup arrivals")
    count = arr.int("count")
    if count is not None and count < 1:
        raise ConfigError("arrivals.count", "must be >= 1")

    cl = _Section(parser, "cloud")
    if cl.has("latency"):
        mean, stddev = _wrap("cloud.latency", lambda: latency_preset(cl.str("latency")))
    else:
        mean, stddev = latency_preset("cern-2013")
    mean = cl.duration("latency_mean", mean)
    stddev = cl.duration("latency_stddev", stddev)
    failure = _wrap("cloud.failure", lambda: FailurePlan.parse(cl.str("failure", "none")))
    cloud = _wrap("cloud", lambda: CloudConfig(
        capacity=cl.int("capacity", 20),
        boot_latency=(mean, stddev),
        failure_plan=failure,
        slots=cl.int("slots", 4),
        registration_delay=cl.duration("registration_delay", 10.0),
        teardown_delay=cl.duration("teardown_delay", 30.0),
    ))

    el = _Section(parser, "elastiq")
    elastiq = _wrap("elastiq", lambda: ElastiqConfig(
        poll_interval=el.duration("poll_interval", 60.0),
        waiting_jobs_threshold=el.int("waiting_jobs_threshold", 1),
        waiting_time_threshold=el.duration("waiting_time_threshold", 100.0),
        jobs_per_vm=el.int("jobs_per_vm", 4),
        idle_time_threshold=el.duration("idle_time_threshold", 1800.0),
        min_quota=el.int("min_quota", 0),
        max_quota=el.int("max_quota", 10),
    ))

    out = _Section(parser, "output")
    scn = Scenario(
        name=name,
        hash=scenario_hash(text + "".join(f"\n{k}={v}" for k, v in sorted((overrides or {}).items()))),
        params=params,
        scheduler=scheduler,
        workload=workload,
        master_poll_interval=wl.duration("master_poll_interval", 10.0),
        init_duration=wl.duration("init_duration", 0.0),
        speed=wl.float("speed", 1.0),
        n_jobs=n_jobs,
        source=source,
        arrival_times=times,
        arrival_nodes=nodes,
        rampup_count=count,
        elastic_workers=workers,
        submissions=submissions,
        cloud=cloud,
        elastiq=elastiq,
        horizon=el.duration("horizon"),
        seed=out.int("seed", 0),
        output_dir=out.str("dir"),
        trace=out.bool("trace", False),
    )
    if scn.master_poll_interval < 0:
        raise ConfigError("workload.master_poll_interval", "must be >= 0")
    if scn.init_duration < 0:
        raise ConfigError("workload.init_duration", "must be >= 0")
    if not scn.speed > 0:
        raise ConfigError("workload.speed", "must be > 0")
    return scn


def load_scenario(source, overrides=None):
    text, name = read_scenario_text(source)
    return parse_scenario(text, name, overrides)


@dataclass
class ScenarioResult:
    tables: dict  # file stem -> (header, rows)
    summary: list  # human-readable lines
    trace: Optional[list] = None


def _fixed_arrivals(scn):
    if scn.source == "rampup":
        return rampup_arrivals(scn.params, scn.rampup_count, scn.init_duration, scn.speed)
    nodes = scn.arrival_nodes or [None] * len(scn.arrival_times)
    return [
        WorkerRecord(f"w{i + 1:04d}", t, scn.init_duration, scn.speed, node)
        for i, (t, node) in enumerate(zip(scn.arrival_times, nodes))
    ]


def _worker_rows(mode, report):
    return [
        (mode, w.id, w.arrival_time, w.init_time, w.busy_time, w.idle_time, w.packets, w.work)
        for w in report.workers
    ]


WORKER_HEADER = ["mode", "worker", "arrival_time", "init_time", "busy_time", "idle_time", "packets", "work"]
SUMMARY_HEADER = ["mode", "time_to_results", "packets", "serialized_work", "model_prediction", "relative_error"]


def _run_fixed(scn):
    arrivals = _fixed_arrivals(scn)
    T = scn.workload.total_work
    summary_rows, worker_rows, lines = [], [], []
    trace = [] if scn.trace else None
    modes = ("pull", "push") if scn.scheduler == "both" else (scn.scheduler,)
    for mode in modes:
        sim = Simulation(trace=scn.trace)
        if mode == "pull":
            report = simulate_pull(scn.workload, arrivals, PullConfig(scn.master_poll_interval), sim=sim)
            predicted = pull_time_to_results(scn.params, T)
        else:
            if scn.n_jobs == "optimal":
                n_jobs = max(1, round(optimal_job_count(scn.params, T)))
            else:
                n_jobs = scn.n_jobs
            report = simulate_push(scn.workload, arrivals, n_jobs, sim=sim)
            predicted = push_time_to_results(scn.params, T)
        if scn.source != "rampup":
            predicted = None
        err = None if predicted is None else report.time_to_results / predicted - 1.0
        summary_rows.append((mode, report.time_to_results, report.packets_granted,
                             report.serialized_work, predicted, err))
        worker_rows.extend(_worker_rows(mode, report))
        line = f"{mode}: time_to_results={report.time_to_results:.1f} s"
        if predicted is not None:
            line += f" (model {predicted:.1f} s, {100 * err:+.2f}%)"
        lines.append(line)
        if trace is not None:
            trace.extend((t, seq, f"{mode}:{kind}", detail) for t, seq, kind, detail in sim.trace)
    tables = {
        "summary": (SUMMARY_HEADER, summary_rows),
        "completion": (WORKER_HEADER, worker_rows),
    }
    return ScenarioResult(tables, lines, trace)


def _run_elastic(scn):
    sim = Simulation(trace=scn.trace)
    cluster = ElasticCluster(sim, scn.elastiq, scn.cloud, scn.seed)
    master = None
    if scn.scheduler == "pull":
        worker_jobs = []

        def release_later(job):
            sim.schedule(sim.now, "job-release", lambda: cluster.release(job.id), detail=job.id)

        def on_finish():
            for job in worker_jobs:
                if job.end_time is None and job.node is not None:
                    release_later(job)
                elif job.end_time is None:
                    cluster.withdraw(job.id)

        def on_start(job):
            if master.finished:
                release_later(job)
            else:
                master.add_worker(WorkerRecord(job.id, sim.now, scn.init_duration, scn.speed))

        master = PullMaster(sim, scn.workload, scn.master_poll_interval, on_finish=on_finish)

        def submit_workers():
            for _ in range(scn.elastic_workers):
                worker_jobs.append(cluster.submit(None, on_start))

        sim.schedule(0.0, "job-submit", submit_workers, detail=f"workers={scn.elastic_workers}")
        master.start()
    schedule_submissions(cluster, scn.submissions)
    cluster.start()
    if scn.horizon is not None:
        sim.run_until(scn.horizon)
    else:
        last = max((s.time for s in scn.submissions), default=0.0)
        cap = last + 30 * 86400.0
        sim.run_until(lambda s: s.now > cap or (
            cluster.settled() and (master is None or master.finished)
        ))
    cluster.stop()
    report = cluster.report()

    timeline = [(r.time, r.running, r.pending, r.waiting_jobs, r.action, r.detail) for r in report.timeline]
    instances = [
        (vm.id, vm.request_time, vm.latency, vm.boot_complete_time, vm.register_time, vm.terminate_time, vm.state)
        for vm in report.instances
    ]
    jobs = [
        (j.id, j.submit_time, j.start_time, j.end_time, j.node, j.restarts, j.withdrawn)
        for j in report.jobs
    ]
    tables = {
        "timeline": (["time", "running", "pending", "waiting_jobs", "action", "detail"], timeline),
        "instances": (["instance", "request_time", "boot_latency", "boot_complete_time",
                       "register_time", "terminate_time", "state"], instances),
        "jobs": (["job", "submit_time", "start_time", "end_time", "node", "restarts", "withdrawn"], jobs),
    }
    lines = [
        f"elastic: {report.total_granted} VMs granted, max fleet {cluster.cloud.max_existing}, "
        f"end at {report.end_time:.1f} s"
    ]
    summary = [("vms_granted", report.total_granted), ("end_time", report.end_time),
               ("drain_time", report.drain_time)]
    if master is not None:
        if master.finished:
            pull = master.report()
            tables["completion"] = (WORKER_HEADER, _worker_rows("pull", pull))
            summary.append(("time_to_results", pull.time_to_results))
            joins = sorted(w.arrival_time for w in pull.workers)
            if joins:
                summary.append(("first_join", joins[0]))
            lines.append(f"pull: time_to_results={pull.time_to_results:.1f} s "
                         f"with {len(pull.workers)} workers joined")
        else:
            lines.append("pull: analysis did not finish before the horizon")
    tables["summary"] = (["metric", "value"], summary)
    return ScenarioResult(tables, lines, sim.trace)


def run_scenario(scn):
    if scn.source == "elastic":
        return _run_elastic(scn)
    return _run_fixed(scn)
