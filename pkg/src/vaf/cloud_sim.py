"""Simulated EC2-like cloud with boot latency, quota and injected failures.

Instances go ``pending -> booting -> running -> terminating -> terminated``.
A running instance registers itself with the batch system one registration
tick after boot completes; nobody has to tell it to. Terminating deregisters
it immediately.
"""

import math
import re
from dataclasses import dataclass
from typing import Optional

from .errors import InjectedFailure, InputError, QuotaExceeded, SimulationError
from .sim_engine import RngStream

PENDING = "pending"
BOOTING = "booting"
RUNNING = "running"
TERMINATING = "terminating"
TERMINATED = "terminated"

_ORDER = [PENDING, BOOTING, RUNNING, TERMINATING, TERMINATED]


@dataclass(frozen=True)
class FailurePlan:
    fail_first: int = 0
    probability: float = 0.0

    def __post_init__(self):
        if self.fail_first < 0:
            raise InputError("fail_first must be >= 0")
        if not 0.0 <= self.probability <= 1.0:
            raise InputError(f"failure probability must be in [0, 1], got {self.probability}")

    @classmethod
    def parse(cls, text):
        """``none``, ``first:3`` or ``prob:0.2``."""
        text = str(text).strip().lower()
        if text in ("", "none"):
            return None
        m = re.fullmatch(r"first:(\d+)", text)
        if m:
            return cls(fail_first=int(m.group(1)))
        m = re.fullmatch(r"prob:([0-9.eE+-]+)", text)
        if m:
            return cls(probability=float(m.group(1)))
        raise InputError(f"unknown failure plan {text!r} (use none, first:K or prob:Q)")


@dataclass(frozen=True)
class CloudConfig:
    capacity: int = 20
    boot_latency: tuple = (375.0, 39.0)  # (mean, stddev) seconds
    failure_plan: Optional[FailurePlan] = None
    slots: int = 4
    registration_delay: float = 10.0
    teardown_delay: float = 30.0

    def __post_init__(self):
        mean, stddev = self.boot_latency
        if self.capacity < 0:
            raise InputError("capacity must be >= 0")
        if not (mean > 0 and math.isfinite(mean)):
            raise InputError(f"boot latency mean must be > 0, got {mean}")
        if not (stddev >= 0 and math.isfinite(stddev)):
            raise InputError(f"boot latency stddev must be >= 0, got {stddev}")
        if self.slots < 1:
            raise InputError("slots per VM must be >= 1")
        if self.registration_delay < 0 or self.teardown_delay < 0:
            raise InputError("registration and teardown delays must be >= 0")


@dataclass
class VmInstance:
    id: str
    request_time: float
    slots: int
    latency: float
    state: str = PENDING
    boot_start_time: Optional[float] = None
    boot_complete_time: Optional[float] = None
    register_time: Optional[float] = None
    terminate_time: Optional[float] = None

    @property
    def registered(self):
        return self.register_time is not None and self.state == RUNNING

    def transition(self, new_state):
        if _ORDER.index(new_state) != _ORDER.index(self.state) + 1:
            raise SimulationError(f"instance {self.id}: illegal transition {self.state} -> {new_state}")
        self.state = new_state


class Cloud:
    """Instance fleet attached to a simulation.

    ``on_register(instance)`` / ``on_deregister(instance)`` are the batch
    system's hooks.
    """

    def __init__(self, sim, config=None, seed=0, on_register=None, on_deregister=None):
        self.sim = sim
        self.config = config or CloudConfig()
        self.on_register = on_register
        self.on_deregister = on_deregister
        self.instances = {}
        self.requests_made = 0
        self.max_existing = 0
        self._latency_rng = RngStream(seed, "cloud-latency")
        self._failure_rng = RngStream(seed, "cloud-failure")
        self._pending_registration = {}

    def existing(self):
        return sum(1 for vm in self.instances.values() if vm.state != TERMINATED)

    def count(self, *states):
        return sum(1 for vm in self.instances.values() if vm.state in states)

    def in_flight(self):
        """Instances granted but not yet registered with the batch system."""
        return sum(
            1 for vm in self.instances.values()
            if vm.state in (PENDING, BOOTING) or (vm.state == RUNNING and vm.register_time is None)
        )

    def registered(self):
        return [vm for vm in self.instances.values() if vm.registered]

    def request_instances(self, count, now=None):
        """Grant ``count`` new instances, or as many as capacity still allows.

        A refused call grants nothing and raises :class:`InjectedFailure` or
        :class:`QuotaExceeded`; both are routine and callers retry later.
        """
        if count < 1:
            raise InputError(f"must request at least one instance, got {count}")
        now = self.sim.now if now is None else now
        self.requests_made += 1
        plan = self.config.failure_plan
        if plan is not None:
            if self.requests_made <= plan.fail_first:
                raise InjectedFailure(f"request #{self.requests_made} failed (injected)")
            if plan.probability > 0 and self._failure_rng.uniform() < plan.probability:
                raise InjectedFailure(f"request #{self.requests_made} failed (random)")
        available = self.config.capacity - self.existing()
        if available <= 0:
            raise QuotaExceeded(f"cloud capacity {self.config.capacity} reached")
        granted = []
        mean, stddev = self.config.boot_latency
        for _ in range(min(count, available)):
            vm = VmInstance(
                f"vm-{len(self.instances) + 1:04d}", now, self.config.slots,
                self._latency_rng.truncated_normal(mean, stddev),
            )
            self.instances[vm.id] = vm
            self.sim.schedule(now, "vm-boot-start", lambda vm=vm: self._boot(vm), detail=vm.id)
            granted.append(vm.id)
        self.max_existing = max(self.max_existing, self.existing())
        return granted

    def _boot(self, vm):
        if vm.state != PENDING:
            return
        vm.transition(BOOTING)
        vm.boot_start_time = self.sim.now
        self.sim.schedule(
            vm.request_time + vm.latency, "vm-boot-complete",
            lambda: self.on_boot_complete(vm.id), detail=vm.id,
        )

    def on_boot_complete(self, instance_id, now=None):
        """Boot finished: the instance runs and registers after one registration tick."""
        vm = self.instances[instance_id]
        if vm.state != BOOTING:
            raise SimulationError(f"boot completion for {instance_id} in state {vm.state}")
        vm.transition(RUNNING)
        vm.boot_complete_time = self.sim.now if now is None else now
        event = self.sim.schedule_in(
            self.config.registration_delay, "node-register",
            lambda: self._register(vm), detail=vm.id,
        )
        self._pending_registration[vm.id] = event
        return event

    def _register(self, vm):
        self._pending_registration.pop(vm.id, None)
        if vm.state != RUNNING:
            return
        vm.register_time = self.sim.now
        if self.on_register is not None:
            self.on_register(vm)

    def terminate_instance(self, instance_id, now=None):
        """Deregister a running instance now; it is gone after the teardown delay."""
        vm = self.instances.get(instance_id)
        if vm is None:
            raise InputError(f"unknown instance {instance_id!r}")
        if vm.state != RUNNING:
            raise InputError(f"instance {instance_id} is {vm.state}, not running")
        was_registered = vm.registered
        vm.transition(TERMINATING)
        vm.terminate_time = self.sim.now if now is None else now
        pending = self._pending_registration.pop(vm.id, None)
        if pending is not None:
            self.sim.cancel(pending)
        if was_registered and self.on_deregister is not None:
            self.on_deregister(vm)
        self.sim.schedule_in(
            self.config.teardown_delay, "shutdown-complete",
            lambda: vm.transition(TERMINATED), detail=vm.id,
        )
        return True
