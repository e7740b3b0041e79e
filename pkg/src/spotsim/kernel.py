"""Deterministic discrete-event simulation kernel.

Entities exchange timestamped events through a stable priority queue:
equal-time events are delivered in insertion order, so a run is fully
reproducible for a fixed workload. The engine also self-schedules
periodic scheduling ticks (broadcast to every entity) so brokers and
hosts can refresh processing between externally scheduled events.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Any, Callable

# Sentinel ids: the engine itself as event source, and broadcast delivery.
ENGINE = -1
BROADCAST = -1

# Slack for floating point comparisons on the time axis.
TIME_EPS = 1e-9


class SimulationError(RuntimeError):
    """Fatal simulation error. Signals a logic bug in the model, not bad input."""


class EventTag(IntEnum):
    VM_CREATE = 1
    VM_CREATE_RETRY = 2
    VM_DESTROY = 3
    CLOUDLET_SUBMIT = 4
    CLOUDLET_FINISH = 5
    SPOT_INTERRUPT_WARNING = 6
    SPOT_DEALLOCATE = 7
    HIBERNATION_EXPIRE = 8
    WAITING_EXPIRE = 9
    SCHEDULING_TICK = 10
    END_OF_SIMULATION = 11


@dataclass(frozen=True)
class SimEvent:
    """A timestamped message between entities. ``payload`` is an opaque
    domain object (a VM, a cloudlet, or None)."""

    time: float
    tag: EventTag
    source: int
    destination: int
    payload: Any = None


@dataclass
class EngineConfig:
    min_time_between_events: float = 0.5
    terminate_at: float | None = None
    scheduling_interval: float = 1.0

    def validate(self) -> None:
        if self.min_time_between_events <= 0:
            raise SimulationError("min_time_between_events must be > 0")
        if self.scheduling_interval <= 0:
            raise SimulationError("scheduling_interval must be > 0")
        if self.terminate_at is not None and self.terminate_at < 0:
            raise SimulationError("terminate_at must be >= 0")


class SimEntity:
    """Contract for simulation participants.

    Entities receive a dense id at registration and may schedule events
    through ``self.simulation``. They must not be shared across threads
    while a run is in progress.
    """

    entity_id: int = ENGINE
    simulation: "Simulation | None" = None

    def process_event(self, event: SimEvent) -> None:
        raise NotImplementedError

    def has_pending_work(self) -> bool:
        """Whether the entity still needs scheduling ticks to make progress."""
        return False


class Simulation:
    """Event queue, clock, entity registry and the run loop."""

    def __init__(self, config: EngineConfig | None = None):
        self.config = config or EngineConfig()
        self.config.validate()
        self.clock = 0.0
        self.entities: list[SimEntity] = []
        self._queue: list[tuple[float, int, SimEvent]] = []
        self._seq = 0
        self._pending_non_tick = 0
        self._started = False
        self._finished = False
        self._stop_requested = False
        # Delivered-event log: (time, tag, source, destination). Broadcast
        # ticks are logged once with destination=BROADCAST.
        self.delivered: list[tuple[float, int, int, int]] = []
        # Count of dispatched events; transitions and samples stamped with
        # this value can be ordered exactly against each other.
        self.dispatch_serial = 0
        self.post_event_hook: Callable[[SimEvent], None] | None = None

    # -- setup ------------------------------------------------------------

    def register_entity(self, entity: SimEntity) -> int:
        if self._started:
            raise SimulationError("cannot register an entity after the run has started")
        if entity in self.entities:
            raise SimulationError("entity already registered")
        entity.entity_id = len(self.entities)
        entity.simulation = self
        self.entities.append(entity)
        return entity.entity_id

    # -- scheduling -------------------------------------------------------

    def schedule(self, event: SimEvent) -> None:
        if event.time < self.clock - TIME_EPS:
            raise SimulationError(
                f"event scheduled in the past: t={event.time} < clock={self.clock}"
            )
        heapq.heappush(self._queue, (event.time, self._seq, event))
        self._seq += 1
        if event.tag is not EventTag.SCHEDULING_TICK:
            self._pending_non_tick += 1

    def send(self, source: int, destination: int, delay: float, tag: EventTag,
             payload: Any = None) -> None:
        if delay < 0:
            raise SimulationError(f"negative event delay: {delay}")
        self.schedule(SimEvent(self.clock + delay, tag, source, destination, payload))

    # -- run loop ---------------------------------------------------------

    def run(self) -> float:
        """Deliver events in (time, insertion) order until the queue drains,
        an END_OF_SIMULATION event arrives, or ``terminate_at`` is crossed.
        Events exactly at ``terminate_at`` are still delivered."""
        if self._started:
            raise SimulationError("run() may only be called once per Simulation")
        self._started = True
        term = self.config.terminate_at
        if self.entities:
            self._schedule_tick(self._next_tick_time(self.clock))
        while self._queue:
            time, _, event = self._queue[0]
            if term is not None and time > term + TIME_EPS:
                break
            heapq.heappop(self._queue)
            if event.tag is not EventTag.SCHEDULING_TICK:
                self._pending_non_tick -= 1
            if time < self.clock - TIME_EPS:
                raise SimulationError("event queue delivered out of order")
            self.clock = max(self.clock, time)
            self.dispatch_serial += 1
            self.delivered.append(
                (self.clock, int(event.tag), event.source, event.destination)
            )
            if event.tag is EventTag.END_OF_SIMULATION:
                self._stop_requested = True
            else:
                self._dispatch(event)
                if event.tag is EventTag.SCHEDULING_TICK and event.source == ENGINE:
                    self._maybe_schedule_next_tick()
            if self.post_event_hook is not None:
                self.post_event_hook(event)
            if self._stop_requested:
                break
        if not self._stop_requested and term is not None:
            self.clock = term
        self._finished = True
        return self.clock

    def stop(self) -> None:
        """Request an immediate stop after the current event."""
        self._stop_requested = True

    def delivery_digest(self) -> str:
        """SHA-256 over the (time, tag, src, dst) log; equal digests mean
        identical event delivery sequences."""
        h = hashlib.sha256()
        for time, tag, src, dst in self.delivered:
            h.update(f"{time:.9f},{tag},{src},{dst}\n".encode())
        return h.hexdigest()

    # -- internals ----------------------------------------------------------

    def _dispatch(self, event: SimEvent) -> None:
        if event.destination == BROADCAST:
            for entity in self.entities:
                entity.process_event(event)
            return
        if not 0 <= event.destination < len(self.entities):
            raise SimulationError(f"event addressed to unknown entity {event.destination}")
        self.entities[event.destination].process_event(event)

    def _next_tick_time(self, after: float) -> float:
        # Self-scheduled ticks are quantized to the min_time_between_events
        # grid; externally scheduled events keep their exact timestamps.
        quantum = self.config.min_time_between_events
        target = after + self.config.scheduling_interval
        steps = math.ceil(round(target / quantum, 9))
        t = steps * quantum
        if t <= after + TIME_EPS:
            t += quantum
        return t

    def _schedule_tick(self, at: float) -> None:
        self.schedule(SimEvent(at, EventTag.SCHEDULING_TICK, ENGINE, BROADCAST))

    def _maybe_schedule_next_tick(self) -> None:
        nxt = self._next_tick_time(self.clock)
        term = self.config.terminate_at
        if term is not None:
            if nxt <= term + TIME_EPS:
                self._schedule_tick(nxt)
            return
        # Without a termination time the tick chain only stays alive while
        # there is still work: pending non-tick events or busy entities.
        if self._pending_non_tick > 0 or any(e.has_pending_work() for e in self.entities):
            self._schedule_tick(nxt)
