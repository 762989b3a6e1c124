"""Discrete-time simulation loop.

Each tick runs the same phases in the same order:

1. due events (arrivals, allocations, treatment ends, returns)
2. movement of individuals toward their activity destination
3. activity completions and sickness sampling
4. new activities for idle individuals, then park-walk pairing
5. request progression under the configured strategy
6. death deadlines
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

from .config import WorldConfig
from .domain import Disease, Individual, IndividualState, Position, sample_disease, travel_time
from .events import EventLog
from .metrics import RunMetrics, collect
from .protocol import WALK_COMPANION, Notification, NotificationKind, publish
from .rng import Stream
from .strategies import RequestRecord, handler_for
from .world import EMERGENCY, World, build_world


class ActivityKind(enum.Enum):
    GO_TO_MARKET = "go_to_market"
    GO_TO_OFFICE = "go_to_office"
    WALK_IN_PARK = "walk_in_park"
    VISIT_FRIEND = "visit_friend"
    STAY_HOME = "stay_home"
    EXERCISE = "exercise"


ACTIVITY_KINDS = tuple(ActivityKind)


@dataclass
class Activity:
    kind: ActivityKind
    destination: Position
    started_at: int
    ends_at: int
    departs_at: int
    deadline: Optional[int] = None
    late: bool = False
    wants_company: bool = False
    partner: Optional[int] = None


def office_departure_plan(position: Position, office: Position, speed: float, deadline: int, now: int) -> tuple:
    """Latest departure tick that still reaches the office by ``deadline``.

    Returns ``(departure, late)``; an infeasible deadline departs at once.
    """
    if deadline < now:
        raise ValueError(f"deadline {deadline} is before now {now}")
    departure = deadline - travel_time(position, office, speed)
    if departure < now:
        return now, True
    return departure, False


def schedule_activity(individual: Individual, stream: Stream, now: int, config: WorldConfig) -> Activity:
    if individual.state is not IndividualState.IDLE:
        raise ValueError(f"{individual.agent_id} is {individual.state.value}, only idle individuals start activities")
    kind = stream.choice(ACTIVITY_KINDS)
    dest = Position(stream.uniform(0.0, config.width), stream.uniform(0.0, config.height))
    duration = stream.randint(config.activity_min_ticks, config.activity_max_ticks)
    act = Activity(kind, dest, now, now + duration, departs_at=now)
    if kind is ActivityKind.GO_TO_OFFICE:
        act.deadline = now + duration // 2
        act.departs_at, act.late = office_departure_plan(individual.position, dest, individual.speed, act.deadline, now)
    elif kind is ActivityKind.WALK_IN_PARK:
        act.wants_company = stream.bernoulli(config.walk_company_probability)
    return act


def pair_walkers(residents_node: str, pending: list) -> list:
    """Pair willing park walkers of one residents community, oldest first."""
    willing = [
        n for n in pending
        if n.kind is NotificationKind.AVAILABILITY and WALK_COMPANION in n.roles and n.community == residents_node
    ]
    return [(willing[i], willing[i + 1]) for i in range(0, len(willing) - 1, 2)]


def make_sick(world: World, ind: Individual, disease: Disease, treatment_ticks: int) -> RequestRecord:
    now = world.clock
    if ind.activity is not None and ind.activity.wants_company:
        world.hierarchy.withdraw(ind.residents, ind.agent_id)
    rec = RequestRecord(len(world.requests), ind.id, disease, now, treatment_ticks)
    ind.activity = None
    ind.state = IndividualState.SICK
    ind.request = rec
    world.requests.append(rec)
    world.open_requests.append(rec)
    if world.log is not None:
        world.log.agent(now, "sick", ind.agent_id, disease=disease.id, tt=treatment_ticks)
    return rec


def force_sick(world: World, individual: int, disease: int, treatment_ticks: Optional[int] = None) -> RequestRecord:
    """Make an individual sick right now, bypassing the sickness draw."""
    ind = world.individuals[individual]
    if not ind.alive or ind.state in (IndividualState.SICK, IndividualState.IN_TREATMENT):
        raise ValueError(f"{ind.agent_id} cannot fall sick while {ind.state.value}")
    if treatment_ticks is None:
        treatment_ticks = world.config.treatment_min_ticks
    return make_sick(world, ind, Disease(disease), treatment_ticks)


def _move(world: World, now: int) -> None:
    for ind in world.individuals:
        act = ind.activity
        if act is None or ind.state is not IndividualState.IN_ACTIVITY or now < act.departs_at:
            continue
        if ind.position != act.destination:
            ind.position = ind.position.toward(act.destination, ind.speed)


def _complete_activities(world: World, now: int) -> None:
    cfg = world.config
    sick_stream = world.streams.sickness
    for ind in world.individuals:
        act = ind.activity
        if act is None or ind.state is not IndividualState.IN_ACTIVITY or act.ends_at > now:
            continue
        if act.wants_company and act.partner is None:
            world.hierarchy.withdraw(ind.residents, ind.agent_id)
        ind.activity = None
        ind.state = IndividualState.IDLE
        if sick_stream.bernoulli(cfg.sickness_probability):
            disease = sample_disease(sick_stream)
            tt = sick_stream.randint(cfg.treatment_min_ticks, cfg.treatment_max_ticks)
            make_sick(world, ind, disease, tt)


def _start_activities(world: World, now: int) -> None:
    stream = world.streams.activities
    for ind in world.individuals:
        if ind.state is not IndividualState.IDLE:
            continue
        act = schedule_activity(ind, stream, now, world.config)
        ind.activity = act
        ind.state = IndividualState.IN_ACTIVITY
        if act.wants_company:
            n = Notification(ind.agent_id, NotificationKind.AVAILABILITY, (WALK_COMPANION,), now)
            publish(world.hierarchy, ind.residents, n)


def _pair(world: World) -> None:
    hier = world.hierarchy
    for node in hier[EMERGENCY].children:
        pending = hier[node].pending_notifications
        for first, second in pair_walkers(node, pending):
            a = world.individuals[int(first.origin_agent.rsplit("-", 1)[1])]
            b = world.individuals[int(second.origin_agent.rsplit("-", 1)[1])]
            b.activity.destination = a.activity.destination
            a.activity.partner, b.activity.partner = b.id, a.id
            pending.remove(first)
            pending.remove(second)
            if world.log is not None:
                world.log.event(world.clock, "pair", node, walkers=f"{a.agent_id}+{b.agent_id}")


def _check_deaths(world: World, now: int) -> None:
    threshold = world.config.threshold_ticks
    for rec in list(world.open_requests):
        if now >= rec.issued_at + threshold:
            world.handler.die(world, rec)


def step(world: World) -> World:
    if world.handler is None:
        world.handler = handler_for(world.config.strategy)
    now = world.clock
    world.events_drained = False
    for _, fn, args in world.events.pop_due(now):
        fn(world, *args)
    world.events_drained = True
    _move(world, now)
    _complete_activities(world, now)
    _start_activities(world, now)
    _pair(world)
    handler = world.handler
    for rec in list(world.open_requests):
        if rec.open:
            handler.progress(world, rec)
    _check_deaths(world, now)
    world.events_drained = False
    world.clock = now + 1
    return world


def simulate(world: World, ticks: Optional[int] = None) -> World:
    ticks = world.config.total_ticks if ticks is None else ticks
    for _ in range(ticks):
        step(world)
    return world


def run(
    config: WorldConfig,
    seed: int,
    log: Optional[EventLog] = None,
    setup: Optional[Callable[[World], None]] = None,
) -> RunMetrics:
    world = build_world(config, seed, log=log)
    if setup is not None:
        setup(world)
    simulate(world)
    return collect(world)
