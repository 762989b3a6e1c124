"""World state and its deterministic construction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .config import WorldConfig
from .domain import (
    HELD,
    Ambulance,
    Appliance,
    Doctor,
    Hospital,
    Individual,
    Position,
    distribute_resources,
    hospital_positions,
    travel_time,
)
from .events import EventLog, EventQueue
from .protocol import (
    AMBULANCE,
    MINOR_DOCTOR,
    Hierarchy,
    NodeSpec,
    Notification,
    NotificationKind,
    SonRegistry,
    appliance_role,
    build_hierarchy,
    expert_doctor,
    publish,
)
from .rng import RngStreams

ROOT = "root"
REGIONAL = "regional-hospitals"
EMERGENCY = "emergency-response"


def hospital_node(h: int) -> str:
    return f"hospital-{h}"


def residents_node(k: int) -> str:
    return f"residents-{k}"


def isoc_node(agent: str) -> str:
    return f"isoc:{agent}"


def offered_roles(resource) -> tuple:
    if isinstance(resource, Doctor):
        return (MINOR_DOCTOR, *(expert_doctor(d) for d in sorted(resource.expertise)))
    if isinstance(resource, Appliance):
        return (appliance_role(resource.disease_type),)
    if isinstance(resource, Ambulance):
        return (AMBULANCE,)
    raise TypeError(f"not a hospital resource: {resource!r}")


def residents_band(x: float, width: float, n_residents: int) -> int:
    return min(n_residents - 1, int(x / width * n_residents))


def default_topology(hospitals: list, individuals: list, n_residents: int) -> list[NodeSpec]:
    """root -> {regional hospitals -> hospitals, emergency response -> residents -> iSoCs}."""
    specs = [
        NodeSpec(ROOT, None, f"{ROOT}:rep"),
        NodeSpec(REGIONAL, ROOT, f"{REGIONAL}:rep", tuple(h.agent_id for h in hospitals)),
        NodeSpec(EMERGENCY, ROOT, f"{EMERGENCY}:rep", tuple(f"{residents_node(k)}:rep" for k in range(n_residents))),
    ]
    for h in hospitals:
        specs.append(NodeSpec(hospital_node(h.id), REGIONAL, h.agent_id, tuple(r.agent_id for r in h.resources())))
    for k in range(n_residents):
        members = tuple(ind.agent_id for ind in individuals if ind.residents == residents_node(k))
        specs.append(NodeSpec(residents_node(k), EMERGENCY, f"{residents_node(k)}:rep", members))
    for ind in individuals:
        specs.append(NodeSpec(ind.home_isoc, ind.residents, ind.agent_id))
    return specs


@dataclass
class World:
    config: WorldConfig
    seed: int
    streams: RngStreams
    hospitals: list
    doctors: list
    ambulances: list
    appliances: list
    individuals: list
    hierarchy: Hierarchy
    resources: dict
    events: EventQueue = field(default_factory=EventQueue)
    sons: SonRegistry = field(default_factory=SonRegistry)
    requests: list = field(default_factory=list)
    open_requests: list = field(default_factory=list)
    log: Optional[EventLog] = None
    handler: object = None
    clock: int = 0
    # True once the due events of the current tick have been drained
    events_drained: bool = False

    def at(self, tick: int, fn: Callable, *args) -> None:
        """Schedule ``fn`` at ``tick``; run it now if that tick's events already ran."""
        if tick <= self.clock and self.events_drained:
            fn(self, *args)
        else:
            self.events.push(max(tick, self.clock), fn, *args)

    def hospital_of(self, resource) -> Hospital:
        return self.hospitals[resource.home_hospital]

    def home_node(self, resource) -> str:
        return hospital_node(resource.home_hospital)

    def hospital_transfer(self, src: str, dst: str) -> int:
        a = self.hospitals[int(src.rsplit("-", 1)[1])].position
        b = self.hospitals[int(dst.rsplit("-", 1)[1])].position
        return travel_time(a, b, self.config.ambulance_speed)

    def nearest_hospital(self, pos: Position) -> Hospital:
        return min(self.hospitals, key=lambda h: (pos.distance(h.position), h.id))

    def hold(self, resource) -> None:
        """Take a free resource out of circulation until released."""
        resource.busy_until = HELD
        self.hierarchy.withdraw(self.home_node(resource), resource.agent_id)

    def release(self, resource, free_at: int) -> None:
        """Resource becomes available at ``free_at`` and announces itself then."""
        resource.busy_until = free_at
        self.at(free_at, _announce, resource, free_at)

    def announce(self, resource) -> None:
        node = self.home_node(resource)
        n = Notification(resource.agent_id, NotificationKind.AVAILABILITY, offered_roles(resource), self.clock)
        publish(self.hierarchy, node, n, log=self.log)

    def snapshot(self) -> dict:
        """Plain-data view of the whole state, for equality checks."""
        return {
            "seed": self.seed,
            "clock": self.clock,
            "config": self.config.as_dict(),
            "hospitals": [(h.id, h.position.x, h.position.y) for h in self.hospitals],
            "doctors": [(d.id, d.home_hospital, sorted(d.expertise), d.busy_until) for d in self.doctors],
            "ambulances": [(a.id, a.home_hospital, a.position.x, a.position.y, a.busy_until) for a in self.ambulances],
            "appliances": [(a.id, a.home_hospital, a.disease_type, a.busy_until) for a in self.appliances],
            "individuals": [
                (i.id, i.position.x, i.position.y, i.state.value, i.home_isoc, i.residents) for i in self.individuals
            ],
            "communities": {
                nid: (n.parent, n.level, n.representative, sorted(n.member_agents),
                      [(p.id, p.origin_agent, p.kind.value) for p in n.pending_notifications])
                for nid, n in sorted(self.hierarchy.nodes.items())
            },
        }


def _announce(world: World, resource, free_at: int) -> None:
    # a later hold/release superseded this one
    if resource.busy_until != free_at:
        return
    resource.busy_until = None
    if isinstance(resource, Ambulance):
        resource.position = world.hospitals[resource.home_hospital].position
        resource.route = []
    world.announce(resource)


def build_world(config: WorldConfig, seed: int, log: Optional[EventLog] = None) -> World:
    config.validate()
    streams = RngStreams(seed)
    sites = hospital_positions(config.n_hospitals, config.width, config.height)
    hospitals = [Hospital(i, p) for i, p in enumerate(sites)]
    counts = {"doctors": config.n_doctors, "ambulances": config.n_ambulances, "appliances": config.n_appliances}
    plan = distribute_resources(streams.resource_placement, counts, config.n_hospitals, streams.expertise)

    doctors = [Doctor(i, h, expertise=e) for i, (h, e) in enumerate(zip(plan.doctor_hospitals, plan.doctor_expertise))]
    ambulances = [Ambulance(i, h, position=sites[h]) for i, h in enumerate(plan.ambulance_hospitals)]
    appliances = [
        Appliance(i, h, disease_type=t) for i, (h, t) in enumerate(zip(plan.appliance_hospitals, plan.appliance_types))
    ]
    for d in doctors:
        hospitals[d.home_hospital].doctors.append(d)
    for a in ambulances:
        hospitals[a.home_hospital].ambulances.append(a)
    for a in appliances:
        hospitals[a.home_hospital].appliances.append(a)

    move = streams.movement
    positions = [Position(move.uniform(0.0, config.width), move.uniform(0.0, config.height))
                 for _ in range(config.n_individuals)]
    return assemble_world(config, seed, hospitals, positions, streams=streams, log=log)


def assemble_world(
    config: WorldConfig,
    seed: int,
    hospitals: list,
    positions: list,
    streams: Optional[RngStreams] = None,
    log: Optional[EventLog] = None,
) -> World:
    """Wire an explicit placement into a world: hierarchy, individuals, announcements.

    ``hospitals`` already carry their resources; ``positions`` gives one
    starting cell per individual.
    """
    streams = RngStreams(seed) if streams is None else streams
    doctors = sorted((d for h in hospitals for d in h.doctors), key=lambda r: r.id)
    ambulances = sorted((a for h in hospitals for a in h.ambulances), key=lambda r: r.id)
    appliances = sorted((a for h in hospitals for a in h.appliances), key=lambda r: r.id)
    individuals = []
    for i, pos in enumerate(positions):
        band = residents_band(pos.x, config.width, config.n_residents)
        ind = Individual(i, pos, config.individual_speed, home_isoc="", residents=residents_node(band))
        ind.home_isoc = isoc_node(ind.agent_id)
        individuals.append(ind)

    hierarchy = build_hierarchy(default_topology(hospitals, individuals, config.n_residents))
    resources = {r.agent_id: r for r in (*doctors, *ambulances, *appliances)}
    world = World(
        config=config,
        seed=seed,
        streams=streams,
        hospitals=hospitals,
        doctors=doctors,
        ambulances=ambulances,
        appliances=appliances,
        individuals=individuals,
        hierarchy=hierarchy,
        resources=resources,
        log=log,
    )
    for r in (*doctors, *ambulances, *appliances):
        world.announce(r)
    return world
