"""Scenario-independent domain types: geometry, diseases, agents, resources."""

from __future__ import annotations

import enum
import math
import sys
from dataclasses import dataclass, field
from typing import Optional

from .rng import Stream

MINOR_DISEASES = (1, 2, 3)
SEVERE_DISEASES = (4, 5, 6, 7, 8, 9, 10)
EXPERTISE_SIZE = 3

# busy_until value for a resource that is held but whose release tick is not known yet
HELD = sys.maxsize

# absorbs float noise such as 20.000000000000004 before ceil()
_CEIL_EPS = 1e-9


@dataclass(frozen=True, slots=True)
class Position:
    x: float
    y: float

    def distance(self, other: Position) -> float:
        return math.hypot(other.x - self.x, other.y - self.y)

    def toward(self, other: Position, step: float) -> Position:
        """Move at most ``step`` cells along the straight line to ``other``."""
        d = self.distance(other)
        if d <= step:
            return other
        f = step / d
        return Position(self.x + (other.x - self.x) * f, self.y + (other.y - self.y) * f)


def travel_time(src: Position, dst: Position, speed: float) -> int:
    if speed <= 0:
        raise ValueError(f"speed must be positive, got {speed}")
    d = src.distance(dst)
    if d == 0:
        return 0
    return max(1, math.ceil(d / speed - _CEIL_EPS))


class AgentKind(enum.Enum):
    INDIVIDUAL = "individual"
    DOCTOR = "doctor"
    FIREFIGHTER = "firefighter"  # no behaviour
    TAXI_DRIVER = "taxi_driver"  # no behaviour
    AMBULANCE = "ambulance"
    APPLIANCE = "appliance"


def agent_id(kind: AgentKind, idx: int) -> str:
    return f"{kind.value}-{idx}"


@dataclass(frozen=True, slots=True)
class Disease:
    id: int

    def __post_init__(self):
        if not 1 <= self.id <= 10:
            raise ValueError(f"disease id must be in 1..10, got {self.id}")

    @property
    def severity(self) -> int:
        return self.id

    @property
    def minor(self) -> bool:
        return self.id in MINOR_DISEASES

    @property
    def severe(self) -> bool:
        return not self.minor


def sample_disease(stream: Stream) -> Disease:
    return Disease(stream.randint(1, 10))


@dataclass(slots=True)
class Resource:
    id: int
    home_hospital: int
    busy_until: Optional[int] = None

    kind = AgentKind.INDIVIDUAL  # overridden by subclasses

    @property
    def agent_id(self) -> str:
        return agent_id(self.kind, self.id)

    def is_free(self, now: int) -> bool:
        return self.busy_until is None or self.busy_until <= now


@dataclass(slots=True)
class Doctor(Resource):
    expertise: frozenset = frozenset()

    kind = AgentKind.DOCTOR

    def __post_init__(self):
        if len(self.expertise) != EXPERTISE_SIZE or not self.expertise <= set(SEVERE_DISEASES):
            raise ValueError(f"doctor {self.id}: expertise must be 3 severe ids, got {sorted(self.expertise)}")

    def treats(self, disease: Disease) -> bool:
        return disease.minor or disease.id in self.expertise


@dataclass(slots=True)
class Appliance(Resource):
    disease_type: int = 4

    kind = AgentKind.APPLIANCE

    def __post_init__(self):
        if self.disease_type not in SEVERE_DISEASES:
            raise ValueError(f"appliance {self.id}: disease_type must be severe, got {self.disease_type}")


@dataclass(slots=True)
class Ambulance(Resource):
    position: Position = Position(0.0, 0.0)
    # (tick, position) waypoints of the current trip, used to locate a cancelled ambulance
    route: list = field(default_factory=list)

    kind = AgentKind.AMBULANCE

    def position_at(self, t: int) -> Position:
        if not self.route:
            return self.position
        if t <= self.route[0][0]:
            return self.route[0][1]
        for (t0, p0), (t1, p1) in zip(self.route, self.route[1:]):
            if t <= t1:
                if t1 == t0:
                    return p1
                f = (t - t0) / (t1 - t0)
                return Position(p0.x + (p1.x - p0.x) * f, p0.y + (p1.y - p0.y) * f)
        return self.route[-1][1]


@dataclass(slots=True)
class Hospital:
    id: int
    position: Position
    doctors: list = field(default_factory=list)
    ambulances: list = field(default_factory=list)
    appliances: list = field(default_factory=list)

    @property
    def agent_id(self) -> str:
        return f"hospital-{self.id}"

    def resources(self) -> list:
        return [*self.doctors, *self.ambulances, *self.appliances]


class IndividualState(enum.Enum):
    IDLE = "idle"
    IN_ACTIVITY = "in_activity"
    SICK = "sick"
    IN_TREATMENT = "in_treatment"
    DEAD = "dead"


@dataclass(slots=True)
class Individual:
    id: int
    position: Position
    speed: float
    home_isoc: str
    residents: str
    state: IndividualState = IndividualState.IDLE
    activity: object = None
    request: object = None

    kind = AgentKind.INDIVIDUAL

    @property
    def agent_id(self) -> str:
        return agent_id(AgentKind.INDIVIDUAL, self.id)

    @property
    def alive(self) -> bool:
        return self.state is not IndividualState.DEAD


def hospital_positions(n: int, width: float, height: float) -> list[Position]:
    """Fixed hospital sites: quadrant centres for four, otherwise a centred circle."""
    if n == 4:
        return [
            Position(width / 4, height / 4),
            Position(3 * width / 4, height / 4),
            Position(width / 4, 3 * height / 4),
            Position(3 * width / 4, 3 * height / 4),
        ]
    radius = min(35.0, 0.45 * min(width, height))
    cx, cy = width / 2, height / 2
    return [
        Position(cx + radius * math.cos(2 * math.pi * k / n), cy + radius * math.sin(2 * math.pi * k / n))
        for k in range(n)
    ]


@dataclass
class ResourceAssignment:
    doctor_hospitals: list[int] = field(default_factory=list)
    doctor_expertise: list[frozenset] = field(default_factory=list)
    ambulance_hospitals: list[int] = field(default_factory=list)
    appliance_hospitals: list[int] = field(default_factory=list)
    appliance_types: list[int] = field(default_factory=list)

    def per_hospital_counts(self, n_hospitals: int) -> list[tuple[int, int, int]]:
        out = []
        for h in range(n_hospitals):
            out.append((
                self.doctor_hospitals.count(h),
                self.ambulance_hospitals.count(h),
                self.appliance_hospitals.count(h),
            ))
        return out


def distribute_resources(
    stream: Stream,
    counts: dict,
    n_hospitals: int,
    expertise_stream: Optional[Stream] = None,
) -> ResourceAssignment:
    """Assign every doctor, ambulance and appliance to a uniformly drawn hospital.

    Hospital indices and appliance types come from ``stream``; doctor
    expertise comes from ``expertise_stream`` (defaults to ``stream``).
    """
    if n_hospitals < 1:
        raise ValueError(f"n_hospitals must be >= 1, got {n_hospitals}")
    expertise_stream = expertise_stream or stream
    a = ResourceAssignment()
    for _ in range(counts.get("doctors", 0)):
        a.doctor_hospitals.append(stream.randbelow(n_hospitals))
        a.doctor_expertise.append(frozenset(expertise_stream.sample(SEVERE_DISEASES, EXPERTISE_SIZE)))
    for _ in range(counts.get("ambulances", 0)):
        a.ambulance_hospitals.append(stream.randbelow(n_hospitals))
    for _ in range(counts.get("appliances", 0)):
        a.appliance_hospitals.append(stream.randbelow(n_hospitals))
        a.appliance_types.append(stream.choice(SEVERE_DISEASES))
    return a
