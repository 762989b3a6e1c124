"""Request handling under the three organizational strategies.

Each handler drives one ``RequestRecord`` through its lifecycle.  The
simulation loop calls ``progress`` once per tick for every open request;
arrivals and allocations come back through the world's event queue.

* Traditional (TO): random hospital, no knowledge, forwarded on any absent
  resource or missing ambulance.
* Perfect Oracle (PO): nearest hospital whose staff covers the disease,
  redirected when the appliance or ambulance turns out to be unavailable.
* FSO: exception escalated through the community hierarchy; missing roles
  are borrowed from other hospitals through a SON.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .config import StrategyKind
from .domain import Disease, Hospital, IndividualState, Position, travel_time
from .protocol import (
    AMBULANCE,
    MINOR_DOCTOR,
    ActionTemplate,
    EscalationTrace,
    Notification,
    NotificationKind,
    Outcome,
    Role,
    RoleKind,
    Son,
    appliance_role,
    expert_doctor,
    patient,
    publish,
    raise_exception,
)
from .world import EMERGENCY, REGIONAL, World, hospital_node

__all__ = [
    "StrategyKind",
    "RequestOutcome",
    "RequestRecord",
    "ResourceCheck",
    "required_roles",
    "check_hospital_resources",
    "handler_for",
]


class RequestOutcome(enum.Enum):
    PENDING = "pending"
    TREATED = "treated"
    DIED = "died"


class Phase(enum.Enum):
    NEW = "new"
    DISPATCH = "dispatch"  # waiting for an ambulance decision
    TRANSIT = "transit"  # patient travelling to a hospital
    WAITING = "waiting"  # blocked on a busy resource
    ALLOCATING = "allocating"  # FSO: SON formed, waiting for arrivals
    TREATMENT = "treatment"
    DONE = "done"


@dataclass
class RequestRecord:
    id: int
    patient: int
    disease: Disease
    issued_at: int
    treatment_ticks: int
    qt_end: Optional[int] = None
    tt_end: Optional[int] = None
    outcome: RequestOutcome = RequestOutcome.PENDING
    failures: int = 0
    redirects: int = 0
    escalation: Optional[EscalationTrace] = None
    inter_community_son: bool = False
    # handler state
    phase: Phase = Phase.NEW
    hospital: Optional[int] = None
    ambulance: object = None
    son: Optional[Son] = None
    catalog: list = field(default_factory=list)
    cursor: int = 0
    attempts: int = 0
    token: int = 0

    @property
    def qt(self) -> Optional[int]:
        return None if self.qt_end is None else self.qt_end - self.issued_at

    @property
    def open(self) -> bool:
        return self.outcome is RequestOutcome.PENDING


def required_roles(disease: Disease) -> tuple:
    d = disease.id
    if disease.minor:
        return (MINOR_DOCTOR, patient(d))
    return (expert_doctor(d), appliance_role(d), AMBULANCE, patient(d))


@dataclass
class ResourceCheck:
    has_expert_doctor: bool
    has_free_ambulance: bool
    has_appliance: bool
    missing: set
    # roles with no resource on staff at all, busy or not
    absent: set = field(default_factory=set)


def _treating_doctors(h: Hospital, disease: Disease) -> list:
    return [d for d in h.doctors if d.treats(disease)]


def _appliances_for(h: Hospital, disease: Disease) -> list:
    return [a for a in h.appliances if a.disease_type == disease.id]


def check_hospital_resources(h: Hospital, disease: Disease, now: int, need_ambulance: bool = True) -> ResourceCheck:
    """Which of the disease's hospital-side roles can ``h`` fill right now."""
    doctors = _treating_doctors(h, disease)
    has_doctor = any(d.is_free(now) for d in doctors)
    doctor_role = MINOR_DOCTOR if disease.minor else expert_doctor(disease.id)
    missing, absent = set(), set()
    if not has_doctor:
        missing.add(doctor_role)
        if not doctors:
            absent.add(doctor_role)
    has_appliance = has_ambulance = True
    if disease.severe:
        apps = _appliances_for(h, disease)
        has_appliance = any(a.is_free(now) for a in apps)
        if not has_appliance:
            missing.add(appliance_role(disease.id))
            if not apps:
                absent.add(appliance_role(disease.id))
        if need_ambulance:
            has_ambulance = any(a.is_free(now) for a in h.ambulances)
            if not has_ambulance:
                missing.add(AMBULANCE)
                if not h.ambulances:
                    absent.add(AMBULANCE)
    return ResourceCheck(has_doctor, has_ambulance, has_appliance, missing, absent)


def _first_free(resources, now: int):
    for r in resources:
        if r.is_free(now):
            return r
    return None


class Handler:
    kind: StrategyKind

    def progress(self, world: World, rec: RequestRecord) -> None:
        raise NotImplementedError

    # shared lifecycle --------------------------------------------------

    def _patient(self, world: World, rec: RequestRecord):
        return world.individuals[rec.patient]

    def _dispatch(self, world: World, rec: RequestRecord, amb, h: Hospital) -> int:
        """Send ``amb`` from its base to the patient and on to ``h``; returns arrival tick."""
        now = world.clock
        speed = world.config.ambulance_speed
        base = world.hospitals[amb.home_hospital].position
        ppos = self._patient(world, rec).position
        t_pick = now + travel_time(base, ppos, speed)
        t_arr = t_pick + travel_time(ppos, h.position, speed)
        world.hold(amb)
        amb.route = [(now, base), (t_pick, ppos), (t_arr, h.position)]
        rec.ambulance = amb
        if world.log is not None:
            world.log.agent(now, "dispatch", amb.agent_id, patient=self._patient(world, rec).agent_id,
                            hospital=h.agent_id, arrival=t_arr)
        return t_arr

    def _travel(self, world: World, rec: RequestRecord, h: Hospital) -> None:
        """Move the patient (on foot or on board) to ``h`` and schedule the arrival."""
        now = world.clock
        ind = self._patient(world, rec)
        rec.hospital = h.id
        rec.phase = Phase.TRANSIT
        rec.token += 1
        if rec.ambulance is not None:
            src = ind.position
            t_arr = now + travel_time(src, h.position, world.config.ambulance_speed)
            rec.ambulance.route = [(now, src), (t_arr, h.position)]
        else:
            t_arr = now + travel_time(ind.position, h.position, ind.speed)
        world.at(t_arr, _arrive, self, rec, rec.token)

    def _free_ambulance(self, world: World, rec: RequestRecord) -> None:
        amb = rec.ambulance
        if amb is None:
            return
        now = world.clock
        here = amb.position_at(now)
        base = world.hospitals[amb.home_hospital].position
        rec.ambulance = None
        amb.route = [(now, here), (now + travel_time(here, base, world.config.ambulance_speed), base)]
        world.release(amb, amb.route[-1][0])

    def _start_treatment(self, world: World, rec: RequestRecord, h: Hospital) -> None:
        now = world.clock
        ind = self._patient(world, rec)
        ind.position = h.position
        ind.state = IndividualState.IN_TREATMENT
        rec.qt_end = now
        rec.tt_end = now + rec.treatment_ticks
        rec.outcome = RequestOutcome.TREATED
        rec.phase = Phase.TREATMENT
        rec.hospital = h.id
        world.open_requests.remove(rec)
        world.at(rec.tt_end, _end_treatment, rec)
        if world.log is not None:
            world.log.agent(now, "allocated", ind.agent_id, hospital=h.agent_id, qt=rec.qt,
                            failures=rec.failures, redirects=rec.redirects)

    def _allocate_local(self, world: World, rec: RequestRecord, h: Hospital) -> None:
        """TO/PO: take a free treating doctor (and appliance) at ``h``."""
        now = world.clock
        doctor = _first_free(_treating_doctors(h, rec.disease), now)
        held = [doctor]
        if rec.disease.severe:
            held.append(_first_free(_appliances_for(h, rec.disease), now))
        self._free_ambulance(world, rec)
        for r in held:
            world.hold(r)
            world.release(r, now + rec.treatment_ticks)
        self._start_treatment(world, rec, h)

    def on_arrival(self, world: World, rec: RequestRecord) -> None:
        h = world.hospitals[rec.hospital]
        ind = self._patient(world, rec)
        ind.position = h.position
        if rec.ambulance is not None:
            rec.ambulance.route = [(world.clock, h.position)]
        if world.log is not None:
            world.log.agent(world.clock, "arrived", ind.agent_id, hospital=h.agent_id)
        self._at_hospital(world, rec)

    def _at_hospital(self, world: World, rec: RequestRecord) -> None:
        raise NotImplementedError

    def die(self, world: World, rec: RequestRecord) -> None:
        now = world.clock
        ind = self._patient(world, rec)
        if rec.ambulance is not None:
            ind.position = rec.ambulance.position_at(now)
        self._free_ambulance(world, rec)
        rec.outcome = RequestOutcome.DIED
        rec.phase = Phase.DONE
        rec.token += 1
        ind.state = IndividualState.DEAD
        ind.request = None
        world.open_requests.remove(rec)
        if world.log is not None:
            world.log.agent(now, "died", ind.agent_id, issued_at=rec.issued_at, failures=rec.failures)


def _arrive(world: World, handler: Handler, rec: RequestRecord, token: int) -> None:
    if rec.token == token and rec.open:
        handler.on_arrival(world, rec)


def _end_treatment(world: World, rec: RequestRecord) -> None:
    ind = world.individuals[rec.patient]
    ind.state = IndividualState.IDLE
    ind.request = None
    rec.phase = Phase.DONE
    if world.log is not None:
        world.log.agent(world.clock, "treated", ind.agent_id, hospital=f"hospital-{rec.hospital}")


class TraditionalHandler(Handler):
    kind = StrategyKind.TRADITIONAL

    def _other_hospital(self, world: World, current: int) -> Optional[Hospital]:
        others = [h for h in world.hospitals if h.id != current]
        if not others:
            return None
        return world.streams.strategy_choice.choice(others)

    def _fail(self, world: World, rec: RequestRecord, reason: str) -> Optional[Hospital]:
        nxt = self._other_hospital(world, rec.hospital)
        if nxt is None:
            return None
        rec.failures += 1
        if world.log is not None:
            world.log.agent(world.clock, "redirect", self._patient(world, rec).agent_id,
                            hospital=f"hospital-{rec.hospital}", to=nxt.agent_id, reason=reason)
        return nxt

    def progress(self, world: World, rec: RequestRecord) -> None:
        if rec.phase is Phase.NEW:
            rec.hospital = world.streams.strategy_choice.choice(world.hospitals).id
            rec.phase = Phase.DISPATCH
        if rec.phase is Phase.DISPATCH:
            h = world.hospitals[rec.hospital]
            if rec.disease.minor:
                self._travel(world, rec, h)
                return
            amb = _first_free(h.ambulances, world.clock)
            if amb is not None:
                t_arr = self._dispatch(world, rec, amb, h)
                rec.phase = Phase.TRANSIT
                rec.token += 1
                world.at(t_arr, _arrive, self, rec, rec.token)
                return
            nxt = self._fail(world, rec, "no_ambulance")
            if nxt is not None:
                rec.hospital = nxt.id
        elif rec.phase is Phase.WAITING:
            self._at_hospital(world, rec)

    def _at_hospital(self, world: World, rec: RequestRecord) -> None:
        h = world.hospitals[rec.hospital]
        check = check_hospital_resources(h, rec.disease, world.clock, need_ambulance=False)
        if check.absent:
            nxt = self._fail(world, rec, "absent:" + "+".join(sorted(str(r) for r in check.absent)))
            if nxt is not None:
                self._travel(world, rec, nxt)
                return
        if check.missing:
            rec.phase = Phase.WAITING
            return
        self._allocate_local(world, rec, h)


class PerfectOracleHandler(Handler):
    kind = StrategyKind.PERFECT_ORACLE

    def _catalog(self, world: World, rec: RequestRecord) -> list:
        pos = self._patient(world, rec).position
        hs = [h for h in world.hospitals if _treating_doctors(h, rec.disease)]
        hs.sort(key=lambda h: (pos.distance(h.position), h.id))
        return [h.id for h in hs]

    def _redirect(self, world: World, rec: RequestRecord, reason: str) -> bool:
        if len(rec.catalog) < 2:
            return False
        rec.cursor = (rec.cursor + 1) % len(rec.catalog)
        rec.redirects += 1
        if world.log is not None:
            world.log.agent(world.clock, "redirect", self._patient(world, rec).agent_id,
                            hospital=f"hospital-{rec.hospital}", to=f"hospital-{rec.catalog[rec.cursor]}",
                            reason=reason)
        rec.hospital = rec.catalog[rec.cursor]
        return True

    def progress(self, world: World, rec: RequestRecord) -> None:
        if rec.phase is Phase.NEW:
            rec.catalog = self._catalog(world, rec)
            if not rec.catalog:
                # nobody on staff can treat this; the patient waits out the threshold
                rec.phase = Phase.WAITING
                return
            rec.cursor = 0
            rec.hospital = rec.catalog[0]
            rec.phase = Phase.DISPATCH
        if rec.phase is Phase.DISPATCH:
            h = world.hospitals[rec.hospital]
            if rec.disease.minor:
                self._travel(world, rec, h)
                return
            amb = _first_free(h.ambulances, world.clock)
            if amb is not None:
                t_arr = self._dispatch(world, rec, amb, h)
                rec.phase = Phase.TRANSIT
                rec.token += 1
                world.at(t_arr, _arrive, self, rec, rec.token)
                return
            self._redirect(world, rec, "no_ambulance")
        elif rec.phase is Phase.WAITING and rec.catalog:
            self._at_hospital(world, rec)

    def _at_hospital(self, world: World, rec: RequestRecord) -> None:
        h = world.hospitals[rec.hospital]
        now = world.clock
        if _first_free(_treating_doctors(h, rec.disease), now) is None:
            rec.phase = Phase.WAITING
            return
        if rec.disease.severe and _first_free(_appliances_for(h, rec.disease), now) is None:
            if self._redirect(world, rec, "no_appliance"):
                self._travel(world, rec, world.hospitals[rec.hospital])
            else:
                rec.phase = Phase.WAITING
            return
        self._allocate_local(world, rec, h)


class FsoHandler(Handler):
    kind = StrategyKind.FSO

    def _view(self, world: World, treating: Hospital):
        """Candidate order at each community: the treating hospital first, then donors by distance."""
        hier = world.hierarchy
        treating_node = hospital_node(treating.id)
        donors = sorted(
            world.hospitals,
            key=lambda h: (travel_time(treating.position, h.position, world.config.ambulance_speed), h.id),
        )
        donors.sort(key=lambda h: h.id != treating.id)
        hospital_nodes = {hospital_node(h.id) for h in world.hospitals}

        def view(node_id: str) -> list:
            if node_id == treating_node:
                return _availabilities(hier, node_id)
            subtree = hier.subtree(node_id)
            if not hospital_nodes.intersection(subtree):
                return hier.availability_view(node_id)
            out = []
            for h in donors:
                hn = hospital_node(h.id)
                if hn in subtree:
                    out.extend(_availabilities(hier, hn))
            return out

        return view

    def progress(self, world: World, rec: RequestRecord) -> None:
        if rec.phase not in (Phase.NEW, Phase.WAITING):
            return
        now = world.clock
        hier = world.hierarchy
        ind = self._patient(world, rec)
        if rec.phase is Phase.NEW:
            treating = world.nearest_hospital(ind.position)
            rec.hospital = treating.id
            request = Notification(ind.agent_id, NotificationKind.SERVICE_REQUEST, required_roles(rec.disease), now)
            publish(hier, ind.residents, request, log=world.log)
            rec.phase = Phase.WAITING
        treating = world.hospitals[rec.hospital]
        treating_node = hospital_node(treating.id)
        template = ActionTemplate(required_roles(rec.disease), critical=True, id=rec.id)
        template.prefill(patient(rec.disease.id), ind.agent_id)
        log = world.log if rec.attempts == 0 else None
        rec.attempts += 1
        trace = raise_exception(
            hier,
            ind.home_isoc,
            template,
            world.config.flooding_threshold,
            referral=lambda node: treating_node if node == EMERGENCY else None,
            view=self._view(world, treating),
            now=now,
            log=log,
        )
        rec.escalation = trace
        if trace.outcome is Outcome.FAILED:
            return
        hier.withdraw(ind.residents, ind.agent_id, NotificationKind.SERVICE_REQUEST)
        son = world.sons.form_son(hier, world.resources, template, treating_node, now, log=world.log)
        rec.son = son
        rec.inter_community_son = son.inter_community
        rec.phase = Phase.ALLOCATING
        self._schedule(world, rec, template, treating)

    def _schedule(self, world: World, rec: RequestRecord, template: ActionTemplate, treating: Hospital) -> None:
        now = world.clock
        speed = world.config.ambulance_speed
        ind = self._patient(world, rec)
        ready = now
        amb = None
        for role, agent in zip(template.required_roles, template.filled):
            if role.kind is RoleKind.PATIENT:
                continue
            r = world.resources[agent]
            if role.kind is RoleKind.AMBULANCE:
                amb = r
            elif r.home_hospital != treating.id:
                # borrowed staff/devices are driven over to the treating hospital
                ready = max(ready, now + travel_time(world.hospitals[r.home_hospital].position, treating.position, speed))
        if amb is not None:
            base = world.hospitals[amb.home_hospital].position
            t_pick = now + travel_time(base, ind.position, speed)
            t_arr = t_pick + travel_time(ind.position, treating.position, speed)
            amb.route = [(now, base), (t_pick, ind.position), (t_arr, treating.position)]
            rec.ambulance = amb
        else:
            t_arr = now + travel_time(ind.position, treating.position, ind.speed)
        rec.token += 1
        world.at(t_arr, _arrive, self, rec, rec.token)
        world.at(max(ready, t_arr), _fso_allocate, self, rec, rec.token)

    def on_arrival(self, world: World, rec: RequestRecord) -> None:
        h = world.hospitals[rec.hospital]
        ind = self._patient(world, rec)
        ind.position = h.position
        if world.log is not None:
            world.log.agent(world.clock, "arrived", ind.agent_id, hospital=h.agent_id)
        if rec.ambulance is not None:
            rec.son.released.add(rec.ambulance.agent_id)
            self._free_ambulance(world, rec)

    def allocate(self, world: World, rec: RequestRecord) -> None:
        h = world.hospitals[rec.hospital]
        rec.son.dissolves_at = world.clock + rec.treatment_ticks
        self._start_treatment(world, rec, h)
        world.at(rec.son.dissolves_at, _dismiss, rec.son)

    def die(self, world: World, rec: RequestRecord) -> None:
        ind = self._patient(world, rec)
        son = rec.son
        if son is None:
            world.hierarchy.withdraw(ind.residents, ind.agent_id, NotificationKind.SERVICE_REQUEST)
        elif rec.ambulance is not None:
            son.released.add(rec.ambulance.agent_id)
        super().die(world, rec)
        if son is not None:
            son.dissolves_at = world.clock
            _dismiss(world, son)


def _availabilities(hier, node_id: str) -> list:
    return [n for n in hier[node_id].pending_notifications if n.kind is NotificationKind.AVAILABILITY]


def _fso_allocate(world: World, handler: FsoHandler, rec: RequestRecord, token: int) -> None:
    if rec.token == token and rec.open:
        handler.allocate(world, rec)


def _dismiss(world: World, son: Son) -> None:
    released = world.sons.dismiss_son(
        son, world.clock, world.resources, world.home_node, world.hospital_transfer, log=world.log
    )
    for r, free_at in released:
        world.release(r, free_at)


HANDLERS = {
    StrategyKind.TRADITIONAL: TraditionalHandler,
    StrategyKind.PERFECT_ORACLE: PerfectOracleHandler,
    StrategyKind.FSO: FsoHandler,
}


def handler_for(kind: StrategyKind) -> Handler:
    return HANDLERS[kind]()


def handle_request_to(world: World, rec: RequestRecord) -> None:
    TraditionalHandler().progress(world, rec)


def handle_request_po(world: World, rec: RequestRecord) -> None:
    PerfectOracleHandler().progress(world, rec)


def handle_request_fso(world: World, rec: RequestRecord) -> None:
    FsoHandler().progress(world, rec)
