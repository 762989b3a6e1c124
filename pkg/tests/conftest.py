"""Shared fixtures: hand-placed micro-worlds and a resource conservation checker."""

from __future__ import annotations

from dataclasses import dataclass, field

import pytest

from fso_sim.config import StrategyKind, WorldConfig
from fso_sim.domain import HELD, Ambulance, Appliance, Doctor, Hospital, Position
from fso_sim.protocol import NotificationKind
from fso_sim.strategies import Phase
from fso_sim.world import assemble_world


@dataclass
class Site:
    """One hospital of a micro-world: where it is and what it holds."""

    x: float
    y: float
    doctors: list = field(default_factory=list)  # one expertise triple per doctor
    ambulances: int = 0
    appliances: list = field(default_factory=list)  # one disease type per appliance


def micro_world(sites, patients, strategy=StrategyKind.FSO, seed=0, log=None, **overrides):
    """World with explicit hospitals and individuals; no random placement."""
    hospitals, n_doc, n_amb, n_app = [], 0, 0, 0
    for hid, s in enumerate(sites):
        pos = Position(s.x, s.y)
        h = Hospital(hid, pos)
        for exp in s.doctors:
            h.doctors.append(Doctor(n_doc, hid, expertise=frozenset(exp)))
            n_doc += 1
        for _ in range(s.ambulances):
            h.ambulances.append(Ambulance(n_amb, hid, position=pos))
            n_amb += 1
        for t in s.appliances:
            h.appliances.append(Appliance(n_app, hid, disease_type=t))
            n_app += 1
        hospitals.append(h)
    cfg = WorldConfig(
        n_hospitals=len(sites), n_doctors=n_doc, n_ambulances=n_amb, n_appliances=n_app,
        n_individuals=len(patients), strategy=strategy,
    ).with_(**overrides)
    positions = [Position(x, y) for x, y in patients]
    return assemble_world(cfg.validate(), seed, hospitals, positions, log=log)


def run_until_closed(world, rec, limit=2000):
    """Step until ``rec`` is treated or dead (or the limit passes)."""
    from fso_sim.engine import step

    for _ in range(limit):
        if not rec.open and rec.phase is not Phase.TRANSIT:
            return rec
        step(world)
    return rec


def check_conservation(world) -> None:
    """Every resource is free-and-announced once, or held by exactly one owner, or returning."""
    now = world.clock
    hier = world.hierarchy
    offers: dict = {}
    for nid, node in hier.nodes.items():
        for n in node.pending_notifications:
            if n.kind is NotificationKind.AVAILABILITY and n.origin_agent in world.resources:
                offers.setdefault(n.origin_agent, []).append(nid)

    claims: dict = {}
    live = list(world.sons.live.values())
    for son in live:
        for a in son.member_agents - son.released:
            if a in world.resources:
                claims.setdefault(a, []).append(f"son-{son.id}")
    for rec in world.open_requests:
        amb = rec.ambulance
        if amb is not None and world.config.strategy is not StrategyKind.FSO:
            claims.setdefault(amb.agent_id, []).append(f"request-{rec.id}")

    for aid, r in world.resources.items():
        home = world.home_node(r)
        if r.busy_until is None:
            assert offers.get(aid) == [home], f"{aid} free but offered at {offers.get(aid)}"
            assert aid not in claims, f"{aid} free but claimed by {claims[aid]}"
        elif r.busy_until == HELD:
            assert aid not in offers, f"{aid} held but still offered"
            assert len(claims.get(aid, [])) == 1, f"{aid} held by {claims.get(aid)}"
        else:
            # busy with a known end: the return announcement is still pending
            assert r.busy_until >= now, f"{aid} busy_until {r.busy_until} already passed at {now}"
            assert aid not in offers, f"{aid} busy but offered"
            assert aid not in claims, f"{aid} timed-busy but claimed by {claims[aid]}"

    for i, a in enumerate(live):
        for b in live[i + 1:]:
            assert not ((a.member_agents - a.released) & (b.member_agents - b.released)), (
                f"SONs {a.id} and {b.id} share members"
            )


@pytest.fixture
def fig4b_sites():
    """Doctor and ambulance at A; the only matching appliance sits at B."""
    return [Site(25, 50, doctors=[(5, 6, 7)], ambulances=1), Site(75, 50, appliances=[5])]
