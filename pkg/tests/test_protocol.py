import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fso_sim.config import WorldConfig
from fso_sim.domain import HELD, Appliance, Doctor, Position, travel_time
from fso_sim.events import EventLog
from fso_sim.protocol import (
    AMBULANCE,
    MINOR_DOCTOR,
    ActionTemplate,
    DoubleAllocation,
    MalformedTopology,
    MembershipError,
    NodeSpec,
    NonCriticalAction,
    Notification,
    NotificationKind,
    Outcome,
    PrematureDismissal,
    ProtocolError,
    SonRegistry,
    UnknownCommunity,
    appliance_role,
    build_hierarchy,
    elect_coordinator,
    expert_doctor,
    match,
    patient,
    publish,
    raise_exception,
)
from fso_sim.world import EMERGENCY, REGIONAL, ROOT, build_world, hospital_node

from conftest import Site, micro_world


def avail(agent, *roles, t=0):
    return Notification(agent, NotificationKind.AVAILABILITY, roles, t)


def flat(members=()):
    """root with one community ``c`` holding ``members``."""
    return build_hierarchy([NodeSpec("root", None, "root:rep"), NodeSpec("c", "root", "c:rep", tuple(members))])


def severe_template(d, tid=0):
    t = ActionTemplate((expert_doctor(d), appliance_role(d), AMBULANCE, patient(d)), critical=True, id=tid)
    t.prefill(patient(d), "individual-0")
    return t


def to_hospital(world, h=0):
    node = hospital_node(h)
    return lambda n: node if n == EMERGENCY else None


# ---- hierarchy --------------------------------------------------------------


def test_default_tree_shape():
    w = build_world(WorldConfig(), 1)
    hier = w.hierarchy
    assert hier.root == ROOT and hier.height == 3
    assert sorted(hier[REGIONAL].children) == [hospital_node(i) for i in range(4)]
    assert {hier[n].level for n in hier.nodes} == {0, 1, 2, 3}
    assert hier[ROOT].level == 3
    assert all(hier[i.home_isoc].level == 0 for i in w.individuals)
    assert all(hier[i.home_isoc].parent == i.residents for i in w.individuals)
    assert len(hier[EMERGENCY].children) == 2


def test_minimal_world_chain():
    cfg = WorldConfig(n_hospitals=1, n_doctors=0, n_ambulances=0, n_appliances=0, n_individuals=1, n_residents=1)
    hier = build_world(cfg, 1).hierarchy
    path = ["isoc:individual-0"]
    while hier.parent(path[-1]) is not None:
        path.append(hier.parent(path[-1]))
    assert path == ["isoc:individual-0", "residents-0", EMERGENCY, ROOT]
    assert hier.height <= 4


@pytest.mark.parametrize(
    "specs",
    [
        [NodeSpec("r", None, "x"), NodeSpec("a", "b", "x"), NodeSpec("b", "a", "x")],
        [NodeSpec("r", None, "x"), NodeSpec("a", "r", "x"), NodeSpec("a", "r", "y")],
        [NodeSpec("r", None, "x"), NodeSpec("a", "ghost", "x")],
        [NodeSpec("r", None, "x"), NodeSpec("s", None, "x")],
        [],
    ],
    ids=["cycle", "duplicate", "orphan", "two-roots", "empty"],
)
def test_malformed_topologies(specs):
    with pytest.raises(MalformedTopology):
        build_hierarchy(specs)


def test_unknown_community():
    with pytest.raises(UnknownCommunity):
        flat()["nowhere"]


# ---- publish / match --------------------------------------------------------


def test_publish_stores_at_hospital():
    w = build_world(WorldConfig(), 1)
    d = w.doctors[0]
    node = w.hierarchy[w.home_node(d)]
    assert [n.origin_agent for n in node.pending_notifications].count(d.agent_id) == 1


def test_service_request_stored_at_residents():
    w = build_world(WorldConfig(n_individuals=5), 1)
    ind = w.individuals[3]
    req = Notification(ind.agent_id, NotificationKind.SERVICE_REQUEST, (patient(5),), 0)
    receipt = publish(w.hierarchy, ind.residents, req)
    assert receipt.node == ind.residents
    assert req in w.hierarchy[ind.residents].pending_notifications


def test_publish_rejects_non_member():
    with pytest.raises(MembershipError):
        publish(flat(["doctor-1"]), "c", avail("doctor-9", MINOR_DOCTOR))


def test_publish_assigns_increasing_ids():
    h = flat(["a", "b"])
    ids = [publish(h, "c", avail(x, MINOR_DOCTOR)).notification for x in ("a", "b")]
    assert ids[0] < ids[1]


def test_match_fills_both_slots():
    h = flat(["doctor-1", "appliance-1"])
    publish(h, "c", avail("doctor-1", expert_doctor(5)))
    publish(h, "c", avail("appliance-1", appliance_role(5)))
    t = ActionTemplate((expert_doctor(5), appliance_role(5)))
    assert match(h, "c", [t]) == [t]
    assert t.filled == ["doctor-1", "appliance-1"]
    assert h["c"].pending_notifications == []


def test_match_is_exact_tag():
    h = flat(["doctor-1"])
    publish(h, "c", avail("doctor-1", expert_doctor(6)))
    t = ActionTemplate((expert_doctor(5),))
    assert match(h, "c", [t]) == []
    assert not t.resolved and len(h["c"].pending_notifications) == 1


def test_one_doctor_two_templates_fifo():
    # every order of the two templates: exactly one resolves, the earlier one, never both
    for order in itertools.permutations([0, 1]):
        h = flat(["doctor-1"])
        publish(h, "c", avail("doctor-1", expert_doctor(5)))
        ts = [ActionTemplate((expert_doctor(5),), id=i) for i in range(2)]
        ordered = [ts[i] for i in order]
        resolved = match(h, "c", ordered)
        assert resolved == [ordered[0]]
        assert sum(t.resolved for t in ts) == 1


def test_match_oldest_notification_first():
    h = flat(["doctor-1", "doctor-2"])
    publish(h, "c", avail("doctor-2", MINOR_DOCTOR))
    publish(h, "c", avail("doctor-1", MINOR_DOCTOR))
    t = ActionTemplate((MINOR_DOCTOR,))
    match(h, "c", [t])
    assert t.filled == ["doctor-2"]


def test_augmenting_path_finds_assignment():
    # greedy FIFO would hand doctor-1 to the first slot and strand the second
    h = flat(["doctor-1", "doctor-2"])
    publish(h, "c", avail("doctor-1", expert_doctor(5), expert_doctor(6)))
    publish(h, "c", avail("doctor-2", expert_doctor(5)))
    t = ActionTemplate((expert_doctor(5), expert_doctor(6)))
    assert match(h, "c", [t]) == [t]
    assert t.filled == ["doctor-2", "doctor-1"]


def test_agent_never_fills_two_slots():
    h = flat(["doctor-1"])
    publish(h, "c", avail("doctor-1", expert_doctor(5), expert_doctor(6)))
    publish(h, "c", avail("doctor-1", expert_doctor(5), expert_doctor(6)))
    t = ActionTemplate((expert_doctor(5), expert_doctor(6)))
    assert match(h, "c", [t]) == []


def test_parked_template_fires_on_publish():
    h = flat(["doctor-1"])
    t = ActionTemplate((MINOR_DOCTOR,))
    h["c"].templates.append(t)
    receipt = publish(h, "c", avail("doctor-1", MINOR_DOCTOR))
    assert receipt.resolved == [t] and h["c"].templates == []


roles_pool = [MINOR_DOCTOR, AMBULANCE, expert_doctor(5), expert_doctor(6), appliance_role(5)]


@st.composite
def offers_and_template(draw):
    offers = draw(st.lists(st.lists(st.sampled_from(roles_pool), min_size=1, max_size=3, unique=True), max_size=6))
    need = draw(st.lists(st.sampled_from(roles_pool), min_size=1, max_size=3))
    extra = draw(st.lists(st.sampled_from(roles_pool), min_size=1, max_size=3, unique=True))
    return offers, need, extra


def _resolves(offers, need):
    names = [f"agent-{i}" for i in range(len(offers))]
    h = flat(names)
    for name, roles in zip(names, offers):
        publish(h, "c", avail(name, *roles))
    t = ActionTemplate(tuple(need))
    return bool(match(h, "c", [t])), t.filled


def _brute_force(offers, need):
    for combo in itertools.permutations(range(len(offers)), len(need)):
        if all(r in offers[i] for r, i in zip(need, combo)):
            return True
    return False


@given(offers_and_template())
def test_match_complete_and_monotone(case):
    offers, need, extra = case
    ok, filled = _resolves(offers, need)
    # oracle: brute-force search over every assignment
    assert ok == _brute_force(offers, need)
    if ok:
        assert len(set(filled)) == len(filled)
        assert _resolves(offers + [extra], need)[0]


@given(offers_and_template())
def test_match_deterministic(case):
    offers, need, _ = case
    assert _resolves(offers, need) == _resolves(offers, need)


# ---- escalation -------------------------------------------------------------


def test_fig4a_resolves_locally():
    w = micro_world([Site(25, 50, doctors=[(5, 6, 7)], ambulances=1, appliances=[5])], [(25, 40)])
    t = severe_template(5)
    trace = raise_exception(w.hierarchy, "isoc:individual-0", t, 8, referral=to_hospital(w))
    assert trace.path == ["isoc:individual-0", "residents-0", EMERGENCY, "hospital-0"]
    assert trace.outcome is Outcome.RESOLVED_LOCALLY and trace.hops == 3


def test_fig4b_resolves_via_son(fig4b_sites):
    w = micro_world(fig4b_sites, [(25, 40)])
    t = severe_template(5)
    trace = raise_exception(w.hierarchy, "isoc:individual-0", t, 8, referral=to_hospital(w))
    assert trace.path[-2:] == ["hospital-0", REGIONAL]
    assert trace.outcome is Outcome.RESOLVED_VIA_SON
    assert t.source_communities() == {"hospital-0", "hospital-1"}


def test_no_expert_anywhere_fails_after_root():
    w = micro_world([Site(25, 50, doctors=[(4, 6, 7)], ambulances=1, appliances=[5])], [(25, 40)])
    t = severe_template(5)
    trace = raise_exception(w.hierarchy, "isoc:individual-0", t, 10)
    assert trace.outcome is Outcome.FAILED and trace.path[-1] == ROOT
    assert not t.resolved


def test_flooding_threshold_stops_early():
    w = micro_world([Site(25, 50)], [(25, 40)])
    trace = raise_exception(w.hierarchy, "isoc:individual-0", severe_template(5), 1)
    assert trace.outcome is Outcome.FAILED and trace.hops == 1


def test_zero_threshold_only_tries_start():
    w = micro_world([Site(25, 50)], [(25, 40)])
    trace = raise_exception(w.hierarchy, "isoc:individual-0", severe_template(5), 0)
    assert trace.path == ["isoc:individual-0"] and trace.outcome is Outcome.FAILED


def test_non_critical_rejected():
    w = micro_world([Site(25, 50)], [(25, 40)])
    with pytest.raises(NonCriticalAction):
        raise_exception(w.hierarchy, "isoc:individual-0", ActionTemplate((MINOR_DOCTOR,)), 8)


def test_escalation_log_lines():
    log = EventLog()
    w = micro_world([Site(25, 50, doctors=[(5, 6, 7)])], [(25, 40)])
    t = ActionTemplate((MINOR_DOCTOR, patient(1)), critical=True, id=3)
    t.prefill(patient(1), "individual-0")
    raise_exception(w.hierarchy, "isoc:individual-0", t, 8, now=4, log=log)
    assert log.lines[0] == "tick=4 event=escalate node=isoc:individual-0 detail=template=3,to=residents-0"
    assert log.lines[-1] == "tick=4 event=resolve node=root detail=template=3,outcome=resolved_locally,hops=3"


# ---- SONs -------------------------------------------------------------------


def _resolved(w, d=5):
    t = severe_template(d)
    raise_exception(w.hierarchy, "isoc:individual-0", t, 8, referral=to_hospital(w))
    return t


def test_single_hospital_son_is_infra():
    w = micro_world([Site(25, 50, doctors=[(5, 6, 7)], ambulances=1, appliances=[5])], [(25, 40)])
    reg = SonRegistry()
    son = reg.form_son(w.hierarchy, w.resources, _resolved(w), "hospital-0", 0)
    assert not son.inter_community and reg.formed_infra == 1 and reg.formed_inter == 0
    assert all(r.busy_until == HELD for r in w.resources.values())
    assert son.coordinator == "hospital-0"


def test_two_hospital_son_is_inter(fig4b_sites):
    w = micro_world(fig4b_sites, [(25, 40)])
    reg = SonRegistry()
    son = reg.form_son(w.hierarchy, w.resources, _resolved(w), "hospital-0", 0)
    assert son.inter_community and reg.formed_inter == 1
    assert son.source_communities == {"hospital-0", "hospital-1"}


def test_form_son_busy_member(fig4b_sites):
    w = micro_world(fig4b_sites, [(25, 40)])
    t = _resolved(w)
    w.resources["appliance-0"].busy_until = 50
    with pytest.raises(DoubleAllocation):
        SonRegistry().form_son(w.hierarchy, w.resources, t, "hospital-0", 0)


def test_form_son_overlap_with_live(fig4b_sites):
    w = micro_world(fig4b_sites, [(25, 40)])
    reg = SonRegistry()
    t = _resolved(w)
    reg.form_son(w.hierarchy, w.resources, t, "hospital-0", 0)
    for r in w.resources.values():
        r.busy_until = None
    with pytest.raises(DoubleAllocation):
        reg.form_son(w.hierarchy, w.resources, t, "hospital-0", 0)


def test_form_son_needs_resolved():
    w = micro_world([Site(25, 50)], [(25, 40)])
    with pytest.raises(ProtocolError):
        SonRegistry().form_son(w.hierarchy, w.resources, severe_template(5), "hospital-0", 0)


def test_elect_coordinator():
    w = micro_world([Site(25, 50), Site(75, 50)], [(25, 40)])
    assert elect_coordinator(w.hierarchy, {"doctor-0", "appliance-0"}, {"hospital-0", "hospital-1"}, "hospital-0") == "hospital-0"
    assert elect_coordinator(w.hierarchy, {"doctor-0"}, {"hospital-1"}, "hospital-1") == "hospital-1"
    with pytest.raises(ProtocolError):
        elect_coordinator(w.hierarchy, set(), set(), "hospital-0")


def test_dismiss_returns_borrowed_after_transfer(fig4b_sites):
    w = micro_world(fig4b_sites, [(25, 40)])
    reg = SonRegistry()
    son = reg.form_son(w.hierarchy, w.resources, _resolved(w), "hospital-0", 0)
    son.dissolves_at = 40
    released = dict((r.agent_id, t) for r, t in reg.dismiss_son(son, 40, w.resources, w.home_node, w.hospital_transfer))
    # oracle: 50 cells between the hospitals at 2 cells/tick
    assert released["appliance-0"] == 40 + travel_time(Position(75, 50), Position(25, 50), 2.0) == 65
    assert released["doctor-0"] == released["ambulance-0"] == 40
    assert son.id not in reg.live


def test_dismiss_single_hospital_frees_now():
    w = micro_world([Site(25, 50, doctors=[(5, 6, 7)], ambulances=1, appliances=[5])], [(25, 40)])
    reg = SonRegistry()
    son = reg.form_son(w.hierarchy, w.resources, _resolved(w), "hospital-0", 0)
    son.dissolves_at = 30
    assert {t for _, t in reg.dismiss_son(son, 30, w.resources, w.home_node, w.hospital_transfer)} == {30}


def test_premature_dismissal(fig4b_sites):
    w = micro_world(fig4b_sites, [(25, 40)])
    reg = SonRegistry()
    son = reg.form_son(w.hierarchy, w.resources, _resolved(w), "hospital-0", 0)
    with pytest.raises(PrematureDismissal):
        reg.dismiss_son(son, 10, w.resources, w.home_node, w.hospital_transfer)
    son.dissolves_at = 20
    with pytest.raises(PrematureDismissal):
        reg.dismiss_son(son, 19, w.resources, w.home_node, w.hospital_transfer)


def test_released_member_not_returned_again(fig4b_sites):
    w = micro_world(fig4b_sites, [(25, 40)])
    reg = SonRegistry()
    son = reg.form_son(w.hierarchy, w.resources, _resolved(w), "hospital-0", 0)
    son.released.add("ambulance-0")
    son.dissolves_at = 5
    names = {r.agent_id for r, _ in reg.dismiss_son(son, 5, w.resources, w.home_node, w.hospital_transfer)}
    assert "ambulance-0" not in names


@settings(max_examples=50)
@given(st.lists(st.booleans(), min_size=4, max_size=4))
def test_inter_iff_two_hospitals(where):
    # each required resource placed at A (False) or B (True); both hospitals carry a spare patientless ambulance
    sites = [Site(25, 50), Site(75, 50)]
    kinds = ["doctor", "appliance", "ambulance"]
    for kind, at_b in zip(kinds, where):
        s = sites[int(at_b)]
        if kind == "doctor":
            s.doctors.append((5, 6, 7))
        elif kind == "appliance":
            s.appliances.append(5)
        else:
            s.ambulances += 1
    w = micro_world(sites, [(25, 40)])
    t = _resolved(w)
    used = {w.home_node(w.resources[a]) for a in t.agents() if a in w.resources}
    trace_inter = len(t.source_communities()) >= 2
    assert trace_inter == (len(used) >= 2)
