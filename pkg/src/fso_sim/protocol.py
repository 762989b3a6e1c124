"""Community hierarchy, notifications, role matching, escalation and SONs.

Matching works like a bank of reservation stations: an ``ActionTemplate``
lists the role slots an action needs and fires once every slot holds an
agent.  Slots are filled from availability notifications visible at a
community (its own plus those of its whole subtree), in arrival order, with
augmenting paths so a template resolves whenever any valid assignment
exists.  Unresolved critical templates escalate to the higher-up.
"""

from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .domain import HELD


class ProtocolError(Exception):
    pass


class MalformedTopology(ProtocolError):
    pass


class UnknownCommunity(ProtocolError):
    pass


class MembershipError(ProtocolError):
    pass


class NonCriticalAction(ProtocolError):
    pass


class DoubleAllocation(ProtocolError):
    pass


class PrematureDismissal(ProtocolError):
    pass


class RoleKind(enum.Enum):
    PATIENT = "patient"
    EXPERT_DOCTOR = "expert_doctor"
    MINOR_DOCTOR = "minor_doctor"
    AMBULANCE = "ambulance"
    APPLIANCE = "appliance"
    WALK_COMPANION = "walk_companion"


@dataclass(frozen=True, slots=True)
class Role:
    kind: RoleKind
    disease: Optional[int] = None

    def __str__(self):
        return self.kind.value if self.disease is None else f"{self.kind.value}({self.disease})"


def patient(d: int) -> Role:
    return Role(RoleKind.PATIENT, d)


def expert_doctor(d: int) -> Role:
    return Role(RoleKind.EXPERT_DOCTOR, d)


def appliance_role(d: int) -> Role:
    return Role(RoleKind.APPLIANCE, d)


MINOR_DOCTOR = Role(RoleKind.MINOR_DOCTOR)
AMBULANCE = Role(RoleKind.AMBULANCE)
WALK_COMPANION = Role(RoleKind.WALK_COMPANION)


class NotificationKind(enum.Enum):
    SERVICE_REQUEST = "service_request"
    AVAILABILITY = "availability"
    STATUS = "status"


@dataclass(slots=True)
class Notification:
    origin_agent: str
    kind: NotificationKind
    roles: tuple
    created_at: int
    # arrival order within one hierarchy, assigned by publish(); FIFO is by this number
    id: int = -1
    community: Optional[str] = None


@dataclass
class ActionTemplate:
    required_roles: tuple
    critical: bool = False
    filled: list = None
    id: int = 0
    # community each filled slot was sourced from (None for pre-filled slots)
    sources: list = None

    def __post_init__(self):
        self.required_roles = tuple(self.required_roles)
        if self.filled is None:
            self.filled = [None] * len(self.required_roles)
        if self.sources is None:
            self.sources = [None] * len(self.required_roles)

    @property
    def resolved(self) -> bool:
        return all(a is not None for a in self.filled)

    def prefill(self, role: Role, agent: str) -> None:
        for i, r in enumerate(self.required_roles):
            if r == role and self.filled[i] is None:
                self.filled[i] = agent
                return
        raise ValueError(f"template {self.id} has no open slot for {role}")

    def source_communities(self) -> set:
        return {s for s in self.sources if s is not None}

    def agents(self) -> list:
        return [a for a in self.filled if a is not None]


@dataclass
class CommunityNode:
    id: str
    level: int
    representative: str
    parent: Optional[str] = None
    children: list = field(default_factory=list)
    member_agents: set = field(default_factory=set)
    pending_notifications: list = field(default_factory=list)
    # templates parked here, re-matched on every publish
    templates: list = field(default_factory=list)


@dataclass(frozen=True)
class NodeSpec:
    id: str
    parent: Optional[str]
    representative: str
    members: tuple = ()


class Outcome(enum.Enum):
    RESOLVED_LOCALLY = "resolved_locally"
    RESOLVED_VIA_SON = "resolved_via_son"
    FAILED = "failed"


@dataclass
class EscalationTrace:
    path: list
    outcome: Outcome

    @property
    def hops(self) -> int:
        return len(self.path) - 1


class Hierarchy:
    def __init__(self, nodes: dict, root: str):
        self.nodes = nodes
        self.root = root
        self._depth = {}
        self._subtree_cache = {}
        stack = [(root, 0)]
        while stack:
            nid, d = stack.pop()
            self._depth[nid] = d
            stack.extend((c, d + 1) for c in self.nodes[nid].children)
        self.height = max(self._depth.values())
        self._seq = itertools.count()

    def next_seq(self) -> int:
        return next(self._seq)

    def __getitem__(self, node_id: str) -> CommunityNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownCommunity(node_id) from None

    def __contains__(self, node_id) -> bool:
        return node_id in self.nodes

    def depth(self, node_id: str) -> int:
        return self._depth[node_id]

    def parent(self, node_id: str) -> Optional[str]:
        return self[node_id].parent

    def subtree(self, node_id: str) -> list:
        cached = self._subtree_cache.get(node_id)
        if cached is None:
            cached, queue = [], deque([node_id])
            while queue:
                nid = queue.popleft()
                cached.append(nid)
                queue.extend(self.nodes[nid].children)
            self._subtree_cache[node_id] = cached
        return cached

    def availability_view(self, node_id: str) -> list:
        """Availability notifications of the whole subtree, oldest first."""
        out = []
        for nid in self.subtree(node_id):
            out.extend(n for n in self.nodes[nid].pending_notifications if n.kind is NotificationKind.AVAILABILITY)
        out.sort(key=lambda n: n.id)
        return out

    def withdraw(self, node_id: str, origin_agent: str, kind=NotificationKind.AVAILABILITY) -> bool:
        pending = self[node_id].pending_notifications
        for i, n in enumerate(pending):
            if n.origin_agent == origin_agent and n.kind is kind:
                del pending[i]
                return True
        return False


def build_hierarchy(topology: Sequence[NodeSpec]) -> Hierarchy:
    nodes = {}
    for spec in topology:
        if spec.id in nodes:
            raise MalformedTopology(f"community {spec.id!r} declared twice")
        nodes[spec.id] = CommunityNode(
            id=spec.id,
            level=0,
            representative=spec.representative,
            parent=spec.parent,
            member_agents=set(spec.members) | {spec.representative},
        )
    roots = [n.id for n in nodes.values() if n.parent is None]
    if len(roots) != 1:
        raise MalformedTopology(f"expected exactly one root, found {sorted(roots)}")
    for node in nodes.values():
        if node.parent is not None:
            if node.parent not in nodes:
                raise MalformedTopology(f"community {node.id!r} has unknown parent {node.parent!r}")
            nodes[node.parent].children.append(node.id)
    # every node must reach the root; anything left over sits on a cycle
    reached, queue = set(), deque(roots)
    while queue:
        nid = queue.popleft()
        reached.add(nid)
        queue.extend(nodes[nid].children)
    if len(reached) != len(nodes):
        raise MalformedTopology(f"cycle through {sorted(set(nodes) - reached)}")
    h = Hierarchy(nodes, roots[0])
    for nid, node in nodes.items():
        node.level = h.height - h.depth(nid)
    return h


def _assign(template: ActionTemplate, candidates: Sequence[Notification]) -> Optional[dict]:
    """Slot index -> candidate index for every open slot, or None.

    Slots are served in order, candidates tried in the order given; an
    augmenting path may move an earlier slot to a later candidate so a
    perfect assignment is found whenever one exists.
    """
    taken = set(template.agents())
    usable = []
    seen_agents = set()
    for c in candidates:
        if c.origin_agent in taken or c.origin_agent in seen_agents:
            continue
        seen_agents.add(c.origin_agent)
        usable.append(c)
    owner: dict = {}
    slot_of: dict = {}

    def augment(slot, visited):
        role = template.required_roles[slot]
        for ci, c in enumerate(usable):
            if ci in visited or role not in c.roles:
                continue
            visited.add(ci)
            if ci not in owner or augment(owner[ci], visited):
                owner[ci] = slot
                slot_of[slot] = ci
                return True
        return False

    for slot, agent in enumerate(template.filled):
        if agent is None and not augment(slot, set()):
            return None
    return {slot: usable[ci] for slot, ci in slot_of.items()}


def _consume(hierarchy: Hierarchy, template: ActionTemplate, assignment: dict) -> None:
    for slot, n in assignment.items():
        template.filled[slot] = n.origin_agent
        template.sources[slot] = n.community
        hierarchy[n.community].pending_notifications.remove(n)


def match(
    hierarchy: Hierarchy,
    node_id: str,
    templates: Iterable[ActionTemplate],
    candidates: Optional[Sequence[Notification]] = None,
) -> list:
    """Fill templates in order from the availabilities visible at ``node_id``.

    Returns the templates that became resolved; the notifications they used
    are removed from their communities.
    """
    resolved = []
    for t in templates:
        if t.resolved:
            continue
        view = hierarchy.availability_view(node_id) if candidates is None else [
            n for n in candidates if n.community is not None and n in hierarchy[n.community].pending_notifications
        ]
        assignment = _assign(t, view)
        if assignment is not None:
            _consume(hierarchy, t, assignment)
            resolved.append(t)
    return resolved


@dataclass
class Receipt:
    node: str
    notification: int
    resolved: list


def publish(hierarchy: Hierarchy, node_id: str, n: Notification, log=None) -> Receipt:
    node = hierarchy[node_id]
    if n.origin_agent not in node.member_agents:
        raise MembershipError(f"{n.origin_agent} is not a member of {node_id}")
    n.community = node_id
    n.id = hierarchy.next_seq()
    node.pending_notifications.append(n)
    if log is not None:
        log.event(n.created_at, "publish", node_id, agent=n.origin_agent, kind=n.kind.value,
                  roles="+".join(str(r) for r in n.roles))
    resolved = match(hierarchy, node_id, node.templates) if node.templates else []
    if resolved:
        node.templates = [t for t in node.templates if not t.resolved]
    return Receipt(node_id, n.id, resolved)


def raise_exception(
    hierarchy: Hierarchy,
    start: str,
    template: ActionTemplate,
    flooding_threshold: int,
    referral: Optional[Callable[[str], Optional[str]]] = None,
    view: Optional[Callable[[str], Sequence[Notification]]] = None,
    now: int = 0,
    log=None,
) -> EscalationTrace:
    """Carry an unresolved critical template up the hierarchy until it resolves.

    ``referral`` lets a representative direct the request to a specific
    community instead of its parent; ``view`` overrides the candidate order
    at a node.  On success the template is filled in place.
    """
    if not template.critical:
        raise NonCriticalAction(f"template {template.id} is not critical")
    hierarchy[start]
    path = [start]
    node = start
    while True:
        candidates = hierarchy.availability_view(node) if view is None else view(node)
        assignment = _assign(template, candidates)
        if assignment is not None:
            _consume(hierarchy, template, assignment)
            outcome = Outcome.RESOLVED_VIA_SON if len(template.source_communities()) >= 2 else Outcome.RESOLVED_LOCALLY
            if log is not None:
                log.event(now, "resolve", node, template=template.id, outcome=outcome.value, hops=len(path) - 1)
            return EscalationTrace(path, outcome)
        nxt = referral(node) if referral is not None else None
        if nxt is None:
            nxt = hierarchy.parent(node)
        if nxt is None or nxt in path or len(path) > flooding_threshold:
            if log is not None:
                log.event(now, "fail", node, template=template.id, hops=len(path) - 1)
            return EscalationTrace(path, Outcome.FAILED)
        if log is not None:
            log.event(now, "escalate", node, template=template.id, to=nxt)
        path.append(nxt)
        node = nxt


@dataclass
class Son:
    member_agents: set
    source_communities: set
    coordinator: str
    action: int
    created_at: int
    treating_community: str
    dissolves_at: Optional[int] = None
    id: int = 0
    # members whose part ended early (e.g. an ambulance after delivery)
    released: set = field(default_factory=set)

    @property
    def inter_community(self) -> bool:
        return len(self.source_communities) >= 2


def elect_coordinator(hierarchy: Hierarchy, members: set, source_communities: set, treating: str) -> str:
    """The treating hospital's representative coordinates the SON."""
    if not members:
        raise ProtocolError("cannot elect a coordinator for an empty SON")
    return hierarchy[treating].representative


class SonRegistry:
    def __init__(self):
        self.live: dict = {}
        self._ids = itertools.count()
        self.formed_inter = 0
        self.formed_infra = 0

    def form_son(
        self,
        hierarchy: Hierarchy,
        resources: Mapping,
        template: ActionTemplate,
        treating: str,
        now: int,
        log=None,
    ) -> Son:
        if not template.resolved:
            raise ProtocolError(f"template {template.id} is not resolved")
        members = set(template.agents())
        held = [resources[a] for a in sorted(members) if a in resources]
        busy = [r.agent_id for r in held if not r.is_free(now)]
        if busy:
            raise DoubleAllocation(f"already allocated: {', '.join(busy)}")
        for son in self.live.values():
            overlap = (son.member_agents - son.released) & members
            if overlap:
                raise DoubleAllocation(f"overlaps SON {son.id}: {sorted(overlap)}")
        for r in held:
            r.busy_until = HELD
        sources = template.source_communities()
        son = Son(
            member_agents=members,
            source_communities=sources,
            coordinator=elect_coordinator(hierarchy, members, sources, treating),
            action=template.id,
            created_at=now,
            treating_community=treating,
            id=next(self._ids),
        )
        self.live[son.id] = son
        if son.inter_community:
            self.formed_inter += 1
        else:
            self.formed_infra += 1
        if log is not None:
            log.event(now, "form_son", treating, son=son.id, members="+".join(sorted(members)),
                      sources="+".join(sorted(sources)), coordinator=son.coordinator)
        return son

    def dismiss_son(
        self,
        son: Son,
        now: int,
        resources: Mapping,
        home_of: Callable[[object], str],
        transfer_time: Callable[[str, str], int],
        log=None,
    ) -> list:
        """Release every member still held; borrowed ones travel home first.

        Returns ``(resource, free_at)`` pairs.
        """
        if son.dissolves_at is None or now < son.dissolves_at:
            raise PrematureDismissal(f"SON {son.id} dissolves at {son.dissolves_at}, now {now}")
        released = []
        for a in sorted(son.member_agents - son.released):
            r = resources.get(a)
            if r is None:
                continue
            home = home_of(r)
            free_at = now if home == son.treating_community else now + transfer_time(son.treating_community, home)
            r.busy_until = free_at
            released.append((r, free_at))
        son.released |= son.member_agents
        del self.live[son.id]
        if log is not None:
            log.event(now, "dismiss_son", son.treating_community, son=son.id,
                      returning="+".join(r.agent_id for r, t in released if t > now) or "none")
        return released
