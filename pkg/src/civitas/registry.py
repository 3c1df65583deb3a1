"""Goal-oriented registry of decision-making modules.

Modules declare their hierarchy level, goals, capabilities and ports;
their internal decision models stay opaque.  Links between registered
modules classify into four interaction kinds: same-level data exchange is
Collaborative unless the endpoints carry opposing goals on a shared
quantity (Competing); downward goal-setting is Guiding and upward
capability reporting is Enabling, both restricted to adjacent levels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .textfmt import ParseError, parse_sections


class Direction(enum.Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"
    HOLD = "hold"


class LinkRole(enum.Enum):
    DATA = "data"
    GOAL_SETTING = "goal-setting"
    CAPABILITY_REPORT = "capability-report"


class InteractionKind(enum.Enum):
    COLLABORATIVE = "Collaborative"
    COMPETING = "Competing"
    GUIDING = "Guiding"
    ENABLING = "Enabling"


@dataclass(frozen=True)
class Goal:
    quantity: str
    direction: Direction
    bound: float | None = None


@dataclass(frozen=True)
class Capability:
    quantity: str
    limit: float


@dataclass(frozen=True)
class DmModule:
    id: str
    level: int
    goals: tuple[Goal, ...] = ()
    capabilities: tuple[Capability, ...] = ()
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()

    def __post_init__(self):
        ports = list(self.inputs) + list(self.outputs)
        if len(set(ports)) != len(ports):
            raise ValueError(f"module {self.id}: port names must be unique")


class ClassificationError(ValueError):
    """The link is not expressible in the interaction taxonomy."""


@dataclass(frozen=True)
class Interaction:
    kind: InteractionKind
    src: tuple[str, str]  # (module id, port)
    dst: tuple[str, str]
    role: LinkRole


def goals_conflict(a: DmModule, b: DmModule) -> bool:
    """Opposing max/min goals on the same quantity name; hold never conflicts."""
    opposing = {(Direction.MAXIMIZE, Direction.MINIMIZE),
                (Direction.MINIMIZE, Direction.MAXIMIZE)}
    for ga in a.goals:
        for gb in b.goals:
            if ga.quantity == gb.quantity and (ga.direction, gb.direction) in opposing:
                return True
    return False


class DmRegistry:
    """Startup-built, then effectively immutable module/link registry."""

    def __init__(self):
        self._modules: dict[str, DmModule] = {}
        self._links: list[Interaction] = []

    def register(self, module: DmModule) -> str:
        if module.id in self._modules:
            raise ValueError(f"duplicate module id {module.id!r}")
        self._modules[module.id] = module
        return module.id

    def module(self, module_id: str) -> DmModule:
        if module_id not in self._modules:
            raise KeyError(f"unknown module {module_id!r}")
        return self._modules[module_id]

    def modules(self) -> list[DmModule]:
        return list(self._modules.values())

    def classify(self, src_id: str, dst_id: str, role: LinkRole) -> InteractionKind:
        """Interaction kind of a src-output -> dst-input link."""
        src, dst = self.module(src_id), self.module(dst_id)
        if src.level == dst.level:
            if role is not LinkRole.DATA:
                raise ClassificationError(
                    f"{role.value} link between same-level modules {src_id}/{dst_id}")
            return (InteractionKind.COMPETING if goals_conflict(src, dst)
                    else InteractionKind.COLLABORATIVE)
        if role is LinkRole.GOAL_SETTING:
            if src.level != dst.level + 1:
                raise ClassificationError(
                    f"goal-setting link must step one level down "
                    f"({src_id} level {src.level} -> {dst_id} level {dst.level})")
            return InteractionKind.GUIDING
        if role is LinkRole.CAPABILITY_REPORT:
            if src.level != dst.level - 1:
                raise ClassificationError(
                    f"capability report must step one level up "
                    f"({src_id} level {src.level} -> {dst_id} level {dst.level})")
            return InteractionKind.ENABLING
        raise ClassificationError(
            f"data link across levels {src.level}->{dst.level} is not classifiable")

    def wire(self, src: tuple[str, str], dst: tuple[str, str],
             role: LinkRole) -> Interaction:
        """Record a classified link between existing ports."""
        src_mod, src_port = src
        dst_mod, dst_port = dst
        if src_port not in self.module(src_mod).outputs:
            raise ClassificationError(f"{src_mod} has no output port {src_port!r}")
        if dst_port not in self.module(dst_mod).inputs:
            raise ClassificationError(f"{dst_mod} has no input port {dst_port!r}")
        kind = self.classify(src_mod, dst_mod, role)
        link = Interaction(kind, src, dst, role)
        self._links.append(link)
        return link

    def links(self) -> list[Interaction]:
        return list(self._links)

    def link_kind(self, src_mod: str, dst_mod: str) -> InteractionKind | None:
        for link in self._links:
            if link.src[0] == src_mod and link.dst[0] == dst_mod:
                return link.kind
        return None


def load_registry(text: str) -> DmRegistry:
    """Build a registry from its structured-text description."""
    reg = DmRegistry()
    links = []
    for sec in parse_sections(text):
        if sec.kind == "module":
            goals = []
            for item in sec.get_list("goals"):
                parts = item.split(":")
                if len(parts) not in (2, 3):
                    raise ParseError(f"[module {sec.name}]: bad goal {item!r}")
                bound = float(parts[2]) if len(parts) == 3 else None
                goals.append(Goal(parts[0], Direction(parts[1]), bound))
            caps = []
            for item in sec.get_list("capabilities"):
                parts = item.split(":")
                if len(parts) != 2:
                    raise ParseError(f"[module {sec.name}]: bad capability {item!r}")
                caps.append(Capability(parts[0], float(parts[1])))
            reg.register(DmModule(
                sec.name, sec.get_int("level"), tuple(goals), tuple(caps),
                tuple(sec.get_list("inputs")), tuple(sec.get_list("outputs"))))
        elif sec.kind == "link":
            src = sec.require("src").split(".")
            dst = sec.require("dst").split(".")
            if len(src) != 2 or len(dst) != 2:
                raise ParseError(f"[link {sec.name}]: endpoints must be module.port")
            links.append(((src[0], src[1]), (dst[0], dst[1]),
                          LinkRole(sec.require("role"))))
        else:
            raise ParseError(f"unknown section kind {sec.kind!r} in registry file")
    for src, dst, role in links:
        reg.wire(src, dst, role)
    return reg


def classification_report(reg: DmRegistry) -> str:
    lines = ["src,dst,role,kind"]
    for link in reg.links():
        lines.append(f"{link.src[0]},{link.dst[0]},{link.role.value},{link.kind.value}")
    return "\n".join(lines) + "\n"
