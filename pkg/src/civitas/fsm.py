"""Three-state cyclic traffic signal controllers.

A signal dwells in Green, Yellow and Red for fixed split times whose sum
is the cycle time; the pattern repeats every cycle, optionally delayed by
an offset relative to a reference clock.  Zone coordinators impose
deadline constraints of the form "be Green at t=12 into the cycle";
because the yellow dwell stays fixed, satisfying a constraint set reduces
to a one-dimensional search over the Green/Red trade-off.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

GREEN_MIN = 1.0
RED_MIN = 1.0
YELLOW_MIN = 3.0

# Open interval ends are shrunk by this much when intersecting feasible
# green-split ranges.
_EDGE_EPS = 1e-9

# Splits applied together with the safe implementation mode when a
# controller degrades (default behavior on non-convergence).
FALLBACK_SPLITS = (30.0, 5.0, 25.0)


class SignalState(enum.Enum):
    GREEN = "Green"
    YELLOW = "Yellow"
    RED = "Red"

    def admits(self, direction: int) -> bool:
        """Whether traffic along `direction` may cross under this state.

        The state is the colour shown to direction 2: Green lets
        direction-2 traffic move, Red lets direction-1 traffic move,
        Yellow admits nobody.
        """
        if self is SignalState.GREEN:
            return direction == 2
        if self is SignalState.RED:
            return direction == 1
        return False


CYCLIC_ORDER = (SignalState.GREEN, SignalState.YELLOW, SignalState.RED)


def admitting_state(direction: int) -> SignalState:
    if direction == 2:
        return SignalState.GREEN
    if direction == 1:
        return SignalState.RED
    raise ValueError(f"unknown signal direction {direction!r}")


@dataclass(frozen=True)
class SignalFsm:
    """Cyclic Green->Yellow->Red controller with split/cycle/offset times.

    `anchor` is the state occupying the start of the cycle frame; the two
    other states follow in the fixed cyclic order.  `elapsed` is the
    absolute time the controller has been advanced to.
    """

    green: float
    yellow: float
    red: float
    offset: float = 0.0
    anchor: SignalState = SignalState.GREEN
    elapsed: float = 0.0

    def __post_init__(self):
        for name in ("green", "yellow", "red"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} split must be > 0")
        if not 0 <= self.offset < self.cycle:
            raise ValueError(f"offset {self.offset} outside [0, {self.cycle})")

    @property
    def cycle(self) -> float:
        return self.green + self.yellow + self.red

    def split(self, state: SignalState) -> float:
        return {SignalState.GREEN: self.green,
                SignalState.YELLOW: self.yellow,
                SignalState.RED: self.red}[state]

    def layout(self) -> tuple[tuple[SignalState, float, float], ...]:
        """(state, start, end) regions covering one cycle from the anchor."""
        start_idx = CYCLIC_ORDER.index(self.anchor)
        regions = []
        t = 0.0
        for k in range(3):
            state = CYCLIC_ORDER[(start_idx + k) % 3]
            regions.append((state, t, t + self.split(state)))
            t += self.split(state)
        return tuple(regions)

    def phase_position(self, t: float) -> float:
        """Position within the cycle frame (seconds past cycle start)."""
        return (t - self.offset) % self.cycle

    def state_at(self, t: float) -> SignalState:
        p = self.phase_position(t)
        for state, a, b in self.layout():
            if a <= p < b:
                return state
        return self.layout()[-1][0]  # p == cycle cannot happen; guard rounding

    @property
    def state(self) -> SignalState:
        return self.state_at(self.elapsed)

    @property
    def phase_clock(self) -> float:
        p = self.phase_position(self.elapsed)
        for state, a, b in self.layout():
            if a <= p < b:
                return p - a
        return 0.0


def advance(fsm: SignalFsm, dt: float) -> SignalFsm:
    """Advance the controller clock by dt seconds (dt >= 0)."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return fsm
    return replace(fsm, elapsed=fsm.elapsed + dt)


def set_offset(fsm: SignalFsm, offset: float) -> SignalFsm:
    """Phase-shift the controller relative to the reference clock."""
    if not 0 <= offset < fsm.cycle:
        raise ValueError(f"offset {offset} outside [0, {fsm.cycle})")
    return replace(fsm, offset=offset)


@dataclass(frozen=True)
class TimingConstraint:
    """Require `required_state` at `deadline` seconds past cycle start.

    Deadlines are measured on the reference (zone) clock; a controller's
    offset is honored when mapping them onto its own cycle.
    """

    deadline: float
    required_state: SignalState
    scenario: str = ""

    def __post_init__(self):
        if self.deadline < 0:
            raise ValueError("deadline must be >= 0")


@dataclass(frozen=True)
class ConstraintShortfall:
    constraint: TimingConstraint
    shortfall: float  # seconds by which the deadline misses the state region


@dataclass(frozen=True)
class InfeasibilityReport:
    entries: tuple[ConstraintShortfall, ...]

    def __bool__(self):
        return True


def _satisfied(fsm: SignalFsm, c: TimingConstraint) -> bool:
    return fsm.state_at(c.deadline) is c.required_state


def _shortfall(fsm: SignalFsm, c: TimingConstraint) -> float:
    """Cyclic distance from the deadline to the required state's region."""
    p = fsm.phase_position(c.deadline)
    for state, a, b in fsm.layout():
        if state is c.required_state:
            if a <= p < b:
                return 0.0
            return min((a - p) % fsm.cycle, (p - b) % fsm.cycle)
    raise AssertionError("state missing from layout")


def _green_interval(fsm: SignalFsm, c: TimingConstraint) -> tuple[float, float]:
    """Feasible green-split range under which the constraint holds.

    The yellow split stays fixed and red = cycle - yellow - green, so each
    state's region boundary is linear in the green split and the feasible
    set per constraint is a single interval (possibly empty or
    unbounded); open ends are shrunk by _EDGE_EPS.
    """
    y, cyc = fsm.yellow, fsm.cycle
    p = fsm.phase_position(c.deadline)
    lo, hi = -float("inf"), float("inf")
    empty = (1.0, 0.0)
    s = c.required_state
    if fsm.anchor is SignalState.GREEN:
        # G [0,g) Y [g,g+y) R [g+y,cyc)
        if s is SignalState.GREEN:
            lo = p + _EDGE_EPS
        elif s is SignalState.YELLOW:
            lo, hi = p - y + _EDGE_EPS, p
        else:
            hi = p - y
    elif fsm.anchor is SignalState.YELLOW:
        # Y [0,y) R [y,cyc-g) G [cyc-g,cyc)
        if s is SignalState.YELLOW:
            if not p < y:
                return empty
        elif s is SignalState.RED:
            if not p >= y:
                return empty
            hi = cyc - p - _EDGE_EPS
        else:
            lo = cyc - p
    else:
        # R [0,r) G [r,r+g) Y [cyc-y,cyc) with r = cyc - y - g
        if s is SignalState.RED:
            hi = cyc - y - p - _EDGE_EPS
        elif s is SignalState.GREEN:
            if not p < cyc - y:
                return empty
            lo = cyc - y - p
        else:
            if not p >= cyc - y:
                return empty
    return (lo, hi)


def apply_timing_constraints(
    fsm: SignalFsm,
    constraints: list[TimingConstraint] | tuple[TimingConstraint, ...],
) -> SignalFsm | InfeasibilityReport:
    """Rebalance Green/Red so every constraint's state holds at its deadline.

    The sum of splits (the cycle) and the yellow dwell are preserved.  If
    the current splits already satisfy everything, the fsm is returned
    unchanged.  Otherwise the Green/Red trade-off is swept for the current
    cycle anchor first, then for its two rotations (a rotation is the same
    thing as an offset shift by the preceding splits).  When nothing
    works, an InfeasibilityReport names every constraint violated by the
    (unchanged) controller together with its shortfall in seconds.
    """
    constraints = tuple(constraints)
    if all(_satisfied(fsm, c) for c in constraints):
        return fsm

    anchor_idx = CYCLIC_ORDER.index(fsm.anchor)
    for rotation in range(3):
        anchor = CYCLIC_ORDER[(anchor_idx + rotation) % 3]
        probe = replace(fsm, anchor=anchor)
        lo = GREEN_MIN
        hi = fsm.cycle - fsm.yellow - RED_MIN
        for c in constraints:
            c_lo, c_hi = _green_interval(probe, c)
            lo, hi = max(lo, c_lo), min(hi, c_hi)
        if lo > hi:
            continue
        g = probe.green if lo <= probe.green <= hi else (lo + hi) / 2.0
        return replace(probe, green=g, red=fsm.cycle - fsm.yellow - g)

    entries = tuple(
        ConstraintShortfall(c, _shortfall(fsm, c))
        for c in constraints if not _satisfied(fsm, c)
    )
    return InfeasibilityReport(entries)


@dataclass(frozen=True)
class ImplementationMode:
    """Abstract implementation alternative with latency/cost attributes."""

    id: str
    latency: float
    cost: float
    safe: bool = False

    def __post_init__(self):
        if self.cost < 0:
            raise ValueError("cost must be >= 0")


@dataclass
class IntersectionController:
    """A signal FSM plus its implementation modes and local event trail."""

    id: str
    fsm: SignalFsm
    modes: tuple[ImplementationMode, ...] = ()
    active_mode: str = ""
    events: list[tuple[float, str, str]] = field(default_factory=list)
    early_switch: bool = False  # optional lone-vehicle early switching, off by default

    def __post_init__(self):
        if self.modes:
            safe = [m for m in self.modes if m.safe]
            if len(safe) != 1:
                raise ValueError(f"controller {self.id}: exactly one safe mode required")
            if not self.active_mode:
                self.active_mode = self.modes[0].id
            if self.active_mode not in {m.id for m in self.modes}:
                raise ValueError(f"unknown active mode {self.active_mode!r}")

    @property
    def safe_mode(self) -> ImplementationMode:
        return next(m for m in self.modes if m.safe)

    def mode(self, mode_id: str) -> ImplementationMode:
        return next(m for m in self.modes if m.id == mode_id)


def shortcut_to_safe(ctrl: IntersectionController, violation: object,
                     at: float = 0.0) -> IntersectionController:
    """Jump straight to the safe implementation mode, skipping intermediates.

    Also applies the fixed fallback splits when the mode actually changes;
    repeated violations are idempotent but every one is logged.
    """
    safe = ctrl.safe_mode
    events = list(ctrl.events)
    events.append((at, "safe_mode", f"{ctrl.id} violation={violation}"))
    if ctrl.active_mode == safe.id:
        return replace(ctrl, events=events)
    g, y, r = FALLBACK_SPLITS
    fallback_cycle = g + y + r
    fsm = replace(ctrl.fsm, green=g, yellow=y, red=r,
                  offset=ctrl.fsm.offset % fallback_cycle)
    return replace(ctrl, fsm=fsm, active_mode=safe.id, events=events)


def skip_to_next_state(fsm: SignalFsm, at: float) -> SignalFsm:
    """Shift the cycle so the next state begins at time `at`.

    Used by the optional early-switch behavior when the currently admitted
    approach has no traffic; pool-level timing constraints should not be
    active when this is applied.
    """
    p = fsm.phase_position(at)
    for _, a, b in fsm.layout():
        if a <= p < b:
            remaining = b - p
            return replace(fsm, offset=(fsm.offset - remaining) % fsm.cycle)
    return fsm


def replay_states(fsm: SignalFsm, t0: float, t1: float,
                  resolution: float = 0.1) -> list[SignalState]:
    """Sample controller states over [t0, t1) at a fixed resolution."""
    n = int(round((t1 - t0) / resolution))
    return [fsm.state_at(t0 + k * resolution) for k in range(n)]


def check_constraints_by_replay(fsm: SignalFsm,
                                constraints: list[TimingConstraint] | tuple,
                                resolution: float = 0.1) -> list[TimingConstraint]:
    """Independent checker: step the FSM and compare states at deadlines.

    Returns the constraints whose required state does not hold when the
    controller is advanced to the deadline in `resolution` steps.
    """
    violated = []
    for c in constraints:
        steps = int(c.deadline / resolution)
        probe = replace(fsm, elapsed=0.0)
        for _ in range(steps):
            probe = advance(probe, resolution)
        leftover = c.deadline - probe.elapsed  # land exactly on the deadline
        if leftover > 0:
            probe = advance(probe, leftover)
        if probe.state is not c.required_state:
            violated.append(c)
    return violated
