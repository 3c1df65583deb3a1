import dataclasses

import pytest
from hypothesis import given, strategies as st

from civitas import fsm
from civitas.fsm import (SignalFsm, SignalState, TimingConstraint,
                         ImplementationMode, IntersectionController,
                         InfeasibilityReport, advance, set_offset,
                         apply_timing_constraints, shortcut_to_safe,
                         check_constraints_by_replay)


def make_fsm(**kw):
    defaults = dict(green=30.0, yellow=5.0, red=25.0)
    defaults.update(kw)
    return SignalFsm(**defaults)


class TestAdvance:
    def test_zero_dt_is_identity(self):
        f = make_fsm()
        assert advance(f, 0) == f

    def test_split_boundary_transition(self):
        f = make_fsm()
        assert advance(f, 30).state is SignalState.YELLOW

    def test_full_cycle_returns_to_start(self):
        for phase in (0.0, 7.3, 31.0, 59.9):
            f = advance(make_fsm(), phase)
            g = advance(f, 60.0)
            assert g.state is f.state
            assert g.phase_clock == pytest.approx(f.phase_clock, abs=1e-9)

    def test_negative_dt_rejected(self):
        with pytest.raises(ValueError):
            advance(make_fsm(), -1)

    def test_cyclic_order_green_yellow_red(self):
        f = make_fsm()
        seen = [f.state_at(t) for t in (0, 30, 35)]
        assert seen == [SignalState.GREEN, SignalState.YELLOW, SignalState.RED]

    def test_periodicity_exact_over_ten_cycles(self):
        f = make_fsm()
        for n in range(600):
            t = n / 10.0
            assert f.state_at(t) is f.state_at((n + 6000) / 10.0)


class TestOffset:
    def test_zero_offset_unchanged(self):
        f = make_fsm()
        assert set_offset(f, 0.0).state_at(17.0) is f.state_at(17.0)

    def test_offset_equal_cycle_rejected(self):
        with pytest.raises(ValueError):
            set_offset(make_fsm(), 60.0)

    def test_shift_replays_unshifted_states(self):
        f = make_fsm()
        g = set_offset(f, 10.0)
        for n in range(1200):
            t = n / 10.0
            assert g.state_at(t + 10.0) is f.state_at(t)

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            make_fsm(green=0.0)
        with pytest.raises(ValueError):
            make_fsm(offset=-1.0)


class TestTimingConstraints:
    def test_already_satisfied_returns_same_object(self):
        f = make_fsm()
        c = TimingConstraint(10.0, SignalState.GREEN)
        assert apply_timing_constraints(f, [c]) is f

    def test_rebalance_covers_deadline_verified_by_replay(self):
        f = make_fsm()
        c = TimingConstraint(35.0, SignalState.GREEN)
        out = apply_timing_constraints(f, [c])
        assert isinstance(out, SignalFsm)
        assert check_constraints_by_replay(out, [c]) == []

    def test_split_sum_preserved(self):
        f = make_fsm()
        out = apply_timing_constraints(f, [TimingConstraint(35.0, SignalState.GREEN)])
        assert out.green + out.yellow + out.red == pytest.approx(60.0, abs=1e-12)
        assert out.yellow == 5.0

    def test_mutually_exclusive_states_report_both(self):
        # Deadline inside the yellow interval so both demands are violated now.
        f = make_fsm()
        cs = [TimingConstraint(32.0, SignalState.RED),
              TimingConstraint(32.0, SignalState.GREEN)]
        report = apply_timing_constraints(f, cs)
        assert isinstance(report, InfeasibilityReport)
        assert len(report.entries) == 2
        assert all(e.shortfall > 0 for e in report.entries)

    def test_offset_honored_when_checking(self):
        f = make_fsm(offset=10.0)
        c = TimingConstraint(10.0, SignalState.GREEN)  # local position 0
        assert apply_timing_constraints(f, [c]) is f

    def test_anchor_rotation_serves_red_first_schedules(self):
        f = make_fsm(anchor=SignalState.GREEN)
        cs = [TimingConstraint(2.0, SignalState.RED),
              TimingConstraint(40.0, SignalState.GREEN)]
        out = apply_timing_constraints(f, cs)
        assert isinstance(out, SignalFsm)
        assert check_constraints_by_replay(out, cs) == []

    @given(st.lists(st.tuples(st.floats(0, 59.9), st.sampled_from(list(SignalState))),
                    min_size=1, max_size=4))
    def test_outcome_is_fsm_or_report_and_replay_consistent(self, raw):
        f = make_fsm()
        cs = [TimingConstraint(d, s) for d, s in raw]
        out = apply_timing_constraints(f, cs)
        if isinstance(out, SignalFsm):
            assert out.green + out.yellow + out.red == pytest.approx(60.0, abs=1e-9)
            assert check_constraints_by_replay(out, cs, resolution=0.01) == []
        else:
            assert out.entries


def make_controller(active="fast"):
    modes = (ImplementationMode("fast", 0.01, 5.0),
             ImplementationMode("normal", 0.1, 1.0),
             ImplementationMode("safe", 1.0, 0.2, safe=True))
    return IntersectionController("X", make_fsm(), modes, active)


class TestShortcutToSafe:
    def test_jumps_straight_to_safe(self):
        ctrl = make_controller("fast")
        out = shortcut_to_safe(ctrl, "budget", at=12.0)
        assert out.active_mode == "safe"
        assert out.events[-1][1] == "safe_mode"

    def test_fallback_splits_applied(self):
        ctrl = make_controller("fast")
        out = shortcut_to_safe(ctrl, "budget")
        assert (out.fsm.green, out.fsm.yellow, out.fsm.red) == (30.0, 5.0, 25.0)

    def test_idempotent_but_logged(self):
        ctrl = make_controller("fast")
        once = shortcut_to_safe(ctrl, "v1", at=1.0)
        twice = shortcut_to_safe(once, "v2", at=2.0)
        assert twice.active_mode == "safe"
        assert len(twice.events) == 2
        assert twice.fsm == once.fsm

    def test_exactly_one_safe_mode_required(self):
        with pytest.raises(ValueError):
            IntersectionController("Y", make_fsm(),
                                   (ImplementationMode("a", 1, 1),
                                    ImplementationMode("b", 1, 1)))

    def test_no_intermediate_modes_recorded(self):
        ctrl = make_controller("fast")
        out = shortcut_to_safe(ctrl, "budget", at=3.0)
        modes_seen = [e for e in out.events if e[1] == "safe_mode"]
        assert len(modes_seen) == 1


class TestPhaseClock:
    def test_phase_clock_within_split(self):
        f = make_fsm()
        for n in range(0, 600):
            g = dataclasses.replace(f, elapsed=n / 10.0)
            assert 0 <= g.phase_clock < g.split(g.state)


class TestSkipToNextState:
    def test_boundary_moves_to_now(self):
        f = make_fsm()  # Green at t=10
        g = fsm.skip_to_next_state(f, 10.0)
        assert g.state_at(10.0) is SignalState.YELLOW
        assert g.state_at(9.9) is SignalState.GREEN

    def test_cycle_structure_preserved(self):
        f = make_fsm()
        g = fsm.skip_to_next_state(f, 17.0)
        assert (g.green, g.yellow, g.red) == (f.green, f.yellow, f.red)
        # one full cycle later the same boundary recurs
        assert g.state_at(17.0 + 60.0) is SignalState.YELLOW
