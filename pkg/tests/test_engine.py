"""End-to-end engine behavior, pinned through small scripted scenarios.

Each scenario isolates one mechanism: staffing at plan time, retry after a
failed draw, resource serialization, entity substitution, zero-value
fallback, expiry. Assertions read the audit records the run produced.
"""

from fractions import Fraction

import pytest

from feac.engine import EngineError, MODE_DISASTER, SystemState, engine_tick
from feac.scenario import parse_scenario
from feac.sim import run_simulation

F = Fraction

BASE = """\
scenario probe
config tp = 0.5
config k = 64
config seed = 1
config horizon = 40
"""

ONE_EMERGENCY = """\
entity P1
role R1
subject A1 { roles = [R1] }
object O1 { acl R1 use }
emergency E1 {
  entity P1
  prio 2
  ed 10
  ft true
  ts TS1 { actions = [O1 use], time = 2, prob = 0.9 }
}
map E1 -> [R1]
"""


def run(body: str):
    sc, diags = parse_scenario(BASE + body)
    assert not diags, diags
    return run_simulation(sc)


def recs(trace, kind):
    return [r for r in trace.records if r.kind == kind]


def kinds_at(trace, ts):
    return [r.kind for r in trace.records if r.ts == ts]


class TestStaffing:
    def test_every_path_member_staffed_when_the_plan_lands(self):
        trace = run(
            """\
entity P1
role R1
role R2
subject A1 { roles = [R1] }
subject A2 { roles = [R2] }
object O1 { acl R1 use }
object O2 { acl R2 use }
emergency E1 {
  entity P1
  prio 2
  ed 10
  ft true
  ts TS1 { actions = [O1 use], time = 2, prob = 0.9 }
}
emergency E2 {
  entity P1
  prio 5
  ed 12
  ft true
  ts TS1 { actions = [O2 use], time = 1, prob = 0.8 }
}
map E1 -> [R1]
map E2 -> [R2]
at 0 raise E1
at 0 raise E2
at 0 force E1 TS1 success
at 0 force E2 TS1 success
"""
        )
        plan = recs(trace, "plan_selected")[0]
        assert plan.payload["path"] == "E1:TS1>E2:TS1"
        assert plan.payload["pv"] == "0.72"
        # Both emergencies are staffed at the planning tick, not when their
        # own action starts.
        assigned = recs(trace, "role_assigned")
        assert [(r.ts, r.payload["sid"], r.payload["erole"]) for r in assigned] == [
            (F(0), "A1", "E1"),
            (F(0), "A2", "E2"),
        ]
        granted = recs(trace, "permission_granted")
        assert [(r.payload["eid"], r.payload["td"]) for r in granted] == [
            ("E1", "10"),
            ("E2", "12"),
        ]
        notified = recs(trace, "subject_notified")
        assert {r.payload["sid"] for r in notified} == {"A1", "A2"}
        started = recs(trace, "action_started")
        assert [(r.payload["eid"], r.payload["start"], r.payload["end"]) for r in started] == [
            ("E1", "0", "2"),
            ("E2", "2", "3"),
        ]
        assert trace.final_mode == "normal"
        assert trace.outcomes == {"E1": "eliminated", "E2": "eliminated"}

    def test_unstaffable_emergency_expires_with_one_notice(self):
        trace = run(
            """\
entity P1
role R1
constraint near = dist(location, (0, 0)) <= 1
subject A1 { roles = [R1], location = (9, 9) }
object O1 { acl R1 use }
emergency E1 {
  entity P1
  prio 2
  ed 4
  ft true
  ts TS1 { actions = [O1 use], time = 2, prob = 0.9 }
}
map E1 -> [R1] where @near
at 0 raise E1
at 0 force E1 TS1 success
"""
        )
        unavailable = recs(trace, "subject_unavailable")
        assert len(unavailable) == 1
        assert unavailable[0].payload == {"eid": "E1", "erole": "E1"}
        assert not recs(trace, "permission_granted")
        assert not recs(trace, "action_started")
        expired = recs(trace, "emergency_expired")[0]
        assert (expired.ts, expired.payload["reason"]) == (F(4), "deadline")
        assert trace.outcomes == {"E1": "expired"}
        assert trace.final_mode == "normal"

    def test_constraint_only_staffing_covers_a_missing_role(self):
        trace = run(
            """\
entity P1
role R1
role R2
constraint near = dist(location, (0, 0)) <= 1
subject A1 { roles = [R2], location = (0, 0) }
object O1 { acl R1 use }
emergency E1 {
  entity P1
  prio 2
  ed 10
  ft true
  ts TS1 { actions = [O1 use], time = 2, prob = 0.9 }
}
map E1 -> [R1]
fallbackmap E1 where @near
at 0 raise E1
at 0 force E1 TS1 success
"""
        )
        assigned = recs(trace, "role_assigned")[0]
        # A1 does not hold R1; the constraint-based fallback admits it.
        assert assigned.payload == {"sid": "A1", "erole": "E1", "eid": "E1", "saved": "R2"}
        assert trace.outcomes == {"E1": "eliminated"}


class TestRetry:
    RETRY = (
        ONE_EMERGENCY
        + """\
at 0 raise E1
at 0 force E1 TS1 failure
at 3 force E1 TS1 success
"""
    )

    def test_failed_draw_replans_and_retries(self):
        trace = run(self.RETRY)
        failed = recs(trace, "action_failed")[0]
        assert (failed.ts, failed.payload["reason"]) == (F(2), "draw_failed")
        plans = recs(trace, "plan_selected")
        assert [(p.ts, p.payload["epoch"]) for p in plans] == [(F(0), "0"), (F(2), "2")]
        # Replacement rescinds the stale grant, the retry issues a new one
        # with the same expiry: the window is anchored to the raise time.
        rescinded = recs(trace, "permission_rescinded")
        assert [(r.ts, r.payload["reason"], r.payload["td"]) for r in rescinded] == [
            (F(2), "replaced", "10"),
            (F(4), "solved", "10"),
        ]
        started = recs(trace, "action_started")
        assert [(r.payload["start"], r.payload["end"]) for r in started] == [("0", "2"), ("2", "4")]
        assert trace.outcomes == {"E1": "eliminated"}

    def test_forced_outcome_applies_from_its_event_time(self):
        # The success force lands at 3, mid-retry: the first attempt still
        # fails, the second finishes.
        trace = run(self.RETRY)
        assert [r.payload["outcome"] for r in recs(trace, "action_finished")] == ["success"]
        assert recs(trace, "action_finished")[0].ts == F(4)

    def test_re_raise_of_active_emergency_does_not_restart_it(self):
        trace = run(
            ONE_EMERGENCY
            + """\
at 0 raise E1
at 0 force E1 TS1 success
at 1 raise E1
"""
        )
        assert len(recs(trace, "emergency_raised")) == 2
        assert len(recs(trace, "plan_selected")) == 1
        assert len(recs(trace, "action_started")) == 1
        assert trace.outcomes == {"E1": "eliminated"}


class TestResourceLocks:
    def test_contended_resource_serializes_entities(self):
        trace = run(
            """\
entity P1
entity P2
role R1
subject A1 { roles = [R1] }
subject A2 { roles = [R1] }
object O1 { acl R1 use }
emergency E1 {
  entity P1
  prio 2
  ed 10
  ft true
  ts TS1 { actions = [O1 use], time = 2, prob = 0.9, resources = [Q] }
}
emergency E2 {
  entity P2
  prio 5
  ed 12
  ft true
  ts TS1 { actions = [O1 use], time = 1, prob = 0.8, resources = [Q] }
}
map E1 -> [R1]
map E2 -> [R1]
at 0 raise E1
at 0 raise E2
at 0 force E1 TS1 success
at 0 force E2 TS1 success
"""
        )
        started = recs(trace, "action_started")
        assert [
            (r.payload["eid"], r.payload["start"], r.payload["end"], r.payload["resources"])
            for r in started
        ] == [("E1", "0", "2", "Q"), ("E2", "2", "3", "Q")]
        # The blocked entity replans when the lock frees, and the stale
        # staffing is replaced.
        p2_plans = recs(trace, "plan_selected")
        assert [(p.payload["entity"], p.payload["epoch"]) for p in p2_plans] == [
            ("P1", "0"),
            ("P2", "0"),
            ("P2", "2"),
        ]
        replaced = [r for r in recs(trace, "permission_rescinded") if r.payload["reason"] == "replaced"]
        assert [(r.ts, r.payload["eid"]) for r in replaced] == [(F(2), "E2")]
        assert trace.outcomes == {"E1": "eliminated", "E2": "eliminated"}


class TestFaultTolerance:
    def test_failed_entity_is_substituted_while_its_action_completes(self):
        trace = run(
            """\
entity P1
entity P2
role R1
subject A1 { roles = [R1] }
subject A2 { roles = [R1] }
object O1 { acl R1 use }
object P1 { acl R1 read }
emergency E1 {
  entity P1
  prio 2
  ed 10
  ft true
  ts TS1 { actions = [O1 use], time = 2, prob = 0.9 }
}
map E1 -> [R1]
fgroup P1 = g
fgroup P2 = g
at 0 raise E1
at 0 force E1 TS1 success
at 1 fail P1
"""
        )
        sub = recs(trace, "ft_substitution")[0]
        assert sub.ts == F(1)
        assert sub.payload == {
            "from": "P1",
            "to": "P2",
            "acl": "R1:read:-",
            "roles": "-",
            "notified": "-",
        }
        # The substitute object materialized in the final store.
        assert "P2" in trace.final_store.objects
        # The in-flight response is not interrupted.
        finished = recs(trace, "action_finished")[0]
        assert (finished.ts, finished.payload["outcome"]) == (F(2), "success")
        assert trace.final_mode == "normal"
        assert trace.outcomes == {"E1": "eliminated"}

    def test_failure_without_tolerance_is_a_disaster(self):
        trace = run(
            """\
entity P1
role R1
subject A1 { roles = [R1] }
object O1 { acl R1 use }
emergency E1 {
  entity P1
  prio 2
  ed 10
  ft false
  ts TS1 { actions = [O1 use], time = 2, prob = 0.9 }
}
map E1 -> [R1]
at 0 raise E1
at 0 force E1 TS1 success
at 1 fail P1
"""
        )
        assert recs(trace, "disaster")[0].payload == {"entity": "P1", "reason": "ft_infeasible"}
        rescinded = recs(trace, "permission_rescinded")[0]
        assert (rescinded.ts, rescinded.payload["reason"]) == (F(1), "disaster")
        transitions = [(r.payload["from"], r.payload["to"]) for r in recs(trace, "state_transition")]
        assert transitions[-1] == ("emergency", "disaster")
        assert trace.final_mode == "disaster"
        assert trace.outcomes == {"E1": "unprocessed"}


PV_ZERO = """\
role R1
subject A1 { roles = [R1] }
subject A2 { roles = [R1] }
object O1 { acl R1 use }
emergency E1 {
  entity P1
  prio 2
  ed 4
  ft true
  ts TS1 { actions = [O1 use], time = 6, prob = 0.9 }
}
map E1 -> [R1]
at 0 raise E1
at 0 force E1 TS1 success
"""


class TestZeroValuePlans:
    def test_substitution_then_fallback_plan(self):
        trace = run("entity P1\nentity P2\nfgroup P1 = g\nfgroup P2 = g\n" + PV_ZERO)
        assert kinds_at(trace, F(0))[3:8] == [
            "state_transition",  # normal -> emergency
            "state_transition",  # emergency -> fault_tolerant
            "ft_substitution",
            "state_transition",  # fault_tolerant -> emergency
            "plan_selected",
        ]
        plan = recs(trace, "plan_selected")[0]
        assert plan.payload["strategy"] == "probability_first"
        assert plan.payload["pv"] == "0"
        assert plan.payload["path"] == "E1:TS1"
        # The attempt overruns the window and is cut off at the expiry.
        aborted = recs(trace, "action_failed")[0]
        assert (aborted.ts, aborted.payload["reason"]) == (F(4), "expired")
        assert recs(trace, "emergency_expired")[0].payload["reason"] == "window"
        assert [r.payload["reason"] for r in recs(trace, "permission_rescinded")] == ["expired"]
        assert trace.final_mode == "normal"
        assert trace.outcomes == {"E1": "expired"}

    def test_no_substitute_available_is_a_disaster(self):
        trace = run("entity P1\n" + PV_ZERO)
        assert recs(trace, "disaster")[0].payload == {"entity": "P1", "reason": "no_substitute"}
        transitions = [(r.payload["from"], r.payload["to"]) for r in recs(trace, "state_transition")]
        assert transitions == [
            ("normal", "emergency"),
            ("emergency", "fault_tolerant"),
            ("fault_tolerant", "disaster"),
        ]
        assert trace.final_mode == "disaster"
        assert trace.outcomes == {"E1": "unprocessed"}


class TestRequests:
    def test_requests_are_checked_against_the_live_store(self):
        trace = run(
            """\
entity P1
role R1
subject A1 { roles = [R1] }
subject A2 { roles = [] }
object O1 { acl R1 use }
emergency E1 {
  entity P1
  prio 2
  ed 10
  ft true
  ts TS1 { actions = [O1 use], time = 2, prob = 0.9 }
}
map E1 -> [R1]
at 0 raise E1
at 0 force E1 TS1 success
at 1 request A1 O1 use
at 1 request A2 O1 use
at 5 request A1 O1 use
"""
        )
        checked = recs(trace, "access_checked")
        assert [(r.ts, r.payload["sid"], r.payload["decision"], r.payload["reason"]) for r in checked] == [
            (F(1), "A1", "permit", "permit"),
            (F(1), "A2", "deny", "no_active_role_entry"),
            (F(5), "A1", "permit", "permit"),
        ]


def test_ticking_a_disaster_world_is_an_error():
    sc, diags = parse_scenario(
        BASE
        + """\
entity P1
role R1
subject A1 { roles = [R1] }
object O1 { acl R1 use }
emergency E1 {
  entity P1
  prio 2
  ed 10
  ft false
  ts TS1 { actions = [O1 use], time = 2, prob = 0.9 }
}
map E1 -> [R1]
at 0 raise E1
at 1 fail P1
"""
    )
    assert not diags
    world = SystemState(sc.store.clone(), sc.emergencies, sc.events, sc.infl, seed=sc.seed)
    while world.mode != MODE_DISASTER:
        engine_tick(world, sc.config)
    with pytest.raises(EngineError):
        engine_tick(world, sc.config)
