"""Scenario simulation driver: ticks the engine and packages the trace."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction

from .audit import AuditRecord
from .engine import MODE_DISASTER, SystemState, engine_tick
from .exact import ZERO
from .model import PolicyStore
from .scenario import Scenario


@dataclass
class SimTrace:
    """Everything a run produced: records, both store snapshots, outcomes."""

    scenario: Scenario
    seed: int
    horizon: Fraction
    records: list[AuditRecord]
    trace_text: str
    initial_store: PolicyStore
    final_store: PolicyStore
    final_mode: str
    final_clock: Fraction
    outcomes: dict[str, str]


def run_simulation(
    sc: Scenario, seed: int | None = None, horizon: Fraction | None = None
) -> SimTrace:
    """Run `sc` to quiescence, disaster, or the horizon, whichever is first.

    `seed` and `horizon` override the scenario's configured values; the seed
    drives both outcome draws and planner sampling.
    """
    effective_seed = sc.seed if seed is None else seed
    effective_horizon = sc.horizon if horizon is None else horizon
    cfg = sc.config
    if effective_seed != sc.seed:
        cfg = dataclasses.replace(
            cfg, planner=dataclasses.replace(cfg.planner, seed=effective_seed)
        )

    world = SystemState(
        sc.store.clone(),
        sc.emergencies,
        sc.events,
        sc.infl,
        seed=effective_seed,
    )
    world.audit.append(
        "run_started",
        ZERO,
        scenario=sc.name,
        seed=effective_seed,
        tp=cfg.tp,
        horizon=effective_horizon,
        alpha=cfg.planner.alpha,
        beta=cfg.planner.beta,
        k=cfg.planner.k_cap,
        fallback=cfg.fallback_strategy,
    )

    while world.mode != MODE_DISASTER and world.clock <= effective_horizon:
        engine_tick(world, cfg)
        quiescent = (
            world.mode == "normal"
            and not world.active
            and world.event_cursor >= len(world.events)
        )
        if quiescent:
            break

    return SimTrace(
        scenario=sc,
        seed=effective_seed,
        horizon=effective_horizon,
        records=list(world.audit.records),
        trace_text=world.audit.to_text(),
        initial_store=world.initial_store,
        final_store=world.store,
        final_mode=world.mode,
        final_clock=world.clock,
        outcomes=dict(world.outcomes),
    )
