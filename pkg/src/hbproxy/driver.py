"""Run orchestration: builds a case, spawns rank workers, runs the solver
loop, writes output, and aggregates counters into a RunRecord.

Per iteration each rank executes four Runge-Kutta stages; every stage is
three thread-parallel nests (residual, update, halo pack/unpack), dispatched
either one activation per nest (per-loop) or one activation per iteration
(hoisted).  Force partials are integrated and globally reduced once per
iteration, outside the team region.  One extra serial halo exchange runs
before the first iteration so stage one starts from coherent halos; output
writing, when requested, adds a single team activation at the end.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import hbcore
from .bench import RunRecord
from .errors import ProtocolError
from .exchange import ExchangeStrategy, RankExchange, build_cut_plan
from .hybrid import (ActivationMode, Axis, Team, TeamConfig, build_init_plan,
                     build_thread_slices, init_thread_slices, run_stage)
from .mesh import build_topology, partition_blocks
from .outio import (Handle, Turnstile, WriteMode, assign_records, compute_layout,
                    create_output_files, validate_record_ownership, write_records)
from .reduce import ForceReduceStrategy, reduce_forces
from .runtime import spawn_ranks


@dataclass
class RunSpec:
    case: object
    ranks: int
    threads: int = 1
    axis: Axis = Axis.HARMONICS
    activation: ActivationMode = ActivationMode.HOISTED
    exchange: ExchangeStrategy = dc_field(default_factory=ExchangeStrategy)
    reduce: ForceReduceStrategy = dc_field(default_factory=ForceReduceStrategy)
    io: WriteMode = WriteMode.BUFFERED
    iterations: int | None = None
    out_dir: str | None = None
    extra_outputs: tuple = ()  # (out_dir, WriteMode) pairs written after out_dir
    machine: str = ""
    jitter_seed: int | None = None


@dataclass
class CaseRunResult:
    fields: dict          # block id -> final q array (halos included)
    forces: object        # globally reduced ForceCoefficients
    counters: list        # CounterSnapshot per rank
    wall_s: float
    record: object        # RunRecord, or None for zero-iteration runs

    def field_bits_equal(self, other):
        if sorted(self.fields) != sorted(other.fields):
            return False
        return all(np.array_equal(self.fields[b], other.fields[b])
                   for b in self.fields)


def _residual_nest(field, slices, deriv):
    def phase(tid):
        for sl in slices[tid]:
            hbcore.residual_into(field.blocks[sl.block], deriv,
                                 sl.n_lo, sl.n_hi, sl.j_lo, sl.j_hi)
    return [phase]


def _update_nest(field, slices, alpha_dtau, snapshot):
    def phase(tid):
        for sl in slices[tid]:
            hbcore.update_stage(field.blocks[sl.block], alpha_dtau,
                                sl.n_lo, sl.n_hi, sl.j_lo, sl.j_hi,
                                snapshot=snapshot)
    return [phase]


def _output_phases(field, layouts, mode, ctx, out_dir, team_size):
    owned = sorted(field.blocks)
    per_file = []
    for layout in layouts:
        assignments = assign_records(layout, owned, team_size)
        validate_record_ownership(assignments)
        path = os.path.join(out_dir, layout.filename)
        per_file.append((layout, path, assignments, Turnstile()))
    handles = {}

    def open_phase(tid):
        for layout, path, _, turnstile in per_file:
            handles[(layout.filename, tid)] = turnstile.step(
                tid, lambda p=path, t=tid: Handle(p, t))

    def write_phase(tid):
        for layout, _, assignments, _ in per_file:
            write_records(handles[(layout.filename, tid)], layout,
                          assignments[tid], field, mode, ctx)

    def close_phase(tid):
        for layout, *_ in per_file:
            handles[(layout.filename, tid)].close()

    return [open_phase, write_phase, close_phase]


def _rank_program(ctx, spec, topology, partition, plan, layouts, iterations):
    case = spec.case
    planes = case.planes
    owned = partition.blocks_of(ctx.rank)
    specs = [topology.blocks[b] for b in owned]
    field = hbcore.HarmonicField.allocate(specs, planes, case.npde)
    deriv = hbcore.spectral_matrix(case.nharms, case.omega)
    scheme = hbcore.RKScheme(case.dtau)
    alpha_dtau = [a * scheme.dtau for a in scheme.alphas]

    team_cfg = TeamConfig(spec.threads, spec.axis, spec.activation)
    slices = build_thread_slices(specs, planes, team_cfg)
    init_plan = build_init_plan(specs, planes, team_cfg)
    init_plan.validate()

    team = Team(ctx, spec.threads,
                preamble=lambda tid: init_thread_slices(field, init_plan, tid))
    try:
        rx = RankExchange(plan, field, ctx, spec.threads)
        rx.run_serial(spec.exchange.mode)  # prime halos before the first stage
        forces = hbcore.ForceCoefficients.zeros(planes, topology.nbody)
        for _ in range(iterations):
            nests = []
            for stage in range(4):
                nests.append(_residual_nest(field, slices, deriv))
                nests.append(_update_nest(field, slices, alpha_dtau[stage],
                                          snapshot=(stage == 0)))
                nests.append(rx.team_phases(spec.exchange, rx.next_phase()))
            run_stage(team, nests, spec.activation)
            partial = hbcore.compute_forces(field, topology)
            forces = reduce_forces(partial, spec.reduce, ctx)
        if spec.out_dir is not None:
            team.run(_output_phases(field, layouts, spec.io, ctx,
                                    spec.out_dir, spec.threads))
        for out_dir, mode in spec.extra_outputs:
            team.run(_output_phases(field, layouts, mode, ctx,
                                    out_dir, spec.threads))
    finally:
        team.close()
    return ({b: field.blocks[b].q.copy() for b in owned}, forces)


def run_case(spec):
    """Execute one configuration end to end and gather its results."""
    case = spec.case
    topology = build_topology(case)
    partition = partition_blocks(topology, spec.ranks)
    plan = build_cut_plan(topology, partition, case.nharms, case.npde)
    iterations = case.iterations if spec.iterations is None else spec.iterations

    layouts = ()
    if spec.out_dir is not None or spec.extra_outputs:
        layouts = (compute_layout(topology, case.nharms, case.npde, "restart")
                   + compute_layout(topology, case.nharms, case.npde, "flowtec"))
        if spec.out_dir is not None:
            create_output_files(spec.out_dir, layouts)
        for out_dir, _ in spec.extra_outputs:
            create_output_files(out_dir, layouts)

    t0 = time.perf_counter()
    result = spawn_ranks(
        spec.ranks,
        lambda ctx: _rank_program(ctx, spec, topology, partition, plan,
                                  layouts, iterations),
        jitter_seed=spec.jitter_seed)
    wall = time.perf_counter() - t0

    fields = {}
    for rank_fields, _ in result.values:
        fields.update(rank_fields)
    forces = result.values[0][1]

    counters = result.counters
    collectives = {c.collective_calls for c in counters}
    activations = {c.team_activations for c in counters}
    if len(collectives) != 1:
        raise ProtocolError(f"collective counters diverged across ranks: {collectives}")
    if len(activations) != 1:
        raise ProtocolError(f"activation counters diverged across ranks: {activations}")

    record = None
    if iterations >= 1:
        record = RunRecord(
            case=case.name or "case", machine=spec.machine, ranks=spec.ranks,
            threads=spec.threads, iterations=iterations, wall_s=wall,
            msgs=sum(c.msgs_sent for c in counters),
            bytes=sum(c.bytes_sent for c in counters),
            collectives=collectives.pop(), write_ops=sum(c.write_ops for c in counters),
            activations=activations.pop())
    return CaseRunResult(fields=fields, forces=forces, counters=counters,
                         wall_s=wall, record=record)
