"""Metrics: machine profiles, scaling-efficiency and energy formulas, the
analytic communication-cost model, and CSV/table report emission.

Node-scaling efficiency of a distributed-only configuration measured at n
nodes against the smallest benchmarked node count s:

    EM_n = (TM_s / TM_n) / (n / s)

Efficiency of a hybrid run on m nodes against the best distributed-only run
on n nodes:

    EH_n = (TM_n / TH_m) / (m / n)

Modelled energy per iteration in Watt-hours (per-node nominal power, scaled
by the node count for multi-node jobs):

    P_i = ((T_t / 3600) * P_n * nodes) / ni

The communication model is a plain latency/bandwidth estimate,
t = messages * latency + bytes / bandwidth, evaluated on the per-direction
message/byte totals of an exchange plan.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from .errors import DomainError
from .exchange import predicted_message_count


@dataclass(frozen=True)
class MachineProfile:
    name: str
    cores_per_node: int
    power_per_node_w: float
    latency_us: float
    bandwidth_gbs: float
    peak_gflops: float

    def __post_init__(self):
        for field_name in ("cores_per_node", "power_per_node_w", "latency_us",
                           "bandwidth_gbs", "peak_gflops"):
            if getattr(self, field_name) <= 0:
                raise DomainError(f"machine profile {self.name}: "
                                  f"{field_name} must be positive")


MACHINE_PROFILES = {
    "bgq": MachineProfile("bgq", 16, 80.0, 1.4, 3.4, 204.8),
    "xe6": MachineProfile("xe6", 32, 400.0, 1.2, 5.6, 294.4),
    "b510": MachineProfile("b510", 16, 498.0, 0.6, 3.0, 345.6),
}


def efficiency_mpi(tm_s, tm_n, s, n):
    """EM_n = (TM_s/TM_n)/(n/s); runtimes in seconds, s/n node counts, n >= s."""
    if tm_s <= 0 or tm_n <= 0 or s <= 0 or n <= 0:
        raise DomainError("efficiency_mpi requires positive inputs")
    if n < s:
        raise DomainError(f"n ({n}) must be >= s ({s})")
    return (tm_s / tm_n) / (n / s)


def efficiency_hybrid(tm_n, th_m, n, m):
    """EH_n = (TM_n/TH_m)/(m/n); hybrid at m nodes vs. the best run at n, m >= n."""
    if tm_n <= 0 or th_m <= 0 or n <= 0 or m <= 0:
        raise DomainError("efficiency_hybrid requires positive inputs")
    if m < n:
        raise DomainError(f"m ({m}) must be >= n ({n})")
    return (tm_n / th_m) / (m / n)


def power_per_iteration(t_t, p_n, nodes, ni):
    """Watt-hours per iteration: ((T_t/3600) * P_n * nodes) / ni."""
    if t_t <= 0 or p_n <= 0 or nodes <= 0 or ni <= 0:
        raise DomainError("power_per_iteration requires positive inputs")
    return ((t_t / 3600.0) * p_n * nodes) / ni


def predict_comm_time(messages, nbytes, profile):
    """Seconds for `messages` point-to-point transfers moving `nbytes` total."""
    if messages < 0 or nbytes < 0:
        raise DomainError("message and byte counts must be >= 0")
    return messages * profile.latency_us * 1e-6 + nbytes / (profile.bandwidth_gbs * 1e9)


def predict_comm_time_for_plan(plan, strategy, profile):
    """Cost-model estimate for one direction of one exchange under a strategy."""
    forecast = predicted_message_count(plan, strategy)
    return predict_comm_time(forecast.messages, forecast.nbytes, profile)


# ---------------------------------------------------------------------------
# Run records and reporting
# ---------------------------------------------------------------------------

RECORD_COLUMNS = ("case", "machine", "ranks", "threads", "iterations", "wall_s",
                  "msgs", "bytes", "collectives", "write_ops", "activations",
                  "efficiency", "wh_per_iter")


@dataclass
class RunRecord:
    case: str
    machine: str
    ranks: int
    threads: int
    iterations: int
    wall_s: float
    msgs: int
    bytes: int
    collectives: int
    write_ops: int
    activations: int

    def __post_init__(self):
        if self.wall_s <= 0:
            raise DomainError("wall_s must be positive")
        if self.iterations < 1:
            raise DomainError("iterations must be >= 1")

    @property
    def workers(self):
        return self.ranks * self.threads


def record_to_row(record, efficiency=None, wh_per_iter=None):
    return [record.case, record.machine, str(record.ranks), str(record.threads),
            str(record.iterations), f"{record.wall_s:.3f}", str(record.msgs),
            str(record.bytes), str(record.collectives), str(record.write_ops),
            str(record.activations),
            "" if efficiency is None else f"{efficiency:.4f}",
            "" if wh_per_iter is None else f"{wh_per_iter:.3f}"]


def write_records_csv(stream, rows):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS)
    writer.writerows(rows)


def read_records_csv(paths):
    """Load run records from one or more CSV files written by this package."""
    records = []
    for path in paths:
        with open(path, newline="", encoding="utf-8") as f:
            for lineno, row in enumerate(csv.DictReader(f), start=2):
                try:
                    records.append(RunRecord(
                        case=row["case"], machine=row.get("machine", ""),
                        ranks=int(row["ranks"]), threads=int(row["threads"]),
                        iterations=int(row["iterations"]), wall_s=float(row["wall_s"]),
                        msgs=int(row["msgs"]), bytes=int(row["bytes"]),
                        collectives=int(row["collectives"]),
                        write_ops=int(row["write_ops"]),
                        activations=int(row["activations"])))
                except (KeyError, TypeError, ValueError) as exc:
                    raise DomainError(f"{path}:{lineno}: bad record row ({exc})")
    return records


def _record_efficiency(record, records):
    """Efficiency column for one record against its same-case peers.

    Distributed-only rows (threads == 1) get EM against the same-case row
    with the fewest ranks; hybrid rows get EH against the same-case
    distributed row with the most ranks, counting ranks*threads worker slots
    as the hybrid resource.  Rows without a usable baseline stay blank.
    """
    mpi_peers = [r for r in records if r.case == record.case and r.threads == 1]
    if not mpi_peers:
        return None
    if record.threads == 1:
        base = min(mpi_peers, key=lambda r: (r.ranks, r.wall_s))
        if record.ranks < base.ranks:
            return None
        return efficiency_mpi(base.wall_s, record.wall_s, base.ranks, record.ranks)
    base = max(mpi_peers, key=lambda r: (r.ranks, -r.wall_s))
    if record.workers < base.ranks:
        return None
    return efficiency_hybrid(base.wall_s, record.wall_s, base.ranks, record.workers)


def emit_report(records, profile=None):
    """Render records as (csv_text, table_text) with stable column order.

    Efficiency is printed with four decimals and energy per iteration with
    three; the energy column needs a machine profile (nodes are counted as
    ceil(workers / cores_per_node)).
    """
    if not records:
        raise DomainError("emit_report needs at least one record")
    rows = []
    for record in records:
        eff = _record_efficiency(record, records)
        wh = None
        if profile is not None:
            nodes = max(1, math.ceil(record.workers / profile.cores_per_node))
            wh = power_per_iteration(record.wall_s, profile.power_per_node_w,
                                     nodes, record.iterations)
        rows.append(record_to_row(record, eff, wh))
    buf = io.StringIO()
    write_records_csv(buf, rows)
    csv_text = buf.getvalue()

    widths = [max(len(RECORD_COLUMNS[c]), max(len(r[c]) for r in rows))
              for c in range(len(RECORD_COLUMNS))]
    lines = ["  ".join(name.ljust(widths[c]) for c, name in enumerate(RECORD_COLUMNS))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(v.ljust(widths[c]) for c, v in enumerate(r)))
    return csv_text, "\n".join(lines) + "\n"
