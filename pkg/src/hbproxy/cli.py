"""Command-line interface.

Subcommands:

* ``run``     -- execute one configuration and write restart/flowtec output
  plus a one-row record.csv into --out.
* ``verify``  -- byte-compare the .bin output files of two directories.
* ``predict`` -- analytic communication-cost estimate for a case on a
  machine profile.
* ``report``  -- combine record CSVs into the efficiency/energy report.

Exit codes: 0 success, 1 verification mismatch, 2 configuration/usage error.
"""

from __future__ import annotations

import argparse
import filecmp
import os
import sys

from .bench import (MACHINE_PROFILES, emit_report, predict_comm_time,
                    read_records_csv, record_to_row, write_records_csv)
from .driver import RunSpec, run_case
from .errors import HBProxyError
from .exchange import (ExchangeMode, ExchangeStrategy, ThreadMode,
                       build_cut_plan, predicted_message_count)
from .hybrid import ActivationMode, Axis
from .mesh import build_topology, load_case, partition_blocks
from .outio import WriteMode
from .reduce import ForceReduceStrategy, ReduceMode


def _build_parser():
    parser = argparse.ArgumentParser(prog="hbproxy",
                                     description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one solver configuration")
    run.add_argument("--case", required=True, help="case file path")
    run.add_argument("--ranks", type=int, required=True)
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--axis", choices=[a.value for a in Axis],
                     default=Axis.HARMONICS.value)
    run.add_argument("--activation", choices=[m.value for m in ActivationMode],
                     default=ActivationMode.HOISTED.value)
    run.add_argument("--exchange", choices=[m.value for m in ExchangeMode],
                     default=ExchangeMode.AGGREGATED_CUT.value)
    run.add_argument("--exchange-threads", choices=[m.value for m in ThreadMode],
                     default=ThreadMode.SERIAL.value,
                     help="drive the halo exchange from one thread or the whole team")
    run.add_argument("--reduce", choices=[m.value for m in ReduceMode],
                     default=ReduceMode.SINGLE_BUFFER.value)
    run.add_argument("--io", choices=[m.value for m in WriteMode],
                     default=WriteMode.BUFFERED.value)
    run.add_argument("--iterations", type=int, default=None,
                     help="override the case file's iteration count")
    run.add_argument("--machine", choices=sorted(MACHINE_PROFILES), default="",
                     help="annotate the emitted record with a machine name")
    run.add_argument("--out", required=True, help="output directory")

    verify = sub.add_parser("verify", help="byte-compare two output directories")
    verify.add_argument("--out", required=True)
    verify.add_argument("--golden", required=True)

    predict = sub.add_parser("predict", help="communication cost estimate")
    predict.add_argument("--case", required=True)
    predict.add_argument("--machine", choices=sorted(MACHINE_PROFILES), required=True)
    predict.add_argument("--exchange", choices=[m.value for m in ExchangeMode],
                         required=True)
    predict.add_argument("--ranks", type=int, default=None,
                         help="rank count for the partition (default: one per block)")

    report = sub.add_parser("report", help="efficiency/energy report from records")
    report.add_argument("--records", nargs="+", required=True)
    report.add_argument("--machine", choices=sorted(MACHINE_PROFILES), default=None)
    report.add_argument("--out", default=None, help="write CSV here instead of stdout")
    return parser


def _cmd_run(args):
    if args.iterations is not None and args.iterations < 1:
        print("error: --iterations must be >= 1", file=sys.stderr)
        return 2
    case = load_case(args.case)
    spec = RunSpec(
        case=case, ranks=args.ranks, threads=args.threads,
        axis=Axis(args.axis), activation=ActivationMode(args.activation),
        exchange=ExchangeStrategy(ExchangeMode(args.exchange),
                                  ThreadMode(args.exchange_threads)),
        reduce=ForceReduceStrategy(ReduceMode(args.reduce)),
        io=WriteMode(args.io), iterations=args.iterations,
        out_dir=args.out, machine=args.machine)
    result = run_case(spec)
    with open(os.path.join(args.out, "record.csv"), "w", encoding="utf-8") as f:
        write_records_csv(f, [record_to_row(result.record)])
    rec = result.record
    print(f"{rec.case}: ranks={rec.ranks} threads={rec.threads} "
          f"iterations={rec.iterations} wall={rec.wall_s:.3f}s msgs={rec.msgs} "
          f"bytes={rec.bytes} collectives={rec.collectives} "
          f"write_ops={rec.write_ops} activations={rec.activations}")
    return 0


def _cmd_verify(args):
    golden_files = sorted(f for f in os.listdir(args.golden) if f.endswith(".bin"))
    out_files = sorted(f for f in os.listdir(args.out) if f.endswith(".bin"))
    status = 0
    for name in sorted(set(golden_files) | set(out_files)):
        a = os.path.join(args.out, name)
        b = os.path.join(args.golden, name)
        if name not in out_files:
            print(f"MISSING  {name} (not in --out)")
            status = 1
        elif name not in golden_files:
            print(f"EXTRA    {name} (not in --golden)")
            status = 1
        elif filecmp.cmp(a, b, shallow=False):
            print(f"OK       {name}")
        else:
            print(f"MISMATCH {name}")
            status = 1
    return status


def _cmd_predict(args):
    case = load_case(args.case)
    topology = build_topology(case)
    nranks = topology.nblocks if args.ranks is None else args.ranks
    partition = partition_blocks(topology, nranks)
    plan = build_cut_plan(topology, partition, case.nharms, case.npde)
    strategy = ExchangeStrategy(ExchangeMode(args.exchange))
    forecast = predicted_message_count(plan, strategy)
    profile = MACHINE_PROFILES[args.machine]
    seconds = predict_comm_time(forecast.messages, forecast.nbytes, profile)
    print(f"case={case.name} machine={profile.name} exchange={args.exchange} "
          f"ranks={nranks}")
    print(f"messages_per_direction={forecast.messages} "
          f"bytes_per_direction={forecast.nbytes}")
    print(f"predicted_seconds_per_direction={seconds:.6e}")
    return 0


def _cmd_report(args):
    records = read_records_csv(args.records)
    profile = MACHINE_PROFILES[args.machine] if args.machine else None
    csv_text, table_text = emit_report(records, profile)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    sys.stderr.write(table_text)
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "verify": _cmd_verify,
                "predict": _cmd_predict, "report": _cmd_report}
    try:
        return handlers[args.command](args)
    except HBProxyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
