"""End-to-end driver and CLI tests on small cases."""

import os

import numpy as np
import pytest

from conftest import run_tiny
from hbproxy.cases import case_text, pair_case, tc_tiny
from hbproxy.cli import main
from hbproxy.driver import RunSpec, run_case
from hbproxy.errors import DivergenceError, RankFailure
from hbproxy.exchange import ExchangeMode, ExchangeStrategy, ThreadMode
from hbproxy.hybrid import ActivationMode, Axis
from hbproxy.reduce import ForceReduceStrategy, ReduceMode


def test_two_rank_run_matches_single_rank_oracle(tiny_baseline):
    two = run_tiny(ranks=2)
    assert tiny_baseline.field_bits_equal(two)
    assert tiny_baseline.forces.equal_bits(two.forces)


def test_hundred_iterations_stay_bounded():
    result = run_tiny(iterations=100)
    peak = max(np.abs(q).max() for q in result.fields.values())
    assert np.isfinite(peak) and peak < 10.0


def test_run_diverges_with_rank_in_error():
    # enormous pseudo-time step blows the diffusion stability limit
    case = pair_case(4, 4, nharms=1, h=0.25, dtau=50.0)
    with pytest.raises(RankFailure) as err:
        run_case(RunSpec(case=case, ranks=2, iterations=50))
    assert isinstance(err.value.cause, DivergenceError)
    assert err.value.rank in (0, 1)


def test_exchange_strategies_all_bitwise_equal(tiny_baseline):
    for mode in ExchangeMode:
        for tmode in ThreadMode:
            for reduce_mode in ReduceMode:
                r = run_tiny(ranks=2, threads=2,
                             exchange=ExchangeStrategy(mode, tmode),
                             reduce=ForceReduceStrategy(reduce_mode))
                assert tiny_baseline.field_bits_equal(r), (mode, tmode)
                assert tiny_baseline.forces.equal_bits(r.forces)


def test_full_solver_bitwise_stable_under_scheduling_jitter(tiny_baseline):
    for seed in (0, 1, 2):
        r = run_tiny(ranks=2, threads=4,
                     exchange=ExchangeStrategy(ExchangeMode.PER_ELEMENT,
                                               ThreadMode.TAGGED_THREADS),
                     jitter_seed=seed)
        assert tiny_baseline.field_bits_equal(r)
        assert tiny_baseline.forces.equal_bits(r.forces)


def test_record_counters_populated():
    result = run_tiny(ranks=2, iterations=4)
    rec = result.record
    assert rec.iterations == 4
    assert rec.collectives == 4          # buffered reduce: one per iteration
    assert rec.activations == 4          # hoisted: one per iteration
    # 1 remote cut, aggregated: 1 msg per direction per exchange;
    # exchanges = 4 stages * 4 iterations + 1 initial = 17
    assert rec.msgs == 2 * 17
    assert rec.bytes == 2 * 17 * 4 * 12 * 8


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

@pytest.fixture()
def tiny_cfg(tmp_path):
    path = tmp_path / "tc-tiny.cfg"
    path.write_text(case_text(tc_tiny()))
    return str(path)


def test_cli_run_verify_roundtrip(tiny_cfg, tmp_path, capsys):
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    args = ["--case", tiny_cfg, "--iterations", "5", "--exchange", "aggregated"]
    assert main(["run", *args, "--ranks", "1", "--io", "per-value", "--out", out_a]) == 0
    assert main(["run", *args, "--ranks", "2", "--threads", "2",
                 "--exchange-threads", "tagged", "--io", "buffered",
                 "--out", out_b]) == 0
    assert os.path.exists(os.path.join(out_a, "restart.bin"))
    assert os.path.exists(os.path.join(out_a, "flowtec_2.bin"))
    assert os.path.exists(os.path.join(out_a, "record.csv"))
    assert main(["verify", "--out", out_b, "--golden", out_a]) == 0
    # corrupt one byte: verify must fail with exit code 1
    path = os.path.join(out_b, "restart.bin")
    blob = bytearray(open(path, "rb").read())
    blob[10] ^= 0xFF
    open(path, "wb").write(bytes(blob))
    assert main(["verify", "--out", out_b, "--golden", out_a]) == 1
    captured = capsys.readouterr()
    assert "MISMATCH restart.bin" in captured.out


def test_cli_missing_file_is_config_error(tmp_path):
    assert main(["run", "--case", str(tmp_path / "nope.cfg"), "--ranks", "1",
                 "--out", str(tmp_path / "o")]) == 2


def test_cli_malformed_case_is_config_error(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[case]\nnharms = banana\n")
    assert main(["run", "--case", str(bad), "--ranks", "1",
                 "--out", str(tmp_path / "o")]) == 2


def test_cli_capacity_error(tiny_cfg, tmp_path):
    assert main(["run", "--case", tiny_cfg, "--ranks", "3",
                 "--out", str(tmp_path / "o")]) == 2


def test_cli_predict_output(tiny_cfg, capsys):
    assert main(["predict", "--case", tiny_cfg, "--machine", "xe6",
                 "--exchange", "per-element"]) == 0
    out = capsys.readouterr().out
    assert "messages_per_direction=8" in out
    assert "bytes_per_direction=384" in out
    assert "predicted_seconds_per_direction=" in out


def test_cli_report(tiny_cfg, tmp_path, capsys):
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    for out, ranks in ((out_a, "1"), (out_b, "2")):
        assert main(["run", "--case", tiny_cfg, "--ranks", ranks,
                     "--iterations", "5", "--out", out]) == 0
    capsys.readouterr()
    assert main(["report", "--records", os.path.join(out_a, "record.csv"),
                 os.path.join(out_b, "record.csv"), "--machine", "bgq"]) == 0
    captured = capsys.readouterr()
    lines = captured.out.strip().splitlines()
    assert len(lines) == 3
    header = lines[0].split(",")
    assert header == ["case", "machine", "ranks", "threads", "iterations",
                      "wall_s", "msgs", "bytes", "collectives", "write_ops",
                      "activations", "efficiency", "wh_per_iter"]
    assert "tc-tiny" in captured.err  # the text table goes to stderr
