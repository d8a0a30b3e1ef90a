"""Command-line verbs, exercised end to end where practical."""

from __future__ import annotations

import signal
import subprocess
import sys

import pytest

from ctlab import aes
from ctlab import attack as atk
from ctlab import harness as hn
from ctlab.channel import ChannelConfig, measure_once, start_server_thread
from ctlab.cli import build_parser, main

STUDY_KEY = "2b7e151628aed2a6abf7158809cf4f3c"
ATTACK_KEY = "8e73b0f7da0e6452c810f32b809079e5"

TINY_CONFIG = f"""
# small, fast experiment used by the CLI tests
study_key = {STUDY_KEY}
attack_key = {ATTACK_KEY}
line_size = 16
num_sets = 256
assoc = 2
cold_flush = false
scratch_lines = 32
samples_study = 800
samples_attack = 800
runs = 1
seed = 5
"""


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG)
    return path


def test_parser_rejects_bad_values():
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["collect", "--endpoint", "nocolon", "--samples", "1",
                           "--out", "x.csv"])
    with pytest.raises(SystemExit):
        parser.parse_args(["search", "--candidates", "c.csv", "--pair", "0011"])
    with pytest.raises(SystemExit):
        parser.parse_args(["definitely-not-a-verb"])


def test_collect_and_correlate_verbs(tmp_path, config_file):
    cfg = hn.config_from_mapping(hn.load_config_file(config_file))
    servers = []
    try:
        for key in (cfg.study_key, cfg.attack_key):
            servers.append(start_server_thread(cfg.channel_config(key, run=0)))
        outs = []
        for (server, _), name, seed in zip(
            servers, ("study.csv", "attack.csv"), ("11", "22")
        ):
            out = tmp_path / name
            outs.append(out)
            host, port = server.address
            rc = main([
                "collect", "--endpoint", f"{host}:{port}", "--samples", "500",
                "--seed", seed, "--out", str(out), "--packet-size", "256",
            ])
            assert rc == 0
            assert atk.load_profile(out).total_samples == 500
        cands = tmp_path / "cands.csv"
        rc = main([
            "correlate", "--study", str(outs[0]), "--attack", str(outs[1]),
            "--study-key", STUDY_KEY, "--retention", "1.0", "--out", str(cands),
        ])
        assert rc == 0
        assert atk.load_candidates(cands).keyspace_size >= 1
    finally:
        for server, thread in servers:
            server.close()
            thread.join(timeout=2)


def test_search_verb_exit_codes(tmp_path):
    key = bytes.fromhex(ATTACK_KEY)
    rk = aes.expand_key(key)
    pt = bytes(range(16))
    pair = f"{pt.hex()}:{aes.encrypt(pt, rk).hex()}"

    hit = tmp_path / "hit.csv"
    atk.save_candidates(
        atk.CandidateReport(tuple((key[j],) for j in range(16)),
                            tuple((1.0,) for _ in range(16))),
        hit,
    )
    assert main(["search", "--candidates", str(hit), "--pair", pair]) == 0

    miss = tmp_path / "miss.csv"
    atk.save_candidates(
        atk.CandidateReport(tuple(((key[j] + 1) % 256,) for j in range(16)),
                            tuple((1.0,) for _ in range(16))),
        miss,
    )
    assert main(["search", "--candidates", str(miss), "--pair", pair]) == 1


def test_experiment_verb_writes_csv(tmp_path, config_file):
    out = tmp_path / "report.csv"
    rc = main([
        "experiment", "--config", str(config_file), "--set", "samples_study=600",
        "--set", "samples_attack=600", "--format", "csv", "--out", str(out),
    ])
    assert rc == 0
    rows = hn.parse_report_csv(out.read_text())
    assert rows[0].countermeasure == "none"
    assert rows[0].s == 1.0


def test_report_verb_rerenders(tmp_path):
    src = tmp_path / "in.csv"
    src.write_text(hn.emit_report(hn.REFERENCE_ROWS, "csv"))
    out = tmp_path / "out.txt"
    assert main(["report", "--in", str(src), "--format", "table",
                 "--out", str(out)]) == 0
    assert "cache_partition" in out.read_text()


def test_bench_rate_verb(capsys):
    rc = main(["bench-rate", "--sizes", "1e4,1e5", "--fit-min", "1e4"])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "alpha=" in printed and "size=10000" in printed


def test_serve_subprocess_roundtrip(tmp_path, config_file):
    proc = subprocess.Popen(
        [sys.executable, "-m", "ctlab.cli", "serve", "--config", str(config_file),
         "--port", "0"],
        stdout=subprocess.PIPE,
        text=True,
    )
    try:
        banner = proc.stdout.readline()
        port = int(banner.rsplit(":", 1)[1])
        sample = measure_once(("127.0.0.1", port), bytes(16), timeout=2.0)
        assert sample.cycles > 0
    finally:
        proc.send_signal(signal.SIGINT)
        assert proc.wait(timeout=5) == 0
