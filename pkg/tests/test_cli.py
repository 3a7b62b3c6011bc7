"""Command-line behavior: exit codes, config precedence, report files."""

import csv
import hashlib
import json
from pathlib import Path

from click.testing import CliRunner

from gridmix.cli import (
    EXIT_ABORTED, EXIT_CONFIG, EXIT_DESTROYED, EXIT_RELEASED,
    EXIT_UNRECOVERABLE, main,
)


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def run_args(out, **kw):
    base = {"variant": "trap", "messages": 8, "groups": 4,
            "group-size": 2, "seed": 7, "out": out}
    base.update(kw)
    args = ["run"]
    for key, val in base.items():
        if val is True:
            args.append(f"--{key}")
        elif val is not None:
            args += [f"--{key}", str(val)]
    return args


class TestGroupsize:
    def test_paper_scale_size(self):
        res = invoke("groupsize", 0.2, 1024, 1)
        assert res.exit_code == 0
        assert "k = 32" in res.output

    def test_single_group_needs_strictly_less(self):
        big = invoke("groupsize", 0.2, 1024, 1)
        one = invoke("groupsize", 0.2, 1, 1)
        k_big = int(big.output.split("k = ")[1].split()[0])
        k_one = int(one.output.split("k = ")[1].split()[0])
        assert k_one < k_big

    def test_more_honest_members_cost_more(self):
        res = invoke("groupsize", 0.2, 1024, 3)
        assert "k = 38" in res.output

    def test_bad_fraction_is_a_config_error(self):
        res = invoke("groupsize", 1.5, 4, 1)
        assert res.exit_code == EXIT_CONFIG


class TestRunExitCodes:
    def test_honest_trap_round_releases(self, tmp_path):
        res = invoke(*run_args(tmp_path))
        assert res.exit_code == EXIT_RELEASED
        transcript = json.loads((tmp_path / "transcript.json").read_text())
        assert transcript["status"] == "released"
        assert len(transcript["published"]) == 4
        board = json.loads((tmp_path / "board.json").read_text())
        assert len(board) == 4
        assert (tmp_path / "metrics.jsonl").exists()
        assert "released" in (tmp_path / "summary.txt").read_text()

    def test_scripted_drop_can_destroy(self, tmp_path):
        script = tmp_path / "adv.json"
        script.write_text(json.dumps({"behaviors": {"*": [
            {"kind": "drop_ct", "layer": 0, "vertex": 0}]}}))
        codes = set()
        for seed in range(8):
            out = tmp_path / f"r{seed}"
            res = invoke(*run_args(out, seed=seed, adversary=script,
                                   **{"group-size": 1}))
            codes.add(res.exit_code)
        assert EXIT_DESTROYED in codes     # some seed hits a trap

    def test_nizk_bad_shuffle_aborts_with_a_name(self, tmp_path):
        script = tmp_path / "adv.json"
        script.write_text(json.dumps({"behaviors": {"*": [
            {"kind": "bad_shuffle", "layer": 0, "vertex": 0}]}}))
        res = invoke(*run_args(tmp_path, variant="nizk", messages=4,
                               adversary=script))
        assert res.exit_code == EXIT_ABORTED
        transcript = json.loads((tmp_path / "transcript.json").read_text())
        assert transcript["accused"], "abort must name a server"
        assert transcript["accused"][0].startswith("srv")

    def test_total_loss_is_unrecoverable(self, tmp_path):
        script = tmp_path / "adv.json"
        script.write_text(json.dumps({"failures": {
            f"srv{i:03d}": 1 for i in range(8)}}))
        res = invoke(*run_args(tmp_path, adversary=script))
        assert res.exit_code == EXIT_UNRECOVERABLE

    def test_odd_trap_message_count_rejected(self, tmp_path):
        res = invoke(*run_args(tmp_path, messages=7))
        assert res.exit_code == EXIT_CONFIG

    def test_undersized_group_rejected_without_override(self, tmp_path):
        res = invoke(*run_args(tmp_path, fraction=0.2))
        assert res.exit_code == EXIT_CONFIG
        assert "unsafe-override" in res.output

    def test_override_admits_desk_groups(self, tmp_path):
        res = invoke(*run_args(tmp_path, fraction=0.2,
                               **{"unsafe-override": True}))
        assert res.exit_code == EXIT_RELEASED

    def test_honest_minimum_bounded_by_group_size(self, tmp_path):
        res = invoke(*run_args(tmp_path, honest=3))
        assert res.exit_code == EXIT_CONFIG


class TestConfigPrecedence:
    def test_config_file_overrides_flags(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 99}))
        res = invoke(*run_args(tmp_path, seed=1, config=cfg))
        assert res.exit_code == EXIT_RELEASED
        transcript = json.loads((tmp_path / "transcript.json").read_text())
        assert transcript["config"]["seed"] == 99

    def test_unknown_config_keys_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"sede": 99}))
        res = invoke(*run_args(tmp_path, config=cfg))
        assert res.exit_code == EXIT_CONFIG
        assert "sede" in res.output

    def test_outputs_reproduce_byte_for_byte(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert invoke(*run_args(out)).exit_code == EXIT_RELEASED
        assert (a / "transcript.json").read_bytes() == \
            (b / "transcript.json").read_bytes()
        assert (a / "metrics.jsonl").read_bytes() == \
            (b / "metrics.jsonl").read_bytes()


class TestReports:
    def sweep(self, out, counts="2,4"):
        return invoke("sweep", "--variant", "basic", "-M", 64, "-k", 4,
                      "--modeled", "--disjoint", "--group-counts", counts,
                      "--out", out)

    def test_sweep_writes_table_and_figure(self, tmp_path):
        res = self.sweep(tmp_path)
        assert res.exit_code == 0
        with open(tmp_path / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["groups"]) for r in rows] == [2, 4]
        touches = [int(r["touches_per_group_max"]) for r in rows]
        assert touches[0] == 2 * touches[1]
        png = (tmp_path / "sweep.png").read_bytes()
        assert png[:8] == b"\x89PNG\r\n\x1a\n"
        assert (tmp_path / "sweep.jsonl").exists()

    def test_sweep_figure_reproduces(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        self.sweep(a)
        self.sweep(b)
        ha = hashlib.sha256((a / "sweep.png").read_bytes()).hexdigest()
        hb = hashlib.sha256((b / "sweep.png").read_bytes()).hexdigest()
        assert ha == hb

    def test_compare_reports_both_variants(self, tmp_path):
        res = invoke("compare-variants", "-M", 32, "-k", 4, "--modeled",
                     "--out", tmp_path)
        assert res.exit_code == 0
        with open(tmp_path / "compare.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["variant"] for r in rows] == ["nizk", "trap"]
        assert rows[0]["messages"] == rows[1]["messages"]
        assert "cost ratio nizk/trap" in res.output
        assert (tmp_path / "compare.png").exists()

    def test_bad_group_counts_rejected(self, tmp_path):
        res = invoke("sweep", "--group-counts", "4,x", "--out", tmp_path)
        assert res.exit_code == EXIT_CONFIG


class TestDialApp:
    def test_dial_sessions_agree_end_to_end(self, tmp_path):
        res = invoke(*run_args(tmp_path, variant="nizk", messages=4,
                               app="dial", mailboxes=3))
        assert res.exit_code == EXIT_RELEASED
        assert "4/4 sessions agreed" in res.output
