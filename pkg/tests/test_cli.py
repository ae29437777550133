import json
import subprocess
import sys

import pytest

from aris_hppo.cli import main
from aris_hppo.experiments import OUTPUT_ROOT_ENV, read_csv

TINY = [
    "channel.n_aris=2", "channel.n_tris=1", "env.horizon=5", "env.n_envs=2",
    "agent.encoder_widths=[8]", "agent.head_widths=[8]", "agent.critic_widths=[8]",
    "agent.rollout_steps=10", "agent.minibatch_size=5", "agent.n_epochs=1",
    "run.seeds=[7]", "run.episodes=4", "run.eval_episodes=2",
    "oracle.n_aris=1", "oracle.positions_per_axis=2", "oracle.phase_levels=4",
    "oracle.alpha_levels=2", "oracle.snapshots=2",
    "sweep.elements=[1, 2]", "sweep.element_phase_levels=4", "sweep.episodes=2", "sweep.seeds=[0]",
    "sweep.powers_dbm=[10.0]", "sweep.designs=[SUM, PENALIZED]",
]


def sets(extra=()):
    out = []
    for item in [*TINY, *extra]:
        out += ["--set", item]
    return out


def run(args, capsys):
    code = main(args)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


class TestExitCodes:
    def test_unknown_key_is_config_error(self, capsys, tmp_path):
        code, _, err = run(["train", "--set", "agent.bogus=1", "--out", str(tmp_path / "r")], capsys)
        assert code == 2 and err.startswith("config error: --set agent.bogus=1: unknown key")

    def test_bad_config_file_line_anchor(self, capsys, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[channel]\nn_aris = 2\n\nn_elements = 4\n")
        code, _, err = run(["describe", "--config", str(cfg)], capsys)
        assert code == 2 and f"{cfg}:4: unknown key 'n_elements'" in err

    def test_missing_checkpoint_is_runtime_error(self, capsys, tmp_path):
        code, _, err = run(["eval", *sets(), "--checkpoint", str(tmp_path / "none.ckpt"),
                            "--out", str(tmp_path / "e")], capsys)
        assert code == 1 and err.startswith("error:")

    def test_oracle_over_budget(self, capsys, tmp_path):
        code, _, err = run(["oracle", *sets(["oracle.budget=10"]), "--out", str(tmp_path / "o")],
                           capsys)
        assert code == 2 and "exceeds budget" in err
        assert not (tmp_path / "o").exists()

    def test_finalized_directory_refused(self, capsys, tmp_path):
        out = str(tmp_path / "o")
        assert run(["oracle", *sets(), "--out", out], capsys)[0] == 0
        code, _, err = run(["oracle", *sets(), "--out", out], capsys)
        assert code == 1 and "finalized" in err

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2


class TestCommands:
    def test_describe(self, capsys):
        code, out, _ = run(["describe", *sets()], capsys)
        assert code == 0
        assert "state_dim: 18" in out and "ARIS element phase residuals" in out
        assert "[channel]\n" in out and "n_aris = 2" in out

    def test_train_outputs(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
        code, out, _ = run(["train", *sets()], capsys)
        assert code == 0
        (run_dir,) = list(tmp_path.iterdir())
        assert run_dir.name.startswith("train-")
        header = (run_dir / "curve_seed7.csv").read_text().splitlines()[0]
        assert header == "episode,cum_reward,moving_avg,clip_frac_d,clip_frac_c,entropy_d,entropy_c,approx_kl"
        assert len(read_csv(run_dir / "curve_seed7.csv")) == 4
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["command"] == "train" and manifest["seeds"] == [7]
        assert manifest["finished"] and "policy_seed7.ckpt" in manifest["outputs"]
        assert (run_dir / "plot_results.py").exists() and (run_dir / "config.cfg").exists()
        compile((run_dir / "plot_results.py").read_text(), "plot_results.py", "exec")

        code, out, _ = run(["eval", *sets(), "--checkpoint", str(run_dir / "policy_seed7.ckpt"),
                            "--out", str(tmp_path / "ev")], capsys)
        assert code == 0 and "mean sum rate" in out
        assert len(read_csv(tmp_path / "ev" / "eval.csv")) == 2

    def test_eval_rejects_mismatched_checkpoint(self, capsys, tmp_path):
        assert run(["train", *sets(), "--out", str(tmp_path / "t")], capsys)[0] == 0
        code, _, err = run(["eval", *sets(["channel.n_aris=3"]), "--checkpoint",
                            str(tmp_path / "t" / "policy_seed7.ckpt"), "--out", str(tmp_path / "e")],
                           capsys)
        assert code == 2 and "state features" in err

    def test_oracle_csv(self, capsys, tmp_path):
        code, _, _ = run(["oracle", *sets(), "--elements", "1", "2", "--out", str(tmp_path / "o")],
                         capsys)
        assert code == 0
        text = (tmp_path / "o" / "oracle.csv").read_text().splitlines()
        assert text[0] == "n_elements,snapshot_seed,best_sum_rate,best_position_x,best_position_y"
        assert len(text) == 5

    def test_sweeps(self, capsys, tmp_path):
        assert run(["sweep-elements", *sets(), "--out", str(tmp_path / "se")], capsys)[0] == 0
        rows = read_csv(tmp_path / "se" / "sweep_elements.csv")
        assert {r["method"] for r in rows} == {"HPPO_ARIS_TRIS", "ORACLE"}
        assert run(["sweep-power", *sets(), "--out", str(tmp_path / "sp")], capsys)[0] == 0
        text = (tmp_path / "sp" / "sweep_power.csv").read_text().splitlines()
        assert text[0] == "p_dbm,design,mean_sum_rate,std,violation_rate" and len(text) == 3


class TestDeterminism:
    @pytest.mark.parametrize("command", ["train", "oracle", "sweep-power"])
    def test_byte_identical_csvs(self, capsys, tmp_path, command):
        outs = []
        for i in range(2):
            d = tmp_path / f"r{i}"
            assert run([command, *sets(), "--out", str(d)], capsys)[0] == 0
            outs.append({p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))})
        assert outs[0] and outs[0] == outs[1]

    def test_workers_do_not_change_results(self, capsys, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(["sweep-power", *sets(["sweep.seeds=[0, 1]"]), "--out", str(a)], capsys)[0] == 0
        assert run(["sweep-power", *sets(["sweep.seeds=[0, 1]"]), "--out", str(b), "--workers", "2"],
                   capsys)[0] == 0
        assert (a / "sweep_power.csv").read_bytes() == (b / "sweep_power.csv").read_bytes()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "aris_hppo.cli", "describe", "--set", "x.y=1"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "config error" in proc.stderr
