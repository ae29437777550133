from aris_hppo.cli import main
from aris_hppo.selfcheck import SUITES, run_selfcheck


def test_all_suites_pass(capsys):
    assert len(SUITES) >= 5
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert "[FAIL]" not in out
    for suite in SUITES:
        assert f"] {suite}." in out


def test_perturbed_backward_fails_gradient_suite(capsys):
    assert main(["selfcheck", "--perturb-backward"]) == 1
    out = capsys.readouterr().out
    assert "[FAIL] gradients.dense_net" in out and "[FAIL] gradients.hppo_loss" in out
    # the hook is removed afterwards
    ok, results, _ = run_selfcheck(suites=["gradients"])
    assert ok


def test_crashing_suite_is_reported(monkeypatch):
    def boom():
        raise RuntimeError("exploded")

    monkeypatch.setitem(SUITES, "gae", boom)
    ok, results, timing = run_selfcheck(suites=["gae", "checkpoint"])
    assert not ok and set(timing) == {"gae", "checkpoint"}
    assert any(r.name == "error" and "exploded" in r.detail for r in results)
