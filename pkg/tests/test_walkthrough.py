import pytest

from uniqa.walkthrough import ARTIFACTS, StageFailed, WalkthroughScript, main, run_walkthrough


def test_script_order():
    script = WalkthroughScript(out_dir=__import__("pathlib").Path("/x"))
    stages = [s for s, _ in script.commands()]
    assert stages == ["gen-data", "caption", "pretrain-aes", "purify", "pretrain", "finetune", "eval-zero-shot",
                      "eval-finetuned"]
    names = [n for _, n in ARTIFACTS]
    assert names.index("report_zero_shot.json") < names.index("report_finetuned.json")
    assert all("mock://" in " ".join(argv) for s, argv in script.commands() if s == "caption")


def test_small_run_inventory(tmp_path, monkeypatch):
    monkeypatch.setenv("UNIQA_CAPTIONER_URL", "http://127.0.0.1:9")  # must be ignored
    inv = run_walkthrough(tmp_path, n_images=64, seed=2, epochs=1, repeats=2)
    assert [p.name for _, p in inv] == [n for _, n in ARTIFACTS]
    assert sorted(p.name for p in tmp_path.iterdir()) == sorted(n for _, n in ARTIFACTS)
    import os

    assert os.environ["UNIQA_CAPTIONER_URL"] == "http://127.0.0.1:9"


def test_stage_failure_names_stage(tmp_path):
    with pytest.raises(StageFailed) as info:
        run_walkthrough(tmp_path, n_images=3, seed=0, epochs=1, repeats=1)
    assert info.value.stage == "pretrain-aes" and info.value.code == 2


def test_main_reports_failure(tmp_path, capsys):
    assert main(["--out-dir", str(tmp_path), "--n", "3"]) == 1
    assert "pretrain-aes" in capsys.readouterr().err
