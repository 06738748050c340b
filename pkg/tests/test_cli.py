import json

import pytest
import yaml

from builders import tiny_config
from xllm.cli import main
from xllm.eval import judge_stub, write_records


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump({"profiles": {"desk": tiny_config().to_dict()}}))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_inspect_prompt_prints_template(capsys):
    code, out = run(capsys, "inspect", "--prompt", "--modalities", "image,speech")
    assert code == 0
    assert out.out == "<Image><ImageFeats></Image><Speech><SpeechFeats></Speech>Question: <Instruction>\n Answer:\n"
    code, out = run(capsys, "inspect", "--prompt")
    assert out.out == "Question: <Instruction>\n Answer:\n"


def test_train_stage2_before_stage1_is_ordering_error(capsys, cfg_file, tmp_path):
    code, out = run(capsys, "--config", cfg_file, "train", "--stage", "2", "--run-dir", tmp_path / "run")
    assert code == 3
    assert "OrderingError" in out.err


def test_reference_profile_refuses_to_train(capsys, tmp_path):
    code, out = run(capsys, "train", "--stage", "1", "--profile", "paper", "--run-dir", tmp_path)
    assert code == 2 and "ConfigurationError" in out.err


def test_bad_flags_exit_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--stage", "1", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["train", "--stage", "4"])
    assert exc.value.code == 2


def test_gen_is_reproducible(capsys, cfg_file, tmp_path):
    sums = []
    for name in ("a", "b"):
        code, out = run(capsys, "--config", cfg_file, "gen", "--seed", 7, "--run-dir", tmp_path / name)
        assert code == 0
        sums.append(json.loads(out.out)["sha256"])
    assert sums[0] == sums[1]
    assert (tmp_path / "a" / "data" / "speech.bin").exists()


def test_eval_cer_from_pairs(capsys, tmp_path):
    pairs = tmp_path / "p.jsonl"
    pairs.write_text('{"reference": "abc", "hypothesis": "abd"}\n{"reference": "xy", "hypothesis": "xy"}\n')
    code, out = run(capsys, "eval", "--metric", "cer", "--input", pairs, "--out", tmp_path / "rep" / "cer")
    assert code == 0
    summary = json.loads(out.out)
    assert summary["cer"] == pytest.approx(1 / 5) and summary["substitutions"] == 1
    assert (tmp_path / "rep" / "cer.csv").exists()
    pairs.write_text('{"reference": "abc"}\n')
    code, out = run(capsys, "eval", "--metric", "cer", "--input", pairs)
    assert code == 4


def test_eval_relscore(capsys, tmp_path):
    path = tmp_path / "r.jsonl"
    records = [judge_stub(f"q{i}", "detail", "a", "b", seed=i) for i in range(6)]
    write_records(path, records)
    code, out = run(capsys, "eval", "--metric", "relscore", "--input", path)
    assert code == 0
    expected = 100 * sum(r.candidate_score for r in records) / sum(r.reference_score for r in records)
    assert json.loads(out.out)["relative_score"]["overall"] == pytest.approx(expected)
    code, _ = run(capsys, "eval", "--metric", "relscore")
    assert code == 2


def test_full_tiny_pipeline_through_cli(capsys, cfg_file, tmp_path):
    rd = tmp_path / "run"
    for stage in (1, 2, 3):
        code, out = run(capsys, "--config", cfg_file, "--run-dir", rd, "train", "--stage", stage)
        assert code == 0, out.err
    code, out = run(capsys, "--config", cfg_file, "--run-dir", rd, "eval", "--metric", "cer")
    assert code == 0 and json.loads(out.out)["utterances"] == 4
    code, out = run(capsys, "--config", cfg_file, "--run-dir", rd, "generate", "--instruction", "describe", "--image", 0, "--max-new", 4)
    assert code == 0 and "answer" in json.loads(out.out)
    code, out = run(capsys, "--config", cfg_file, "--run-dir", rd, "generate", "--instruction", "x", "--image", 99)
    assert code == 4
    code, out = run(capsys, "--config", cfg_file, "--run-dir", rd, "inspect", "--cif", "--speech", 1)
    trace = json.loads(out.out)
    assert code == 0 and trace["id"] == 1 and set(trace) == {"id", "alphas", "fire_positions", "integrated"}
