import io
import re
import shlex
from pathlib import Path

import numpy as np
import pytest

from shiftnet.cli import main
from shiftnet.netspec import builtin_spec, render_config, toy_spec
from shiftnet.tensor import dumps_tensor, read_tensor, write_tensor

README = Path(__file__).resolve().parents[1] / "README.md"


def run(*argv):
    buf = io.StringIO()
    code = main(list(argv), out=buf)
    return code, buf.getvalue()


def test_cost_machine_lines():
    code, text = run("cost", "--builtin", "resnet101", "--machine")
    assert code == 0
    assert text == "params=44549160\nflops=7801405440\n"
    assert abs(44549160 / 44.6e6 - 1) < 0.005


def test_cost_human_and_layers():
    code, text = run("cost", "--builtin", "shift101-8c", "--layers", "--include-bn-flops")
    assert code == 0
    assert "parameters  25,576,488 (25.6M)" in text
    assert "stage1.block1.shift2" in text
    keys = [line.split("=")[0] for line in text.splitlines() if "=" in line]
    assert keys == ["params", "flops"]


def test_cost_is_stable_across_runs():
    assert run("cost", "--builtin", "flattened35-4c", "--machine") == \
        run("cost", "--builtin", "flattened35-4c", "--machine")


def test_cost_resolution():
    code, text = run("cost", "--builtin", "resnet101", "--resolution", "112", "112", "--machine")
    assert code == 0 and text.startswith("params=44549160\n")
    code, _ = run("cost", "--builtin", "shift101-4c", "--resolution", "100", "100")
    assert code == 1


def test_describe(tmp_path):
    code, text = run("describe", "--builtin", "multishift101-4c")
    assert code == 0
    assert "depth=101" in text
    assert re.search(r"stage3\.block23\s+multi_shift\s+4c\s+1024\s+256\s+1024\s+1024x14x14", text)
    cfg = tmp_path / "toy.yaml"
    cfg.write_text(render_config(toy_spec()))
    code, text = run("describe", "--config", str(cfg))
    assert code == 0 and "stage2.block1" in text


def test_rf_grids_without_network():
    code, text = run("rf")
    assert code == 0
    blocks = text.strip().split("\n[")
    assert len(blocks) == 4
    sizes = [int(b.rsplit("rf_size=", 1)[1]) for b in blocks]
    assert sizes == [9, 5, 25, 25]
    code, text = run("rf", "--neighborhood", "8c")
    assert "rf_size=49" in text


def test_rf_builtin_diamond():
    code, text = run("rf", "--builtin", "multishift101-4c")
    assert code == 0
    stage3 = text.split("[stage3")[1].split("rf_size")[0]
    grid = stage3.split("\n", 1)[1]
    assert grid.count("#") == 25
    rows = [r.replace(" ", "") for r in grid.strip().splitlines()]
    assert rows == ["...#...", "..###..", ".#####.", "#######", ".#####.", "..###..", "...#..."]


def test_gradcheck_verb():
    code, text = run("gradcheck", "--block", "single_shift", "--neighborhood", "8c")
    assert code == 0
    assert "result=pass" in text
    assert float(re.search(r"max_rel_error=(\S+)", text).group(1)) < 1e-4


def test_gradcheck_exit_code_follows_tolerance():
    code, text = run("gradcheck", "--block", "bottleneck", "--tol", "1e-12")
    assert code == 1 and "result=fail" in text


def test_gradcheck_refuses_large_networks(capsys):
    code, _ = run("gradcheck", "--builtin", "shift101-4c")
    assert code == 1
    assert "limited to 50,000" in capsys.readouterr().err


@pytest.mark.parametrize("hood", ["none", "4c", "8c-no"])
def test_shift_demo(tmp_path, hood):
    x = np.random.default_rng(0).standard_normal((1, 17, 4, 5)).astype(np.float32)
    src, dst = tmp_path / "x.txt", tmp_path / "y.txt"
    write_tensor(src, x)
    assert run("shift-demo", "--neighborhood", hood, "--in", str(src), "--out", str(dst))[0] == 0
    if hood == "none":
        assert dst.read_bytes() == src.read_bytes()
    else:
        y = read_tensor(dst)
        assert y.shape == x.shape and not np.array_equal(x, y)


def test_shift_demo_canonicalizes(tmp_path):
    src, dst = tmp_path / "x.txt", tmp_path / "y.txt"
    src.write_text("1 1 1 2\n1.50  -0.0\n")
    run("shift-demo", "--neighborhood", "none", "--in", str(src), "--out", str(dst))
    assert dst.read_text() == dumps_tensor(read_tensor(src))


def test_train_writes_history_and_checkpoint(tmp_path):
    hist, ck = tmp_path / "h.csv", tmp_path / "net.ck"
    code, text = run("train", "--epochs", "3", "--samples", "16", "--out", str(hist),
                     "--checkpoint", str(ck))
    assert code == 0
    assert text.startswith("epochs=3 ")
    lines = hist.read_text().splitlines()
    assert lines[0] == "epoch,loss,acc,lr" and len(lines) == 4
    assert ck.stat().st_size > 0
    code, again = run("train", "--epochs", "3", "--samples", "16")
    assert again == hist.read_text()


def test_train_from_directory(tmp_path):
    rng = np.random.default_rng(0)
    with open(tmp_path / "manifest.tsv", "w") as fh:
        for i in range(6):
            write_tensor(tmp_path / f"{i}.txt", rng.standard_normal((1, 3, 8, 8)))
            fh.write(f"{i}.txt\t{i % 2}\n")
    code, text = run("train", "--data", str(tmp_path), "--epochs", "2")
    assert code == 0 and len(text.splitlines()) == 3


def test_usage_and_runtime_errors(capsys):
    assert run()[0] == 2
    assert run("cost")[0] == 2
    assert run("cost", "--builtin", "resnet101", "--bogus")[0] == 2
    assert run("cost", "--builtin", "resnet101", "--config", "x.yaml")[0] == 2
    assert run("shift-demo", "--neighborhood", "5c", "--in", "a", "--out", "b")[0] == 2
    capsys.readouterr()
    assert run("cost", "--builtin", "vgg16")[0] == 1
    assert "unknown builtin" in capsys.readouterr().err
    assert run("describe", "--config", "/nonexistent.yaml")[0] == 1
    assert run("shift-demo", "--neighborhood", "4c", "--in", "/nonexistent", "--out", "o")[0] == 1


def test_bad_config_reports_line(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(render_config(builtin_spec("shift101-4c")).replace("neighborhood: 4c", "neighborhood: 5C", 1))
    assert run("cost", "--config", str(cfg))[0] == 1
    err = capsys.readouterr().err
    assert re.search(r"line \d+: .*valid kinds", err)


# -- every console example in the README runs and prints what it shows -------


def _readme_examples():
    blocks = re.findall(r"```console\n(.*?)```", README.read_text(), flags=re.S)
    examples = []
    for block in blocks:
        current = None
        for line in block.splitlines():
            if line.startswith("$ "):
                current = (line[2:], [])
                examples.append(current)
            elif current is not None:
                current[1].append(line)
    return examples


def _line_pattern(line):
    if line.strip() == "...":
        return r"(?:.*\n)*?"
    if line.endswith("..."):
        return re.escape(line[:-3]) + r".*\n"
    return re.escape(line) + r"\n"


def _matches(expected, actual):
    pattern = "".join(_line_pattern(line) for line in expected)
    return re.fullmatch(pattern + (r"(?:.*\n)*" if expected and expected[-1].strip() == "..." else ""),
                        actual) is not None


def test_readme_has_examples():
    assert len(_readme_examples()) >= 5


@pytest.mark.parametrize("command,expected", _readme_examples(), ids=lambda v: v if isinstance(v, str) else "")
def test_readme_example(command, expected, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    write_tensor("x.txt", np.arange(2 * 5 * 3 * 3, dtype=np.float32).reshape(2, 5, 3, 3))
    Path("toy.yaml").write_text(render_config(toy_spec()))
    argv = shlex.split(command)
    assert argv[0] == "shiftnet"
    code, text = run(*argv[1:])
    assert code == 0, text
    assert _matches(expected, text), text
