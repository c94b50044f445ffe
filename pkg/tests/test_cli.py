import subprocess
import sys

import pytest

from hoigen.cli import ERROR_PREFIX, RunConfig, apply_flags, build_parser, load_config, main
from hoigen.metrics import parse_report

TINY_INI = """
[model]
d_model = 16
n_modules = 1
k = 1
d_state = 4
depth = 1

[train]
batch_size = 2
lr = 1e-3

[schedule]
t = 100

[corpus]
size = 2
length = 10
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "tiny.ini").write_text(TINY_INI)
    return tmp_path


def run(workdir, *args):
    return main([*args, "--config", str(workdir / "tiny.ini")])


def test_defaults():
    cfg = RunConfig()
    assert cfg.guidance == 2.0 and cfg.sampler_steps == 50
    assert cfg.model_config().d_model == 64 and cfg.model_config().n_modules == 4


def test_flags_override_config(workdir):
    (workdir / "g.ini").write_text("[sample]\nguidance = 3.5\n[schedule]\nsteps = 20\n")
    args = build_parser().parse_args(["sample", "--config", str(workdir / "g.ini"), "--guidance", "1.5"])
    cfg = apply_flags(load_config(args.config), args)
    assert cfg.guidance == 1.5 and cfg.sampler_steps == 20
    args = build_parser().parse_args(["train", "--steps", "7"])
    cfg = apply_flags(RunConfig(), args)
    assert cfg.max_steps == 7 and cfg.sampler_steps == 50


def test_end_to_end_is_deterministic(workdir, capsys):
    c, g = workdir / "corpus", workdir
    assert run(workdir, "corpus", "--out", str(c)) == 0
    for tag in ("a", "b"):
        assert run(workdir, "train", "--corpus", str(c), "--out", str(g / f"run_{tag}"), "--steps", "2") == 0
        assert run(workdir, "sample", "--corpus", str(c), "--checkpoint", str(g / f"run_{tag}" / "model.ckpt"),
                   "--out", str(g / f"gen_{tag}"), "--steps", "3", "--csv") == 0
        assert run(workdir, "eval", "--corpus", str(c), "--generated", str(g / f"gen_{tag}"),
                   "--out", str(g / f"report_{tag}.txt")) == 0
    for rel in ("run_{}/model.ckpt", "run_{}/train_log.csv", "gen_{}/clip_0000.hoi", "gen_{}/clip_0001.csv",
                "report_{}.txt"):
        assert (g / rel.format("a")).read_bytes() == (g / rel.format("b")).read_bytes(), rel
    rows, summary = parse_report((g / "report_a.txt").read_text())
    assert [r.clip_id for r in rows] == ["clip_0000", "clip_0001"] and summary["clips"] == 2
    assert (g / "gen_a" / "clip_0000.csv").read_text().startswith("frame,name,x,y,z\n0,joint0,")


def test_bench_command(workdir, capsys):
    out = workdir / "bench.csv"
    assert main(["bench", "--grid", "8,16", "--reps", "1", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "L,tokens,flops_ejim,flops_naive,time_ejim,time_naive"
    assert [l.split(",")[0] for l in lines[1:3]] == ["8", "16"]
    assert any(l.startswith("# flop_ratio_naive_over_ejim L=200 ") for l in lines)


def expect_error(capsys, code, kind, argv):
    assert main(argv) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"{ERROR_PREFIX}: {kind}")


def test_error_missing_corpus(workdir, capsys):
    expect_error(capsys, 1, "corpus:", ["train", "--corpus", str(workdir / "none")])


def test_error_missing_checkpoint(workdir, capsys):
    expect_error(capsys, 1, "checkpoint:", ["sample", "--checkpoint", str(workdir / "none.ckpt")])


def test_error_eval_needs_generated(capsys):
    expect_error(capsys, 1, "config:", ["eval"])


def test_error_unknown_config_key(workdir, capsys):
    (workdir / "bad.ini").write_text("[train]\nlearning_rate = 1\n")
    expect_error(capsys, 1, "config:", ["train", "--config", str(workdir / "bad.ini")])


def test_error_unpaired_clips(workdir, capsys):
    run(workdir, "corpus", "--out", str(workdir / "c"))
    (workdir / "g").mkdir()
    (workdir / "g" / "clip_0000.hoi").write_bytes((workdir / "c" / "clip_0000.hoi").read_bytes())
    expect_error(capsys, 1, "pairing:", ["eval", "--corpus", str(workdir / "c"),
                                         "--generated", str(workdir / "g")])


def test_error_short_corpus(workdir, capsys):
    (workdir / "s.ini").write_text("[corpus]\nlength = 4\n")
    expect_error(capsys, 1, "config:", ["corpus", "--config", str(workdir / "s.ini"),
                                        "--out", str(workdir / "x")])


def test_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bench", "--grid", "1,x"])
    assert exc.value.code == 2
    assert capsys.readouterr().err.startswith(f"{ERROR_PREFIX}: usage:")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hoigen", "eval"], capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stderr.startswith(f"{ERROR_PREFIX}: config:")
