import json
import subprocess
import sys

import numpy as np
import pytest

from multimacenko.cli import cli_main
from multimacenko.io import load_image, load_profile, save_image
from multimacenko.multi_target import fit
from multimacenko.normalizer import normalize

from conftest import synth_image


@pytest.fixture
def ref_dir(tmp_path):
    d = tmp_path / "refs"
    d.mkdir()
    for i, seed in enumerate((21, 22, 23)):
        save_image(synth_image(seed, size=64), d / f"ref{i}.png")
    return d


@pytest.fixture
def tile_dir(tmp_path):
    d = tmp_path / "tiles"
    d.mkdir()
    for i in range(5):
        save_image(synth_image(300 + i, size=48), d / f"tile{i}.png")
    return d


def test_fit_prints_source_count(ref_dir, tmp_path, capsys):
    out = tmp_path / "profile.json"
    assert cli_main(["fit", "--strategy", "avg-post", "--refs", str(ref_dir), "--out", str(out)]) == 0
    assert "source_count=3" in capsys.readouterr().out
    assert load_profile(out).profile.source_count == 3


def test_fit_accepts_files(ref_dir, tmp_path):
    out = tmp_path / "p.json"
    files = [str(p) for p in sorted(ref_dir.iterdir())][:2]
    assert cli_main(["fit", "--strategy", "concat", "--refs", *files, "--out", str(out)]) == 0
    assert load_profile(out).profile.source_count == 2


def test_macenko_with_many_refs_is_usage_error(ref_dir, tmp_path, capsys):
    code = cli_main(["fit", "--strategy", "macenko", "--refs", str(ref_dir), "--out", str(tmp_path / "p.json")])
    assert code == 1
    assert "exactly one" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["fit", "--refs", "x"],
        ["fit", "--strategy", "median", "--refs", "x", "--out", "p.json"],
        ["normalize", "--profile", "p.json"],
        ["bogus"],
    ],
)
def test_usage_errors(argv, capsys):
    assert cli_main(argv) == 1
    assert capsys.readouterr().err


def test_fit_processing_error(tmp_path, capsys):
    d = tmp_path / "white"
    d.mkdir()
    save_image(np.full((32, 32, 3), 255, np.uint8), d / "w.png")
    assert cli_main(["fit", "--strategy", "concat", "--refs", str(d), "--out", str(tmp_path / "p.json")]) == 2
    assert "InsufficientTissue" in capsys.readouterr().err


def test_normalize_preserves_names(ref_dir, tile_dir, tmp_path, capsys):
    profile = tmp_path / "p.json"
    cli_main(["fit", "--strategy", "avg-post", "--refs", str(ref_dir), "--out", str(profile)])
    out = tmp_path / "out"
    assert cli_main(["normalize", "--profile", str(profile), "--input", str(tile_dir), "--output", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == [f"tile{i}.png" for i in range(5)]
    assert "normalized=5\tfailed=0" in capsys.readouterr().out


def test_normalize_single_file(ref_dir, tile_dir, tmp_path):
    profile = tmp_path / "p.json"
    cli_main(["fit", "--strategy", "concat", "--refs", str(ref_dir), "--out", str(profile)])
    out = tmp_path / "out"
    src = tile_dir / "tile3.png"
    assert cli_main(["normalize", "--profile", str(profile), "--input", str(src), "--output", str(out)]) == 0
    assert [p.name for p in out.iterdir()] == ["tile3.png"]


@pytest.mark.parametrize("strategy", ["macenko", "stochastic", "concat", "avg-pre", "avg-post"])
def test_cli_matches_library(strategy, ref_dir, tile_dir, tmp_path):
    refs = sorted(ref_dir.iterdir())
    ref_args = [str(refs[0])] if strategy == "macenko" else [str(ref_dir)]
    profile_path = tmp_path / "p.json"
    cli_main(["fit", "--strategy", strategy, "--refs", *ref_args, "--seed", "5", "--out", str(profile_path)])
    out = tmp_path / "out"
    cli_main(["normalize", "--profile", str(profile_path), "--input", str(tile_dir), "--output", str(out), "--jobs", "2"])

    images = [load_image(p) for p in (refs[:1] if strategy == "macenko" else refs)]
    profile = fit(images, strategy, seed=5)
    for k, tile in enumerate(sorted(tile_dir.iterdir())):
        expected = normalize(load_image(tile), profile, draw_index=k).image
        tmp = tmp_path / "expected.png"
        save_image(expected, tmp)
        assert (out / tile.name).read_bytes() == tmp.read_bytes()


def test_jobs_do_not_change_bytes(ref_dir, tile_dir, tmp_path):
    profile = tmp_path / "p.json"
    cli_main(["fit", "--strategy", "stochastic", "--seed", "11", "--refs", str(ref_dir), "--out", str(profile)])
    outputs = {}
    for jobs in (1, 8):
        out = tmp_path / f"out{jobs}"
        cli_main(["normalize", "--profile", str(profile), "--input", str(tile_dir), "--output", str(out), "--jobs", str(jobs)])
        outputs[jobs] = {p.name: p.read_bytes() for p in out.iterdir()}
    assert outputs[1] == outputs[8] and len(outputs[1]) == 5


def test_batch_failures_are_reported(ref_dir, tile_dir, tmp_path, capsys):
    save_image(np.full((32, 32, 3), 255, np.uint8), tile_dir / "tile2_white.png")
    gray = np.stack([np.linspace(20, 200, 32 * 32).astype(np.uint8).reshape(32, 32)] * 3, axis=-1)
    save_image(gray, tile_dir / "tile4_gray.png")
    profile = tmp_path / "p.json"
    cli_main(["fit", "--strategy", "avg-post", "--refs", str(ref_dir), "--out", str(profile)])
    report = tmp_path / "report.json"
    out = tmp_path / "out"
    code = cli_main(["normalize", "--profile", str(profile), "--input", str(tile_dir), "--output", str(out),
                     "--jobs", "4", "--report", str(report)])
    assert code == 2
    failures = json.loads(report.read_text())
    assert [f["file"].rsplit("/", 1)[-1] for f in failures] == ["tile2_white.png", "tile4_gray.png"]
    assert failures[0]["error"].startswith("InsufficientTissue")
    assert failures[1]["error"].startswith("DegenerateCloud")
    assert len(list(out.iterdir())) == 5


def test_inspect(ref_dir, tmp_path, capsys):
    profile = tmp_path / "p.json"
    cli_main(["fit", "--strategy", "stochastic", "--seed", "3", "--refs", str(ref_dir), "--out", str(profile)])
    capsys.readouterr()
    fig = tmp_path / "profile.png"
    assert cli_main(["inspect", "--profile", str(profile), "--figure", str(fig)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "strategy\tstochastic"
    rows = [line.split("\t") for line in lines if line.startswith("reference")]
    assert len(rows) == 6 and all(len(r) == 6 for r in rows)
    assert fig.stat().st_size > 1000


def test_inspect_missing_profile(tmp_path):
    assert cli_main(["inspect", "--profile", str(tmp_path / "none.json")]) == 2


def test_synth_is_deterministic(tmp_path):
    for run in ("a", "b"):
        assert cli_main(["synth", "--seed", "7", "--size", "128", "--out", str(tmp_path / f"{run}.png"),
                         "--truth", str(tmp_path / f"{run}.json")]) == 0
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    truth = json.loads((tmp_path / "a.json").read_text())
    assert np.array(truth["concentrations"]).shape == (2, 128 * 128)
    assert load_image(tmp_path / "a.png").shape == (128, 128, 3)


def test_synth_rotation_and_background(tmp_path):
    cli_main(["synth", "--seed", "2", "--size", "32", "--out", str(tmp_path / "a.png"), "--truth", str(tmp_path / "a.json")])
    cli_main(["synth", "--seed", "2", "--size", "32", "--rotate-deg", "10", "--background", "0.3",
              "--out", str(tmp_path / "b.png"), "--truth", str(tmp_path / "b.json")])
    va = np.array(json.loads((tmp_path / "a.json").read_text())["v_true"])
    vb = np.array(json.loads((tmp_path / "b.json").read_text())["v_true"])
    assert not np.allclose(va, vb)
    assert np.all(load_image(tmp_path / "b.png") == 255, axis=-1).mean() > 0.2


def test_synth_bad_background(tmp_path):
    assert cli_main(["synth", "--background", "1.5", "--out", str(tmp_path / "x.png")]) == 1


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "multimacenko.cli", "synth", "--size", "16", "--out",
                           str(tmp_path / "s.png")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    bad = subprocess.run([sys.executable, "-m", "multimacenko.cli", "fit"], capture_output=True, text=True)
    assert bad.returncode == 1
