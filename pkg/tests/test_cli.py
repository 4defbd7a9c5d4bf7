"""End-to-end command-line workflows driven through cli.main()."""

import json

import numpy as np
import pytest

from sonarforge import cli
from sonarforge.dataset import DatasetError, SweepConfig
from sonarforge.imagebuf import ImageBuffer, load_image, save_image


def last_report(capsys):
    """Parse the JSON run report from the last stdout line."""
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


def write_scene(path, width=24, height=16):
    scene = {
        "grid": {"nx": 33, "ny": 33, "cell_size": 0.5},
        "seabed": {"kind": "mud", "seed": 5},
        "targets": [{"shape": "sphere", "dims": {"radius": 0.5},
                     "position": [8.0, 8.0]}],
        "camera": {"position": [8.0, 8.0, 6.0], "fov_deg": 90.0,
                   "width": width, "height": height},
    }
    path.write_text(json.dumps(scene))


def write_rgb(path, rng, h=16, w=16):
    data = rng.integers(0, 256, (h, w, 3)).astype(np.float64) / 255.0
    save_image(ImageBuffer(data), path)


def write_gray(path, rng, h=16, w=16):
    data = rng.integers(0, 256, (h, w, 1)).astype(np.float64) / 255.0
    save_image(ImageBuffer(data), path)


# ---------------------------------------------------------------------------
# Single-image commands
# ---------------------------------------------------------------------------

def test_render_command(tmp_path, capsys):
    scene = tmp_path / "scene.json"
    write_scene(scene)
    out = tmp_path / "img.png"
    rc = cli.main(["render", "--scene", str(scene), "--out", str(out),
                   "--threads", "1"])
    assert rc == 0
    img = load_image(out)
    assert (img.height, img.width, img.channels) == (16, 24, 3)
    report = last_report(capsys)
    assert report["stage"] == "render"
    assert report["images_produced"] == 1
    assert report["mean_render_seconds"] > 0


def test_render_size_override(tmp_path, capsys):
    scene = tmp_path / "scene.json"
    write_scene(scene, width=24, height=16)
    out = tmp_path / "small.png"
    rc = cli.main(["render", "--scene", str(scene), "--out", str(out),
                   "--width", "10", "--height", "8", "--threads", "1"])
    assert rc == 0
    img = load_image(out)
    assert (img.height, img.width) == (8, 10)
    capsys.readouterr()


def test_postproc_command(tmp_path, capsys, rng):
    src = tmp_path / "in.png"
    write_rgb(src, rng)
    out = tmp_path / "out.png"
    rc = cli.main(["postproc", "--in", str(src), "--out", str(out),
                   "--grayscale", "--noise", "speckle:0.05:seed=3"])
    assert rc == 0
    img = load_image(out)
    assert img.channels == 1
    report = last_report(capsys)
    assert report["stage"] == "postproc"
    assert report["images_consumed"] == 1


def test_postproc_colormap_output_is_rgb(tmp_path, capsys, rng):
    src = tmp_path / "in.png"
    write_rgb(src, rng)
    out = tmp_path / "out.png"
    rc = cli.main(["postproc", "--in", str(src), "--out", str(out),
                   "--grayscale", "--colormap", "copper"])
    assert rc == 0
    assert load_image(out).channels == 3
    capsys.readouterr()


def test_stitch_command(tmp_path, capsys, rng):
    port = tmp_path / "port.pgm"
    stbd = tmp_path / "stbd.pgm"
    write_gray(port, rng, h=4, w=5)
    write_gray(stbd, rng, h=4, w=6)
    out = tmp_path / "swath.png"
    rc = cli.main(["stitch", "--port", str(port), "--starboard", str(stbd),
                   "--out", str(out), "--deadzone", "2"])
    assert rc == 0
    img = load_image(out)
    assert (img.height, img.width) == (4, 5 + 2 + 6)
    report = last_report(capsys)
    assert report["images_consumed"] == 2


def test_bench_command(tmp_path, capsys):
    rc = cli.main(["bench", "-n", "1", "--size", "48", "--threads", "1"])
    assert rc == 0
    report = last_report(capsys)
    assert report["stage"] == "bench"
    assert report["images_produced"] == 1
    assert report["mean_render_seconds"] > 0
    assert report["std_render_seconds"] == 0.0
    assert report["mean_postproc_seconds"] > 0
    assert report["image_size"] == "48x48"
    assert report["threads"] == 1


# ---------------------------------------------------------------------------
# Dataset pipeline
# ---------------------------------------------------------------------------

def test_pipeline_end_to_end(tmp_path, capsys):
    cfg = SweepConfig(counts={"cube": 3, "sphere": 3},
                      aspect_angles=[0.0, 120.0, 240.0],
                      camera_altitudes=(3.0,),
                      image_width=32, image_height=32,
                      grid_nodes=61, cell_size=0.1,
                      chain=({"op": "grayscale"},
                             {"op": "noise", "kind": "speckle", "variance": 0.05}),
                      master_seed=11,
                      output_dir=str(tmp_path / "unused"))
    sweep = tmp_path / "sweep.json"
    sweep.write_text(json.dumps(cfg.to_dict()))
    ds = tmp_path / "ds"

    rc = cli.main(["dataset", "generate", "--config", str(sweep),
                   "--out-dir", str(ds), "--workers", "2"])
    assert rc == 0
    manifest = ds / "manifest.jsonl"
    assert manifest.is_file()
    report = last_report(capsys)
    assert report["stage"] == "dataset-generate"
    assert report["images_produced"] == 6

    # training before any split assignment is an operation error, not a crash
    model = tmp_path / "model.json"
    assert cli.main(["train", "--manifest", str(manifest), "--out", str(model),
                     "--seed", "0"]) == 1
    capsys.readouterr()

    # the dataset-split alias writes wherever --out points
    alt = tmp_path / "alt.jsonl"
    rc = cli.main(["dataset", "split", "--manifest", str(manifest),
                   "--train", "cube=1,sphere=1", "--seed", "0",
                   "--out", str(alt)])
    assert rc == 0
    assert alt.is_file()
    capsys.readouterr()

    rc = cli.main(["split", "--manifest", str(manifest),
                   "--train", "cube=1,sphere=1", "--seed", "0"])
    assert rc == 0
    report = last_report(capsys)
    assert report["train_records"] == 2
    assert report["test_records"] == 4
    assert alt.read_text() == manifest.read_text()

    rc = cli.main(["train", "--manifest", str(manifest), "--out", str(model),
                   "--seed", "0", "--epochs", "40"])
    assert rc == 0
    report = last_report(capsys)
    assert report["stage"] == "train"
    assert report["images_consumed"] == 2
    assert set(json.loads(model.read_text())["classes"]) == {"cube", "sphere"}

    rep = tmp_path / "report.json"
    rc = cli.main(["eval", "--manifest", str(manifest), "--model", str(model),
                   "--report", str(rep)])
    assert rc == 0
    report = last_report(capsys)
    assert report["stage"] == "eval"
    assert report["images_consumed"] == 4
    saved = json.loads(rep.read_text())
    assert 0.0 <= saved["accuracy"] <= 1.0
    assert saved["accuracy"] == report["accuracy"]
    assert np.sum(saved["counts"]) == 4


def test_parse_train_counts():
    counts = cli.parse_train_counts("cylinder=21, cube=27,sphere=32")
    assert counts == {"cylinder": 21, "cube": 27, "sphere": 32}
    with pytest.raises(DatasetError):
        cli.parse_train_counts("junk")
    with pytest.raises(DatasetError):
        cli.parse_train_counts("")


# ---------------------------------------------------------------------------
# Failure modes
# ---------------------------------------------------------------------------

def test_missing_input_file_is_operation_error(tmp_path, capsys):
    rc = cli.main(["render", "--scene", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "x.png")])
    assert rc == 1
    capsys.readouterr()


def test_bad_noise_spec_is_operation_error(tmp_path, capsys, rng):
    src = tmp_path / "in.png"
    write_rgb(src, rng)
    rc = cli.main(["postproc", "--in", str(src), "--out", str(tmp_path / "o.png"),
                   "--noise", "perlin:0.1"])
    assert rc == 1
    rc = cli.main(["postproc", "--in", str(src), "--out", str(tmp_path / "o.png"),
                   "--colormap", "jet"])
    assert rc == 1
    capsys.readouterr()


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as ei:
        cli.main([])
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        cli.main(["render", "--scene", "s.json"])   # missing --out
    assert ei.value.code == 2
    capsys.readouterr()
