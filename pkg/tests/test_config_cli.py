import json

import numpy as np
import pytest
from PIL import Image

from tfcount import cli
from tfcount.config import RunConfig, config_from_dict, flat_keys, load_config, mock_config
from tfcount.errors import ConfigError
from tfcount.synthetic import generate_scene

# -- config -------------------------------------------------------------------


def test_defaults():
    cfg = RunConfig()
    assert cfg.superpixel.n_segments == 1024 and cfg.superpixel.compactness == 10.0
    assert cfg.superpixel.max_iterations == 10
    assert cfg.matching.theta == 0.4 and cfg.matching.delta == 0.5 and cfg.matching.tpu_rounds == 1
    assert cfg.multiscale.n_p == 2 and cfg.dedup.iou_threshold == 0.8
    assert cfg.segmenter.variant == "vit_h" and cfg.semantic.model == "dinov2"


def test_file_then_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("matching:\n  theta: 0.3\nmultiscale:\n  n_p: 3\n")
    cfg = load_config(p)
    assert cfg.matching.theta == 0.3 and cfg.multiscale.n_p == 3
    cfg2 = cfg.with_overrides({"matching.theta": "0.25", "multiscale.enabled": "false"})
    assert cfg2.matching.theta == 0.25 and cfg2.multiscale.enabled is False and cfg2.multiscale.n_p == 3
    j = tmp_path / "c.json"
    j.write_text(json.dumps(cfg2.to_dict()))
    assert load_config(j) == cfg2


@pytest.mark.parametrize("data", [
    {"matching": {"thetaa": 0.3}},
    {"bogus": 1},
    {"matching": {"theta": 2.0}},
    {"segmenter": {"variant": "vit_l"}},
    {"matching": {"tpu_rounds": 1.5}},
    {"multiscale": {"enabled": "maybe"}},
    {"matching": 3},
])
def test_rejects_bad_config(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_unknown_override_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"matching.gamma": 1})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")


def test_flat_keys_cover_every_section():
    keys = flat_keys()
    for k in ("superpixel.n_segments", "segmenter.weights_path", "semantic.model", "prompts.mode",
              "multiscale.n_p", "dedup.iou_threshold", "matching.mask_interp", "seed", "workers"):
        assert k in keys


# -- cli ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def scene_png(tmp_path_factory):
    scene = generate_scene(np.random.default_rng(3), n_targets=10, n_distractors=4)
    path = tmp_path_factory.mktemp("img") / "scene.png"
    Image.fromarray(scene.render()).save(path)
    return scene, str(path)


def box_args(scene):
    out = []
    for b in scene.reference_boxes():
        out += ["--box", ",".join(str(int(v)) for v in b)]
    return out


def test_count_command(scene_png, capsys, tmp_path):
    scene, path = scene_png
    overlay = tmp_path / "o.png"
    assert cli.main(["count", path, "--mock", "--json", "--render", str(overlay)] + box_args(scene)) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["count"] == scene.count
    img = np.asarray(Image.open(overlay))
    assert img.shape == (scene.height, scene.width, 3)


def test_count_with_points_and_refs_file(scene_png, capsys, tmp_path):
    scene, path = scene_png
    pts = []
    for p in scene.reference_points():
        pts += ["--point", f"{p.x},{p.y}"]
    assert cli.main(["count", path, "--mock"] + pts) == 0
    assert int(capsys.readouterr().out) == scene.count
    refs = tmp_path / "refs.json"
    refs.write_text(json.dumps({"boxes": [list(b) for b in scene.reference_boxes()]}))
    assert cli.main(["count", path, "--mock", "--refs", str(refs)]) == 0
    assert int(capsys.readouterr().out) == scene.count


def test_exit_codes(scene_png, tmp_path, capsys):
    scene, path = scene_png
    assert cli.main(["count", path, "--mock", "--matching.theta", "3"] + box_args(scene)) == 2
    assert cli.main(["eval", "fsc147", "--mock", "--root", str(tmp_path / "none")]) == 3
    img = np.array(Image.open(path))
    img[:4, :4] = (1, 1, 1)
    tiny = tmp_path / "tiny.png"
    Image.fromarray(img).save(tiny)
    assert cli.main(["count", str(tiny), "--mock", "--point", "1,1"]) == 4
    assert cli.main(["count", path, "--segmenter.weights_path", str(tmp_path / "w.pth")] + box_args(scene)) == 5
    assert cli.main(["count", path, "--mock"]) == 7
    assert cli.main(["count", path, "--mock", "--box", "0,0,900,900"]) == 7
    assert cli.main(["count", str(tmp_path / "missing.png"), "--mock", "--box", "0,0,2,2"]) == 7
    err = capsys.readouterr().err
    assert err.count("error:") == 7


def test_eval_command_mock_and_resume(tmp_path, capsys):
    out = tmp_path / "r.json"
    prog = tmp_path / "p.jsonl"
    args = ["eval", "mock", "--mock", "--n-scenes", "5", "--out", str(out), "--progress", str(prog)]
    assert cli.main(args) == 0
    rep = json.loads(out.read_text())
    assert rep["mae"] == 0 and rep["rmse"] == 0 and len(rep["per_sample"]) == 5
    assert rep["config"]["segmenter"]["backend"] == "mock"
    body = {k: v for k, v in rep.items() if k != "runtime_s"}
    assert cli.main(args) == 0
    rep2 = json.loads(out.read_text())
    assert {k: v for k, v in rep2.items() if k != "runtime_s"} == body
    assert len(prog.read_text().splitlines()) == 5


def test_eval_command_on_fsc_layout(tmp_path, capsys):
    from tfcount.datasets import write_fsc147
    from tfcount.synthetic import generate_corpus

    write_fsc147(tmp_path / "fsc", generate_corpus(2, 3, count_range=(5, 15)))
    assert cli.main(["eval", "fsc147", "--mock", "--root", str(tmp_path / "fsc"), "--limit", "3"]) == 0
    assert "MAE=0.0000" in capsys.readouterr().out


def test_sweep_command(tmp_path, capsys):
    assert cli.main(["sweep", "theta", "0.2,0.4,1.0", "--mock", "--n-scenes", "2",
                     "--out-dir", str(tmp_path)]) == 0
    files = sorted(p.name for p in tmp_path.iterdir())
    assert files == ["summary.txt", "theta_0.2.json", "theta_0.4.json", "theta_1.0.json"]
    assert "theta=1.0" in (tmp_path / "summary.txt").read_text()
    assert cli.main(["sweep", "theta", "abc", "--mock"]) == 7


def test_render_debug_command(scene_png, tmp_path):
    _, path = scene_png
    assert cli.main(["render-debug", path, "--mock", "--out-dir", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "debug.json").read_text())
    assert meta["n_superpixel_maps"] == 5 and meta["n_proposals"] > 0
    labels = Image.open(tmp_path / "superpixels_full.png")
    data = np.load(tmp_path / "proposals.npz")
    assert data["confidence"].shape == (meta["n_proposals"],)
    assert labels.size == (192, 192)


def test_cli_seed_is_echoed(tmp_path):
    out = tmp_path / "r.json"
    assert cli.main(["eval", "mock", "--mock", "--n-scenes", "1", "--seed", "5", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["config"]["seed"] == 5


def test_mock_config_helper():
    cfg = mock_config(**{"matching.theta": 0.3})
    assert cfg.segmenter.backend == "mock" and cfg.matching.theta == 0.3
