import numpy as np
import pytest

from freezelab.cli import main
from freezelab.data import DatasetSpec, make_dataset, save_dataset
from freezelab.grid import read_ppm
from freezelab.trainer import History

TINY = """
latent_dim = 8
image_size = 8
g_blocks = 3
d_blocks = 3
g_width = 8
d_width = 4
d_features = 8
feature_dim = 4
miner_hidden = 6
iterations = 4
eval_every = 2
batch_size = 4
fid_samples = 8
source_per_class = 4
source_g = src/source_G.frzd
source_d = src/source_D.frzd
"""


@pytest.fixture(scope="module")
def lab(tmp_path_factory):
    root = tmp_path_factory.mktemp("lab")
    (root / "tiny.cfg").write_text(TINY)
    assert main(["pretrain", "--config", str(root / "tiny.cfg"), "--out", str(root / "src"), "-q"]) == 0
    return root


def write_cfg(root, name, extra):
    path = root / name
    path.write_text(TINY + extra)
    return str(path)


def test_pretrain_outputs(lab):
    names = sorted(p.name for p in (lab / "src").iterdir())
    assert names == ["config.txt", "fid_log.csv", "source_D.frzd", "source_G.frzd", "summary.txt"]
    assert (lab / "src" / "fid_log.csv").read_text().startswith("iter,d_loss,g_loss,fid\n")


def test_transfer_is_byte_reproducible(lab):
    cfg = write_cfg(lab, "t.cfg", "grid_rows = 2\ngrid_cols = 3\n")
    outs = []
    for run in ("a", "b"):
        assert main(["transfer", "--config", cfg, "--strategy", "freezed", "--out", str(lab / run), "-q"]) == 0
        outs.append({p.name: p.read_bytes() for p in (lab / run).iterdir()})
    assert outs[0] == outs[1]
    assert {"fid_log.csv", "summary.txt", "config.txt", "grid_before.ppm", "grid_after.ppm",
            "grid_latents.txt", "target_G.frzd", "target_D.frzd"} <= set(outs[0])
    assert b"strategy = freezed" in outs[0]["config.txt"]
    assert outs[0]["grid_before.ppm"] != outs[0]["grid_after.ppm"]
    assert read_ppm(lab / "a" / "grid_after.ppm").shape == (2 * 8 + 2, 3 * 8 + 4, 3)


def test_seed_env_override_changes_results(lab, monkeypatch):
    cfg = write_cfg(lab, "s.cfg", "")
    monkeypatch.setenv("FREEZELAB_SEED", "5")
    assert main(["transfer", "--config", cfg, "--strategy", "finetune", "--out", str(lab / "s5"), "-q"]) == 0
    monkeypatch.delenv("FREEZELAB_SEED")
    assert main(["transfer", "--config", cfg, "--strategy", "finetune", "--out", str(lab / "s0"), "-q"]) == 0
    assert "seed = 5" in (lab / "s5" / "config.txt").read_text()
    assert (lab / "s5" / "fid_log.csv").read_bytes() != (lab / "s0" / "fid_log.csv").read_bytes()


def test_ablate_table(lab, capsys):
    cfg = write_cfg(lab, "ab.cfg", "")
    assert main(["ablate", "--config", cfg, "--depths", "0,2,4", "--out", str(lab / "ab"), "-q"]) == 0
    lines = (lab / "ab" / "ablation.txt").read_text().splitlines()
    assert lines[1].split() == ["Fine-tuning", "Layer", "0", "Layer", "2", "Layer", "4"]
    rows = (lab / "ab" / "ablation.csv").read_text().splitlines()
    assert len(rows) == 1 + 4
    assert rows[1].split(",")[1:] == rows[2].split(",")[1:]  # Layer 0 == fine-tuning
    assert "Fine-tuning" in capsys.readouterr().out


def test_fid_self_zero_and_symmetric(lab, capsys):
    a = make_dataset(DatasetSpec(n_classes=1, image_size=8), 10, seed=1)
    b = make_dataset(DatasetSpec(n_classes=1, image_size=8, shift=0.5), 10, seed=2)
    save_dataset(a, lab / "a.frzs")
    save_dataset(b, lab / "b.frzs")
    outs = []
    for x, y in (("a.frzs", "a.frzs"), ("a.frzs", "b.frzs"), ("b.frzs", "a.frzs"),
                 ("src/source_G.frzd", "src/source_G.frzd")):
        cfg = write_cfg(lab, "f.cfg", f"fid_a = {x}\nfid_b = {y}\n")
        assert main(["fid", "--config", cfg]) == 0
        outs.append(capsys.readouterr().out.splitlines())
    assert outs[0][0] == "desk-FID 0.0000" and outs[3][0] == "desk-FID 0.0000"
    assert outs[1][0] == outs[2][0] != outs[0][0]
    assert outs[1][1].startswith("# a=a.frzs (n=10)")


def test_grid_command(lab):
    cfg = write_cfg(lab, "g.cfg", "grid_checkpoint = src/source_G.frzd\ngrid_rows = 1\ngrid_cols = 1\n")
    assert main(["grid", "--config", cfg, "--out", str(lab / "g"), "-q"]) == 0
    raw = (lab / "g" / "grid.ppm").read_bytes()
    assert raw.startswith(b"P6\n8 8\n255\n") and len(raw) == 11 + 8 * 8 * 3


def test_exit_code_numeric_abort(lab):
    bad = make_dataset(DatasetSpec(n_classes=1, image_size=8), 4, seed=0)
    bad.images[:] = np.nan
    save_dataset(bad, lab / "nan.frzs")
    cfg = write_cfg(lab, "n.cfg", "target_data = nan.frzs\n")
    with np.errstate(invalid="ignore"):
        assert main(["transfer", "--config", cfg, "--strategy", "finetune", "--out", str(lab / "n"), "-q"]) == 2


def test_exit_code_checkpoint_mismatch(lab):
    cfg = str(lab / "m.cfg")
    (lab / "m.cfg").write_text(TINY.replace("d_width = 4", "d_width = 6"))
    assert main(["transfer", "--config", cfg, "--out", str(lab / "m"), "-q"]) == 3
    cfg = write_cfg(lab, "m2.cfg", "grid_checkpoint = src/source_D.frzd\n")
    assert main(["grid", "--config", cfg, "--out", str(lab / "m2"), "-q"]) == 3


def test_exit_code_input_format(lab, capsys):
    (lab / "junk.frzs").write_bytes(b"FRZS\x01\x00\x00\x00\xff")
    cfg = write_cfg(lab, "j.cfg", "fid_a = junk.frzs\nfid_b = junk.frzs\n")
    assert main(["fid", "--config", cfg]) == 4
    assert "truncated" in capsys.readouterr().err
    assert main(["fid", "--config", write_cfg(lab, "u.cfg", "colour = red\n")]) == 4
    assert main(["launch", "--config", cfg]) == 4
    assert main(["transfer", "--config", write_cfg(lab, "x.cfg", ""), "--strategy", "nope"]) == 4


def test_exit_code_io(lab):
    (lab / "blocker").write_text("a file where a directory is needed")
    cfg = write_cfg(lab, "io.cfg", "grid_checkpoint = src/source_G.frzd\n")
    assert main(["grid", "--config", cfg, "--out", str(lab / "blocker" / "sub"), "-q"]) == 5
    assert main(["fid", "--config", str(lab / "missing.cfg")]) == 5


def test_history_from_pretrain_log(lab):
    h = History.from_csv((lab / "src" / "fid_log.csv").read_text())
    assert [r.iteration for r in h.rows] == [2, 4]
