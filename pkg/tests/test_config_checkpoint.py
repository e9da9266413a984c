import numpy as np
import pytest

from dotin.checkpoint import MAGIC, load_checkpoint, read_checkpoint, save_checkpoint
from dotin.config import CONFIG_KEYS, TrainConfig, load_config, write_config
from dotin.exceptions import ConfigError, IngestionError
from dotin.model import DotinModel, ModelSpec, default_alphas


class TestConfig:
    def test_every_field_documented(self):
        assert set(CONFIG_KEYS) == set(TrainConfig().to_dict())

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr, cfg.batch_size, cfg.weight_decay, cfg.dropout, cfg.folds) == (1e-3, 8, 8e-4, 0.2, 10)

    def test_multitask_batch_default(self):
        assert TrainConfig(tasks=("cls", "ged")).batch_size == 16
        assert TrainConfig(tasks=("cls", "ged"), batch_size=4).batch_size == 4
        assert TrainConfig().replace(tasks=("cls", "ged"), batch_size=None).batch_size == 16

    def test_file_and_overrides(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\nhidden = 32  # trailing\n\ntasks = cls, ged\nedge_prior = true\n")
        cfg = load_config(p, {"hidden": "16", "alphas": "0.5,0.5,0"})
        assert cfg.hidden == 16 and cfg.tasks == ("cls", "ged") and cfg.edge_prior is True
        assert cfg.schedule == (0.5, 0.5, 0.0)

    def test_roundtrip(self, tmp_path):
        cfg = TrainConfig(alpha=0.3, tasks=("cls", "ged"), tau=2.0, motifs=("square", "house"))
        write_config(cfg, tmp_path / "c.cfg")
        assert load_config(tmp_path / "c.cfg") == cfg

    @pytest.mark.parametrize(
        "text",
        ["hidden = x\n", "bogus = 1\n", "no equals sign\n", "alpha = 1.5\n", "hidden = 0\n", "edge_prior = maybe\n"],
    )
    def test_bad_config(self, tmp_path, text):
        p = tmp_path / "c.cfg"
        p.write_text(text)
        with pytest.raises(ConfigError):
            load_config(p)

    def test_default_schedule(self):
        assert default_alphas(0.9, 3) == (0.9, 0.9, 0.0)
        assert TrainConfig(alpha=0.5, n_layers=4).schedule == (0.5, 0.5, 0.5, 0.0)

    def test_model_spec_validation(self):
        with pytest.raises(ConfigError):
            ModelSpec(in_features=3, n_layers=2, alphas=(0.5,))
        with pytest.raises(ConfigError):
            ModelSpec(in_features=3, hidden=10, heads=3, alphas=(0, 0, 0))


class TestCheckpoint:
    def _model(self, backbone="gat"):
        spec = ModelSpec(in_features=3, hidden=8, backbone=backbone, alphas=(0.5, 0.5, 0.0), tasks=("cls", "ged"), heads=2 if backbone == "gat" else 1)
        return DotinModel.init(spec, seed=4)

    @pytest.mark.parametrize("backbone", ["gat", "gcn"])
    def test_roundtrip(self, tmp_path, backbone):
        model = self._model(backbone)
        cfg = TrainConfig(hidden=8, alpha=0.5, tasks=("cls", "ged"))
        save_checkpoint(model, tmp_path / "m.bin", cfg)
        loaded, cfg2 = load_checkpoint(tmp_path / "m.bin")
        assert cfg2 == cfg and loaded.spec == model.spec
        for name, arr in model.snapshot().items():
            assert loaded.named_parameters()[name].data.tobytes() == arr.tobytes()

    def test_layout(self, tmp_path):
        model = self._model()
        save_checkpoint(model, tmp_path / "m.bin")
        raw = (tmp_path / "m.bin").read_bytes()
        assert raw.startswith(MAGIC)
        meta, arrays = read_checkpoint(tmp_path / "m.bin")
        assert list(arrays) == list(model.named_parameters())
        assert meta["train"] is None
        n_floats = sum(a.size for a in arrays.values())
        assert len(raw) > 8 * n_floats

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"NOTACKPT" + b"\0" * 16)
        with pytest.raises(IngestionError, match="magic"):
            read_checkpoint(tmp_path / "x.bin")

    def test_truncated(self, tmp_path):
        save_checkpoint(self._model(), tmp_path / "m.bin")
        raw = (tmp_path / "m.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(raw[:-5])
        with pytest.raises(IngestionError, match="truncated"):
            read_checkpoint(tmp_path / "t.bin")

    def test_shape_mismatch(self):
        model = self._model()
        arrays = model.snapshot()
        arrays["w_in"] = np.zeros((2, 2))
        with pytest.raises(ConfigError):
            model.load_arrays(arrays)
