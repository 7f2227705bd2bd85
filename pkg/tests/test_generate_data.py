import numpy as np

from core.load import load_idx_dataset
from generate_data import FILES, main


class TestGeneratorCli:
    def test_writes_both_splits(self, tmp_path, capsys):
        assert main(["--out", str(tmp_path), "--n-train", "10", "--n-test", "4", "--size", "8"]) == 0
        train = load_idx_dataset(tmp_path / FILES["train"][0], tmp_path / FILES["train"][1])
        test = load_idx_dataset(tmp_path / FILES["test"][0], tmp_path / FILES["test"][1])
        assert len(train) == 10 and len(test) == 4
        assert train.image_shape == (1, 8, 8)
        assert set(np.unique(train.labels).tolist()) == {0, 1}
        assert "Dataset bars escrito en" in capsys.readouterr().out

    def test_rejects_tiny_sizes(self, tmp_path, capsys):
        assert main(["--out", str(tmp_path), "--size", "2"]) == 2
        assert "Parámetros inválidos" in capsys.readouterr().out
        assert not any(tmp_path.iterdir())
