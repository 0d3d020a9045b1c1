import pytest

from ndec.config import ConfigError, RunConfig, load_config, parse_config


def test_defaults_round_trip():
    cfg = RunConfig()
    again = parse_config(cfg.canonical_text())
    assert again == cfg and again.hash == cfg.hash


def test_parse_values():
    cfg = parse_config("[data]\nnoise = 0.25\nn_classes = 5\n[um]\nenabled = false\n")
    assert cfg.data.noise == 0.25 and cfg.data.n_classes == 5 and cfg.um.enabled is False


def test_hash_ignores_layout_and_comments():
    a = parse_config("[train]\nepochs = 3\nlr = 0.001\n")
    b = parse_config("# note\n[train]\nlr=1e-3\n\nepochs   =   3\n")
    assert a.hash == b.hash


def test_hash_changes_with_value():
    assert RunConfig().hash != RunConfig().updated(**{"train.seed": 1}).hash


def test_int_given_for_float():
    assert parse_config("[train]\nlr = 1\n").train.lr == 1.0


@pytest.mark.parametrize("text", [
    "[nope]\na = 1\n",
    "[data]\nbogus = 1\n",
    "[data]\nnoise = abc\n",
    "[loss]\nkind = triplet\n",
    "[train]\nbatch_size = 0\n",
    "[um]\ngamma = 1.5\n",
    "[model]\nd_embed = 10\nfusion_heads = 3\n",
    "[data]\nsource = path\n",
    "[data]\nnoise = 1\nnoise = 2\n",
])
def test_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


class TestUpdated:
    def test_override(self):
        cfg = RunConfig().updated(**{"train.epochs": 3, "um.enabled": False})
        assert cfg.train.epochs == 3 and not cfg.um.enabled

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig().updated(**{"train.bogus": 1})

    def test_validates(self):
        with pytest.raises(ConfigError):
            RunConfig().updated(**{"loss.tau": -1.0})

    def test_original_unchanged(self):
        cfg = RunConfig()
        cfg.updated(**{"train.seed": 5})
        assert cfg.train.seed == 0


def test_load_config(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[train]\nseed = 4\n")
    assert load_config(p).train.seed == 4
