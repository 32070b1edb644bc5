import json

import numpy as np
import pytest

from test_trainer import TINY
from gan_introspect.cli import EXIT_DIVERGED, EXIT_INVALID, EXIT_OK, load_config, main
from gan_introspect.dataio import write_amat
from gan_introspect.errors import ConfigError
from gan_introspect.svcca import ActivationMatrix


def write_config(tmp_path, **overrides):
    doc = TINY.to_dict()
    doc.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def test_train_writes_log_and_checkpoints(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(write_config(tmp_path)), "--out", str(out)]) == EXIT_OK
    assert (out / "final.gick").exists() and (out / "ckpt_000006.gick").exists()
    assert len((out / "train_log.csv").read_text().splitlines()) == 7
    assert "trained 6 iterations" in capsys.readouterr().out


def test_exp1_emits_csv(tmp_path):
    cfg = write_config(tmp_path, seeds=[0, 1])
    assert main(["exp1", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = (tmp_path / "o" / "exp1.csv").read_text().splitlines()
    assert {r.split(",")[1] for r in rows[1:]} == {"0", "1"}
    assert (tmp_path / "o" / "exp1_base_seed1.gick").exists()
    # exp2 picks up the saved exp1 networks from the same output directory
    assert main(["exp2", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    exps = {r.split(",")[0] for r in (tmp_path / "o" / "exp2.csv").read_text().splitlines()[1:]}
    assert exps == {"exp2", "exp2-baseline"}


def test_invalid_inputs_exit_2(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == EXIT_INVALID
    bad = write_config(tmp_path, checkpoint_every=4)
    assert main(["train", "--config", str(bad)]) == EXIT_INVALID
    assert main(["exp1", "--config", str(bad), "--out", str(tmp_path), "--paper-variants"]) == EXIT_INVALID
    # the A/B/C variants need nine repeat blocks; the tiny config has three
    ok = write_config(tmp_path)
    assert main(["exp3", "--config", str(ok), "--out", str(tmp_path), "--paper-variants"]) == EXIT_INVALID
    assert "error" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_3(tmp_path):
    cfg = write_config(tmp_path, lr_g=1e300, lr_d=1e300)
    assert main(["train", "--config", str(cfg)]) == EXIT_DIVERGED


def test_svcca_subcommand(tmp_path, capsys):
    rng = np.random.default_rng(0)
    a = ActivationMatrix("R1", rng.standard_normal((3, 80)))
    write_amat(a, tmp_path / "a.amat")
    write_amat(ActivationMatrix("R1", 2.0 * a.data[::-1]), tmp_path / "b.amat")
    assert main(["svcca", "--a", str(tmp_path / "a.amat"), "--b", str(tmp_path / "b.amat")]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["similarity"] == pytest.approx(1.0, abs=1e-8)
    (tmp_path / "c.amat").write_bytes(b"junk")
    assert main(["svcca", "--a", str(tmp_path / "a.amat"), "--b", str(tmp_path / "c.amat")]) == EXIT_INVALID


def test_load_config_splits_experiment_keys(tmp_path):
    cfg, extra = load_config(write_config(tmp_path, seeds=[3], depths=[1, 3]))
    assert cfg == TINY and extra == {"seeds": [3], "depths": [1, 3]}
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, unknown_key=1))
