import numpy as np
import pytest

from gan_introspect import autodiff as ad
from gan_introspect.dataio import FeatureSequence
from gan_introspect.errors import ConfigError, FormatError, ShapeError, UnknownDomain, UnknownLayer
from gan_introspect.networks import (GeneratorConfig, NetworkCheckpoint, build_discriminator, build_generator,
                                     freeze_layers, generator_forward, load_checkpoint, save_checkpoint)
from gan_introspect.svcca import layer_order

SMALL = GeneratorConfig(q_features=8, base_channels=2, repeat_blocks=3, n_domains=3, seed=4)


def test_layer_names_follow_the_canonical_order():
    for n in (1, 5, 9):
        assert build_generator(GeneratorConfig(repeat_blocks=n)).layer_names == layer_order(n)


def test_generator_preserves_shape_and_taps_every_layer():
    g = build_generator(SMALL)
    x = np.random.default_rng(0).standard_normal((2, 1, 8, 16))
    y, acts = g(x, [0, 2], tap=g.layer_names)
    assert y.shape == x.shape
    assert set(acts) == set(g.layer_names)
    assert acts["D1"].shape == (2, 2, 8, 16)
    assert acts["D3"].shape == (2, 8, 2, 4)
    assert acts["R2"].shape == (2, 8, 4)
    assert acts["UC"].shape == (2, 8, 2, 4)
    assert acts["U2"].shape == (2, 4, 8, 16)


def test_target_code_changes_only_the_conditioned_path():
    g = build_generator(SMALL)
    x = np.random.default_rng(1).standard_normal((1, 1, 8, 16))
    with ad.no_grad():
        a, acts_a = g(x, 0, tap=["DC", "R1"])
        b, acts_b = g(x, 1, tap=["DC", "R1"])
    np.testing.assert_array_equal(acts_a["DC"].data, acts_b["DC"].data)
    assert not np.allclose(acts_a["R1"].data, acts_b["R1"].data)
    assert not np.allclose(a.data, b.data)


def test_repeat_blocks_have_no_skip_path():
    g = build_generator(SMALL)
    _, acts = g(np.zeros((1, 1, 8, 8)) + 0.1, 0, tap=["R2"])
    # R2 output is glu(cin(conv1d(R1))): no addition of the block input anywhere in the block
    node = acts["R2"]
    assert node.op == "glu"
    assert node.parents[0].op == "instance_norm"
    assert node.parents[0].parents[0].op == "reshape"
    assert node.parents[0].parents[0].parents[0].op == "conv2d"


def test_generator_input_errors():
    g = build_generator(SMALL)
    with pytest.raises(ShapeError):
        g(np.zeros((1, 1, 8, 10)), 0)
    with pytest.raises(ShapeError):
        g(np.zeros((1, 1, 12, 8)), 0)
    with pytest.raises(UnknownDomain):
        g(np.zeros((1, 1, 8, 8)), 3)
    with pytest.raises(UnknownLayer):
        g(np.zeros((1, 1, 8, 8)), 0, tap=["R9"])


def test_config_validation():
    with pytest.raises(ConfigError):
        GeneratorConfig(q_features=10).validate()
    with pytest.raises(ConfigError):
        GeneratorConfig(repeat_blocks=0).validate()


def test_shared_layers_match_across_depths():
    shallow = build_generator(GeneratorConfig(repeat_blocks=3))
    deep = build_generator(GeneratorConfig(repeat_blocks=9))
    for name in shallow.layer_names:
        for p, t in shallow.params[name].items():
            np.testing.assert_array_equal(t.data, deep.params[name][p].data)


def test_discriminator_projection_depends_on_the_pair():
    d = build_discriminator(SMALL)
    x = np.random.default_rng(2).standard_normal((1, 1, 8, 16))
    s01, s10 = d(x, 0, 1).data, d(x, 1, 0).data
    assert s01.shape == (1,)
    assert s01[0] != s10[0]
    with pytest.raises(UnknownDomain):
        d(x, 0, 5)


def test_generator_forward_wraps_sequences():
    g = build_generator(SMALL)
    seq = FeatureSequence(np.random.default_rng(3).standard_normal((8, 48)), 1, "u1")
    out, mats = generator_forward(g, seq, 2, tap=["R1", "Out"])
    assert out.domain == 2 and out.features.shape == (8, 48)
    assert mats["R1"].shape == (8, 12) and mats["Out"].shape == (1, 384)


def test_freeze_layers():
    g = build_generator(SMALL)
    freeze_layers(g, ["R2"])
    trainable = {k for k, _ in g.named_parameters(trainable_only=True)}
    assert not any(k.startswith("R2.") for k in trainable)
    assert "R1.w" in trainable
    with pytest.raises(UnknownLayer):
        freeze_layers(g, ["R7"])


def _checkpoint(cfg=SMALL):
    g, d = build_generator(cfg), build_discriminator(cfg)
    rng = np.random.default_rng(0)
    moments = {"g.m.R1.w": rng.standard_normal((4, 2)), "g.t": np.array([3.0])}
    return NetworkCheckpoint(12, cfg, g.state_dict(), d.state_dict(), moments, rng.bit_generator.state)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    ck = _checkpoint()
    save_checkpoint(ck, tmp_path / "c.gick")
    back = load_checkpoint(tmp_path / "c.gick")
    assert back.equals(ck)
    save_checkpoint(back, tmp_path / "c2.gick")
    assert (tmp_path / "c.gick").read_bytes() == (tmp_path / "c2.gick").read_bytes()


def test_checkpoint_corruption_and_mismatch(tmp_path):
    ck = _checkpoint()
    path = tmp_path / "c.gick"
    save_checkpoint(ck, path)
    raw = bytearray(path.read_bytes())
    raw[100] ^= 1
    (tmp_path / "bad.gick").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.gick")
    g = build_generator(GeneratorConfig(q_features=8, base_channels=3, repeat_blocks=3, n_domains=3))
    with pytest.raises(ConfigError):
        g.load_state_dict(ck.generator)


def test_fingerprint_ignores_seed_only():
    assert SMALL.fingerprint() == GeneratorConfig(8, 2, 3, 3, seed=99).fingerprint()
    assert SMALL.fingerprint() != GeneratorConfig(8, 2, 4, 3, seed=4).fingerprint()
