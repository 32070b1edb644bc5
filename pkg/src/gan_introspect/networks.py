"""Gated 2-1-2D generator, projection discriminator, freezing, and checkpoint files."""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .binio import checked_payload, pack_blocks, pack_str
from .dataio import FeatureSequence
from .errors import ConfigError, FormatError, ShapeError, UnknownDomain, UnknownLayer
from .svcca import ActivationMatrix, layer_order

INIT_STD = 0.02


@dataclass(frozen=True)
class GeneratorConfig:
    q_features: int = 36
    base_channels: int = 4
    repeat_blocks: int = 9
    n_domains: int = 4
    seed: int = 0

    def validate(self):
        if self.repeat_blocks < 1:
            raise ConfigError("repeat_blocks must be >= 1")
        if self.q_features < 4 or self.q_features % 4:
            raise ConfigError(f"q_features must be a positive multiple of 4, got {self.q_features}")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        if self.n_domains < 2:
            raise ConfigError("need at least two domains")

    def geometry(self) -> dict:
        """Fields that fix parameter shapes (the seed does not)."""
        d = asdict(self)
        d.pop("seed")
        return d

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.geometry(), sort_keys=True).encode()).hexdigest()


def _layer_rng(seed: int, name: str) -> np.random.Generator:
    # per-layer streams so networks of different depth share the layers they have in common
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _weight(rng, *shape) -> Tensor:
    return Tensor(rng.normal(0.0, INIT_STD, size=shape), requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class _Network:
    """Ordered mapping layer -> {parameter name -> Tensor} with a frozen-layer set."""

    def __init__(self):
        self.params: dict[str, dict[str, Tensor]] = {}
        self.frozen: set[str] = set()

    @property
    def layer_names(self) -> list[str]:
        return list(self.params)

    def named_parameters(self, trainable_only: bool = False):
        for layer, group in self.params.items():
            if trainable_only and layer in self.frozen:
                continue
            for pname, t in group.items():
                yield f"{layer}.{pname}", t

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        if set(own) != set(state):
            raise ConfigError(f"parameter sets differ: {sorted(set(own) ^ set(state))[:6]}")
        for k, t in own.items():
            if t.data.shape != state[k].shape:
                raise ConfigError(f"{k}: shape {state[k].shape} vs {t.data.shape}")
            t.data = np.array(state[k], dtype=np.float64)

    def zero_grad(self):
        for _, t in self.named_parameters():
            t.grad = None

    def set_requires_grad(self, flag: bool):
        for layer, group in self.params.items():
            for t in group.values():
                t.requires_grad = flag and layer not in self.frozen


class Generator(_Network):
    """2-1-2D gated CNN; only the target code conditions it, via CIN in every repeat block."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        b = cfg.base_channels
        q4 = cfg.q_features // 4
        specs = {
            "D1": {"w": (2 * b, 1, 3, 9), "b": (2 * b,)},
            "D2": {"w": (4 * b, b, 4, 8), "gamma": (4 * b,), "beta": (4 * b,)},
            "D3": {"w": (8 * b, 2 * b, 4, 8), "gamma": (8 * b,), "beta": (8 * b,)},
            "DC": {"w": (4 * b, 4 * b * q4, 1), "gamma": (4 * b,), "beta": (4 * b,)},
        }
        for i in range(1, cfg.repeat_blocks + 1):
            specs[f"R{i}"] = {"w": (8 * b, 4 * b, 5), "gamma": (cfg.n_domains, 8 * b), "beta": (cfg.n_domains, 8 * b)}
        specs.update({
            "UC": {"w": (4 * b * q4, 4 * b, 1), "gamma": (4 * b * q4,), "beta": (4 * b * q4,)},
            "U1": {"w": (4 * b, 8 * b, 4, 8), "gamma": (8 * b,), "beta": (8 * b,)},
            "U2": {"w": (4 * b, 4 * b, 4, 8), "gamma": (4 * b,), "beta": (4 * b,)},
            "Out": {"w": (1, 2 * b, 3, 9), "b": (1,)},
        })
        for layer, shapes in specs.items():
            rng = _layer_rng(cfg.seed, layer)
            group = {}
            for pname, shape in shapes.items():
                if pname == "w":
                    group[pname] = _weight(rng, *shape)
                elif pname == "b":
                    group[pname] = _zeros(*shape)
                elif layer.startswith("R"):
                    # distinct per-domain scale/shift so codes act differently at init
                    base = np.ones(shape) if pname == "gamma" else np.zeros(shape)
                    group[pname] = Tensor(base + rng.normal(0.0, INIT_STD, size=shape), requires_grad=True)
                else:
                    group[pname] = _ones(*shape) if pname == "gamma" else _zeros(*shape)
            self.params[layer] = group
        assert self.layer_names == layer_order(cfg.repeat_blocks)

    def __call__(self, x, target, tap=()) -> tuple[Tensor, dict[str, Tensor]]:
        """Forward a (B, 1, Q, T) batch. Returns output and the tapped layer output nodes."""
        x = ad.as_tensor(x)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"generator input must be (B, 1, Q, T), got {x.shape}")
        bsz, _, q, t = x.shape
        if q != self.cfg.q_features:
            raise ShapeError(f"expected Q={self.cfg.q_features}, got {q}")
        if t < 4 or t % 4:
            raise ShapeError(f"T must be a positive multiple of 4, got {t}")
        codes = np.broadcast_to(np.asarray(target, dtype=np.int64), (bsz,))
        if np.any(codes < 0) or np.any(codes >= self.cfg.n_domains):
            raise UnknownDomain(f"target codes {codes.tolist()} outside [0, {self.cfg.n_domains})")
        tap = set(tap)
        unknown = tap - set(self.params)
        if unknown:
            raise UnknownLayer(f"cannot tap unknown layers {sorted(unknown)}")
        acts: dict[str, Tensor] = {}
        p = self.params

        def keep(name, h):
            if name in tap:
                acts[name] = h
            return h

        h = keep("D1", ad.glu(ad.conv2d(x, p["D1"]["w"], p["D1"]["b"], 1, (1, 4))))
        for name in ("D2", "D3"):
            h = ad.conv2d(h, p[name]["w"], None, 2, (1, 3))
            h = keep(name, ad.glu(ad.instance_norm(h, p[name]["gamma"], p[name]["beta"])))
        h = ad.conv1d(ad.reshape_2d_to_1d(h), p["DC"]["w"])
        h = keep("DC", ad.instance_norm(h, p["DC"]["gamma"], p["DC"]["beta"]))
        for i in range(1, self.cfg.repeat_blocks + 1):
            name = f"R{i}"
            h = ad.conv1d(h, p[name]["w"], None, 1, 2)
            h = ad.cond_instance_norm(h, codes, p[name]["gamma"], p[name]["beta"])
            h = keep(name, ad.glu(h))
        h = ad.conv1d(h, p["UC"]["w"])
        h = ad.instance_norm(h, p["UC"]["gamma"], p["UC"]["beta"])
        h = keep("UC", ad.reshape_1d_to_2d(h, q // 4))
        for name in ("U1", "U2"):
            h = ad.conv_transpose2d(h, p[name]["w"], None, 2, (1, 3))
            h = keep(name, ad.glu(ad.instance_norm(h, p[name]["gamma"], p[name]["beta"])))
        h = keep("Out", ad.conv2d(h, p["Out"]["w"], p["Out"]["b"], 1, (1, 4)))
        return h, acts


class Discriminator(_Network):
    """Four gated conv blocks, global sum pooling, scalar head plus a (source, target) projection."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        b = cfg.base_channels
        chans = [1, b, 2 * b, 4 * b, 4 * b]
        for i in range(4):
            rng = _layer_rng(cfg.seed + 1, f"B{i + 1}")
            self.params[f"B{i + 1}"] = {"w": _weight(rng, 2 * chans[i + 1], chans[i], 3, 3), "b": _zeros(2 * chans[i + 1])}
        self.params["FC"] = {"w": _weight(_layer_rng(cfg.seed + 1, "FC"), 1, chans[-1]), "b": _zeros(1)}
        self.params["EMB"] = {"w": _weight(_layer_rng(cfg.seed + 1, "EMB"), cfg.n_domains ** 2, chans[-1])}

    def __call__(self, x, source, target) -> Tensor:
        """Scores of shape (B,) for (B, 1, Q, T) inputs under the ordered pair (source, target)."""
        x = ad.as_tensor(x)
        n = self.cfg.n_domains
        bsz = x.shape[0]
        src = np.broadcast_to(np.asarray(source, dtype=np.int64), (bsz,))
        tgt = np.broadcast_to(np.asarray(target, dtype=np.int64), (bsz,))
        for codes in (src, tgt):
            if np.any(codes < 0) or np.any(codes >= n):
                raise UnknownDomain(f"domain codes {codes.tolist()} outside [0, {n})")
        h = x
        for i in range(4):
            p = self.params[f"B{i + 1}"]
            h = ad.glu(ad.conv2d(h, p["w"], p["b"], 1 if i == 0 else 2, 1))
        feat = ad.global_sum_pool(h)
        head = ad.fully_connected(feat, self.params["FC"]["w"], self.params["FC"]["b"])
        emb = ad.take_rows(self.params["EMB"]["w"], src * n + tgt)
        proj = ad.tsum(ad.mul(emb, feat), axis=1)
        return ad.add(ad.reshape(head, (bsz,)), proj)


def build_generator(cfg: GeneratorConfig) -> Generator:
    return Generator(cfg)


def build_discriminator(cfg: GeneratorConfig) -> Discriminator:
    return Discriminator(cfg)


def generator_forward(g: Generator, x, target: int, tap=()):
    """Convert one feature sequence. Returns (converted sequence, {layer: ActivationMatrix})."""
    feats = x.features if isinstance(x, FeatureSequence) else np.asarray(x, dtype=np.float64)
    with ad.no_grad():
        out, acts = g(feats[None, None], target, tap)
    mats = {name: activation_matrix(name, a.data) for name, a in acts.items()}
    y = out.data[0, 0]
    if isinstance(x, FeatureSequence):
        return FeatureSequence(y, int(target), f"{x.id}->{int(target)}"), mats
    return y, mats


def activation_matrix(name: str, act: np.ndarray, iteration: int = 0) -> ActivationMatrix:
    """Channels as rows; batch and every spatial position flattened into columns."""
    c = act.shape[1]
    return ActivationMatrix(name, np.moveaxis(act, 1, 0).reshape(c, -1), iteration)


def freeze_layers(net: _Network, names) -> _Network:
    names = set(names)
    unknown = names - set(net.params)
    if unknown:
        raise UnknownLayer(f"unknown layers {sorted(unknown)}")
    net.frozen |= names
    for name in names:
        for t in net.params[name].values():
            t.requires_grad = False
            t.grad = None
    return net


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"GICK"
CKPT_VERSION = 1


@dataclass
class NetworkCheckpoint:
    iteration: int
    config: GeneratorConfig
    generator: dict[str, np.ndarray]
    discriminator: dict[str, np.ndarray]
    # optimizer state: "g.m.<param>", "g.v.<param>", "d.m.<param>", ...; step counts under "g.t"/"d.t"
    moments: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def equals(self, other: NetworkCheckpoint) -> bool:
        def same(a, b):
            return a.keys() == b.keys() and all(
                a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a)

        return (self.iteration == other.iteration and self.config == other.config
                and same(self.generator, other.generator) and same(self.discriminator, other.discriminator)
                and same(self.moments, other.moments) and self.rng_state == other.rng_state)


def save_checkpoint(ckpt: NetworkCheckpoint, path) -> None:
    """Layout: magic, u32 version, sha256 fingerprint, config JSON, u64 iteration,
    rng-state JSON, generator / discriminator / optimizer f64 blocks, CRC32."""
    body = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), bytes.fromhex(ckpt.fingerprint),
            pack_str(json.dumps(asdict(ckpt.config), sort_keys=True)), struct.pack("<Q", ckpt.iteration),
            pack_str(json.dumps(ckpt.rng_state, sort_keys=True)),
            pack_blocks(ckpt.generator), pack_blocks(ckpt.discriminator), pack_blocks(ckpt.moments)]
    raw = b"".join(body)
    Path(path).write_bytes(raw + struct.pack("<I", zlib.crc32(raw)))


def load_checkpoint(path) -> NetworkCheckpoint:
    r = checked_payload(path, CKPT_MAGIC, CKPT_VERSION)
    fp = r.take(32).hex()
    try:
        cfg = GeneratorConfig(**json.loads(r.string()))
        iteration = r.unpack("<Q")[0]
        rng_state = json.loads(r.string())
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed header") from exc
    if cfg.fingerprint() != fp:
        raise FormatError(f"{path}: config fingerprint mismatch")
    gen, disc, moments = r.blocks(), r.blocks(), r.blocks()
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: trailing bytes")
    return NetworkCheckpoint(iteration, cfg, gen, disc, moments, rng_state)
