"""Deterministic adversarial training loop: Adam, batch sampling, freezing, checkpoints, probes."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import objectives as obj
from .dataio import Dataset, DatasetConfig, normalize_per_domain, synth_dataset
from .errors import ConfigError, DivergenceError, LayerSetMismatch
from .networks import (Discriminator, Generator, GeneratorConfig, NetworkCheckpoint,
                       build_discriminator, build_generator, freeze_layers, load_checkpoint, save_checkpoint)
from .svcca import ActivationMatrix

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "adv_g", "adv_d", "cyc", "id", "total_g", "total_d", "grad_norm_max")


@dataclass(frozen=True)
class TrainConfig:
    generator: GeneratorConfig = GeneratorConfig()
    dataset: DatasetConfig = DatasetConfig()
    weights: obj.LossWeights = obj.LossWeights()
    total_iterations: int = 2000
    checkpoint_every: int = 200
    batch_size: int = 4
    crop_frames: int = 64
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    frozen_layers: tuple[str, ...] = ()
    seed: int = 0
    init_from: str | None = None
    adversarial: str = "lsgan"  # or "log"

    def validate(self):
        self.generator.validate()
        if self.total_iterations < 0 or self.checkpoint_every < 1:
            raise ConfigError("total_iterations must be >= 0 and checkpoint_every >= 1")
        if self.total_iterations % self.checkpoint_every:
            raise ConfigError("checkpoint_every must divide total_iterations")
        if self.crop_frames < 4 or self.crop_frames % 4:
            raise ConfigError("crop_frames must be a positive multiple of 4")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.dataset.q != self.generator.q_features or self.dataset.n_domains != self.generator.n_domains:
            raise ConfigError("dataset q / n_domains must match the generator config")
        if self.adversarial not in ("lsgan", "log"):
            raise ConfigError(f"unknown adversarial loss {self.adversarial!r}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frozen_layers"] = list(self.frozen_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown train config keys {sorted(extra)}")
        try:
            for key, typ in (("generator", GeneratorConfig), ("dataset", DatasetConfig), ("weights", obj.LossWeights)):
                if key in d:
                    d[key] = typ(**d[key])
            if "frozen_layers" in d:
                d["frozen_layers"] = tuple(d["frozen_layers"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class TrainLog:
    records: list[tuple] = field(default_factory=list)
    layer_names: list[str] = field(default_factory=list)
    grad_norms: list[np.ndarray] = field(default_factory=list)  # per iteration, one norm per G layer
    wall_time: float = 0.0
    diverged: bool = False

    def column(self, name: str) -> np.ndarray:
        i = LOG_COLUMNS.index(name)
        return np.array([r[i] for r in self.records], dtype=np.float64)

    def grad_norm_matrix(self) -> np.ndarray:
        return np.array(self.grad_norms).reshape(len(self.grad_norms), len(self.layer_names))

    def extend(self, other: TrainLog):
        self.records += other.records
        self.grad_norms += other.grad_norms
        self.wall_time += other.wall_time
        self.diverged |= other.diverged
        self.layer_names = self.layer_names or other.layer_names

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for r in self.records:
                w.writerow([r[0], *(f"{v:.17g}" for v in r[1:])])


@dataclass
class TrainResult:
    final: NetworkCheckpoint
    checkpoints: list[NetworkCheckpoint]
    log: TrainLog

    def at(self, iteration: int) -> NetworkCheckpoint:
        for c in self.checkpoints:
            if c.iteration == iteration:
                return c
        raise KeyError(iteration)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam, updating ``params`` and ``state`` in place. Only keys in ``grads`` move."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {k}")
    state.t += 1
    c1, c2 = 1.0 - beta1 ** state.t, 1.0 - beta2 ** state.t
    for k, g in grads.items():
        if params[k].shape != g.shape:
            raise ValueError(f"{k}: gradient shape {g.shape} vs parameter {params[k].shape}")
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def prepare_dataset(cfg: DatasetConfig) -> Dataset:
    raw = synth_dataset(cfg.n_domains, cfg.sentences_per_domain, cfg.q, (cfg.t_min, cfg.t_max), cfg.seed)
    return normalize_per_domain(raw, raw.stats)


def sample_batch(dataset: Dataset, rng: np.random.Generator, batch_size: int, crop_frames: int):
    """Random (x, c, c_hat) with c uniform, c_hat uniform over the other domains, crops uniform.

    Sequences shorter than the crop are wrap-padded.
    """
    n = dataset.n_domains
    pools = [dataset.by_domain(d) for d in range(n)]
    x = np.empty((batch_size, 1, dataset.q, crop_frames))
    c = rng.integers(0, n, size=batch_size)
    c_hat = (c + 1 + rng.integers(0, n - 1, size=batch_size)) % n
    for i in range(batch_size):
        pool = pools[c[i]]
        seq = pool[int(rng.integers(0, len(pool)))].features
        if seq.shape[1] < crop_frames:
            seq = np.pad(seq, ((0, 0), (0, crop_frames - seq.shape[1])), mode="wrap")
        start = int(rng.integers(0, seq.shape[1] - crop_frames + 1))
        x[i, 0] = seq[:, start:start + crop_frames]
    return x, c, c_hat


def _moments_dict(prefix: str, state: AdamState) -> dict[str, np.ndarray]:
    out = {f"{prefix}.m.{k}": v.copy() for k, v in state.m.items()}
    out.update({f"{prefix}.v.{k}": v.copy() for k, v in state.v.items()})
    out[f"{prefix}.t"] = np.array([float(state.t)])
    return out


def _moments_from(prefix: str, moments: dict[str, np.ndarray], params: dict) -> AdamState:
    return AdamState({k: moments[f"{prefix}.m.{k}"].copy() for k in params},
                     {k: moments[f"{prefix}.v.{k}"].copy() for k in params}, int(moments[f"{prefix}.t"][0]))


def snapshot(iteration: int, gen: Generator, disc: Discriminator, sg: AdamState, sd: AdamState,
             rng: np.random.Generator) -> NetworkCheckpoint:
    moments = {**_moments_dict("g", sg), **_moments_dict("d", sd)}
    return NetworkCheckpoint(iteration, gen.cfg, gen.state_dict(), disc.state_dict(), moments,
                             rng.bit_generator.state)


def networks_from(ckpt: NetworkCheckpoint) -> tuple[Generator, Discriminator]:
    gen, disc = build_generator(ckpt.config), build_discriminator(ckpt.config)
    gen.load_state_dict(ckpt.generator)
    disc.load_state_dict(ckpt.discriminator)
    return gen, disc


def _layer_norms(net, grads: dict[str, np.ndarray]) -> np.ndarray:
    out = np.zeros(len(net.layer_names))
    for i, layer in enumerate(net.layer_names):
        out[i] = np.sqrt(sum(float(np.sum(grads[f"{layer}.{p}"] ** 2))
                             for p in net.params[layer] if f"{layer}.{p}" in grads))
    return out


def _diverged(trainlog: TrainLog, t0: float, it: int):
    trainlog.diverged = True
    trainlog.wall_time = time.perf_counter() - t0
    err = DivergenceError(f"non-finite loss at iteration {it}")
    err.log = trainlog
    raise err


def _step(net, state: AdamState, lr: float, cfg: TrainConfig, trainlog: TrainLog) -> dict[str, np.ndarray]:
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for k, t in net.named_parameters(trainable_only=True)}
    params = {k: t.data for k, t in net.named_parameters(trainable_only=True)}
    try:
        adam_step(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    except DivergenceError as err:
        trainlog.diverged = True
        err.log = trainlog
        raise
    net.zero_grad()
    return grads


def train(cfg: TrainConfig, dataset: Dataset | None = None, resume: NetworkCheckpoint | None = None,
          checkpoint_dir=None, init_checkpoint: NetworkCheckpoint | None = None) -> TrainResult:
    """Alternate one D update and one G update per iteration.

    ``resume`` continues a run bit-exactly (parameters, moments, RNG, iteration).
    ``init_checkpoint`` / ``cfg.init_from`` start a transfer run: network parameters
    carry over, optimizer moments and RNG start fresh.
    """
    cfg.validate()
    dataset = dataset if dataset is not None else prepare_dataset(cfg.dataset)
    gen, disc = build_generator(cfg.generator), build_discriminator(cfg.generator)
    if init_checkpoint is None and cfg.init_from:
        init_checkpoint = load_checkpoint(cfg.init_from)
    source = resume if resume is not None else init_checkpoint
    if source is not None:
        if source.fingerprint != cfg.generator.fingerprint():
            raise ConfigError("checkpoint geometry does not match the generator config")
        gen.load_state_dict(source.generator)
        disc.load_state_dict(source.discriminator)
    freeze_layers(gen, cfg.frozen_layers)
    g_params = {k: t.data for k, t in gen.named_parameters()}
    d_params = {k: t.data for k, t in disc.named_parameters()}
    if resume is not None:
        sg, sd = _moments_from("g", resume.moments, g_params), _moments_from("d", resume.moments, d_params)
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
        start = resume.iteration
    else:
        sg, sd = AdamState.zeros_like(g_params), AdamState.zeros_like(d_params)
        rng = np.random.default_rng(cfg.seed)
        start = 0
    if start > cfg.total_iterations:
        raise ConfigError(f"resume point {start} beyond total_iterations {cfg.total_iterations}")
    out_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    trainlog = TrainLog(layer_names=gen.layer_names)
    checkpoints = [] if resume is not None else [snapshot(0, gen, disc, sg, sd, rng)]
    if out_dir and checkpoints:
        save_checkpoint(checkpoints[0], out_dir / "ckpt_000000.gick")
    w = cfg.weights
    bsz = cfg.batch_size
    t0 = time.perf_counter()
    for it in range(start, cfg.total_iterations):
        x, c, c_hat = sample_batch(dataset, rng, bsz, cfg.crop_frames)

        # discriminator: real scored under (c_hat, c), fake under (c, c_hat), one batched pass
        with ad.no_grad():
            fake = gen(x, c_hat)[0].data
        disc.set_requires_grad(True)
        scores = disc(np.concatenate([x, fake]), np.concatenate([c_hat, c]), np.concatenate([c, c_hat]))
        real_s, fake_s = ad.rows(scores, 0, bsz), ad.rows(scores, bsz, 2 * bsz)
        if cfg.adversarial == "lsgan":
            loss_d = obj.full_d_objective(obj.adv_loss_d_scores(real_s, fake_s))
        else:
            loss_d = obj.log_adv_loss_d(real_s, fake_s)
        if not np.isfinite(loss_d.item()):
            _diverged(trainlog, t0, it)
        ad.backward(loss_d)
        _step(disc, sd, cfg.lr_d, cfg, trainlog)

        # generator; the identity pass shares the first forward while it is active
        disc.set_requires_grad(False)
        use_id = it < w.id_cutoff_iterations and w.lambda_id > 0
        if use_id:
            both = gen(np.concatenate([x, x]), np.concatenate([c_hat, c]))[0]
            fake_t, same = ad.rows(both, 0, bsz), ad.rows(both, bsz, 2 * bsz)
            idt = obj.l1_mean(same, x)
        else:
            fake_t, idt = gen(x, c_hat)[0], None
        fake_scores = disc(fake_t, c, c_hat)
        if cfg.adversarial == "lsgan":
            adv_g = ad.mean(ad.square(ad.sub(fake_scores, 1.0)))
        else:
            adv_g = obj.log_adv_loss_g(fake_scores)
        cyc = obj.l1_mean(gen(fake_t, c)[0], x)
        total_g = obj.full_g_objective(adv_g, cyc, idt, w, it)

        values = (adv_g.item(), loss_d.item(), cyc.item(), 0.0 if idt is None else idt.item(),
                  total_g.item(), loss_d.item())
        if not all(np.isfinite(values)):
            _diverged(trainlog, t0, it)
        ad.backward(total_g)
        g_grads = _step(gen, sg, cfg.lr_g, cfg, trainlog)
        norms = _layer_norms(gen, g_grads)
        trainlog.grad_norms.append(norms)
        trainlog.records.append((it, *values[:6], float(norms.max())))

        done = it + 1
        if done % cfg.checkpoint_every == 0:
            ck = snapshot(done, gen, disc, sg, sd, rng)
            checkpoints.append(ck)
            if out_dir:
                save_checkpoint(ck, out_dir / f"ckpt_{done:06d}.gick")
            log.info("iteration %d total_g %.4f total_d %.4f", done, values[4], values[5])
    trainlog.wall_time = time.perf_counter() - t0
    final = snapshot(cfg.total_iterations, gen, disc, sg, sd, rng) if not checkpoints or \
        checkpoints[-1].iteration != cfg.total_iterations else checkpoints[-1]
    return TrainResult(final, checkpoints, trainlog)


def select_optimal(result: TrainResult, checkpoint_every: int) -> NetworkCheckpoint:
    """Checkpoint whose preceding interval has the lowest mean total_g (iteration 0 only if alone)."""
    its = result.log.column("iteration")
    tg = result.log.column("total_g")
    best, best_val = result.checkpoints[0], np.inf
    for ck in result.checkpoints:
        if ck.iteration == 0:
            continue
        mask = (its >= ck.iteration - checkpoint_every) & (its < ck.iteration)
        if mask.any() and tg[mask].mean() < best_val:
            best, best_val = ck, tg[mask].mean()
    return best


# ---------------------------------------------------------------- activation probes

@dataclass(frozen=True)
class ProbeItem:
    features: np.ndarray  # Q x T, T a multiple of 4
    target: int


def build_probe_set(dataset: Dataset, n_sequences: int | None = None, max_frames: int | None = None
                    ) -> list[ProbeItem]:
    """Deterministic probe: sentences taken from each domain in turn, trimmed to a multiple of 4
    frames, each converted to the next domain. Defaults to every sentence at full length."""
    n = dataset.n_domains
    pools = [dataset.by_domain(d) for d in range(n)]
    if n_sequences is None:
        n_sequences = len(dataset.sequences)
    items = []
    for i in range(n_sequences):
        d = i % n
        seq = pools[d][(i // n) % len(pools[d])].features
        t = seq.shape[1] if max_frames is None else min(seq.shape[1], max_frames)
        items.append(ProbeItem(seq[:, :t // 4 * 4].copy(), (d + 1) % n))
    return items


def record_activations(ckpt: NetworkCheckpoint | Generator, probe_set: list[ProbeItem], layers=None
                       ) -> dict[str, ActivationMatrix]:
    """Per layer: channels x (probe items x spatial positions)."""
    if isinstance(ckpt, Generator):
        gen, iteration = ckpt, 0
    else:
        gen, iteration = networks_from(ckpt)[0], ckpt.iteration
    layers = gen.layer_names if layers is None else list(layers)
    unknown = set(layers) - set(gen.layer_names)
    if unknown:
        raise LayerSetMismatch(f"unknown layers {sorted(unknown)}")
    parts: dict[str, list[np.ndarray]] = {name: [] for name in layers}
    with ad.no_grad():
        for item in probe_set:
            _, acts = gen(item.features[None, None], item.target, layers)
            for name in layers:
                a = acts[name].data
                parts[name].append(np.moveaxis(a, 1, 0).reshape(a.shape[1], -1))
    return {name: ActivationMatrix(name, np.concatenate(parts[name], axis=1), iteration) for name in layers}


def config_json(cfg: TrainConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)


def with_updates(cfg: TrainConfig, **changes) -> TrainConfig:
    return replace(cfg, **changes)
