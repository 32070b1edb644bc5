"""Synthetic multi-domain feature sequences, per-domain normalization, log-F0 conversion,
and the AMAT / FSEQ binary containers."""
from __future__ import annotations

import csv
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binio import checked_payload
from .errors import ConfigError, DegenerateStats, FormatError, InvalidData
from .svcca import ActivationMatrix

AMAT_MAGIC = b"AMAT"
FSEQ_MAGIC = b"FSEQ"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeatureSequence:
    features: np.ndarray  # Q x T
    domain: int
    id: str = ""
    logf0: np.ndarray | None = None

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 4 or f.shape[1] < 4:
            raise InvalidData(f"feature sequence must be Q x T with Q, T >= 4, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise InvalidData(f"{self.id}: non-finite features")
        object.__setattr__(self, "features", f)

    @property
    def q(self) -> int:
        return self.features.shape[0]

    @property
    def t(self) -> int:
        return self.features.shape[1]


@dataclass
class DomainStats:
    mean: np.ndarray  # n_domains x Q
    std: np.ndarray  # n_domains x Q
    logf0_mean: np.ndarray  # n_domains
    logf0_std: np.ndarray  # n_domains

    def __post_init__(self):
        if np.any(self.std <= 0):
            raise DegenerateStats("zero-variance feature dimension")


@dataclass
class Dataset:
    sequences: list[FeatureSequence]
    n_domains: int
    q: int
    stats: DomainStats | None = None

    def by_domain(self, d: int) -> list[FeatureSequence]:
        return [s for s in self.sequences if s.domain == d]


@dataclass(frozen=True)
class DatasetConfig:
    n_domains: int = 4
    sentences_per_domain: int = 12
    q: int = 36
    t_min: int = 96
    t_max: int = 160
    seed: int = 0


def _smooth(v: np.ndarray, width: int = 5) -> np.ndarray:
    kernel = np.hanning(width + 2)[1:-1]
    kernel /= kernel.sum()
    return np.convolve(np.pad(v, width, mode="edge"), kernel, mode="same")[width:-width]


def synth_dataset(n_domains: int = 4, sentences_per_domain: int = 12, q: int = 36, t_range=(96, 160),
                  seed: int = 0) -> Dataset:
    """Domain-separable stationary sequences standing in for speaker MCEP streams.

    A shared low-dimensional AR(1) "content" process is mixed into Q channels, then
    each domain applies its own fixed spectral envelope, per-channel gain, and noise
    level. Log-F0 contours use a per-domain mean and spread.
    """
    if n_domains < 2:
        raise ConfigError("need at least two domains")
    if q < 4 or sentences_per_domain < 1:
        raise ConfigError("q must be >= 4 and sentences_per_domain >= 1")
    t_lo, t_hi = int(t_range[0]), int(t_range[1])
    if not 4 <= t_lo <= t_hi:
        raise ConfigError(f"bad t_range {t_range}")
    rng = np.random.default_rng(seed)
    n_latent = 6
    mixing = rng.standard_normal((q, n_latent)) / np.sqrt(n_latent)
    envelopes = [_smooth(rng.normal(0.0, 1.5, q), 7) for _ in range(n_domains)]
    gains = [np.exp(_smooth(rng.normal(0.0, 0.4, q), 5)) for _ in range(n_domains)]
    noise = rng.uniform(0.1, 0.3, n_domains)
    f0_mean = rng.uniform(np.log(90.0), np.log(250.0), n_domains)
    f0_std = rng.uniform(0.08, 0.25, n_domains)
    seqs = []
    for d in range(n_domains):
        for k in range(sentences_per_domain):
            t = int(rng.integers(t_lo, t_hi + 1))
            h = np.zeros((n_latent, t))
            h[:, 0] = rng.standard_normal(n_latent)
            for i in range(1, t):
                h[:, i] = 0.85 * h[:, i - 1] + np.sqrt(1 - 0.85 ** 2) * rng.standard_normal(n_latent)
            x = envelopes[d][:, None] + gains[d][:, None] * (mixing @ h) + noise[d] * rng.standard_normal((q, t))
            f0 = f0_mean[d] + f0_std[d] * h[0]
            seqs.append(FeatureSequence(x, d, f"d{d}s{k}", f0))
    return Dataset(seqs, n_domains, q, compute_stats(seqs, n_domains))


def compute_stats(sequences, n_domains: int) -> DomainStats:
    q = sequences[0].q
    mean, std = np.zeros((n_domains, q)), np.zeros((n_domains, q))
    fm, fs = np.zeros(n_domains), np.ones(n_domains)
    for d in range(n_domains):
        members = [s for s in sequences if s.domain == d]
        if not members:
            raise DegenerateStats(f"domain {d} has no sequences")
        frames = np.concatenate([s.features for s in members], axis=1)
        mean[d], std[d] = frames.mean(axis=1), frames.std(axis=1)
        if np.any(std[d] <= 0):
            raise DegenerateStats(f"domain {d} has a constant feature dimension")
        f0 = [s.logf0 for s in members if s.logf0 is not None]
        if f0:
            f0 = np.concatenate(f0)
            fm[d], fs[d] = f0.mean(), f0.std()
    return DomainStats(mean, std, fm, fs)


def normalize_per_domain(dataset: Dataset, stats: DomainStats | None = None) -> Dataset:
    """Per-domain, per-dimension z-scoring."""
    stats = stats if stats is not None else compute_stats(dataset.sequences, dataset.n_domains)
    if np.any(stats.std <= 0):
        raise DegenerateStats("zero-variance feature dimension")
    out = [FeatureSequence((s.features - stats.mean[s.domain][:, None]) / stats.std[s.domain][:, None],
                           s.domain, s.id, s.logf0) for s in dataset.sequences]
    return Dataset(out, dataset.n_domains, dataset.q, stats)


def convert_logf0(logf0, source_stats: tuple[float, float], target_stats: tuple[float, float]) -> np.ndarray:
    """Log-Gaussian normalized F0 transform; stats are (mean, std) of log F0."""
    mu_s, sd_s = source_stats
    mu_t, sd_t = target_stats
    if sd_s <= 0:
        raise DegenerateStats("source log-F0 std must be positive")
    return (np.asarray(logf0, dtype=np.float64) - mu_s) / sd_s * sd_t + mu_t


# ---------------------------------------------------------------- binary containers

def _header(magic: bytes, rows: int, cols: int, name: str) -> bytes:
    raw = name.encode("utf-8")
    return magic + struct.pack("<IIQI", FORMAT_VERSION, rows, cols, len(raw)) + raw


def _finish(path, body: bytes):
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def _open(path, magic: bytes):
    r = checked_payload(path, magic, FORMAT_VERSION)
    rows, cols = r.unpack("<IQ")
    name = r.string()
    return r, rows, cols, name


def _payload(r, rows: int, cols: int, path) -> np.ndarray:
    data = np.frombuffer(r.take(8 * rows * cols), dtype="<f8").astype(np.float64).reshape(rows, cols)
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: trailing bytes")
    return data


def write_amat(m: ActivationMatrix, path) -> None:
    rows, cols = m.data.shape
    body = (_header(AMAT_MAGIC, rows, cols, m.layer_name) + struct.pack("<Q", m.checkpoint_iteration)
            + np.ascontiguousarray(m.data, dtype="<f8").tobytes())
    _finish(path, body)


def read_amat(path) -> ActivationMatrix:
    r, rows, cols, name = _open(path, AMAT_MAGIC)
    (iteration,) = r.unpack("<Q")
    return ActivationMatrix(name, _payload(r, rows, cols, path), int(iteration))


def write_fseq(s: FeatureSequence, path) -> None:
    rows, cols = s.features.shape
    body = (_header(FSEQ_MAGIC, rows, cols, s.id) + struct.pack("<I", s.domain)
            + np.ascontiguousarray(s.features, dtype="<f8").tobytes())
    _finish(path, body)


def read_fseq(path) -> FeatureSequence:
    r, rows, cols, name = _open(path, FSEQ_MAGIC)
    (domain,) = r.unpack("<I")
    return FeatureSequence(_payload(r, rows, cols, path), int(domain), name)


def write_matrix_csv(data: np.ndarray, path) -> None:
    """Debug dump, one matrix row per line, 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.atleast_2d(data):
            w.writerow([f"{v:.17g}" for v in row])


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)], dtype=np.float64)
