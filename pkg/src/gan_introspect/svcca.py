"""SVCCA: per-layer SVD truncation followed by CCA between the retained subspaces."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import DegenerateSubspace, InvalidData, LayerSetMismatch, ShapeMismatch, SingularCovariance

DEFAULT_THRESHOLD = 0.99
DEFAULT_RIDGE = 0.0

GROUP_D = ("D1", "D2", "D3", "DC")
GROUP_U = ("UC", "U1", "U2", "Out")


def layer_order(repeat_blocks: int) -> list[str]:
    """Canonical generator layer ordering: D1, D2, D3, DC, R1..RN, UC, U1, U2, Out."""
    return [*GROUP_D[:3], "DC", *(f"R{i}" for i in range(1, repeat_blocks + 1)), *GROUP_U]


def _layer_sort_key(name: str):
    if name in GROUP_D:
        return (0, GROUP_D.index(name))
    if name.startswith("R") and name[1:].isdigit():
        return (1, int(name[1:]))
    if name in GROUP_U:
        return (2, GROUP_U.index(name))
    return (3, name)


def sort_layers(names: Iterable[str]) -> list[str]:
    return sorted(names, key=_layer_sort_key)


@dataclass(frozen=True)
class ActivationMatrix:
    """Neurons x datapoints activations of one layer at one checkpoint."""

    layer_name: str
    data: np.ndarray
    checkpoint_iteration: int = 0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1:
            raise InvalidData(f"{self.layer_name}: activation matrix must be 2-d with >= 1 row, got {data.shape}")
        if data.shape[1] < data.shape[0]:
            raise InvalidData(f"{self.layer_name}: {data.shape[1]} datapoints < {data.shape[0]} neurons")
        if not np.all(np.isfinite(data)):
            raise InvalidData(f"{self.layer_name}: non-finite activations")
        if self.checkpoint_iteration < 0:
            raise InvalidData("checkpoint_iteration must be non-negative")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class ReducedSubspace:
    basis_projection: np.ndarray  # retained directions x datapoints
    retained: int
    variance_fraction_achieved: float


@dataclass(frozen=True)
class CcaResult:
    correlations: np.ndarray
    retained_x: int
    retained_y: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.correlations))


@dataclass
class LayerSimilarityReport:
    similarities: dict[str, float] = field(default_factory=dict)

    @property
    def layers(self) -> list[str]:
        return list(self.similarities)

    def __getitem__(self, name: str) -> float:
        return self.similarities[name]

    def __len__(self):
        return len(self.similarities)


@dataclass(frozen=True)
class GroupSummary:
    d: float
    r: float
    u: float


def center_rows(m: ActivationMatrix) -> ActivationMatrix:
    if not np.all(np.isfinite(m.data)):
        raise InvalidData("non-finite entries")
    return ActivationMatrix(m.layer_name, m.data - m.data.mean(axis=1, keepdims=True), m.checkpoint_iteration)


def svd_reduce(m: ActivationMatrix, variance_threshold: float = DEFAULT_THRESHOLD) -> ReducedSubspace:
    """Keep the fewest leading singular directions whose energy share reaches the threshold."""
    if not 0.0 < variance_threshold <= 1.0:
        raise ValueError(f"variance_threshold must lie in (0, 1], got {variance_threshold}")
    _, s, vt = np.linalg.svd(m.data, full_matrices=False)
    energy = s * s
    total = energy.sum()
    if total <= 0.0:
        raise DegenerateSubspace(f"{m.layer_name}: all-zero activations")
    frac = np.cumsum(energy) / total
    if variance_threshold >= 1.0:
        # "everything" means every direction with non-negligible energy
        k = int(np.sum(s > s[0] * max(m.data.shape) * np.finfo(float).eps))
    else:
        k = int(np.searchsorted(frac, variance_threshold) + 1)
    k = min(max(k, 1), len(s))
    return ReducedSubspace(s[:k, None] * vt[:k], k, float(min(frac[k - 1], 1.0)))


def _whitened(a: np.ndarray, ridge: float) -> np.ndarray:
    """Orthonormal n x p whitening factor Q of the centered data ``a`` (p x n).

    QR of the data stacked over ``sqrt(ridge') I`` gives R^T R = S + ridge' I without ever
    forming S, so conditioning is that of the data rather than its square.
    """
    p, n = a.shape
    scaled = a.T / np.sqrt(n)
    lam = ridge * float(np.sum(scaled * scaled)) / p
    stacked = np.vstack([scaled, np.sqrt(lam) * np.eye(p)]) if lam > 0 else scaled
    q, r = np.linalg.qr(stacked)
    sv = np.linalg.svd(r, compute_uv=False)
    if sv[-1] <= sv[0] * 1e-7 or sv[-1] == 0.0:
        raise SingularCovariance(f"covariance is singular (condition number {sv[0] / max(sv[-1], 1e-300):.3e})")
    return q[:n]


def cca(x: ReducedSubspace, y: ReducedSubspace, ridge: float = DEFAULT_RIDGE) -> CcaResult:
    """Canonical correlations: singular values of Sxx^-1/2 Sxy Syy^-1/2.

    ``ridge`` is relative: each covariance gets ``ridge * mean(diag)`` added, so the
    result does not depend on the overall activation scale.
    """
    a, b = np.asarray(x.basis_projection), np.asarray(y.basis_projection)
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"datapoint counts differ: {a.shape[1]} vs {b.shape[1]}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    rho = np.linalg.svd(_whitened(a, ridge).T @ _whitened(b, ridge), compute_uv=False)
    k = min(a.shape[0], b.shape[0])
    rho = np.sort(np.clip(rho[:k], 0.0, 1.0))[::-1]
    return CcaResult(rho, a.shape[0], b.shape[0])


def svcca(a: ActivationMatrix, b: ActivationMatrix, variance_threshold: float = DEFAULT_THRESHOLD,
          ridge: float = DEFAULT_RIDGE) -> CcaResult:
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"{a.layer_name} vs {b.layer_name}: {a.shape[1]} vs {b.shape[1]} datapoints")
    ra = svd_reduce(center_rows(a), variance_threshold)
    rb = svd_reduce(center_rows(b), variance_threshold)
    return cca(ra, rb, ridge)


def svcca_similarity(a: ActivationMatrix, b: ActivationMatrix, variance_threshold: float = DEFAULT_THRESHOLD,
                     ridge: float = DEFAULT_RIDGE) -> float:
    """Mean canonical correlation between two layers (1 = same subspace)."""
    return svcca(a, b, variance_threshold, ridge).mean


def _by_name(dump) -> dict[str, ActivationMatrix]:
    if isinstance(dump, Mapping):
        return dict(dump)
    return {m.layer_name: m for m in dump}


def compare_checkpoints(dump_a, dump_b, variance_threshold: float = DEFAULT_THRESHOLD,
                        ridge: float = DEFAULT_RIDGE) -> LayerSimilarityReport:
    """Per-layer SVCCA similarity between two activation dumps over the same probe set."""
    a, b = _by_name(dump_a), _by_name(dump_b)
    if set(a) != set(b):
        raise LayerSetMismatch(f"layer sets differ: {sorted(set(a) ^ set(b))}")
    return LayerSimilarityReport({name: svcca_similarity(a[name], b[name], variance_threshold, ridge)
                                  for name in sort_layers(a)})


def group_summary(report: LayerSimilarityReport | Mapping[str, float]) -> GroupSummary:
    """Means over the down-sampling, repeat, and up-sampling layer groups."""
    values = report.similarities if isinstance(report, LayerSimilarityReport) else dict(report)
    r = [v for k, v in values.items() if _layer_sort_key(k)[0] == 1]
    return GroupSummary(float(np.mean([values[k] for k in GROUP_D])), float(np.mean(r)),
                        float(np.mean([values[k] for k in GROUP_U])))
