"""Desk-scale interpretability experiments: similarity to initialization, transfer,
frozen repeat layers, and a depth sweep, plus their CSV/JSON emitters."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dataio import Dataset, DatasetConfig
from .errors import ConfigError, ContractViolation, InvalidData
from .networks import Generator, GeneratorConfig, NetworkCheckpoint, build_generator
from .svcca import GROUP_D, GROUP_U, compare_checkpoints, group_summary, sort_layers
from .trainer import (ProbeItem, TrainConfig, TrainResult, build_probe_set, networks_from, prepare_dataset,
                      record_activations, select_optimal, train)

log = logging.getLogger(__name__)

CSV_HEADER = ("experiment", "seed", "checkpoint", "layer", "similarity")
GROUP_ROWS = ("GROUP_D", "GROUP_R", "GROUP_U")
FROZEN_VARIANTS = {"A": ("R2", "R3"), "B": ("R4", "R5"), "C": ("R6", "R7", "R8")}
SWEEP_DEPTHS = (3, 5, 7, 9, 11, 13, 15)

# dataset seed offset for the second ("B") corpus in transfer runs
TRANSFER_DATA_OFFSET = 1000
# generator seed offset for the independently initialized baseline network
BASELINE_INIT_OFFSET = 5000


@dataclass
class ExperimentReport:
    """Per-layer similarity rows on a checkpoint grid, with group means derived on demand."""

    experiment: str
    seed: int
    fingerprint: str
    rows: list[tuple[int, str, float]] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def checkpoints(self) -> list[int]:
        return sorted({r[0] for r in self.rows})

    @property
    def layers(self) -> list[str]:
        return sort_layers({r[1] for r in self.rows})

    def grid(self) -> dict[int, dict[str, float]]:
        out: dict[int, dict[str, float]] = {}
        for it, layer, sim in self.rows:
            out.setdefault(it, {})[layer] = sim
        return out

    def at(self, checkpoint: int) -> dict[str, float]:
        return self.grid()[checkpoint]

    def group_rows(self) -> list[tuple[int, str, float]]:
        out = []
        for it, sims in sorted(self.grid().items()):
            g = group_summary(sims)
            out += [(it, "GROUP_D", g.d), (it, "GROUP_R", g.r), (it, "GROUP_U", g.u)]
        return out

    def mean_similarity(self, checkpoint: int) -> float:
        return float(np.mean(list(self.at(checkpoint).values())))

    def validate(self) -> ExperimentReport:
        grid = self.grid()
        layers = set(self.layers)
        for it, sims in grid.items():
            if set(sims) != layers:
                raise InvalidData(f"checkpoint {it} is missing layers {sorted(layers - set(sims))}")
        for it, layer, sim in self.rows:
            if not 0.0 <= sim <= 1.0:
                raise InvalidData(f"similarity {sim} for {layer}@{it} outside [0, 1]")
        return self


def _report(experiment: str, seed: int, fingerprint: str, sims_by_ckpt: dict[int, dict[str, float]],
            **extras) -> ExperimentReport:
    rows = [(it, layer, float(s)) for it in sorted(sims_by_ckpt) for layer, s in sims_by_ckpt[it].items()]
    return ExperimentReport(experiment, seed, fingerprint, rows, dict(extras)).validate()


def seeded(cfg: TrainConfig, seed: int) -> TrainConfig:
    """The same experiment under another seed: initialization, data, and batch stream all move."""
    return replace(cfg, seed=seed, generator=replace(cfg.generator, seed=seed),
                   dataset=replace(cfg.dataset, seed=seed))


def _similarities(reference, checkpoints, probe) -> dict[int, dict[str, float]]:
    ref = reference if isinstance(reference, dict) else record_activations(reference, probe)
    return {ck.iteration: compare_checkpoints(ref, record_activations(ck, probe)).similarities
            for ck in checkpoints}


# ---------------------------------------------------------------- experiment 1

def exp1_similarity_vs_init(cfg: TrainConfig, dataset: Dataset | None = None, result: TrainResult | None = None,
                            probe: list[ProbeItem] | None = None) -> ExperimentReport:
    """Train from scratch and compare every checkpoint with the iteration-0 network.

    A finished ``result`` for the same config can be passed to skip training.
    """
    dataset = dataset if dataset is not None else prepare_dataset(cfg.dataset)
    if result is None:
        result = train(cfg, dataset)
    probe = probe if probe is not None else build_probe_set(dataset)
    sims = _similarities(result.checkpoints[0], result.checkpoints, probe)
    optimal = select_optimal(result, cfg.checkpoint_every).iteration
    return _report("exp1", cfg.seed, cfg.generator.fingerprint(), sims, optimal_iteration=optimal)


# ---------------------------------------------------------------- experiment 2

def transfer_config(base_cfg: TrainConfig) -> TrainConfig:
    """Fine-tuning config: a second synthetic corpus and half the base run length."""
    half = base_cfg.total_iterations // 2
    every = base_cfg.checkpoint_every if half % base_cfg.checkpoint_every == 0 else max(half // 5, 1)
    return replace(base_cfg, total_iterations=half, checkpoint_every=every,
                   dataset=replace(base_cfg.dataset, seed=base_cfg.dataset.seed + TRANSFER_DATA_OFFSET))


def fresh_generator(cfg: GeneratorConfig) -> Generator:
    return build_generator(replace(cfg, seed=cfg.seed + BASELINE_INIT_OFFSET))


def exp2_transfer(cfg: TrainConfig, base_checkpoint: NetworkCheckpoint, dataset: Dataset | None = None,
                  result: TrainResult | None = None) -> ExperimentReport:
    """Fine-tune ``base_checkpoint`` on ``cfg.dataset`` and track similarity to the pre-transfer network.

    ``extras["baseline"]`` holds the same grid measured against an independently
    initialized network, the reference the transfer similarities should beat.
    """
    if base_checkpoint.fingerprint != cfg.generator.fingerprint():
        raise ConfigError("base checkpoint geometry does not match the transfer config")
    dataset = dataset if dataset is not None else prepare_dataset(cfg.dataset)
    if result is None:
        result = train(cfg, dataset, init_checkpoint=base_checkpoint)
    probe = build_probe_set(dataset)
    sims = _similarities(base_checkpoint, result.checkpoints, probe)
    baseline = _similarities(record_activations(fresh_generator(cfg.generator), probe), result.checkpoints, probe)
    return _report("exp2", cfg.seed, cfg.generator.fingerprint(), sims,
                   baseline=_report("exp2-baseline", cfg.seed, cfg.generator.fingerprint(), baseline))


# ---------------------------------------------------------------- experiment 3

def scaled_variants(repeat_blocks: int) -> dict[str, tuple[str, ...]]:
    """The A/B/C frozen sets mapped proportionally onto a stack of ``repeat_blocks`` layers."""
    out = {}
    for key, layers in FROZEN_VARIANTS.items():
        idx = sorted({min(max(1, round(int(name[1:]) * repeat_blocks / 9)), repeat_blocks) for name in layers})
        out[key] = tuple(f"R{i}" for i in idx)
    return out


def _check_variants(variants: dict, repeat_blocks: int):
    allowed = {f"R{i}" for i in range(1, repeat_blocks + 1)}
    for key, layers in variants.items():
        bad = set(layers) - allowed
        if not layers or bad:
            raise ConfigError(f"variant {key}: {sorted(bad) or 'empty'} is not a subset of R1..R{repeat_blocks}")


def frozen_intact(result: TrainResult, layers) -> bool:
    """True when every frozen parameter block is bit-identical to its initial value at every checkpoint."""
    init = result.checkpoints[0].generator
    for ck in [*result.checkpoints, result.final]:
        for key, value in ck.generator.items():
            if key.split(".", 1)[0] in layers and not np.array_equal(value, init[key]):
                return False
    return True


def exp3_frozen(cfg: TrainConfig, variants: dict[str, tuple[str, ...]] | None = None,
                dataset: Dataset | None = None, reference: TrainResult | None = None
                ) -> dict[str, ExperimentReport]:
    """Train one network per frozen set from the same initialization and compare each optimal
    checkpoint with the optimal unfrozen network."""
    variants = variants if variants is not None else scaled_variants(cfg.generator.repeat_blocks)
    _check_variants(variants, cfg.generator.repeat_blocks)
    dataset = dataset if dataset is not None else prepare_dataset(cfg.dataset)
    if reference is None:
        reference = train(replace(cfg, frozen_layers=()), dataset)
    probe = build_probe_set(dataset)
    ref_best = select_optimal(reference, cfg.checkpoint_every)
    ref_dump = record_activations(ref_best, probe)
    reports = {}
    for key, layers in variants.items():
        result = train(replace(cfg, frozen_layers=tuple(layers)), dataset)
        if not frozen_intact(result, layers):
            raise ContractViolation(f"variant {key}: frozen parameters moved during training")
        best = select_optimal(result, cfg.checkpoint_every)
        sims = {best.iteration: compare_checkpoints(ref_dump, record_activations(best, probe)).similarities}
        reports[key] = _report(f"exp3{key}", cfg.seed, cfg.generator.fingerprint(), sims,
                               frozen=tuple(layers), frozen_intact=True, reference_iteration=ref_best.iteration,
                               log=result.log)
    return reports


# ---------------------------------------------------------------- experiment 4

def mode_collapse_index(g, probe_set, domains) -> float:
    """Mean pairwise L1 distance between outputs for the same input under different target
    codes, divided by the mean absolute input value. 0 means the code is ignored.

    ``g`` is a :class:`Generator` or any callable ``g(features, code) -> array``; probe
    items are :class:`ProbeItem` or bare Q x T arrays.
    """
    domains = list(domains)
    if len(domains) < 2:
        raise ConfigError("mode_collapse_index needs at least two domains")
    if isinstance(g, Generator):
        net = g

        def g(x, code):
            with ad.no_grad():
                return net(x[None, None], code)[0].data[0, 0]

    dist, scale = [], []
    for item in probe_set:
        x = np.asarray(item.features if isinstance(item, ProbeItem) else item, dtype=np.float64)
        outs = [np.asarray(g(x, d), dtype=np.float64) for d in domains]
        dist += [np.mean(np.abs(a - b)) for a, b in combinations(outs, 2)]
        scale.append(np.mean(np.abs(x)))
    s = float(np.mean(scale))
    if s <= 0:
        raise InvalidData("probe inputs are all zero")
    return float(np.mean(dist)) / s


@dataclass
class DepthRow:
    depth: int
    final_losses: dict[str, float]
    repeat_grad_means: dict[str, list[float]]  # layer -> mean grad norm over each checkpoint interval
    min_repeat_grad: float
    converged: bool
    mode_collapse: float
    final_cycle_loss: float


@dataclass
class DepthSweepReport:
    seed: int
    checkpoints: list[int]
    rows: list[DepthRow]

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "checkpoints": self.checkpoints,
                           "proxies_note": "gradient norms, convergence, mode-collapse index and final cycle "
                                           "loss are measurable proxies, not perceptual quality",
                           "rows": [vars(r) for r in self.rows]}, indent=2, sort_keys=True)


def _interval_means(result: TrainResult, every: int) -> tuple[list[int], dict[str, list[float]]]:
    norms = result.log.grad_norm_matrix()
    its = result.log.column("iteration")
    marks = [ck.iteration for ck in result.checkpoints if ck.iteration > 0]
    out = {}
    for j, layer in enumerate(result.log.layer_names):
        if layer.startswith("R"):
            out[layer] = [float(norms[(its >= m - every) & (its < m), j].mean()) for m in marks]
    return marks, out


def exp4_depth_sweep(cfg: TrainConfig, depths=SWEEP_DEPTHS, dataset: Dataset | None = None,
                     results: dict[int, TrainResult] | None = None) -> DepthSweepReport:
    depths = [int(d) for d in depths]
    if any(d < 1 or d % 2 == 0 for d in depths):
        raise ConfigError(f"depths must be odd integers >= 1, got {depths}")
    dataset = dataset if dataset is not None else prepare_dataset(cfg.dataset)
    probe = build_probe_set(dataset)
    results = dict(results or {})
    rows, marks = [], []
    for depth in depths:
        run_cfg = replace(cfg, generator=replace(cfg.generator, repeat_blocks=depth), frozen_layers=())
        result = results.get(depth) or train(run_cfg, dataset)
        marks, grads = _interval_means(result, cfg.checkpoint_every)
        final = dict(zip(("adv_g", "adv_d", "cyc", "id", "total_g", "total_d"), result.log.records[-1][1:7])) \
            if result.log.records else {}
        tg = result.log.column("total_g")
        window = max(1, min(100, len(tg) // 2))
        converged = bool(len(tg) and np.all(np.isfinite(tg)) and tg[-window:].mean() < tg[:window].mean())
        gen = networks_from(result.final)[0]
        rows.append(DepthRow(depth, {k: float(v) for k, v in final.items()}, grads,
                             float(min(np.mean(v) for v in grads.values())) if grads and marks else float("nan"),
                             converged, mode_collapse_index(gen, probe, range(cfg.generator.n_domains)),
                             float(final.get("cyc", float("nan")))))
    return DepthSweepReport(cfg.seed, marks, rows)


# ---------------------------------------------------------------- emitters

def csv_text(reports) -> str:
    """Header plus per-layer rows then group rows for each report, floats at 17 significant digits."""
    reports = [reports] if isinstance(reports, ExperimentReport) else list(reports)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rep in reports:
        for it, layer, sim in [*rep.rows, *rep.group_rows()]:
            w.writerow([rep.experiment, rep.seed, it, layer, f"{sim:.17g}"])
    return buf.getvalue()


def emit_csv(reports, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(reports))
    return path


def read_csv(path) -> list[ExperimentReport]:
    """Parse an emitted CSV back into reports (group rows are dropped; they are derived)."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = tuple(next(rd))
        if header != CSV_HEADER:
            raise InvalidData(f"unexpected CSV header {header}")
        reports: dict[tuple[str, int], ExperimentReport] = {}
        for exp, seed, it, layer, sim in rd:
            rep = reports.setdefault((exp, int(seed)), ExperimentReport(exp, int(seed), ""))
            if layer not in GROUP_ROWS:
                rep.rows.append((int(it), layer, float(sim)))
    return list(reports.values())


def emit_sweep(report: DepthSweepReport, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    js = out_dir / "exp4_sweep.json"
    js.write_text(report.to_json())
    cs = out_dir / "exp4_grad_norms.csv"
    with open(cs, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("depth", "checkpoint", "layer", "mean_grad_norm"))
        for row in report.rows:
            for layer in sort_layers(row.repeat_grad_means):
                for it, v in zip(report.checkpoints, row.repeat_grad_means[layer]):
                    w.writerow([row.depth, it, layer, f"{v:.17g}"])
    return js, cs


__all__ = [
    "CSV_HEADER", "DepthRow", "DepthSweepReport", "ExperimentReport", "GROUP_D", "GROUP_U", "SWEEP_DEPTHS",
    "FROZEN_VARIANTS", "csv_text", "emit_csv", "emit_sweep", "exp1_similarity_vs_init", "exp2_transfer",
    "exp3_frozen", "exp4_depth_sweep", "fresh_generator", "frozen_intact", "mode_collapse_index", "read_csv",
    "scaled_variants", "seeded", "transfer_config",
]
