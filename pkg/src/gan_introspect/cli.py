"""``gan-introspect`` command line: training, the four experiments, and ad-hoc SVCCA.

Configs are JSON documents mirroring :class:`TrainConfig` (nested ``generator``,
``dataset`` and ``weights`` objects) plus optional experiment keys: ``seeds``,
``variants`` (exp3), ``depths`` (exp4) and ``base_checkpoint`` (exp2; may contain
``{seed}``, and falls back to the exp1 networks saved in the same ``--out`` directory).

Exit codes: 0 success, 2 invalid input or config, 3 training diverged.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .dataio import read_amat
from .errors import DivergenceError, GanIntrospectError
from .networks import load_checkpoint, save_checkpoint
from .svcca import DEFAULT_THRESHOLD, svcca
from .trainer import TrainConfig, train

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3
EXPERIMENT_KEYS = ("seeds", "variants", "depths", "base_checkpoint")

log = logging.getLogger("gan_introspect")


class _InvalidInput(GanIntrospectError, ValueError):
    pass


def load_config(path) -> tuple[TrainConfig, dict]:
    """Split a JSON config into a validated TrainConfig and the experiment-only keys."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise _InvalidInput(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise _InvalidInput("config must be a JSON object")
    extra = {k: doc.pop(k) for k in EXPERIMENT_KEYS if k in doc}
    return TrainConfig.from_dict(doc).validate(), extra


def _seeds(cfg: TrainConfig, extra: dict) -> list[int]:
    return [int(s) for s in extra.get("seeds", [cfg.seed])]


def cmd_train(args) -> int:
    cfg, _ = load_config(args.config)
    out = Path(args.out) if args.out else None
    result = train(cfg, checkpoint_dir=out)
    if out:
        result.log.to_csv(out / "train_log.csv")
        save_checkpoint(result.final, out / "final.gick")
    tg = result.log.column("total_g")
    print(f"trained {cfg.total_iterations} iterations in {result.log.wall_time:.1f}s; "
          f"final total_g {tg[-1] if len(tg) else float('nan'):.6g}")
    return EXIT_OK


def cmd_exp1(args) -> int:
    cfg, extra = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for seed in _seeds(cfg, extra):
        scfg = ex.seeded(cfg, seed)
        result = train(scfg)
        save_checkpoint(result.final, out / f"exp1_base_seed{seed}.gick")
        reports.append(ex.exp1_similarity_vs_init(scfg, result=result))
        log.info("exp1 seed %d done", seed)
    print(ex.emit_csv(reports, out / "exp1.csv"))
    return EXIT_OK


def cmd_exp2(args) -> int:
    cfg, extra = load_config(args.config)
    out = Path(args.out)
    reports = []
    for seed in _seeds(cfg, extra):
        scfg = ex.seeded(cfg, seed)
        base_path = extra.get("base_checkpoint")
        if base_path is None and (out / f"exp1_base_seed{seed}.gick").exists():
            base_path = out / f"exp1_base_seed{seed}.gick"
        base = load_checkpoint(str(base_path).format(seed=seed)) if base_path else train(scfg).final
        rep = ex.exp2_transfer(ex.transfer_config(scfg), base)
        reports += [rep, rep.extras["baseline"]]
    print(ex.emit_csv(reports, out / "exp2.csv"))
    return EXIT_OK


def cmd_exp3(args) -> int:
    cfg, extra = load_config(args.config)
    if args.paper_variants:
        variants = dict(ex.FROZEN_VARIANTS)
    elif "variants" in extra:
        variants = {k: tuple(v) for k, v in extra["variants"].items()}
    else:
        variants = None
    out = Path(args.out)
    reports = []
    for seed in _seeds(cfg, extra):
        reports += list(ex.exp3_frozen(ex.seeded(cfg, seed), variants).values())
    print(ex.emit_csv(reports, out / "exp3.csv"))
    return EXIT_OK


def cmd_exp4(args) -> int:
    cfg, extra = load_config(args.config)
    depths = extra.get("depths", ex.SWEEP_DEPTHS)
    for seed in _seeds(cfg, extra):
        paths = ex.emit_sweep(ex.exp4_depth_sweep(ex.seeded(cfg, seed), depths), Path(args.out) / f"seed{seed}")
        print(*paths, sep="\n")
    return EXIT_OK


def cmd_svcca(args) -> int:
    a, b = read_amat(args.a), read_amat(args.b)
    res = svcca(a, b, args.threshold)
    print(json.dumps({"layer_a": a.layer_name, "layer_b": b.layer_name, "similarity": res.mean,
                      "retained": [res.retained_x, res.retained_y],
                      "correlations": [float(c) for c in res.correlations]}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gan-introspect", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one network")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="directory for checkpoints and the training log")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("exp1", cmd_exp1, "similarity of each checkpoint to initialization"),
                                 ("exp2", cmd_exp2, "transfer to a second corpus"),
                                 ("exp3", cmd_exp3, "frozen repeat-layer variants"),
                                 ("exp4", cmd_exp4, "repeat-depth sweep")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--config", required=True)
        e.add_argument("--out", required=True)
        e.add_argument("--paper-variants", action="store_true",
                       help="exp3 only: freeze exactly {R2,R3}, {R4,R5}, {R6,R7,R8}")
        e.set_defaults(func=func)

    s = sub.add_parser("svcca", help="SVCCA similarity of two AMAT files")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    s.set_defaults(func=cmd_svcca)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                         format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "paper_variants", False) and args.command != "exp3":
        print("error: --paper-variants only applies to exp3", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (GanIntrospectError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
