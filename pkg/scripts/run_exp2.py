"""Run experiment 2 (fine-tune the exp1 networks on a second synthetic corpus).

Usage: python3 scripts/run_exp2.py [config.json] [out_dir]
Defaults to configs/desk.json and results/.
"""
import sys
from pathlib import Path

from gan_introspect.cli import main

ROOT = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    config = sys.argv[1] if len(sys.argv) > 1 else str(ROOT / "configs" / "desk.json")
    out = sys.argv[2] if len(sys.argv) > 2 else str(ROOT / "results")
    sys.exit(main(["-v", "exp2", "--config", config, "--out", out]))
