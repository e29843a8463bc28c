"""
Running experiments from configuration files
============================================

The same pipeline is available from the shell::

    adp2sgd calibrate --config demos/configs/calibrated.json --mu auto
    adp2sgd run --config demos/configs/case2_sync.json --output runs/sync
    adp2sgd run --config demos/configs/case2_adpsgd.json --output runs/adpsgd
    adp2sgd compare runs/sync/trace.csv runs/adpsgd/trace.csv
    adp2sgd sweep --config demos/configs/noise_small.json --seeds 0 1 2 --output runs/sweep

This script drives the same commands in-process and writes into a temporary directory.
"""

import sys
import tempfile
from pathlib import Path

from adp2sgd import cli

configs = Path(__file__).parent / "configs"

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    cli.main(["calibrate", "--config", str(configs / "calibrated.json")])
    cli.main(["run", "--config", str(configs / "case2_sync.json"), "--output", str(tmp / "sync")])
    cli.main(["run", "--config", str(configs / "case2_adpsgd.json"), "--output", str(tmp / "adpsgd")])
    cli.cmd_compare(tmp / "sync" / "trace.csv", tmp / "adpsgd" / "trace.csv", out=sys.stdout)
    print((tmp / "adpsgd" / "trace.csv").read_text().splitlines()[:9])
