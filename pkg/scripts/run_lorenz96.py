#!/usr/bin/env python3
"""Run the Lorenz-96 three-window twin experiment preset.

Cycles the sampling smoother (hybrid background covariance), the
variational solver, and the ensemble smoother over three contiguous
windows; writes per-window analyses, RMSE series, and the cost ledger
under runs/lorenz96 (override with --output-dir).
"""

import os
import sys

from fourda.cli import main

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "lorenz96.yaml")

if __name__ == "__main__":
    sys.exit(main([CONFIG] + sys.argv[1:]))
