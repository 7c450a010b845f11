#!/usr/bin/env python3
"""Run the double-well twin experiment preset.

Produces histograms of the sampling-smoother and ensemble-smoother
analysis ensembles, the variational analysis, RMSE series, and the cost
ledger under runs/double_well (override with --output-dir).
"""

import os
import sys

from fourda.cli import main

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "double_well.yaml")

if __name__ == "__main__":
    sys.exit(main([CONFIG] + sys.argv[1:]))
