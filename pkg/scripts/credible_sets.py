#!/usr/bin/env python3
"""Run the credible-set checks (coverage, nesting, monotonicity, rank); accepts the same flags as run_bench.py."""
import sys

from run_bench import main

if __name__ == "__main__":
    sys.exit(main(default_name="coverage,nesting,monotonicity,rank"))
