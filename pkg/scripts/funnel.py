#!/usr/bin/env python3
"""Run the funnel joint and posterior checks; accepts the same flags as run_bench.py."""
import sys

from run_bench import main

if __name__ == "__main__":
    sys.exit(main(default_name="funnel_joint,funnel_posterior"))
