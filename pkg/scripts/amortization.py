#!/usr/bin/env python3
"""Run the amortization check; accepts the same flags as run_bench.py."""
import sys

from run_bench import main

if __name__ == "__main__":
    sys.exit(main(default_name="amortization"))
