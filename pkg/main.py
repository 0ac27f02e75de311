"""Command-line entry point for dsvae_lab."""

from __future__ import annotations

import sys

from dsvae_lab.cli import main

if __name__ == "__main__":
    sys.exit(main())
