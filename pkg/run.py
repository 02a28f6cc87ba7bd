#!/usr/bin/env python3
"""
Main entry point.

    python run.py distort-random --manifest clip.json --out out/rodc
    python run.py run            # serve /health, /scores and /runs
"""

from odisco.cli import main

if __name__ == "__main__":
    main()
