#!/usr/bin/env python3
"""Main entry point for sketchdecomp; `python main.py serve` runs the results API"""

import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
