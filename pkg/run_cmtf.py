#!/usr/bin/env python
"""
Launcher script for the cmtf command line.

Usage from repo root:
    python run_cmtf.py fit --config config.json --out results

Alternative:
    python -m cmtf_fusion
"""
import sys

from cmtf_fusion.app import main

if __name__ == "__main__":
    sys.exit(main())
