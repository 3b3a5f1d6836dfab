"""
Module entrypoint for `python -m cmtf_fusion`.

This allows running the command line from the repository root:
    python -m cmtf_fusion experiment exp1 --replicates 2
"""
import sys

from cmtf_fusion.app import main

if __name__ == "__main__":
    sys.exit(main())
