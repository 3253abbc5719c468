# Command-line entry points (run with python -m nanonmr2d.scripts.nmr2d)
