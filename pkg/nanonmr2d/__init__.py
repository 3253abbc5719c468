"""nanonmr2d: 2D nanoscale NMR with a single NV centre, simulated and inverted.

The package is organised bottom-up:

- **Physics** (``spins``, ``sequences``): spin species, hyperfine and dipolar
  tensors, the electron-nuclear Hamiltonian, pulse schedules and exact
  propagation.
- **Experiments** (``experiments``): DD spacing scans, correlation scans and
  homo-/heteronuclear 2D correlation maps under the stored-phase protocol.
- **Analysis** (``spectra``, ``inversion``, ``lattice``, ``geometry``): FFTs,
  peak picking, coupling estimates, diamond-lattice search and distance
  geometry.
- **Runs** (``config``, ``pipeline``, ``outputs``): TOML run files, the
  end-to-end pipeline and its result files.

Run an experiment with::

    python -m nanonmr2d.scripts.nmr2d run nanonmr2d/configs/coupled_pair.toml

The species table and processing defaults are read from ``config.toml`` at
the repository root.
"""

__version__ = "0.1.0"
