"""Diffuse-light Raman quantum memory: susceptibility model, Monte-Carlo
photon transport, write-in criteria, Fock-space hologram states and
interferometric readout."""

__version__ = "0.1.0"
