"""Conformal scores, the uniform label-noise model and split-conformal calibration."""
