"""Brute-force verifiers

Exact masking deltas, finite-difference gradients and the trajectory error of the reactivated redundancy, all
computed from forward passes and replayed training steps. They are affordable only on toy models, which is where
they are used to validate the first-order indicators.
"""
