"""Synthetic two-modality data

The generated datasets carry cross-modal redundancy by construction: a shared latent is observed by both
modalities, the LiDAR-like observation being the less noisy one, while a second latent is only visible to the
camera-like observation.
"""
# dataset file format
DATASET_MAGIC = b'AMDS'
DATASET_VERSION = 1
