"""Reference pruning rules

Every baseline produces a score per element (or per channel) and goes through the same thresholding, masking and
fine-tuning as the alternative modality masking method, so that method comparisons only differ by the scores.
"""
BASELINES = ('magnitude', 'imp', 'snip', 'synflow', 'random')
