"""End-to-end experiments: model preparation, pruning with fine-tuning, β/α ablation, gradient-difference report."""
from altermoma_lab.baselines import BASELINES

METHODS = ('altermoma',) + BASELINES
