"""Alternative modality masking pruning

Scores every parameter (or channel) of a fusion model with two first-order indicators: the contribution lost when
the parameter is deactivated, and the redundancy that is reactivated when the other modality is masked and the
model is briefly retrained. The assembled score is thresholded globally across the three partitions.
"""
