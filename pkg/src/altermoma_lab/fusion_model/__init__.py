"""Two-backbone fusion models

A `FusionModel` is the triple (LiDAR backbone, camera backbone, fusion head) expressed as a single
`tensor_core` graph. Every parameter belongs to exactly one `Partition`, carries its own binary mask and can
additionally be silenced by a modality-level mask (see `ModalityMasks`).

Operations live in `fusion_model.lib`, the binary checkpoint format in `fusion_model.checkpoint`.
"""
# inputs and outputs of the fusion graph
INPUT_LIDAR = 'x_l'
INPUT_CAMERA = 'x_c'
TARGET = 'y'
LOSS = 'loss'

# checkpoint file format
CHECKPOINT_MAGIC = b'AMML'
CHECKPOINT_VERSION = 2
