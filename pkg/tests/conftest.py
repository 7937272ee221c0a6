from typing import Tuple

import pytest

from altermoma_lab.altermoma.models.prune_config import PruneConfig
from altermoma_lab.fusion_model.lib import build, pretrain_backbone, train_fusion
from altermoma_lab.fusion_model.models.arch import ArchConfig
from altermoma_lab.fusion_model.models.model import FusionModel
from altermoma_lab.fusion_model.models.partition import Partition
from altermoma_lab.synth_data.lib import generate_splits
from altermoma_lab.synth_data.models.config import GenConfig
from altermoma_lab.synth_data.models.dataset import MultiModalDataset

SMALL_DATA = GenConfig(n_samples=256, n_val=64, d_shared=3, d_cam_only=2, d_l=4, d_c=6, d_y=2, target_hidden=8)
SMALL_ARCH = ArchConfig(in_l=4, in_c=6, hidden=6, n_hidden=1, feat=3, fusion_hidden=5, out=2)

SMALL_TOML = """
[data]
n_samples = 256
n_val = 64
d_shared = 3
d_cam_only = 2
d_l = 4
d_c = 6
d_y = 2
target_hidden = 8

[model]
in_l = 4
in_c = 6
hidden = 6
n_hidden = 1
feat = 3
fusion_hidden = 5
out = 2

[train]
pretrain_epochs = 1
epochs = 2
batch_size = 32

[prune]
rho = 0.5
reactivation_batches = 2
reactivation_lr = 0.01
eval_batches = 2
batch_size = 32
finetune_epochs = 1
imp_rounds = 2
synflow_iterations = 3

[ablation]
grid = [0.0, 1.0]
seeds = 2
rho = 0.5

[verify]
seeds = 1
"""


@pytest.fixture
def small_splits() -> Tuple[MultiModalDataset, MultiModalDataset]:
    yield generate_splits(SMALL_DATA, 0)


@pytest.fixture
def small_model() -> FusionModel:
    yield build(SMALL_ARCH)


@pytest.fixture
def trained_model(small_splits) -> FusionModel:
    train, val = small_splits
    model = build(SMALL_ARCH)
    for modality in Partition.backbones():
        pretrain_backbone(model, modality, train, epochs=2, lr=0.05, batch_size=32)
    train_fusion(model, train, val, epochs=3, lr=0.05, batch_size=32)
    yield model


@pytest.fixture
def small_prune_config() -> PruneConfig:
    yield PruneConfig(rho=0.5, reactivation_batches=4, reactivation_lr=1e-2, eval_batches=2, batch_size=32,
                      finetune_epochs=1, imp_rounds=2, synflow_iterations=5)


@pytest.fixture
def small_config_file(tmp_path):
    path = tmp_path / 'small.toml'
    path.write_text(SMALL_TOML, encoding='utf-8')
    yield path
