from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from altermoma_lab import log
from altermoma_lab.synth_data.models.config import GenConfig
from altermoma_lab.synth_data.models.dataset import Batch, MultiModalDataset

# random streams derived from the sample seed
_TRAIN_STREAM = 0
_VAL_STREAM = 1


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    # sign convention making the draw unique
    return q * np.sign(np.diag(r))


def mixing_matrices(cfg: GenConfig) -> Tuple[np.ndarray, np.ndarray]:
    """The observation matrices A (d_l × d_shared) and B (d_c × (d_shared + d_cam_only)), both with
    orthonormal columns, drawn from `cfg.mixing_seed`."""
    rng = np.random.default_rng(cfg.mixing_seed)
    a = _orthonormal_columns(rng, cfg.d_l, cfg.d_shared)
    b = _orthonormal_columns(rng, cfg.d_c, cfg.d_shared + cfg.d_cam_only)
    return a, b


def _target_network(cfg: GenConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(cfg.target_seed)
    d_in = cfg.d_shared + cfg.d_cam_only
    w1 = rng.standard_normal((d_in, cfg.target_hidden)) / np.sqrt(d_in)
    b1 = 0.1 * rng.standard_normal(cfg.target_hidden)
    w2 = rng.standard_normal((cfg.target_hidden, cfg.d_y)) / np.sqrt(cfg.target_hidden)
    b2 = 0.1 * rng.standard_normal(cfg.d_y)
    return w1, b1, w2, b2


def generate(cfg: GenConfig, seed: int, n_samples: Optional[int] = None,
             stream: int = _TRAIN_STREAM) -> MultiModalDataset:
    """Draw a dataset with cross-modal redundancy.

    The shared latent z_s is seen by both modalities (x_l = A·z_s + ε_l, x_c = B·[z_s; z_c] + ε_c) and the
    target is a fixed random 1-hidden-layer network of both latents. The auxiliary pretraining targets are
    z_s for the LiDAR backbone and [z_s; z_c] for the camera backbone, so both backbones learn to recover z_s.

    Parameters
    ----------
    cfg : GenConfig
        The generation parameters. The mixing matrices and target network only depend on its seeds.
    seed : int
        The sample seed.
    n_samples : Optional[int], optional
        The number of samples, by default `cfg.n_samples`.
    stream : int, optional
        Independent sample stream for the same seed (0 for training, 1 for validation), by default 0.

    Returns
    -------
    MultiModalDataset
        The dataset, bit-identical for the same arguments.
    """
    n = cfg.n_samples if n_samples is None else n_samples
    if n <= 0:
        raise ValueError(f'The number of samples must be positive ({n} given).')

    a, b = mixing_matrices(cfg)
    w1, b1, w2, b2 = _target_network(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([seed, stream]))

    z_s = rng.standard_normal((n, cfg.d_shared))
    z_c = rng.standard_normal((n, cfg.d_cam_only))
    z = np.hstack([z_s, z_c])
    x_l = z_s @ a.T + cfg.sigma_l * rng.standard_normal((n, cfg.d_l))
    x_c = z @ b.T + cfg.sigma_c * rng.standard_normal((n, cfg.d_c))
    y = np.maximum(z @ w1 + b1, 0.0) @ w2 + b2
    y = y + cfg.target_noise * rng.standard_normal(y.shape)
    if cfg.task == 'classification':
        y = np.eye(cfg.d_y)[np.argmax(y, axis=1)]

    return MultiModalDataset(x_l, x_c, y, y_l_aux=z_s.copy(), y_c_aux=z.copy(), z_s=z_s, z_c=z_c,
                             gen_config=cfg, seed=seed)


def generate_splits(cfg: GenConfig, seed: int) -> Tuple[MultiModalDataset, MultiModalDataset]:
    """Training and validation sets sharing the mixing matrices and the target network."""
    train = generate(cfg, seed, cfg.n_samples, _TRAIN_STREAM)
    val = generate(cfg, seed, cfg.n_val, _VAL_STREAM)
    log.debug(f'Generated {train.n} training and {val.n} validation samples (seed {seed}).')
    return train, val


def batches(ds: MultiModalDataset, batch_size: int, seed: int, count: int) -> List[Batch]:
    """Deterministic mini-batches.

    Each epoch is a fresh permutation of the samples cut into `N // batch_size` batches (the incomplete tail is
    dropped); epochs follow one another until `count` batches have been produced.
    """
    if batch_size <= 0 or batch_size > ds.n:
        raise ValueError(f'The batch size must be in [1, {ds.n}] ({batch_size} given).')
    if count < 0:
        raise ValueError(f'The number of batches cannot be negative ({count} given).')

    rng = np.random.default_rng(seed)
    per_epoch = ds.n // batch_size
    result: List[Batch] = []
    while len(result) < count:
        order = rng.permutation(ds.n)
        for i in range(min(per_epoch, count - len(result))):
            result.append(ds.subset(order[i * batch_size:(i + 1) * batch_size]))
    return result


def _least_squares_mse(x: np.ndarray, target: np.ndarray) -> float:
    design = np.hstack([x, np.ones((x.shape[0], 1))])
    coefficients, *_ = np.linalg.lstsq(design, target, rcond=None)
    return float(np.mean((design @ coefficients - target) ** 2))


def redundancy_certificate(ds: MultiModalDataset) -> Tuple[float, float]:
    """Least-squares recovery error of the shared latent from each modality.

    Returns
    -------
    Tuple[float, float]
        The mean squared errors of the affine regression of z_s on x_l and on x_c.
    """
    return _least_squares_mse(ds.x_l, ds.z_s), _least_squares_mse(ds.x_c, ds.z_s)


def to_dataframe(ds: MultiModalDataset) -> pd.DataFrame:
    columns = {}
    for prefix, array in [('x_l', ds.x_l), ('x_c', ds.x_c), ('y', ds.y)]:
        for j in range(array.shape[1]):
            columns[f'{prefix}_{j}'] = array[:, j]
    return pd.DataFrame(columns)


def export_csv(ds: MultiModalDataset, path: Path) -> None:
    """One row per sample with the columns x_l_*, x_c_*, y_*."""
    path.parent.mkdir(parents=True, exist_ok=True)
    to_dataframe(ds).to_csv(path, index=False, float_format='%.17g')
    log.info(f'{ds.n} samples exported to {path}.')
