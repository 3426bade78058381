"""Principal sensitivity analysis for small feed-forward classifiers.

Train a classifier, stack the input gradients of one class log-posterior
over a dataset, form their uncentered covariance (the sensitivity kernel),
and eigendecompose it: the leading eigenvectors are the principal
sensitivity maps.  Submodules: linalg (eigensolver), data (synthetic digits
and IDX ingestion), mlp (training and gradients), psa (kernels and maps),
sparse (L1 sensitivity atoms), render (heatmaps), cli (pipeline driver).
"""

__version__ = "0.1.0"

from . import errors
from .data import (DESK_SIZES, FULL_SIZES, Dataset, LabeledImage, TemplateSet,
                   builtin_templates, corrupt, gen_dataset, load_dataset,
                   load_idx, save_dataset)
from .linalg import EighResult, eigh_symmetric
from .mlp import (GradientField, Mlp, MlpConfig, error_rate, forward_logp,
                  forward_logp_batch, gradient_field, input_gradient,
                  load_model, save_model, train_sgd)
from .psa import (PairwiseTable, PsaDecomposition, SensitivityKernel,
                  directional_sensitivity, kernel_from_gradients,
                  load_decomposition, load_kernel, pairwise_kernel,
                  pairwise_sensitivity, pairwise_table, psa,
                  read_pairwise_csv, save_decomposition, save_kernel,
                  standard_map, write_pairwise_csv)
from .render import (SignedMapImage, montage, read_ppm, render_map,
                     write_image, write_png, write_ppm)
from .sparse import (SparsePsaConfig, SparsePsaModel, load_sparse_model,
                     objective, save_sparse_model, sparse_psa)

__all__ = [name for name in dir() if not name.startswith("_")]
