"""Sparse sensitivity atoms by alternating minimization.

Fits a dictionary V (d x p) and per-sample codes to a gradient field,
minimizing

    0.5 * sum_i ||r_i - V a_i||^2  +  lam * sum_k ||v_k||_1
    subject to ||a_i||_2 = 1                       (convention="atoms")

i.e. the L1 penalty sits on the ATOMS and the unit-norm constraint on the
CODES.  `convention="transposed"` swaps them into the common dictionary-
learning form (L1 codes, unit atoms) for comparison.  Both conventions use
exact block updates, so the objective trace is non-increasing by
construction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, FormatError, InternalError, IoError
from .mlp import GradientField
from .psa import kernel_from_gradients, psa

CONVENTION_ATOMS = "atoms"
CONVENTION_TRANSPOSED = "transposed"
_CONVENTION_CODES = {CONVENTION_ATOMS: 0, CONVENTION_TRANSPOSED: 1}

SPARSE_MAGIC = b"PSAS"
SPARSE_VERSION = 1
_HEADER_FMT = "<IBIdIdqIII"

_MONOTONE_SLACK = 1e-9


@dataclass
class SparsePsaConfig:
    num_atoms: int
    penalty: float = 5.0
    max_outer_iters: int = 200
    tol: float = 1e-8  # relative objective decrease that stops the loop
    seed: int = 0
    convention: str = CONVENTION_ATOMS

    def __post_init__(self):
        if self.num_atoms < 1:
            raise DomainError("need at least one atom")
        if self.penalty < 0.0:
            raise DomainError("penalty must be >= 0")
        if self.tol <= 0.0:
            raise DomainError("tol must be positive")
        if self.max_outer_iters < 1:
            raise DomainError("max_outer_iters must be at least 1")
        if self.convention not in _CONVENTION_CODES:
            raise DomainError(f"unknown convention {self.convention!r}")


@dataclass
class SparsePsaModel:
    """Fitted atoms, ranked by directional sensitivity and L2-normalized.

    `raw_atoms` are the optimizer's atoms before the reporting
    normalization, so codes @ raw_atoms.T reproduces the fit and
    objective(field, raw_atoms, codes, penalty) equals the trace end.
    `codes` keeps the optimizer's code rows (unit-norm under the default
    convention); columns of all three arrays are permuted to the reported
    atom order, and `ranking[j]` is the original optimizer index of
    reported atom j.  `objective_trace` holds the objective after the
    initial code step and then after every outer iteration.
    """

    atoms: np.ndarray = field(repr=False)
    raw_atoms: np.ndarray = field(repr=False)
    codes: np.ndarray = field(repr=False)
    objective_trace: np.ndarray
    sensitivities: np.ndarray
    ranking: np.ndarray
    config: SparsePsaConfig = None


def _soft(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def objective(gradients: GradientField, atoms, codes, penalty: float) -> float:
    """0.5 * sum_i ||r_i - V a_i||^2 + penalty * sum_k ||v_k||_1."""
    r = gradients.matrix
    atoms = np.asarray(atoms, dtype=np.float64)
    codes = np.asarray(codes, dtype=np.float64)
    if atoms.ndim != 2 or codes.ndim != 2:
        raise DimensionError("atoms and codes must be 2-D")
    if atoms.shape[1] != codes.shape[1] or codes.shape[0] != r.shape[0] \
            or atoms.shape[0] != r.shape[1]:
        raise DimensionError(
            f"shapes do not conform: field {r.shape}, atoms {atoms.shape}, codes {codes.shape}"
        )
    residual = r - codes @ atoms.T
    return float(0.5 * np.sum(residual * residual) + penalty * np.sum(np.abs(atoms)))


def _objective_l1_codes(gradients, atoms, codes, penalty):
    residual = gradients.matrix - codes @ atoms.T
    return float(0.5 * np.sum(residual * residual) + penalty * np.sum(np.abs(codes)))


def _code_step_unit(r, atoms):
    """Exact per-sample minimization of ||r_i - V a||^2 over the unit sphere.

    Stationary codes satisfy (V^T V + mu I) a = V^T r_i with ||a|| = 1 and
    mu >= -lambda_min(V^T V); ||a(mu)|| is monotone decreasing on that
    branch, so a vectorized bisection on mu finds each sample's multiplier.
    Samples whose correlation with the bottom eigenspace vanishes (including
    zero gradients and an all-zero dictionary) are the hard case: their
    remaining unit mass goes onto the bottom eigenvector, positive side.
    """
    gram = atoms.T @ atoms
    evals, evecs = np.linalg.eigh(gram)  # ascending; >= 0 up to rounding
    evals = np.maximum(evals, 0.0)
    beta = (r @ atoms) @ evecs  # correlations in the eigenbasis, (N, p)
    beta_sq = beta * beta
    g_min = evals[0]
    gap = evals - g_min
    bottom = gap <= 1e-12 * (1.0 + evals[-1])  # bottom eigenspace of V^T V

    # ||a(mu)||^2 as mu -> -g_min: infinite when the sample correlates with
    # the bottom eigenspace, else the finite limit below
    limit_sq = np.sum(np.where(bottom, 0.0, beta_sq / np.where(bottom, 1.0, gap * gap)),
                      axis=1)
    interior = (beta_sq[:, bottom].sum(axis=1) > 0.0) | (limit_sq > 1.0)

    def norm_sq(mu):
        return np.sum(beta_sq / (evals + mu[:, None]) ** 2, axis=1)

    n = r.shape[0]
    lo = np.full(n, -g_min)
    hi = np.sqrt(beta_sq.sum(axis=1)) + evals[-1] + 1.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            too_long = norm_sq(mid) > 1.0
            lo = np.where(too_long, mid, lo)
            hi = np.where(too_long, hi, mid)
    mu = 0.5 * (lo + hi)

    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(interior[:, None], beta / (evals + mu[:, None]), 0.0)
    hard = np.where(np.logical_not(interior))[0]
    if hard.size:
        coef_hard = np.where(bottom, 0.0, beta[hard] / np.where(bottom, 1.0, gap))
        deficit = np.maximum(1.0 - np.sum(coef_hard * coef_hard, axis=1), 0.0)
        coef_hard[:, 0] += np.sqrt(deficit)  # bottom eigenvector takes the rest
        coef[hard] = coef_hard
    codes = coef @ evecs.T
    norms = np.linalg.norm(codes, axis=1)
    return codes / norms[:, None]


def _dict_step_l1(r, codes, atoms, penalty, max_sweeps=50):
    """Exact coordinate descent on the atoms: each column update solves its
    own one-dimensional soft-thresholding problem, so every sweep is
    non-increasing."""
    gram = codes.T @ codes
    corr = codes.T @ r  # (p, d)
    diag = np.diag(gram)
    num_atoms = atoms.shape[1]
    for _ in range(max_sweeps):
        biggest = 0.0
        for k in range(num_atoms):
            rho = corr[k] - gram[k] @ atoms.T + diag[k] * atoms[:, k]
            if diag[k] > 0.0:
                new = _soft(rho, penalty) / diag[k]
            else:
                new = np.zeros(atoms.shape[0]) if penalty > 0.0 else atoms[:, k]
            biggest = max(biggest, float(np.max(np.abs(new - atoms[:, k]))))
            atoms[:, k] = new
        if biggest <= 1e-12 * (1.0 + float(np.max(np.abs(atoms)))):
            break
    return atoms


def _code_step_lasso(r, atoms, codes, penalty, max_sweeps=50):
    gram = atoms.T @ atoms
    corr = r @ atoms
    diag = np.diag(gram)
    num_atoms = atoms.shape[1]
    for _ in range(max_sweeps):
        biggest = 0.0
        for k in range(num_atoms):
            rho = corr[:, k] - codes @ gram[:, k] + codes[:, k] * diag[k]
            new = _soft(rho, penalty) / diag[k] if diag[k] > 0.0 else np.zeros(r.shape[0])
            biggest = max(biggest, float(np.max(np.abs(new - codes[:, k]))))
            codes[:, k] = new
        if biggest <= 1e-12 * (1.0 + float(np.max(np.abs(codes)))):
            break
    return codes


def _dict_step_unit(r, codes, atoms):
    gram = codes.T @ codes
    corr = codes.T @ r
    diag = np.diag(gram)
    for k in range(atoms.shape[1]):
        u = corr[k] - gram[k] @ atoms.T + diag[k] * atoms[:, k]
        norm = np.linalg.norm(u)
        if norm > 0.0:
            atoms[:, k] = u / norm
    return atoms


def sparse_psa(gradients: GradientField, config: SparsePsaConfig,
               init_atoms=None) -> SparsePsaModel:
    """Alternating minimization with atoms initialized from the field's own
    top-p principal maps (or `init_atoms`, e.g. a precomputed decomposition).

    Stops when the relative objective decrease drops below config.tol or
    after max_outer_iters.  Raises InternalError if the trace ever increases
    beyond a 1e-9 slack, and DomainError when the field has fewer samples
    than atoms.
    """
    r = gradients.matrix
    n, dim = r.shape
    p = config.num_atoms
    if n < p:
        raise DomainError(f"{n} samples cannot support {p} atoms")
    if init_atoms is None:
        atoms = psa(kernel_from_gradients(gradients)).eigenvectors[:, :p].copy()
    else:
        atoms = np.array(init_atoms, dtype=np.float64, copy=True)
        if atoms.shape != (dim, p):
            raise DimensionError(f"init atoms {atoms.shape}, expected ({dim}, {p})")

    transposed = config.convention == CONVENTION_TRANSPOSED
    if transposed:
        value = lambda v, a: _objective_l1_codes(gradients, v, a, config.penalty)
        codes = _code_step_lasso(r, atoms, np.zeros((n, p)), config.penalty)
    else:
        value = lambda v, a: objective(gradients, v, a, config.penalty)
        codes = _code_step_unit(r, atoms)

    trace = [value(atoms, codes)]
    for _ in range(config.max_outer_iters):
        if transposed:
            atoms = _dict_step_unit(r, codes, atoms)
            codes = _code_step_lasso(r, atoms, codes, config.penalty)
        else:
            atoms = _dict_step_l1(r, codes, atoms, config.penalty)
            codes = _code_step_unit(r, atoms)
        current = value(atoms, codes)
        previous = trace[-1]
        if current > previous + _MONOTONE_SLACK * max(1.0, abs(previous)):
            raise InternalError(
                f"objective rose from {previous!r} to {current!r} between outer iterations"
            )
        trace.append(current)
        if previous - current < config.tol * max(abs(previous), 1e-300):
            break

    # report: rank atoms by sensitivity under the field, then L2-normalize
    sens = np.array([
        float(np.mean((r @ atoms[:, k]) ** 2)) for k in range(p)
    ])
    ranking = np.argsort(-sens, kind="stable")
    raw = atoms[:, ranking]
    codes = codes[:, ranking]
    sens = sens[ranking]
    atoms = raw.copy()
    norms = np.linalg.norm(atoms, axis=0)
    nonzero = norms > 0.0
    atoms[:, nonzero] = atoms[:, nonzero] / norms[nonzero]
    return SparsePsaModel(atoms, raw, codes, np.asarray(trace), sens,
                          ranking.astype(np.int64), config)


def save_sparse_model(path, model: SparsePsaModel) -> None:
    cfg = model.config
    dim, p = model.atoms.shape
    n = model.codes.shape[0]
    with open(path, "wb") as f:
        f.write(SPARSE_MAGIC)
        f.write(struct.pack(_HEADER_FMT, SPARSE_VERSION,
                            _CONVENTION_CODES[cfg.convention], cfg.num_atoms,
                            cfg.penalty, cfg.max_outer_iters, cfg.tol, cfg.seed,
                            dim, n, len(model.objective_trace)))
        for arr in (model.atoms, model.raw_atoms, model.codes,
                    model.sensitivities, model.objective_trace):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.ranking, dtype="<i8").tobytes())


def load_sparse_model(path) -> SparsePsaModel:
    with open(path, "rb") as f:
        if _read_exact(f, 4, path) != SPARSE_MAGIC:
            raise FormatError(f"{path}: bad sparse-model magic")
        header = struct.unpack(_HEADER_FMT,
                               _read_exact(f, struct.calcsize(_HEADER_FMT), path))
        version, conv_code, p, penalty, max_outer, tol, seed, dim, n, trace_len = header
        if version != SPARSE_VERSION:
            raise FormatError(f"{path}: unsupported sparse-model version {version}")
        conventions = {code: name for name, code in _CONVENTION_CODES.items()}
        if conv_code not in conventions:
            raise FormatError(f"{path}: unknown convention code {conv_code}")
        cfg = SparsePsaConfig(p, penalty, max_outer, tol, seed, conventions[conv_code])
        atoms = _read_f64(f, dim * p, path).reshape(dim, p)
        raw = _read_f64(f, dim * p, path).reshape(dim, p)
        codes = _read_f64(f, n * p, path).reshape(n, p)
        sens = _read_f64(f, p, path)
        trace = _read_f64(f, trace_len, path)
        ranking = np.frombuffer(_read_exact(f, 8 * p, path), dtype="<i8").copy()
    return SparsePsaModel(atoms, raw, codes, trace, sens, ranking, cfg)


def _read_f64(f, count, path):
    return np.frombuffer(_read_exact(f, 8 * count, path), dtype="<f8").copy()


def _read_exact(f, nbytes, path):
    data = f.read(nbytes)
    if len(data) != nbytes:
        raise IoError(f"{path}: truncated (wanted {nbytes} bytes, got {len(data)})")
    return data
