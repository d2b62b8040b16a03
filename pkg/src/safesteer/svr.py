"""Epsilon-support-vector regression of distance fields, with analytic
spatial derivatives of the fitted model up to third order.

The regressor is the standard RBF-kernel expansion

    d_hat(z) = sum_i kappa_i * exp(-gamma * ||(z - z_i) / coord_scale||^2) + a,

trained by solving the epsilon-SVR dual with a deterministic SMO solver
(maximal-KKT-violation pair selection). ``coord_scale`` (meters per kernel
unit, default 1) rescales coordinates before the kernel is applied; it is
part of the model and serialized with it.

Derivatives are evaluated in one vectorized pass per order; a scalar
per-support-vector reference path exists for benchmarking and as a
cross-check oracle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import EdfDataset

KKT_TOL = 1e-4
MAX_PAIR_UPDATES = 10_000_000
SV_PRUNE_TOL = 1e-12

_FORMAT_NAME = "safesteer-svr"
_FORMAT_VERSION = 1


class ConvergenceError(RuntimeError):
    """SMO did not reach the KKT tolerance within the update cap."""


@dataclass(frozen=True)
class SvrHyperparams:
    G: float  # regularization weight (box bound on dual coefficients)
    epsilon: float  # tube half-width, meters
    gamma: float  # kernel width in scaled coordinates
    coord_scale: float = 1.0  # meters per kernel unit

    def __post_init__(self):
        if not self.G > 0:
            raise ValueError("G must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.coord_scale > 0:
            raise ValueError("coord_scale must be positive")


@dataclass(frozen=True)
class DerivativeBundle:
    value: float
    gradient: np.ndarray  # (2,)
    hessian: np.ndarray  # (2, 2) symmetric
    third: np.ndarray  # (2, 2, 2) symmetric under all index permutations


@dataclass(frozen=True)
class SvrModel:
    support_vectors: np.ndarray  # (n_sv, 2) meters
    dual_coeffs: np.ndarray  # (n_sv,)
    bias: float  # meters
    gamma: float
    coord_scale: float = 1.0

    def __post_init__(self):
        sv = np.asarray(self.support_vectors, dtype=np.float64)
        kap = np.asarray(self.dual_coeffs, dtype=np.float64)
        if sv.ndim != 2 or sv.shape[1] != 2 or sv.shape[0] < 1:
            raise ValueError("support_vectors must be a nonempty (n, 2) array")
        if kap.shape != (sv.shape[0],):
            raise ValueError("dual_coeffs must match support_vectors")
        if not (np.isfinite(sv).all() and np.isfinite(kap).all() and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        if not self.gamma > 0 or not self.coord_scale > 0:
            raise ValueError("gamma and coord_scale must be positive")
        object.__setattr__(self, "support_vectors", sv)
        object.__setattr__(self, "dual_coeffs", kap)

    @property
    def n_sv(self) -> int:
        return self.support_vectors.shape[0]

    @property
    def gamma_eff(self) -> float:
        """Kernel width expressed in 1/m^2 (gamma folded with coord_scale)."""
        return self.gamma / self.coord_scale**2


def kernel(z: np.ndarray, z_other: np.ndarray, gamma: float) -> float:
    """Radial basis kernel exp(-gamma * ||z - z_other||^2), in (0, 1]."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    diff = np.asarray(z, dtype=np.float64) - np.asarray(z_other, dtype=np.float64)
    return float(np.exp(-gamma * np.dot(diff, diff)))


def predict(model: SvrModel, z: np.ndarray) -> float | np.ndarray:
    """Evaluate d_hat at one point (2,) or a batch (m, 2) of points."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    pts = np.atleast_2d(z)
    g = model.gamma_eff
    out = np.empty(pts.shape[0])
    # chunked to bound the (chunk, n_sv) temporary
    step = max(1, 2_000_000 // max(model.n_sv, 1))
    for lo in range(0, pts.shape[0], step):
        chunk = pts[lo:lo + step]
        diff = chunk[:, None, :] - model.support_vectors[None, :, :]
        kv = np.exp(-g * np.einsum("mnk,mnk->mn", diff, diff))
        out[lo:lo + step] = kv @ model.dual_coeffs
    out += model.bias
    return float(out[0]) if single else out


def derivatives(model: SvrModel, z: np.ndarray) -> DerivativeBundle:
    """Analytic value, gradient, Hessian, and third derivative of d_hat.

    Each order is one vectorized reduction over the support vectors with
    numpy's fixed accumulation order, so repeated calls are bit-identical.
    """
    z = np.asarray(z, dtype=np.float64)
    g = model.gamma_eff
    w = z - model.support_vectors  # (n, 2)
    w0 = w[:, 0]
    w1 = w[:, 1]
    ck = model.dual_coeffs * np.exp(-g * (w0 * w0 + w1 * w1))

    p0 = ck * w0
    p1 = ck * w1
    r00 = p0 * w0
    r01 = p0 * w1
    r11 = p1 * w1

    s0 = float(ck.sum())
    m0 = float(p0.sum())
    m1 = float(p1.sum())
    m00 = float(r00.sum())
    m01 = float(r01.sum())
    m11 = float(r11.sum())
    m000 = float(r00 @ w0)
    m001 = float(r00 @ w1)
    m011 = float(r01 @ w1)
    m111 = float(r11 @ w1)

    return _assemble_bundle(g, model.bias, s0, (m0, m1),
                            (m00, m01, m11), (m000, m001, m011, m111))


def derivatives_naive(model: SvrModel, z: np.ndarray) -> DerivativeBundle:
    """Scalar per-support-vector loop computing the same bundle.

    The pre-vectorization baseline: every moment is accumulated one support
    vector at a time in plain Python arithmetic.
    """
    g = model.gamma_eff
    z0 = float(z[0])
    z1 = float(z[1])
    sv = model.support_vectors
    kap = model.dual_coeffs
    s0 = m0 = m1 = 0.0
    m00 = m01 = m11 = 0.0
    m000 = m001 = m011 = m111 = 0.0
    for i in range(sv.shape[0]):
        dx = z0 - sv[i, 0]
        dy = z1 - sv[i, 1]
        c = kap[i] * math.exp(-g * (dx * dx + dy * dy))
        s0 += c
        cx = c * dx
        cy = c * dy
        m0 += cx
        m1 += cy
        cxx = cx * dx
        cxy = cx * dy
        cyy = cy * dy
        m00 += cxx
        m01 += cxy
        m11 += cyy
        m000 += cxx * dx
        m001 += cxx * dy
        m011 += cxy * dy
        m111 += cyy * dy
    return _assemble_bundle(g, model.bias, s0, (m0, m1),
                            (m00, m01, m11), (m000, m001, m011, m111))


def _assemble_bundle(g, bias, s0, m1, m2, m3) -> DerivativeBundle:
    """Build the bundle from kernel-weighted moments of w = z - z_i.

    With k_i = kappa_i exp(-g ||w_i||^2) and moments s0 = sum k_i,
    m1_a = sum k_i w_a, m2_ab = sum k_i w_a w_b, m3_abc = sum k_i w_a w_b w_c:
        grad_a   = -2g m1_a
        hess_ab  = -2g delta_ab s0 + 4g^2 m2_ab
        third_abc = 4g^2 (delta_ab m1_c + delta_ac m1_b + delta_bc m1_a)
                    - 8g^3 m3_abc
    """
    ma, mb = m1
    m00, m01, m11 = m2
    m000, m001, m011, m111 = m3
    value = s0 + bias
    gradient = np.array([-2.0 * g * ma, -2.0 * g * mb])
    g2 = 4.0 * g * g
    hess = np.array([
        [-2.0 * g * s0 + g2 * m00, g2 * m01],
        [g2 * m01, -2.0 * g * s0 + g2 * m11],
    ])
    g3 = 8.0 * g * g * g
    t000 = g2 * 3.0 * ma - g3 * m000
    t001 = g2 * mb - g3 * m001
    t011 = g2 * ma - g3 * m011
    t111 = g2 * 3.0 * mb - g3 * m111
    third = np.array([
        [[t000, t001], [t001, t011]],
        [[t001, t011], [t011, t111]],
    ])
    return DerivativeBundle(value=float(value), gradient=gradient,
                            hessian=hess, third=third)


def _kernel_matrix(points: np.ndarray, gamma_eff: float) -> np.ndarray:
    sq = np.sum(points**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma_eff * d2)


def train(
    dataset: EdfDataset,
    hp: SvrHyperparams,
    tol: float = KKT_TOL,
    max_updates: int = MAX_PAIR_UPDATES,
) -> SvrModel:
    """Solve the epsilon-SVR dual by SMO and return the pruned kernel model.

    Working-set rule: the maximal-KKT-violating pair over the 2n dual
    variables (alpha, alpha*), ties broken by lowest index, which makes
    training deterministic for a fixed dataset and hyperparameters. Stops
    when the KKT violation drops to ``tol``; raises ConvergenceError after
    ``max_updates`` pair updates.
    """
    n = dataset.count
    if n < 2:
        raise ValueError("need at least 2 samples to train")
    d = dataset.distances
    C = hp.G
    eps = hp.epsilon
    g_eff = hp.gamma / hp.coord_scale**2
    K = _kernel_matrix(dataset.points, g_eff)

    # beta = (alpha, alpha*); y = (+1, -1) labels; grad = Q beta + p
    beta = np.zeros(2 * n)
    grad = np.concatenate([eps - d, eps + d])
    neg_inf = -np.inf
    pos_inf = np.inf

    updates = 0
    while True:
        # -y_t grad_t for every variable
        crit_up = np.concatenate([-grad[:n], grad[n:]])
        up_ok = np.concatenate([beta[:n] < C, beta[n:] > 0])
        low_ok = np.concatenate([beta[:n] > 0, beta[n:] < C])
        up_vals = np.where(up_ok, crit_up, neg_inf)
        low_vals = np.where(low_ok, crit_up, pos_inf)
        i = int(np.argmax(up_vals))
        j = int(np.argmin(low_vals))
        gap = up_vals[i] - low_vals[j]
        if gap <= tol:
            break
        if updates >= max_updates:
            raise ConvergenceError(
                f"SMO stopped after {updates} pair updates with "
                f"KKT violation {gap:.3e} > tol {tol:.1e}"
            )

        si, sj = i % n, j % n
        yi = 1.0 if i < n else -1.0
        yj = 1.0 if j < n else -1.0
        quad = 2.0 * (1.0 - K[si, sj])
        lam_star = gap / max(quad, 1e-12)
        cap_i = (C - beta[i]) if yi > 0 else beta[i]
        cap_j = beta[j] if yj > 0 else (C - beta[j])
        lam = min(lam_star, cap_i, cap_j)

        if lam == cap_i:
            beta[i] = C if yi > 0 else 0.0
        else:
            beta[i] += yi * lam
        if lam == cap_j:
            beta[j] = 0.0 if yj > 0 else C
        else:
            beta[j] -= yj * lam

        kdiff = lam * (K[si] - K[sj])
        grad[:n] += kdiff
        grad[n:] -= kdiff
        updates += 1

    kappa = beta[:n] - beta[n:]
    # E_i = sum_j K_ij kappa_j, recovered from the maintained gradient
    E = grad[:n] - eps + d

    a_up = d - E - eps  # bias implied by a free alpha_i
    a_dn = d - E + eps  # bias implied by a free alpha*_i
    free_up = (beta[:n] > 0) & (beta[:n] < C)
    free_dn = (beta[n:] > 0) & (beta[n:] < C)
    implied = np.concatenate([a_up[free_up], a_dn[free_dn]])
    if implied.size:
        bias = float(implied.mean())
    else:
        lower = np.concatenate([a_up[beta[:n] == 0], a_dn[beta[n:] == C]])
        upper = np.concatenate([a_up[beta[:n] == C], a_dn[beta[n:] == 0]])
        lo = lower.max() if lower.size else -np.inf
        hi = upper.min() if upper.size else np.inf
        bias = float(0.5 * (lo + hi))

    keep = np.abs(kappa) > SV_PRUNE_TOL
    if not keep.any():
        raise ValueError(
            "training produced no support vectors (all residuals inside the tube)"
        )
    return SvrModel(
        support_vectors=dataset.points[keep].copy(),
        dual_coeffs=kappa[keep].copy(),
        bias=bias,
        gamma=hp.gamma,
        coord_scale=hp.coord_scale,
    )


def r2_score(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    ss_res = float(np.sum((actual - predicted) ** 2))
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    return 1.0 - ss_res / ss_tot


def split_dataset(dataset: EdfDataset, train_fraction: float = 0.5,
                  seed: int = 0) -> tuple[EdfDataset, EdfDataset]:
    """Seeded uniform shuffle split into (train, validation)."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(dataset.count)
    k = int(round(train_fraction * dataset.count))
    k = min(max(k, 1), dataset.count - 1)
    tr, va = perm[:k], perm[k:]
    return (
        EdfDataset(points=dataset.points[tr], distances=dataset.distances[tr]),
        EdfDataset(points=dataset.points[va], distances=dataset.distances[va]),
    )


def residual_sigma(model: SvrModel, dataset: EdfDataset) -> float:
    """Empirical sigma: max |d_hat(z_i) - d_i| over the free-space samples."""
    free = dataset.distances > 0
    if not free.any():
        raise ValueError("dataset has no free-space samples")
    pred = predict(model, dataset.points[free])
    return float(np.max(np.abs(pred - dataset.distances[free])))


def grid_search_cv(
    dataset: EdfDataset,
    grid: dict[str, list[float]],
    folds: int,
    tol: float = KKT_TOL,
) -> tuple[SvrHyperparams, float]:
    """Pick the grid point with the best mean k-fold R^2.

    Ties go to the candidate with fewer total support vectors, then to the
    lexicographically smallest (G, epsilon, gamma, coord_scale). Folds are
    assigned round-robin by sample index, so the search is deterministic.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if folds > dataset.count:
        raise ValueError("more folds than samples")
    gs = list(grid.get("G", []))
    es = list(grid.get("epsilon", []))
    ws = list(grid.get("gamma", []))
    ss = list(grid.get("coord_scale", [1.0]))
    if not (gs and es and ws and ss):
        raise ValueError("grid must list values for G, epsilon, and gamma")

    fold_of = np.arange(dataset.count) % folds
    best: tuple[float, int, tuple[float, ...]] | None = None
    best_hp: SvrHyperparams | None = None
    for G, eps, gamma, scale in itertools.product(
            sorted(gs), sorted(es), sorted(ws), sorted(ss)):
        hp = SvrHyperparams(G=G, epsilon=eps, gamma=gamma, coord_scale=scale)
        scores = []
        total_sv = 0
        for f in range(folds):
            val = fold_of == f
            tr_ds = EdfDataset(points=dataset.points[~val],
                               distances=dataset.distances[~val])
            va_ds = EdfDataset(points=dataset.points[val],
                               distances=dataset.distances[val])
            model = train(tr_ds, hp, tol=tol)
            scores.append(r2_score(va_ds.distances, predict(model, va_ds.points)))
            total_sv += model.n_sv
        key = (-float(np.mean(scores)), total_sv, (G, eps, gamma, scale))
        if best is None or key < best:
            best = key
            best_hp = hp
    assert best is not None and best_hp is not None
    return best_hp, -best[0]


def save_model(model: SvrModel, path: str | Path) -> None:
    """Versioned text format; floats use shortest round-trip repr."""
    lines = [
        f"{_FORMAT_NAME} {_FORMAT_VERSION}",
        f"gamma {model.gamma!r}",
        f"coord_scale {model.coord_scale!r}",
        f"bias {model.bias!r}",
        f"n_sv {model.n_sv}",
    ]
    for (x, y), kap in zip(model.support_vectors, model.dual_coeffs):
        lines.append(f"{float(x)!r} {float(y)!r} {float(kap)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> SvrModel:
    path = Path(path)
    if not path.exists():
        raise ValueError(f"model file not found: {path}")
    lines = path.read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty model file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != _FORMAT_NAME:
        raise ValueError(f"{path}: not a {_FORMAT_NAME} model file")
    if head[1] != str(_FORMAT_VERSION):
        raise ValueError(f"{path}: unknown format version {head[1]!r}")
    fields: dict[str, str] = {}
    try:
        for k in range(1, 5):
            key, value = lines[k].split()
            fields[key] = value
        gamma = float(fields["gamma"])
        coord_scale = float(fields["coord_scale"])
        bias = float(fields["bias"])
        n_sv = int(fields["n_sv"])
    except (ValueError, KeyError, IndexError) as exc:
        raise ValueError(f"{path}: corrupt header: {exc}") from exc
    if n_sv < 1:
        raise ValueError(f"{path}: model has no support vectors")
    rows = lines[5:]
    if len(rows) != n_sv:
        raise ValueError(f"{path}: expected {n_sv} support vectors, found {len(rows)}")
    sv = np.empty((n_sv, 2))
    kap = np.empty(n_sv)
    for idx, row in enumerate(rows):
        parts = row.split()
        if len(parts) != 3:
            raise ValueError(f"{path}: corrupt support-vector row {idx + 1}")
        sv[idx, 0] = float(parts[0])
        sv[idx, 1] = float(parts[1])
        kap[idx] = float(parts[2])
    return SvrModel(support_vectors=sv, dual_coeffs=kap, bias=bias,
                    gamma=gamma, coord_scale=coord_scale)
