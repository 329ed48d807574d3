"""Kernel dependence machinery and the three local surrogate fits.

Per element (node or edge), the retention column of the mask matrix gets a
Gaussian Gram matrix; the model outputs get another. Grams are centered with
H = I - (1/p) 11^T and scaled to unit Frobenius norm, so tr(K L) is a
normalized dependence score in [-1, 1].

Surrogates regress the output Gram onto the element Grams:

* ``fit_hsic_l1``: 0.5 * ||L - sum_v alpha_v K_v||_F^2 + lam * sum alpha_v
  with alpha >= 0, solved by cyclic projected coordinate descent on the
  quadratic expansion Q[u, v] = tr(K_u K_v), c[v] = tr(K_v L).
* ``fit_hsic_group``: the same data term with an overlapping-group L2 penalty,
  handled through the latent copy reformulation (each group owns a copy
  vector, alpha = sum of copies) and solved by proximal gradient with exact
  nonnegative block soft-thresholding.
* ``fit_logistic``: L2-regularized logistic regression on binarized outputs,
  the linear baseline; scores are absolute coefficients.

Constant mask columns produce identically-zero centered Grams; those elements
are excluded from the quadratic form and pinned at score zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .graphs import Graph

DEGENERATE_EPS = 1e-12


@dataclass
class GramMatrix:
    values: np.ndarray
    normalized: bool
    degenerate: bool = False

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass
class KernelConfig:
    """Bandwidths: positive floats or "median" for the median heuristic."""

    sigma_x: float | str = "median"
    sigma_y: float | str = "median"


@dataclass
class SolverConfig:
    tol: float = 1e-8  # relative objective change
    kkt_tol: float = 1e-7  # stationarity residual required on top of tol
    max_iter: int = 10_000


@dataclass
class GroupStructure:
    """Overlapping element-index groups; every element must appear somewhere."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if any(len(g) == 0 for g in self.groups):
            raise ValueError("empty group")
        self.groups = tuple(tuple(int(i) for i in g) for g in self.groups)

    def validate_cover(self, num_elements: int) -> None:
        covered = set()
        for g in self.groups:
            covered.update(g)
        if covered != set(range(num_elements)):
            raise ValueError("groups must cover every element index exactly once or more")


@dataclass
class SurrogateFit:
    scores: np.ndarray  # nonnegative importance per element
    objective_value: float
    iterations: int
    converged: bool
    surrogate_kind: str
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "kind": self.surrogate_kind,
            "alpha": [float(x) for x in self.scores],
            "objective": float(self.objective_value),
            "iterations": self.iterations,
            "converged": self.converged,
            "degenerate": self.degenerate,
        }


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def median_bandwidth(values: np.ndarray) -> float:
    """Median of pairwise absolute differences; 1.0 when the median is zero."""
    v = np.asarray(values, dtype=float)
    diffs = np.abs(v[:, None] - v[None, :])
    iu = np.triu_indices(len(v), k=1)
    med = float(np.median(diffs[iu])) if len(v) > 1 else 0.0
    return med if med > 0 else 1.0


def resolve_bandwidth(values: np.ndarray, setting: float | str) -> float:
    if setting == "median":
        return median_bandwidth(values)
    sigma = float(setting)
    if sigma <= 0:
        raise ConfigError(f"bandwidth must be positive, got {sigma}")
    return sigma


def gaussian_gram(values: np.ndarray, sigma: float) -> GramMatrix:
    """Raw Gaussian Gram: exp(-(v_i - v_j)^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise ConfigError(f"bandwidth must be positive, got {sigma}")
    v = np.asarray(values, dtype=float)
    diff = v[:, None] - v[None, :]
    return GramMatrix(np.exp(-(diff**2) / (2.0 * sigma**2)), normalized=False)


def center_normalize(gram: GramMatrix) -> GramMatrix:
    """H G H scaled to unit Frobenius norm; all-constant input degenerates to 0."""
    g = gram.values
    if g.shape[0] < 2:
        raise ValueError("centering needs at least 2 samples")
    row = g.mean(axis=1, keepdims=True)
    col = g.mean(axis=0, keepdims=True)
    centered = g - row - col + g.mean()
    norm = np.linalg.norm(centered)
    if norm < DEGENERATE_EPS:
        return GramMatrix(np.zeros_like(g), normalized=True, degenerate=True)
    return GramMatrix(centered / norm, normalized=True)


def normalized_gram(values: np.ndarray, setting: float | str) -> GramMatrix:
    return center_normalize(gaussian_gram(values, resolve_bandwidth(values, setting)))


def hsic(k: GramMatrix, l: GramMatrix) -> float:
    """tr(K L) for centered unit-Frobenius Grams; lies in [-1, 1]."""
    if not (k.normalized and l.normalized):
        raise ValueError("hsic expects centered, normalized Gram matrices")
    if k.size != l.size:
        raise ValueError(f"Gram size mismatch: {k.size} vs {l.size}")
    return float(np.sum(k.values * l.values))


# ---------------------------------------------------------------------------
# Quadratic expansion shared by the HSIC fits
# ---------------------------------------------------------------------------


_QUADRATIC_CACHE: dict = {}
_QUADRATIC_CACHE_LIMIT = 128


def hsic_quadratic_terms(
    masks: np.ndarray, outputs: np.ndarray, kernel: KernelConfig | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, GramMatrix]:
    """Q[u, v] = tr(K_u K_v), c[v] = tr(K_v L), the active-column flags, and L.

    Results are memoized on the raw bytes of (masks, outputs, bandwidths) so
    sweeps that refit the same evaluation pass at many penalty strengths do
    not rebuild identical Gram matrices.
    """
    kernel = kernel or KernelConfig()
    masks = np.asarray(masks, dtype=float)
    outputs = np.asarray(outputs, dtype=float)
    key = (masks.tobytes(), outputs.tobytes(), str(kernel.sigma_x), str(kernel.sigma_y))
    hit = _QUADRATIC_CACHE.get(key)
    if hit is not None:
        return hit
    p, n_el = masks.shape
    out_gram = normalized_gram(outputs, kernel.sigma_y)
    grams = [normalized_gram(masks[:, v], kernel.sigma_x) for v in range(n_el)]
    active = np.array([not g.degenerate for g in grams], dtype=bool)
    stacked = np.stack([g.values.ravel() for g in grams])  # (n_el, p*p)
    q = stacked @ stacked.T
    c = stacked @ out_gram.values.ravel()
    if len(_QUADRATIC_CACHE) >= _QUADRATIC_CACHE_LIMIT:
        _QUADRATIC_CACHE.pop(next(iter(_QUADRATIC_CACHE)))
    _QUADRATIC_CACHE[key] = (q, c, active, out_gram)
    return q, c, active, out_gram


def _check_fit_inputs(masks: np.ndarray, outputs: np.ndarray, lam: float) -> None:
    if lam <= 0:
        raise ConfigError(f"lam must be positive, got {lam}")
    masks = np.asarray(masks)
    if len(np.unique(masks, axis=0)) < 2:
        raise ConfigError("mask matrix needs at least 2 distinct rows")
    if masks.shape[0] != len(outputs):
        raise ValueError("masks and outputs disagree on the number of rows")


def _l1_objective(alpha, q, c, lam, const):
    return 0.5 * float(alpha @ q @ alpha) - float(c @ alpha) + lam * float(alpha.sum()) + const


def fit_hsic_l1(
    masks: np.ndarray,
    outputs: np.ndarray,
    lam: float = 1e-2,
    kernel: KernelConfig | None = None,
    solver: SolverConfig | None = None,
) -> SurrogateFit:
    """Nonnegative L1-penalized regression of the output Gram on element Grams.

    Cyclic projected coordinate descent; each coordinate update is the exact
    nonnegative soft-threshold minimizer. Declared converged once the relative
    objective change drops below tol and the stationarity residual is met.
    """
    _check_fit_inputs(masks, outputs, lam)
    solver = solver or SolverConfig()
    q, c, active, out_gram = hsic_quadratic_terms(masks, outputs, kernel)
    n_el = len(c)
    const = 0.0 if out_gram.degenerate else 0.5
    alpha = np.zeros(n_el)
    idx = np.flatnonzero(active)
    objective = _l1_objective(alpha, q, c, lam, const)
    converged = False
    sweeps = 0
    for sweeps in range(1, solver.max_iter + 1):
        for v in idx:
            residual = c[v] - lam - (q[v] @ alpha) + q[v, v] * alpha[v]
            alpha[v] = max(0.0, residual / q[v, v])
        new_objective = _l1_objective(alpha, q, c, lam, const)
        rel = abs(objective - new_objective) / max(1.0, abs(objective))
        objective = new_objective
        # Stationarity: active coordinates need zero gradient, zero coordinates
        # may only be pushed further into the constraint.
        grad = (q @ alpha - c + lam)[idx]
        on = alpha[idx] > 0
        kkt = max(
            np.abs(grad[on]).max(initial=0.0),
            np.maximum(0.0, -grad[~on]).max(initial=0.0),
        )
        if rel < solver.tol and kkt <= solver.kkt_tol:
            converged = True
            break
    return SurrogateFit(
        scores=alpha,
        objective_value=objective,
        iterations=sweeps,
        converged=converged,
        surrogate_kind="hsic_l1",
    )


# ---------------------------------------------------------------------------
# Groups
# ---------------------------------------------------------------------------


def build_groups(graph: Graph, element_kind: str = "nodes") -> GroupStructure:
    """Node groups: closed 1-hop neighborhoods. Edge groups: edges per shared node."""
    if element_kind == "nodes":
        adjacency = graph.adjacency()
        groups = tuple(
            tuple(sorted([v] + adjacency[v])) for v in range(graph.num_nodes)
        )
        return GroupStructure(groups)
    if element_kind == "edges":
        incident: list[list[int]] = [[] for _ in range(graph.num_nodes)]
        for i, (u, v) in enumerate(graph.edges):
            incident[u].append(i)
            incident[v].append(i)
        return GroupStructure(tuple(tuple(g) for g in incident if g))
    raise ConfigError(f"unknown element kind {element_kind!r}")


class _CopySpace:
    """Latent copy layout: one nonnegative coefficient copy per (group, member)."""

    def __init__(self, groups: GroupStructure, active: np.ndarray, n_el: int):
        members = []
        for g in groups.groups:
            keep = np.array([v for v in g if active[v]], dtype=int)
            if len(keep):
                members.append(keep)
        self.n_el = n_el
        self.owner = (
            np.concatenate(members) if members else np.array([], dtype=int)
        )
        sizes = np.array([len(m) for m in members], dtype=int)
        self.starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int) if len(sizes) else np.array([], dtype=int)
        self.sizes = sizes
        self.dim = int(sizes.sum()) if len(sizes) else 0

    def aggregate(self, copies: np.ndarray) -> np.ndarray:
        alpha = np.zeros(self.n_el)
        np.add.at(alpha, self.owner, copies)
        return alpha

    def block_norms(self, copies: np.ndarray) -> np.ndarray:
        return np.sqrt(np.add.reduceat(copies * copies, self.starts))

    def per_copy(self, per_block: np.ndarray) -> np.ndarray:
        return np.repeat(per_block, self.sizes)


_LIPSCHITZ_CACHE: dict = {}


def _group_objective(space, copies, alpha, q, c, lam, const):
    data = 0.5 * float(alpha @ q @ alpha) - float(c @ alpha) + const
    return data + lam * float(space.block_norms(copies).sum())


def _group_prox(space, copies, shrink):
    """Exact prox of shrink * ||.||_2 + nonnegativity, per block."""
    v = np.maximum(copies, 0.0)
    norms = space.block_norms(v)
    scale = np.maximum(0.0, 1.0 - shrink / np.maximum(norms, 1e-300))
    return v * space.per_copy(scale)


def _group_kkt(space, copies, q, c, lam, alpha) -> float:
    """Stationarity residual of the latent-copy objective (nonnegative blocks).

    Nonzero blocks need grad + lam * w/||w|| to vanish on active coordinates
    and be nonnegative on zero coordinates; a zero block may stay zero iff its
    downhill gradient part fits inside the lam-radius subgradient ball.
    """
    grad = (q @ alpha - c)[space.owner]
    norms = space.block_norms(copies)
    norms_rep = space.per_copy(norms)
    unit = np.where(norms_rep > 0, copies / np.maximum(norms_rep, 1e-300), 0.0)
    resid = grad + lam * unit
    coord_viol = np.where(copies > 0, np.abs(resid), np.maximum(0.0, -resid))
    per_block = np.maximum.reduceat(coord_viol, space.starts)
    pull = np.sqrt(np.add.reduceat(np.minimum(grad, 0.0) ** 2, space.starts))
    zero_viol = np.maximum(0.0, pull - lam)
    return float(np.where(norms > 0, per_block, zero_viol).max(initial=0.0))


def fit_hsic_group(
    masks: np.ndarray,
    outputs: np.ndarray,
    lam: float,
    groups: GroupStructure,
    kernel: KernelConfig | None = None,
    solver: SolverConfig | None = None,
) -> SurrogateFit:
    """Overlapping-group L2-penalized fit via the latent copy reformulation.

    Each group owns a nonnegative copy of its member coefficients and alpha_v
    sums the copies containing v. Solved by monotone accelerated proximal
    gradient: step size 1/lipschitz(Q in copy space), exact prox (project to
    >= 0, block soft-threshold), and the accelerated candidate is only
    accepted when it does not increase the objective, so the objective stays
    non-increasing across iterations.
    """
    _check_fit_inputs(masks, outputs, lam)
    solver = solver or SolverConfig()
    q, c, active, out_gram = hsic_quadratic_terms(masks, outputs, kernel)
    n_el = len(c)
    groups.validate_cover(n_el)
    const = 0.0 if out_gram.degenerate else 0.5
    space = _CopySpace(groups, active, n_el)
    if space.dim == 0:
        return SurrogateFit(
            scores=np.zeros(n_el),
            objective_value=const,
            iterations=0,
            converged=True,
            surrogate_kind="hsic_group",
            degenerate=True,
        )
    lip_key = (q.tobytes(), groups.groups)
    lipschitz = _LIPSCHITZ_CACHE.get(lip_key)
    if lipschitz is None:
        dup = np.zeros((n_el, space.dim))
        dup[space.owner, np.arange(space.dim)] = 1.0
        lipschitz = float(np.linalg.eigvalsh(dup.T @ q @ dup)[-1])
        if len(_LIPSCHITZ_CACHE) >= _QUADRATIC_CACHE_LIMIT:
            _LIPSCHITZ_CACHE.pop(next(iter(_LIPSCHITZ_CACHE)))
        _LIPSCHITZ_CACHE[lip_key] = lipschitz
    if lipschitz <= 0:
        lipschitz = 1.0
    step = 1.0 / lipschitz

    copies = np.zeros(space.dim)
    momentum = copies.copy()
    t_k = 1.0
    alpha = space.aggregate(copies)
    objective = _group_objective(space, copies, alpha, q, c, lam, const)
    converged = False
    iters = 0
    for iters in range(1, solver.max_iter + 1):
        grad = (q @ space.aggregate(momentum) - c)[space.owner]
        candidate = _group_prox(space, momentum - step * grad, step * lam)
        cand_alpha = space.aggregate(candidate)
        cand_objective = _group_objective(space, candidate, cand_alpha, q, c, lam, const)
        if cand_objective <= objective:
            new_copies, new_objective = candidate, cand_objective
        else:
            new_copies, new_objective = copies, objective
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
        momentum = new_copies + (t_k / t_next) * (candidate - new_copies) + (
            (t_k - 1.0) / t_next
        ) * (new_copies - copies)
        rel = abs(objective - new_objective) / max(1.0, abs(objective))
        copies, objective, t_k = new_copies, new_objective, t_next
        alpha = space.aggregate(copies)
        if rel < solver.tol and _group_kkt(space, copies, q, c, lam, alpha) <= solver.kkt_tol:
            converged = True
            break
    return SurrogateFit(
        scores=alpha,
        objective_value=objective,
        iterations=iters,
        converged=converged,
        surrogate_kind="hsic_group",
    )


# ---------------------------------------------------------------------------
# Logistic baseline
# ---------------------------------------------------------------------------


def fit_logistic(
    masks: np.ndarray,
    outputs: np.ndarray,
    solver: SolverConfig | None = None,
    reg: float = 1e-3,
    max_iter: int = 20_000,
) -> SurrogateFit:
    """Linear baseline: logistic regression of thresholded outputs on mask rows.

    Plain gradient descent with a Lipschitz step size; scores are absolute
    coefficient magnitudes. Single-class targets yield a flagged degenerate
    fit with uniform scores.
    """
    solver = solver or SolverConfig()
    x = np.asarray(masks, dtype=float)
    p, n_el = x.shape
    y = (np.asarray(outputs, dtype=float) > 0.5).astype(float)
    if y.min() == y.max():
        return SurrogateFit(
            scores=np.full(n_el, 1.0 / n_el),
            objective_value=float("nan"),
            iterations=0,
            converged=False,
            surrogate_kind="logistic",
            degenerate=True,
        )
    xt = np.hstack([x, np.ones((p, 1))])
    lipschitz = 0.25 * float(np.linalg.eigvalsh(xt.T @ xt)[-1]) / p + reg
    step = 1.0 / lipschitz
    wb = np.zeros(n_el + 1)
    iters = 0
    converged = False
    for iters in range(1, max_iter + 1):
        z = xt @ wb
        prob = 1.0 / (1.0 + np.exp(-z))
        grad = xt.T @ (prob - y) / p
        grad[:n_el] += reg * wb[:n_el]
        if np.abs(grad).max() < solver.tol:
            converged = True
            break
        wb -= step * grad
    z = xt @ wb
    objective = float(
        np.mean(np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0) - y * z)
        + 0.5 * reg * np.sum(wb[:n_el] ** 2)
    )
    return SurrogateFit(
        scores=np.abs(wb[:n_el]),
        objective_value=objective,
        iterations=iters,
        converged=converged,
        surrogate_kind="logistic",
    )
