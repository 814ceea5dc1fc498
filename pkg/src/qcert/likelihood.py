"""Likelihood ratios for the Gaussian hard instances.

For a transcript z_1..z_t the surrogate likelihood ratio is the Gaussian
expectation of prod_i (1 + eps * f_i(M)) with f_i linear in the random
matrix. Isserlis' theorem turns it into a sum over partial matchings of
pairwise covariances c_ij, which the subset DP evaluates in O(t 2^t):

    L(S) = L(S - {max S}) + sum_{i in S, i < max S} c_{i,max S} L(S - {i, max S}).

Exact engines accept real outcome vectors only; complex transcripts must go
through :func:`mc_likelihood`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ensembles import (
    TruncationPolicy,
    ginibre_accepts_batch,
    goe_star_accepts_batch,
    multiblock_slack,
    sample_goe_star_batch,
    sample_truncated_batch,
)
from .errors import BudgetExceeded, ComplexInputError, ParameterError
from .measurement import Povm, Transcript, born_probabilities
from .states import DiagonalSpectrum

DP_BUDGET = 20
MATCHING_BUDGET = 10
KAPPA_BUDGET = 22


# ----------------------------------------------------------------------------
# helpers


def _real_rows(vectors) -> np.ndarray:
    if isinstance(vectors, Transcript):
        V = vectors.vectors()
    else:
        V = np.asarray(vectors)
    if V.size == 0:
        return np.zeros((0, V.shape[1] if V.ndim == 2 else 0))
    V = np.atleast_2d(V)
    if np.iscomplexobj(V):
        if np.any(V.imag):
            raise ComplexInputError(
                "exact likelihood engines need real outcome vectors; use mc_likelihood for complex transcripts"
            )
        V = V.real
    return np.asarray(V, dtype=float)


def _unit_rows(V: np.ndarray) -> np.ndarray:
    if V.shape[0] == 0:
        return V
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def _diag(A, d: int | None = None) -> np.ndarray:
    if A is None:
        if d is None:
            raise ValueError("dimension required when A is omitted")
        return np.ones(d)
    if isinstance(A, DiagonalSpectrum):
        return np.asarray(A.values, dtype=float)
    A = np.asarray(A, dtype=float)
    return np.diag(A).copy() if A.ndim == 2 else A.reshape(-1)


def _check_budget(t: int, budget: int, what: str) -> None:
    if t > budget:
        raise BudgetExceeded(
            f"{what}: transcript length {t} exceeds budget {budget}; use mc_likelihood instead",
            size=t,
            budget=budget,
        )


def subset_dp(C: np.ndarray) -> np.ndarray:
    """Table L[mask] of matching sums over every subset of [t]."""
    t = C.shape[0]
    L = np.empty(1 << t)
    L[0] = 1.0
    for m in range(t):
        size = 1 << m
        prev = L[:size]
        new = prev.copy()
        for i in range(m):
            c = C[i, m]
            if c == 0.0:
                continue
            lo = 1 << i
            new.reshape(-1, 2, lo)[:, 1, :] += c * prev.reshape(-1, 2, lo)[:, 0, :]
        L[size : 2 * size] = new
    return L


def matching_sum(C: np.ndarray) -> float:
    """Literal sum over all partial matchings of prod_{(i,j)} C[i,j]."""
    terms = []

    def rec(remaining: tuple, prod: float) -> None:
        if not remaining:
            terms.append(prod)
            return
        first, rest = remaining[0], remaining[1:]
        rec(rest, prod)
        for k, j in enumerate(rest):
            rec(rest[:k] + rest[k + 1 :], prod * C[first, j])

    rec(tuple(range(C.shape[0])), 1.0)
    return math.fsum(terms)


class _SubsetContext:
    """Shared machinery: coefficient matrix plus lazily built subset table."""

    coefficients: np.ndarray
    budget: int

    @property
    def t(self) -> int:
        return self.coefficients.shape[0]

    @property
    def table(self) -> np.ndarray:
        if getattr(self, "_table", None) is None:
            _check_budget(self.t, self.budget, "subset DP")
            self._table = subset_dp(self.coefficients)
        return self._table

    @property
    def full_mask(self) -> int:
        return (1 << self.t) - 1

    def value(self) -> float:
        return float(self.table[self.full_mask])

    def subset(self, mask: int) -> float:
        return float(self.table[mask])

    def prefix_values(self) -> np.ndarray:
        """L(z_{<=k}) for k = 0..t."""
        return np.array([self.table[(1 << k) - 1] for k in range(self.t + 1)])

    def leave_one_out(self) -> np.ndarray:
        """L(z_{~i}) for each i."""
        full = self.full_mask
        return np.array([self.table[full ^ (1 << i)] for i in range(self.t)])

    def matching_sum(self) -> float:
        _check_budget(self.t, MATCHING_BUDGET, "matching sum")
        return matching_sum(self.coefficients)


# ----------------------------------------------------------------------------
# GOE


def goe_pairwise_moment(x, y, A=None, d: int | None = None) -> float:
    """(2/d^2)(d<x,y>^2 - 1) / ((x^T A x)(y^T A y)), inputs rescaled to unit length."""
    V = _unit_rows(_real_rows(np.stack([np.asarray(x), np.asarray(y)])))
    d = V.shape[1] if d is None else d
    a = _diag(A, d)
    qx, qy = float(V[0] ** 2 @ a), float(V[1] ** 2 @ a)
    ip = float(V[0] @ V[1])
    return (2 / d**2) * (d * ip**2 - 1) / (qx * qy)


def goe_star_covariance(x, y) -> float:
    """E[(x^T M x)(y^T M y)] for M ~ GOE*(d), arbitrary real x, y."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    d = x.size
    ip, nx, ny = float(x @ y), float(x @ x), float(y @ y)
    return (2 / d) * ip**2 - (2 / d**2) * nx * ny


def goe_coefficients(Z: np.ndarray, a: np.ndarray, eps: float) -> np.ndarray:
    d = Z.shape[1]
    q = Z**2 @ a
    G = Z @ Z.T
    return (2 * eps**2 / d**2) * (d * G**2 - 1) / np.outer(q, q)


@dataclass(eq=False)
class GoeLikelihoodContext(_SubsetContext):
    """Exact L for the mixedness instance, bound to a real transcript."""

    A: object
    eps: float
    vectors: object = None
    budget: int = DP_BUDGET
    _table: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        V = _real_rows(self.vectors if self.vectors is not None else np.zeros((0, _diag(self.A).size)))
        self.a = _diag(self.A, V.shape[1] if V.shape[0] else None)
        self.d = self.a.size
        self.Z = _unit_rows(V) if V.shape[0] else np.zeros((0, self.d))
        self.q = self.Z**2 @ self.a
        self.coefficients = goe_coefficients(self.Z, self.a, self.eps)

    def with_vectors(self, vectors) -> "GoeLikelihoodContext":
        return GoeLikelihoodContext(self.a, self.eps, vectors, self.budget)

    def extended(self, x) -> "GoeLikelihoodContext":
        x = np.asarray(x).reshape(1, -1)
        return self.with_vectors(np.concatenate([self.Z, x], axis=0))

    def null_probabilities(self, P: Povm) -> np.ndarray:
        return born_probabilities(P, np.diag(self.a) / self.d)


def exact_likelihood_goe(transcript, A, eps: float, budget: int = DP_BUDGET) -> float:
    V = _real_rows(transcript)
    _check_budget(V.shape[0], budget, "exact_likelihood_goe")
    if V.shape[0] == 0:
        return 1.0
    return GoeLikelihoodContext(A, eps, V, budget).value()


def matching_sum_likelihood_goe(transcript, A, eps: float, budget: int = MATCHING_BUDGET) -> float:
    V = _real_rows(transcript)
    _check_budget(V.shape[0], budget, "matching_sum_likelihood_goe")
    if V.shape[0] == 0:
        return 1.0
    Z = _unit_rows(V)
    return matching_sum(goe_coefficients(Z, _diag(A, Z.shape[1]), eps))


def k_matrix_goe(transcript, A=None) -> np.ndarray:
    """K(z) = sum_i (d z_i z_i^T - I) / (z_i^T A z_i)."""
    V = _real_rows(transcript)
    if V.shape[0] == 0:
        d = _diag(A).size
        return np.zeros((d, d))
    Z = _unit_rows(V)
    d = Z.shape[1]
    q = Z**2 @ _diag(A, d)
    return d * (Z / q[:, None]).T @ Z - np.sum(1 / q) * np.eye(d)


def h_matrix_goe(transcript, A, eps: float, budget: int = DP_BUDGET) -> np.ndarray:
    """H(z) = sum_i (d z_i z_i^T - I)/(z_i^T A z_i) * L(z_{~i})/L(z)."""
    V = _real_rows(transcript)
    _check_budget(V.shape[0], budget, "h_matrix_goe")
    if V.shape[0] == 0:
        return k_matrix_goe(V, A)
    ctx = GoeLikelihoodContext(A, eps, V, budget)
    w = ctx.leave_one_out() / ctx.value() / ctx.q
    d = ctx.d
    return d * (ctx.Z * w[:, None]).T @ ctx.Z - np.sum(w) * np.eye(d)


# ----------------------------------------------------------------------------
# off-diagonal (Ginibre)


def ginibre_pairwise_moment(x, y, z, w, d1: int | None = None) -> float:
    """E[(x^T G y)(z^T G w)] = <x,z><y,w>/d1 for G with N(0, 1/d1) entries."""
    x, y, z, w = (np.asarray(v, dtype=float) for v in (x, y, z, w))
    d1 = x.size if d1 is None else d1
    return float(x @ z) * float(y @ w) / d1


def _split_pairs(pairs, d1: int | None):
    if isinstance(pairs, Transcript):
        if d1 is None:
            raise ValueError("d1 is required to split a Transcript into (z, w) pairs")
        R = _real_rows(pairs.raw_vectors()) if len(pairs) else np.zeros((0, d1))
        return R[:, :d1], R[:, d1:]
    Z, W = pairs
    return _real_rows(Z), _real_rows(W)


def offdiag_coefficients(Z, W, a, b, eps: float) -> np.ndarray:
    d1, d2 = Z.shape[1], W.shape[1]
    q = Z**2 @ a + W**2 @ b
    return (4 * eps**2 / (d1 * d2**2)) * (Z @ Z.T) * (W @ W.T) / np.outer(q, q)


@dataclass(eq=False)
class OffdiagLikelihoodContext(_SubsetContext):
    """Exact L for the off-diagonal instance. Vectors are pairs (z_i, w_i)
    with z_i in R^d1 and w_i in R^d2."""

    A: object
    B: object
    eps: float
    pairs: object = None
    budget: int = DP_BUDGET
    _table: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.a, self.b = _diag(self.A), _diag(self.B)
        self.d1, self.d2 = self.a.size, self.b.size
        if self.pairs is None:
            self.Z, self.W = np.zeros((0, self.d1)), np.zeros((0, self.d2))
        else:
            self.Z, self.W = _split_pairs(self.pairs, self.d1)
        self.q = self.Z**2 @ self.a + self.W**2 @ self.b
        self.coefficients = offdiag_coefficients(self.Z, self.W, self.a, self.b, self.eps)

    @property
    def d(self) -> int:
        return self.d1 + self.d2

    def with_vectors(self, vectors) -> "OffdiagLikelihoodContext":
        V = np.zeros((0, self.d)) if vectors is None else _real_rows(vectors).reshape(-1, self.d)
        return OffdiagLikelihoodContext(self.a, self.b, self.eps, (V[:, : self.d1], V[:, self.d1 :]), self.budget)

    def extended(self, x) -> "OffdiagLikelihoodContext":
        x = _real_rows(np.asarray(x).reshape(1, -1))
        Z = np.concatenate([self.Z, x[:, : self.d1]])
        W = np.concatenate([self.W, x[:, self.d1 :]])
        return OffdiagLikelihoodContext(self.a, self.b, self.eps, (Z, W), self.budget)

    def null_probabilities(self, P: Povm) -> np.ndarray:
        return born_probabilities(P, np.diag(np.concatenate([self.a, self.b])))


def exact_likelihood_offdiag(pairs, A, B, eps: float, budget: int = DP_BUDGET) -> float:
    ctx = OffdiagLikelihoodContext(A, B, eps, pairs, budget)
    _check_budget(ctx.t, budget, "exact_likelihood_offdiag")
    return 1.0 if ctx.t == 0 else ctx.value()


def matching_sum_likelihood_offdiag(pairs, A, B, eps: float, budget: int = MATCHING_BUDGET) -> float:
    ctx = OffdiagLikelihoodContext(A, B, eps, pairs, budget)
    _check_budget(ctx.t, budget, "matching_sum_likelihood_offdiag")
    return matching_sum(ctx.coefficients)


def k_matrix_offdiag(pairs, A, B) -> np.ndarray:
    """K((z,w)) = sum_i z_i w_i^T / (z_i^T A z_i + w_i^T B w_i)."""
    a, b = _diag(A), _diag(B)
    Z, W = _split_pairs(pairs, a.size)
    if Z.shape[0] == 0:
        return np.zeros((a.size, b.size))
    q = Z**2 @ a + W**2 @ b
    return (Z / q[:, None]).T @ W


def max_sign_quadratic(G: np.ndarray, chunk: int = 1 << 15) -> float:
    """max over s in {-1,1}^t of s^T G s, by enumerating the vertices
    (s_1 = +1 fixed, since s and -s give the same value)."""
    t = G.shape[0]
    if t == 0:
        return 0.0
    if t == 1:
        return float(G[0, 0])
    rest = t - 1
    total = 1 << rest
    bits = np.arange(rest)
    best = -np.inf
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        S = np.ones((idx.size, t))
        S[:, 1:] = 1 - 2 * ((idx[:, None] >> bits) & 1)
        vals = np.einsum("ij,ij->i", S @ G, S)
        best = max(best, float(vals.max()))
    return best


def _kappa_gram(pairs, A, B):
    a, b = _diag(A), _diag(B)
    Z, W = _split_pairs(pairs, a.size)
    q = Z**2 @ a + W**2 @ b
    nz, nw = np.linalg.norm(Z, axis=1), np.linalg.norm(W, axis=1)
    theta = nz * nw / q**2
    return Z, W, nz, nw, theta


def kappa_bruteforce(pairs, A, B, budget: int = KAPPA_BUDGET) -> float:
    """sup over b in [-1,1]^t of || sum_i b_i z_i w_i^T ||z_i|| ||w_i|| / q_i^2 ||_F.

    The squared norm is a convex quadratic in b, so the box supremum is
    attained at a sign vertex.
    """
    Z, W, _, _, theta = _kappa_gram(pairs, A, B)
    _check_budget(Z.shape[0], budget, "kappa_bruteforce")
    G = np.outer(theta, theta) * (Z @ Z.T) * (W @ W.T)
    return math.sqrt(max(max_sign_quadratic(G), 0.0))


def kappa_objective(pairs, A, B, b) -> float:
    """|| sum_i b_i theta_i z_i w_i^T ||_F at a given coefficient vector."""
    Z, W, _, _, theta = _kappa_gram(pairs, A, B)
    coef = np.asarray(b, dtype=float) * theta
    return float(np.linalg.norm((Z * coef[:, None]).T @ W))


def grothendieck_rhs(pairs, A, B, budget: int = KAPPA_BUDGET) -> float:
    """2 * max_s || sum_i s_i z_i ||z_i|| ||w_i||^2 / q_i^2 ||^2."""
    Z, W, nz, nw, theta = _kappa_gram(pairs, A, B)
    _check_budget(Z.shape[0], budget, "grothendieck_rhs")
    V = Z * (theta * nw)[:, None]
    return 2 * max(max_sign_quadratic(V @ V.T), 0.0)


# ----------------------------------------------------------------------------
# multi-block


def _block_bounds(dims) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(dims)]).astype(int)


def block_of(x: np.ndarray, bounds: np.ndarray) -> int:
    """Index of the unique block supporting ``x``; raises on mixed support."""
    hits = [nu for nu in range(bounds.size - 1) if np.any(x[bounds[nu] : bounds[nu + 1]] != 0)]
    if len(hits) != 1:
        raise ParameterError(f"outcome vector must be supported on exactly one block, touches {hits}")
    return hits[0]


@dataclass(eq=False)
class MultiblockLikelihoodContext:
    """Product over blocks of independent GOE contexts.

    ``blocks`` is a sequence of (A_nu, eps_nu); vectors live in the full
    space and each must be supported on one block.
    """

    blocks: list
    vectors: object = None
    budget: int = DP_BUDGET

    def __post_init__(self):
        self.diags = [_diag(A) for A, _ in self.blocks]
        self.eps = [float(e) for _, e in self.blocks]
        self.dims = [x.size for x in self.diags]
        self.bounds = _block_bounds(self.dims)
        self.d = int(self.bounds[-1])
        V = np.zeros((0, self.d)) if self.vectors is None else _real_rows(self.vectors).reshape(-1, self.d)
        self.V = V
        self.tags = [block_of(v, self.bounds) for v in V]
        per_block = [[] for _ in self.blocks]
        for v, nu in zip(V, self.tags):
            per_block[nu].append(v[self.bounds[nu] : self.bounds[nu + 1]])
        self.contexts = [
            GoeLikelihoodContext(
                a, e, np.array(rows) if rows else np.zeros((0, a.size)), self.budget
            )
            for a, e, rows in zip(self.diags, self.eps, per_block)
        ]

    def block_values(self) -> list[float]:
        return [1.0 if c.t == 0 else c.value() for c in self.contexts]

    def value(self) -> float:
        return float(np.prod(self.block_values()))

    def with_vectors(self, vectors) -> "MultiblockLikelihoodContext":
        return MultiblockLikelihoodContext(self.blocks, vectors, self.budget)

    def extended(self, x) -> "MultiblockLikelihoodContext":
        x = np.asarray(x).reshape(1, -1)
        return self.with_vectors(np.concatenate([self.V, x]))

    def null_probabilities(self, P: Povm) -> np.ndarray:
        return born_probabilities(P, np.diag(np.concatenate(self.diags)) / self.d)


def exact_likelihood_multiblock(transcript, blocks, budget: int = DP_BUDGET) -> tuple[list[float], float]:
    ctx = MultiblockLikelihoodContext(list(blocks), transcript, budget)
    for nu, c in enumerate(ctx.contexts):
        _check_budget(c.t, budget, f"exact_likelihood_multiblock block {nu}")
    vals = ctx.block_values()
    return vals, float(np.prod(vals))


# ----------------------------------------------------------------------------
# martingale identity


def martingale_step_expectation(prefix, P: Povm, context) -> float:
    """sum_x p0(x | prefix) * L(prefix + x) / L(prefix) for one POVM round.

    ``context`` supplies the model (its own vectors are ignored); each child
    likelihood is recomputed from scratch rather than via the recursion.
    """
    base = context.with_vectors(_real_rows(prefix) if len(prefix) else None)
    L0 = base.value()
    p0 = context.null_probabilities(P)
    if not P.is_real:
        raise ComplexInputError("martingale check needs a real POVM")
    terms = [p0[k] * base.extended(P.vectors[k]).value() / L0 for k in range(len(P))]
    return math.fsum(terms)


# ----------------------------------------------------------------------------
# K-matrix trajectories and the Doob statistic


@dataclass(frozen=True, eq=False)
class MartingaleTrace:
    """Per-step ||K_t||_F^2 and (when computed) Phi_t = L(x_{<=t})."""

    k_norms_sq: np.ndarray
    phi: np.ndarray | None = None
    d: int = 0

    @property
    def n(self) -> int:
        return self.k_norms_sq.size

    @property
    def sup_k_norm_sq(self) -> float:
        return float(self.k_norms_sq.max()) if self.n else 0.0

    @property
    def ratios(self) -> np.ndarray | None:
        if self.phi is None:
            return None
        return self.phi[1:] / self.phi[:-1]


def martingale_trace(transcript, A=None, eps: float | None = None, budget: int = DP_BUDGET) -> MartingaleTrace:
    """Incrementally track K_t via ||K + D||^2 = ||K||^2 + 2<K, D> + ||D||^2."""
    V = _real_rows(transcript)
    Z = _unit_rows(V)
    d = Z.shape[1]
    a = _diag(A, d)
    K = np.zeros((d, d))
    norm_sq = 0.0
    out = np.empty(Z.shape[0])
    for k, z in enumerate(Z):
        q = float(z**2 @ a)
        D = (d * np.outer(z, z) - np.eye(d)) / q
        norm_sq += 2 * float(np.sum(K * D)) + float(np.sum(D * D))
        K += D
        out[k] = norm_sq
    phi = None
    if eps is not None and Z.shape[0] <= budget:
        phi = GoeLikelihoodContext(a, eps, Z, budget).prefix_values() if Z.shape[0] else np.ones(1)
    return MartingaleTrace(out, phi, d)


def k_norms_standard_basis(outcomes: np.ndarray, a: np.ndarray) -> np.ndarray:
    """||K_t||_F^2 for t = 1..n when every outcome is a standard basis vector.

    K is then diagonal with K_jj = d c_j / a_j - sum_k c_k / a_k, where c are
    the running outcome counts. ``outcomes`` may be (n,) or (trials, n).
    """
    outcomes = np.atleast_2d(outcomes)
    trials, n = outcomes.shape
    d = a.size
    onehot = np.zeros((trials, n, d))
    np.put_along_axis(onehot, outcomes[:, :, None], 1.0, axis=2)
    counts = np.cumsum(onehot, axis=1) / a
    K = d * counts - counts.sum(axis=2, keepdims=True)
    return np.sum(K**2, axis=2)


@dataclass(frozen=True)
class DoobSummary:
    n: int
    d: int
    trials: int
    mean_sup: float
    stderr: float
    quantiles: dict
    mean_final: float
    bound: float
    aux_bound: float

    @property
    def within_bound(self) -> bool:
        return self.mean_sup <= self.bound

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "trials": self.trials,
            "mean_sup": self.mean_sup,
            "stderr": self.stderr,
            "quantiles": self.quantiles,
            "mean_final": self.mean_final,
            "bound": self.bound,
            "aux_bound": self.aux_bound,
            "within_bound": self.within_bound,
        }


def doob_statistic(traces) -> DoobSummary:
    """Summarise sup_t ||K_t||_F^2 over null trajectories against 8 n d (d-1)."""
    if isinstance(traces, np.ndarray):
        norms = np.atleast_2d(traces)
        d = None
    else:
        traces = list(traces)
        if not traces:
            raise ValueError("doob_statistic needs at least one trajectory")
        norms = np.stack([tr.k_norms_sq for tr in traces])
        d = traces[0].d
    if norms.size == 0:
        raise ValueError("doob_statistic needs non-empty trajectories")
    if d is None:
        raise ValueError("pass MartingaleTrace objects (the dimension is needed for the bound)")
    return _summarise(norms, d)


def _summarise(norms: np.ndarray, d: int) -> DoobSummary:
    trials, n = norms.shape
    sups = norms.max(axis=1)
    qs = np.quantile(sups, [0.5, 0.9, 0.99])
    return DoobSummary(
        n=n,
        d=d,
        trials=trials,
        mean_sup=float(sups.mean()),
        stderr=float(sups.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0,
        quantiles={"0.5": float(qs[0]), "0.9": float(qs[1]), "0.99": float(qs[2])},
        mean_final=float(norms[:, -1].mean()),
        bound=8.0 * n * d * (d - 1),
        aux_bound=2.0 * n * d * (d - 1),
    )


def doob_summary_from_norms(norms: np.ndarray, d: int) -> DoobSummary:
    return _summarise(np.atleast_2d(norms), d)


# ----------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    stderr: float
    samples: int
    attempts: int

    @property
    def acceptance_rate(self) -> float:
        return self.samples / self.attempts if self.attempts else 1.0


def _reduce_products(logabs: np.ndarray, sign: np.ndarray) -> tuple[float, float]:
    """Compensated mean and standard error of sign * exp(logabs)."""
    shift = float(logabs.max())
    vals = sign * np.exp(logabs - shift)
    n = vals.size
    mean = math.fsum(vals.tolist()) / n
    if n > 1:
        var = math.fsum(((vals - mean) ** 2).tolist()) / (n - 1)
        se = math.sqrt(var / n)
    else:
        se = 0.0
    scale = math.exp(shift)
    return mean * scale, se * scale


def _goe_star_features(Z: np.ndarray) -> np.ndarray:
    """Coefficients F with x_k^T M x_k = (g @ F)[k] for g a standard normal
    vector of length d(d+1)/2 and M ~ GOE*(d) (exact in distribution)."""
    t, d = Z.shape
    iu, ju = np.triu_indices(d, k=1)
    sq = Z**2
    diag_part = math.sqrt(2 / d) * (sq - sq.sum(axis=1, keepdims=True) / d)
    off_part = (2 / math.sqrt(d)) * Z[:, iu] * Z[:, ju]
    return np.concatenate([diag_part, off_part], axis=1).T


def _quad_forms_full(M: np.ndarray, Z: np.ndarray) -> np.ndarray:
    s, d, _ = M.shape
    XX = np.einsum("ki,kj->ijk", Z, Z).reshape(d * d, -1)
    return M.reshape(s, d * d) @ XX


def _accumulate(ratios: np.ndarray, eps: float, logabs: np.ndarray, sign: np.ndarray) -> None:
    f = 1.0 + eps * ratios
    logabs += np.sum(np.log(np.abs(f)), axis=1)
    sign *= np.prod(np.sign(f), axis=1)


def mc_goe_log_products(Z, a, eps, samples, truncated, rng, policy=None, chunk=50_000):
    """Per-draw log|prod_i (1 + eps x_i^T M x_i / x_i^T A x_i)| and its sign."""
    t, d = Z.shape
    q = Z**2 @ a
    logabs, sign, attempts = [], [], 0
    F = None if truncated else _goe_star_features(Z)
    nfeat = d * (d + 1) // 2
    policy = policy or TruncationPolicy.goe_star()
    step = max(1, min(chunk, int(2e7 // max(d * d, 1))))
    done = 0
    while done < samples:
        s = min(step, samples - done)
        if truncated:
            M, k = sample_truncated_batch(
                lambda size, g: sample_goe_star_batch(d, size, g), goe_star_accepts_batch, s, policy, rng
            )
            attempts += k
            Q = _quad_forms_full(M, Z)
        else:
            attempts += s
            Q = rng.standard_normal((s, nfeat)) @ F
        la, sg = np.zeros(s), np.ones(s)
        _accumulate(Q / q, eps, la, sg)
        logabs.append(la)
        sign.append(sg)
        done += s
    return np.concatenate(logabs), np.concatenate(sign), attempts


def mc_offdiag_log_products(Z, W, a, b, eps, samples, truncated, rng, policy=None, chunk=50_000):
    t, d1 = Z.shape
    d2 = W.shape[1]
    q = Z**2 @ a + W**2 @ b
    XY = np.einsum("ki,kj->ijk", Z, W).reshape(d1 * d2, t)
    policy = policy or TruncationPolicy.ginibre()
    logabs, sign, attempts, done = [], [], 0, 0
    step = max(1, min(chunk, int(2e7 // max(d1 * d2, 1))))
    while done < samples:
        s = min(step, samples - done)
        if truncated:
            G, k = sample_truncated_batch(
                lambda size, g: g.standard_normal((size, d1, d2)) / math.sqrt(d1),
                ginibre_accepts_batch, s, policy, rng,
            )
            attempts += k
        else:
            G = rng.standard_normal((s, d1, d2)) / math.sqrt(d1)
            attempts += s
        Q = G.reshape(s, d1 * d2) @ XY
        la, sg = np.zeros(s), np.ones(s)
        _accumulate(Q / q, 2 * eps / d2, la, sg)
        logabs.append(la)
        sign.append(sg)
        done += s
    return np.concatenate(logabs), np.concatenate(sign), attempts


def mc_likelihood(
    transcript,
    instance_family: str,
    params: dict,
    samples: int,
    truncated: bool,
    rng,
    *,
    chunk: int = 50_000,
) -> MCEstimate:
    """Monte-Carlo estimate of E[prod_i (1 + eps f_i(M))] over the ensemble.

    ``params``: goe -> {A, eps, [policy]}; offdiag -> {A, B, eps, [policy]};
    multiblock -> {blocks: [(A_nu, eps_nu)], [theta]}. With ``truncated``
    True draws are conditioned on the truncation event by rejection.
    Complex outcome vectors are accepted here (the factor uses the real part
    of the quadratic form).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if instance_family == "goe":
        Z = _mc_rows(transcript)
        a = _diag(params.get("A"), Z.shape[1])
        eps = float(params["eps"])
        if eps == 0 or Z.shape[0] == 0:
            return MCEstimate(1.0, 0.0, samples, samples)
        la, sg, att = _mc_goe(Z, a, eps, samples, truncated, rng, params.get("policy"), chunk)
    elif instance_family == "offdiag":
        a, b = _diag(params["A"]), _diag(params["B"])
        eps = float(params["eps"])
        Z, W = _split_pairs(transcript, a.size)
        if eps == 0 or Z.shape[0] == 0:
            return MCEstimate(1.0, 0.0, samples, samples)
        la, sg, att = mc_offdiag_log_products(Z, W, a, b, eps, samples, truncated, rng, params.get("policy"), chunk)
    elif instance_family == "multiblock":
        ctx = MultiblockLikelihoodContext(list(params["blocks"]), transcript, budget=10**9)
        theta = float(params.get("theta", 1.0))
        m = len(ctx.blocks)
        la, sg, att = np.zeros(samples), np.ones(samples), 0
        for c, e in zip(ctx.contexts, ctx.eps):
            if c.t == 0 or e == 0:
                continue
            pol = TruncationPolicy(3.0 + multiblock_slack(m, c.d, theta), 1 / 12)
            l2, s2, k = mc_goe_log_products(c.Z, c.a, e, samples, truncated, rng, pol, chunk)
            la += l2
            sg *= s2
            att = max(att, k)
        att = att or samples
    else:
        raise ValueError(f"unknown instance family {instance_family!r}")
    est, se = _reduce_products(la, sg)
    return MCEstimate(est, se, samples, att)


def _mc_rows(transcript) -> np.ndarray:
    V = transcript.vectors() if isinstance(transcript, Transcript) else np.atleast_2d(np.asarray(transcript))
    if V.size and np.iscomplexobj(V) and not np.any(V.imag):
        V = V.real
    return _unit_rows(V) if V.size else V


def _mc_goe(Z, a, eps, samples, truncated, rng, policy, chunk):
    if not np.iscomplexobj(Z):
        return mc_goe_log_products(Z, a, eps, samples, truncated, rng, policy, chunk)
    # complex vectors: Re(x^dagger M x) = x_r^T M x_r + x_i^T M x_i for real symmetric M
    t, d = Z.shape
    q = (np.abs(Z) ** 2) @ a
    policy = policy or TruncationPolicy.goe_star()
    if truncated:
        M, att = sample_truncated_batch(
            lambda size, g: sample_goe_star_batch(d, size, g), goe_star_accepts_batch, samples, policy, rng
        )
    else:
        M, att = sample_goe_star_batch(d, samples, rng), samples
    Q = _quad_forms_full(M, Z.real) + _quad_forms_full(M, Z.imag)
    la, sg = np.zeros(samples), np.ones(samples)
    _accumulate(Q / q, eps, la, sg)
    return la, sg, att


def truncation_correction(l_bar: float, p_U: float) -> float:
    """L* = L_bar / P[U]."""
    if not p_U > 0:
        raise ValueError(f"p_U must be positive, got {p_U}")
    if p_U > 1:
        raise ValueError(f"p_U must be <= 1, got {p_U}")
    return l_bar / p_U


def truncation_correction_with_error(l_bar, se_l, p_U, se_p) -> tuple[float, float]:
    """First-order error propagation for L_bar / P[U] with independent errors."""
    value = truncation_correction(l_bar, p_U)
    rel = math.hypot(se_l / l_bar if l_bar else 0.0, se_p / p_U)
    return value, abs(value) * rel


def indicator_mc_goe(transcript, A, eps, samples, rng, policy=None) -> tuple[MCEstimate, MCEstimate]:
    """Unconditioned draws: returns estimates of L_bar = E[prod * 1_U] and P[U]."""
    Z = _unit_rows(_real_rows(transcript))
    d = Z.shape[1]
    a = _diag(A, d)
    policy = policy or TruncationPolicy.goe_star()
    M = sample_goe_star_batch(d, samples, rng)
    ok = goe_star_accepts_batch(M, policy).astype(float)
    Q = _quad_forms_full(M, Z)
    prod = np.prod(1.0 + eps * Q / (Z**2 @ a), axis=1) * ok
    lbar = MCEstimate(float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(samples)), samples, samples)
    pu = MCEstimate(float(ok.mean()), float(ok.std(ddof=1) / math.sqrt(samples)), samples, samples)
    return lbar, pu


def likelihood_record(transcript, method: str, value: float, stderr=None, budget=None, seed=None) -> dict:
    """Provenance record for one likelihood evaluation."""
    digest = transcript.digest() if isinstance(transcript, Transcript) else Transcript.from_vectors(transcript).digest()
    return {
        "transcript_hash": digest,
        "method": method,
        "value": float(value),
        "stderr": None if stderr is None else float(stderr),
        "budget": budget,
        "seed": seed,
    }
