"""Random-matrix samplers (GOE, trace-centred GOE, Ginibre) with rejection
truncation, and constructors for the hard instances used in the lower
bounds."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg

from .errors import ParameterError, TruncationExhausted
from .states import DensityMatrix, DiagonalSpectrum, trace_norm_distance


def as_generator(rng) -> tuple[np.random.Generator, int | None]:
    """Accept a Generator or an integer seed; return (generator, seed-or-None)."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    if rng is None:
        raise ValueError("an explicit rng or integer seed is required")
    return np.random.default_rng(rng), int(rng)


def _diag_values(x) -> np.ndarray:
    if isinstance(x, DiagonalSpectrum):
        return np.asarray(x.values, dtype=float)
    return np.asarray(x, dtype=float).reshape(-1)


@dataclass(frozen=True)
class TruncationPolicy:
    """Acceptance event: ||M||_op <= op_norm_cap and ||M||_1 >= floor * d."""

    op_norm_cap: float = 3.0
    trace_norm_floor_fraction: float = 1 / 12
    max_attempts: int = 1000

    def __post_init__(self):
        problems = []
        if not self.op_norm_cap > 0:
            problems.append(f"op_norm_cap must be > 0, got {self.op_norm_cap}")
        if not 0 < self.trace_norm_floor_fraction < 1:
            problems.append(
                f"trace_norm_floor_fraction must lie in (0, 1), got {self.trace_norm_floor_fraction}"
            )
        if self.max_attempts < 1:
            problems.append(f"max_attempts must be >= 1, got {self.max_attempts}")
        if problems:
            raise ParameterError(problems)

    @classmethod
    def goe_star(cls, **kw) -> "TruncationPolicy":
        return cls(**{"op_norm_cap": 3.0, "trace_norm_floor_fraction": 1 / 12, **kw})

    @classmethod
    def ginibre(cls, **kw) -> "TruncationPolicy":
        return cls(**{"op_norm_cap": 3.0, "trace_norm_floor_fraction": 1 / 3, **kw})

    def to_dict(self) -> dict:
        return {
            "op_norm_cap": self.op_norm_cap,
            "trace_norm_floor_fraction": self.trace_norm_floor_fraction,
            "max_attempts": self.max_attempts,
        }


# ----------------------------------------------------------------------------
# samplers


def sample_goe(d: int, rng) -> np.ndarray:
    """GOE(d): off-diagonal entries N(0, 1/d), diagonal entries N(0, 2/d)."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    Z = rng.standard_normal((d, d))
    return (Z + Z.T) / math.sqrt(2 * d)


def sample_goe_batch(d: int, size: int, rng) -> np.ndarray:
    Z = rng.standard_normal((size, d, d))
    return (Z + Z.transpose(0, 2, 1)) / math.sqrt(2 * d)


def center_trace(G: np.ndarray) -> np.ndarray:
    """Subtract (Tr G / d) I, batched over leading axes."""
    d = G.shape[-1]
    tr = np.trace(G, axis1=-2, axis2=-1)
    out = G.copy()
    idx = np.arange(d)
    out[..., idx, idx] -= (tr / d)[..., None]
    return out


def sample_goe_star(d: int, rng) -> np.ndarray:
    """Untruncated trace-centred GOE draw."""
    return center_trace(sample_goe(d, rng))


def sample_goe_star_batch(d: int, size: int, rng) -> np.ndarray:
    return center_trace(sample_goe_batch(d, size, rng))


def goe_star_accepts(M: np.ndarray, policy: TruncationPolicy) -> bool:
    lam = np.linalg.eigvalsh(M)
    d = M.shape[0]
    return bool(
        np.max(np.abs(lam)) <= policy.op_norm_cap
        and np.sum(np.abs(lam)) >= policy.trace_norm_floor_fraction * d
    )


def goe_star_accepts_batch(M: np.ndarray, policy: TruncationPolicy) -> np.ndarray:
    lam = np.linalg.eigvalsh(M)
    d = M.shape[-1]
    return (np.max(np.abs(lam), axis=-1) <= policy.op_norm_cap) & (
        np.sum(np.abs(lam), axis=-1) >= policy.trace_norm_floor_fraction * d
    )


def ginibre_accepts(G: np.ndarray, policy: TruncationPolicy) -> bool:
    s = np.linalg.svd(G, compute_uv=False)
    d2 = G.shape[1]
    return bool(s[0] <= policy.op_norm_cap and 2 * np.sum(s) >= policy.trace_norm_floor_fraction * d2)


def ginibre_accepts_batch(G: np.ndarray, policy: TruncationPolicy) -> np.ndarray:
    s = np.linalg.svd(G, compute_uv=False)
    d2 = G.shape[-1]
    return (s[..., 0] <= policy.op_norm_cap) & (
        2 * np.sum(s, axis=-1) >= policy.trace_norm_floor_fraction * d2
    )


def sample_goe_star_truncated(
    d: int,
    policy: TruncationPolicy | None = None,
    rng=None,
    *,
    return_attempts: bool = False,
):
    """Trace-centred GOE conditioned on the truncation event, by rejection."""
    if d < 2:
        raise ValueError(f"GOE* needs d >= 2, got {d}")
    policy = policy or TruncationPolicy.goe_star()
    for attempt in range(1, policy.max_attempts + 1):
        M = sample_goe_star(d, rng)
        if goe_star_accepts(M, policy):
            return (M, attempt) if return_attempts else M
    raise TruncationExhausted(
        f"no GOE*({d}) draw accepted in {policy.max_attempts} attempts "
        f"(cap {policy.op_norm_cap}, floor {policy.trace_norm_floor_fraction}*d)",
        policy.max_attempts,
    )


def sample_ginibre(d1: int, d2: int, rng) -> np.ndarray:
    return rng.standard_normal((d1, d2)) / math.sqrt(d1)


def sample_ginibre_truncated(
    d1: int,
    d2: int,
    policy: TruncationPolicy | None = None,
    rng=None,
    *,
    return_attempts: bool = False,
):
    """d1 x d2 Ginibre with N(0, 1/d1) entries, conditioned on the truncation event."""
    if not d1 >= d2 >= 1:
        raise ValueError(f"need d1 >= d2 >= 1, got d1={d1}, d2={d2}")
    policy = policy or TruncationPolicy.ginibre()
    for attempt in range(1, policy.max_attempts + 1):
        G = sample_ginibre(d1, d2, rng)
        if ginibre_accepts(G, policy):
            return (G, attempt) if return_attempts else G
    raise TruncationExhausted(
        f"no Ginibre({d1}x{d2}) draw accepted in {policy.max_attempts} attempts", policy.max_attempts
    )


def sample_truncated_batch(sampler, accepts, size: int, policy: TruncationPolicy, rng, chunk: int = 4096):
    """Collect ``size`` accepted draws from a batched sampler.

    Returns (draws, total_attempts). Raises TruncationExhausted once
    ``max_attempts`` raw draws have been made without a single acceptance.
    """
    kept, n_kept, attempts = [], 0, 0
    while n_kept < size:
        want = min(chunk, max(size - n_kept, 1) * 2)
        X = sampler(want, rng)
        ok = np.flatnonzero(accepts(X, policy))
        need = size - n_kept
        if ok.size >= need:
            # only count raw draws up to the last one actually used
            attempts += int(ok[need - 1]) + 1
            ok = ok[:need]
        else:
            attempts += want
        if ok.size:
            kept.append(X[ok])
            n_kept += ok.size
        elif n_kept == 0 and attempts >= policy.max_attempts:
            raise TruncationExhausted(f"no draw accepted in {attempts} attempts", attempts)
    return np.concatenate(kept, axis=0), attempts


def embed_offdiag(G: np.ndarray) -> np.ndarray:
    """Hermitian embedding [[0, G], [G^T, 0]]."""
    d1, d2 = G.shape
    M = np.zeros((d1 + d2, d1 + d2), dtype=G.dtype)
    M[:d1, d1:] = G
    M[d1:, :d1] = G.conj().T
    return M


# ----------------------------------------------------------------------------
# hard instances


class InstanceKind(str, Enum):
    MIXEDNESS = "mixedness"
    OFFDIAG = "offdiag"
    MULTIBLOCK = "multiblock"
    PANINSKI = "paninski"
    PADDED = "padded"


@dataclass(frozen=True, eq=False)
class HardInstance:
    """A sampled two-hypothesis task: null vs one draw of the alternative."""

    kind: InstanceKind
    base: tuple
    eps: float | tuple
    perturbation: tuple
    null_state: DensityMatrix
    alt_state: DensityMatrix
    declared_separation: float
    params: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.null_state.dim

    def separation(self) -> float:
        return trace_norm_distance(self.null_state, self.alt_state)

    def check(self) -> None:
        """Raise ParameterError if the separation guarantee fails."""
        sep = self.separation()
        if sep < self.declared_separation * (1 - 1e-9) - 1e-15:
            raise ParameterError(
                f"separation {sep:.6g} below declared {self.declared_separation:.6g}"
            )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "base": [_diag_values(b).tolist() for b in self.base],
            "eps": list(self.eps) if isinstance(self.eps, tuple) else self.eps,
            "perturbation": [np.asarray(p).tolist() for p in self.perturbation],
            "null_state": self.null_state.to_dict(),
            "alt_state": self.alt_state.to_dict(),
            "declared_separation": self.declared_separation,
            "params": self.params,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "HardInstance":
        """Rebuild and revalidate: states are re-assembled from base and
        perturbation, compared with the stored ones, and re-checked."""
        kind = InstanceKind(data["kind"])
        base = tuple(DiagonalSpectrum(np.asarray(b, dtype=float)) for b in data["base"])
        eps = tuple(data["eps"]) if isinstance(data["eps"], list) else float(data["eps"])
        pert = tuple(np.asarray(p, dtype=float) for p in data["perturbation"])
        params = data.get("params", {})
        null, alt = _assemble(kind, base, eps, pert, params)
        stored_null = DensityMatrix.from_dict(data["null_state"])
        stored_alt = DensityMatrix.from_dict(data["alt_state"])
        for name, a, b in (("null", null, stored_null), ("alt", alt, stored_alt)):
            if np.max(np.abs(a.entries - b.entries)) > 1e-12:
                raise ParameterError(f"stored {name}_state does not match base + perturbation")
        inst = cls(
            kind, base, eps, pert, stored_null, stored_alt,
            float(data["declared_separation"]), params, data.get("metadata", {}),
        )
        inst.check()
        return inst

    @classmethod
    def from_json(cls, text: str) -> "HardInstance":
        return cls.from_dict(json.loads(text))


def _block_diag(*blocks) -> np.ndarray:
    blocks = [b for b in blocks if np.asarray(b).size]
    return scipy.linalg.block_diag(*blocks) if blocks else np.zeros((0, 0))


def _assemble(kind, base, eps, pert, params) -> tuple[DensityMatrix, DensityMatrix]:
    if kind is InstanceKind.MIXEDNESS:
        a = _diag_values(base[0])
        d = a.size
        return DensityMatrix(np.diag(a) / d), DensityMatrix((np.diag(a) + eps * pert[0]) / d)
    if kind is InstanceKind.PANINSKI:
        a = _diag_values(base[0])
        d = a.size
        return DensityMatrix(np.diag(a) / d), DensityMatrix(np.diag(a + eps * pert[0]) / d)
    if kind is InstanceKind.OFFDIAG:
        a, b = _diag_values(base[0]), _diag_values(base[1])
        d2 = b.size
        null = np.diag(np.concatenate([a, b]))
        return DensityMatrix(null), DensityMatrix(null + (eps / d2) * embed_offdiag(pert[0]))
    if kind is InstanceKind.MULTIBLOCK:
        diags = [_diag_values(x) for x in base]
        d = sum(x.size for x in diags)
        null = _block_diag(*[np.diag(x) for x in diags]) / d
        alt = _block_diag(*[np.diag(x) + e * M for x, e, M in zip(diags, eps, pert)]) / d
        return DensityMatrix(null), DensityMatrix(alt)
    if kind is InstanceKind.PADDED:
        inner = HardInstance.from_dict(params["inner"])
        w = float(params["weight"])
        P = np.diag(_diag_values(base[0]))
        return (
            DensityMatrix(_block_diag(w * inner.null_state.entries, P)),
            DensityMatrix(_block_diag(w * inner.alt_state.entries, P)),
        )
    raise ValueError(f"unknown instance kind {kind}")


def _require(problems: list[str]) -> None:
    if problems:
        raise ParameterError(problems)


def _check_trace(a: np.ndarray, target: float, name: str, problems: list[str], tol=1e-9) -> None:
    if abs(a.sum() - target) > tol:
        problems.append(f"Tr({name}) = {a.sum():.12g}, expected {target:.12g}")


def build_mixedness_instance(A, eps: float, rng, policy: TruncationPolicy | None = None) -> HardInstance:
    """(1/d)A versus (1/d)(A + eps*M) with M a truncated GOE* draw."""
    a = _diag_values(A)
    d = a.size
    problems = []
    if d < 2:
        problems.append(f"dimension must be >= 2, got {d}")
    if np.any(a <= 0):
        problems.append("A entries must be positive")
    elif a.max() > 2 * a.min():
        problems.append(f"A spread: max {a.max():.6g} exceeds 2*min {2 * a.min():.6g}")
    _check_trace(a, d, "A", problems)
    if not 0 <= eps <= 1 / 12:
        problems.append(f"eps must lie in [0, 1/12], got {eps}")
    _require(problems)
    gen, seed = as_generator(rng)
    policy = policy or TruncationPolicy.goe_star()
    M, attempts = sample_goe_star_truncated(d, policy, gen, return_attempts=True)
    base = (DiagonalSpectrum(a),)
    null, alt = _assemble(InstanceKind.MIXEDNESS, base, float(eps), (M,), {})
    inst = HardInstance(
        InstanceKind.MIXEDNESS, base, float(eps), (M,), null, alt,
        declared_separation=eps / 12,
        params={"d": d, "policy": policy.to_dict()},
        metadata={"seed": seed, "attempts": attempts, "forced": False},
    )
    inst.check()
    return inst


def offdiag_eps_cap(d2: int, a: float, b: float, *, force: bool = False) -> float:
    """Admissible upper limit on eps; ``force`` uses the desk-scale constant 10."""
    if force:
        return d2 * math.sqrt(a * b) / 10
    return d2 * math.sqrt(a * b) / (1e6 * math.log(1 / a))


def build_offdiag_instance(
    A, B, eps: float, rng, policy: TruncationPolicy | None = None, *, force: bool = False
) -> HardInstance:
    """diag(A, B) versus the same state with off-diagonal blocks (eps/d2) G."""
    a_vec, b_vec = _diag_values(A), _diag_values(B)
    d1, d2 = a_vec.size, b_vec.size
    problems = []
    if np.any(a_vec <= 0) or np.any(b_vec <= 0):
        problems.append("A and B entries must be positive")
        _require(problems)
    a, b = float(a_vec.min()), float(b_vec.min())
    if abs(a_vec.sum() + b_vec.sum() - 1) > 1e-9:
        problems.append(f"Tr(A) + Tr(B) = {a_vec.sum() + b_vec.sum():.12g}, expected 1")
    if 2 * a < a_vec.max():
        problems.append("A spread: 2*a_min < a_max")
    if 2 * b < b_vec.max():
        problems.append("B spread: 2*b_min < b_max")
    if d1 < d2:
        problems.append(f"need d1 >= d2, got d1={d1}, d2={d2}")
    if d1 * math.sqrt(a) > d2 * math.sqrt(b) * (1 + 1e-12):
        problems.append(f"need d1*sqrt(a) <= d2*sqrt(b), got {d1 * math.sqrt(a):.6g} > {d2 * math.sqrt(b):.6g}")
    cap = offdiag_eps_cap(d2, a, b, force=force) if a < 1 else 0.0
    if eps < 0 or eps > cap:
        label = "d2*sqrt(ab)/10 (forced)" if force else "d2*sqrt(ab)/(1e6*log(1/a))"
        problems.append(f"eps = {eps} exceeds the cap {label} = {cap:.6g}")
    _require(problems)
    gen, seed = as_generator(rng)
    policy = policy or TruncationPolicy.ginibre()
    G, attempts = sample_ginibre_truncated(d1, d2, policy, gen, return_attempts=True)
    base = (DiagonalSpectrum(a_vec), DiagonalSpectrum(b_vec))
    null, alt = _assemble(InstanceKind.OFFDIAG, base, float(eps), (G,), {})
    inst = HardInstance(
        InstanceKind.OFFDIAG, base, float(eps), (G,), null, alt,
        declared_separation=eps / 3,
        params={"d1": d1, "d2": d2, "a": a, "b": b, "policy": policy.to_dict()},
        metadata={"seed": seed, "attempts": attempts, "forced": bool(force)},
    )
    inst.check()
    return inst


def multiblock_slack(m: int, d_nu: int, theta: float = 1.0) -> float:
    """The sqrt(log(m)/d_nu) slack term, times the configurable constant theta."""
    return theta * math.sqrt(math.log(m) / d_nu) if m > 1 else 0.0


def multiblock_eps_cap(d: int, j: int, m: int, d_nu: int, theta: float = 1.0) -> float:
    return d * 2.0 ** (-j) / (12 + multiblock_slack(m, d_nu, theta))


def build_multiblock_instance(blocks, rng, *, theta: float = 1.0, max_attempts: int = 1000) -> HardInstance:
    """Block-diagonal instance; block nu is A_nu + eps_nu * M_nu with M_nu an
    independently truncated GOE*(d_nu) draw.

    ``blocks`` is a sequence of (A_nu, eps_nu, j_nu). Entries of A_nu must lie
    in [d 2^-j_nu, d 2^(-j_nu+1)], so a single block A = I_d has j = log2(d).
    """
    diags = [_diag_values(A) for A, _, _ in blocks]
    eps = tuple(float(e) for _, e, _ in blocks)
    js = [int(j) for _, _, j in blocks]
    m = len(diags)
    d = sum(x.size for x in diags)
    problems = []
    if m == 0:
        problems.append("need at least one block")
        _require(problems)
    total = sum(x.sum() for x in diags)
    if abs(total - d) > 1e-9:
        problems.append(f"sum of block traces = {total:.12g}, expected d = {d}")
    for nu, (x, e, j) in enumerate(zip(diags, eps, js)):
        lo, hi = d * 2.0 ** (-j), d * 2.0 ** (-j + 1)
        if x.size < 2:
            problems.append(f"block {nu}: dimension must be >= 2")
            continue
        if x.min() < lo * (1 - 1e-12) or x.max() > hi * (1 + 1e-12):
            problems.append(f"block {nu}: entries outside [{lo:.6g}, {hi:.6g}] for j={j}")
        cap = multiblock_eps_cap(d, j, m, x.size, theta)
        if not 0 <= e <= cap * (1 + 1e-12):
            problems.append(f"block {nu}: eps = {e} exceeds cap {cap:.6g}")
    _require(problems)
    gen, seed = as_generator(rng)
    Ms, attempts = [], []
    for x in diags:
        pol = TruncationPolicy(3.0 + multiblock_slack(m, x.size, theta), 1 / 12, max_attempts)
        M, k = sample_goe_star_truncated(x.size, pol, gen, return_attempts=True)
        Ms.append(M)
        attempts.append(k)
    base = tuple(DiagonalSpectrum(x) for x in diags)
    null, alt = _assemble(InstanceKind.MULTIBLOCK, base, eps, tuple(Ms), {})
    declared = sum(x.size * e for x, e in zip(diags, eps)) / (12 * d)
    inst = HardInstance(
        InstanceKind.MULTIBLOCK, base, eps, tuple(Ms), null, alt,
        declared_separation=declared,
        params={"d": d, "m": m, "j": js, "block_dims": [x.size for x in diags], "theta": theta},
        metadata={"seed": seed, "attempts": attempts, "forced": False},
    )
    inst.check()
    return inst


def paninski_signs(d: int) -> np.ndarray:
    """Z = diag(+1 x k, -1 x k, [0]) with k = floor(d/2)."""
    k = d // 2
    z = np.zeros(d)
    z[:k] = 1.0
    z[k : 2 * k] = -1.0
    return z


def build_classical_paninski_instance(A, eps: float, rng) -> HardInstance:
    """(1/d)A versus (1/d)(A + eps P Z P^T) with P a random permutation of the
    first 2*floor(d/2) coordinates."""
    a = _diag_values(A)
    d = a.size
    problems = []
    _check_trace(a, d, "A", problems)
    if not 0 <= eps < 1:
        problems.append(f"eps must lie in [0, 1), got {eps}")
    if np.any(a < eps):
        problems.append("A entries must be >= eps so that the alternative is PSD")
    _require(problems)
    gen, seed = as_generator(rng)
    z = paninski_signs(d)
    k2 = 2 * (d // 2)
    z[:k2] = z[:k2][gen.permutation(k2)]
    base = (DiagonalSpectrum(a),)
    null, alt = _assemble(InstanceKind.PANINSKI, base, float(eps), (z,), {})
    inst = HardInstance(
        InstanceKind.PANINSKI, base, float(eps), (z,), null, alt,
        declared_separation=eps * k2 / d,
        params={"d": d},
        metadata={"seed": seed, "attempts": 1, "forced": False},
    )
    inst.check()
    return inst


def pad_instance(inner: HardInstance, P, weight: float) -> HardInstance:
    """Embed ``inner`` as a top-left block of trace ``weight`` next to fixed P."""
    p = _diag_values(P)
    problems = []
    if not 0 < weight <= 1:
        problems.append(f"weight must lie in (0, 1], got {weight}")
    if abs(p.sum() - (1 - weight)) > 1e-9:
        problems.append(f"Tr(P) = {p.sum():.12g}, expected 1 - weight = {1 - weight:.12g}")
    _require(problems)
    base = (DiagonalSpectrum(p),)
    params = {"inner": inner.to_dict(), "weight": float(weight), "inner_dim": inner.dim}
    null = DensityMatrix(_block_diag(weight * inner.null_state.entries, np.diag(p)))
    alt = DensityMatrix(_block_diag(weight * inner.alt_state.entries, np.diag(p)))
    inst = HardInstance(
        InstanceKind.PADDED, base, inner.eps, inner.perturbation, null, alt,
        declared_separation=weight * inner.declared_separation,
        params=params,
        metadata=dict(inner.metadata),
    )
    inst.check()
    return inst
