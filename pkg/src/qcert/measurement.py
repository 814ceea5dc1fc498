"""Rank-1 POVMs, adaptive measurement strategies and transcript simulation.

A POVM is stored as weights w_x >= 0 and unit vectors x with
sum_x w_x * d * x x^dagger = I. The raw-vector form v = sqrt(w_x d) x (used by
the off-diagonal analysis) is available through :meth:`Povm.raw` and
:meth:`Povm.from_raw`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import DimensionMismatch, PovmError
from .states import DensityMatrix

COMPLETENESS_TOL = 1e-8
UNIT_TOL = 1e-10
PROB_FLOOR = 1e-15


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Povm:
    """Finite rank-1 POVM in unit-vector + weight form.

    ``vectors`` has one element per row. ``block_tags`` optionally records,
    for block-respecting POVMs, which block each element is supported on.
    """

    weights: np.ndarray
    vectors: np.ndarray
    label: str | None = None
    block_tags: tuple | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        V = np.array(self.vectors)
        V = V.astype(complex if np.iscomplexobj(V) else float)
        if V.ndim != 2 or V.shape[0] != w.size:
            raise ValueError(f"need one vector per weight, got {V.shape} for {w.size} weights")
        w.setflags(write=False)
        V.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "vectors", V)
        if self.block_tags is not None:
            object.__setattr__(self, "block_tags", tuple(int(b) for b in self.block_tags))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.weights.size

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.vectors)

    @property
    def povm_id(self) -> str:
        return self.label or _digest(self.weights, self.vectors)

    def raw(self) -> np.ndarray:
        """Unnormalised vectors v = sqrt(w d) x, one per row."""
        return np.sqrt(self.weights * self.dim)[:, None] * self.vectors

    def elements(self) -> np.ndarray:
        """The PSD matrices w d x x^dagger, stacked."""
        R = self.raw()
        return R[:, :, None] * R.conj()[:, None, :]

    @classmethod
    def from_raw(cls, raw, label: str | None = None, block_tags=None) -> "Povm":
        """Normalise raw vectors v into (w = ||v||^2/d, x = v/||v||); zero rows are dropped."""
        R = np.asarray(raw)
        d = R.shape[1]
        norms = np.linalg.norm(R, axis=1)
        keep = norms > 0
        if block_tags is not None:
            block_tags = [t for t, k in zip(block_tags, keep) if k]
        return cls(norms[keep] ** 2 / d, R[keep] / norms[keep, None], label, block_tags)

    def to_dict(self) -> dict:
        V = self.vectors
        return {
            "dim": self.dim,
            "povm_id": self.povm_id,
            "weights": self.weights.tolist(),
            "re": np.real(V).tolist(),
            "im": np.imag(V).tolist(),
            "block_tags": list(self.block_tags) if self.block_tags is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Povm":
        re = np.asarray(data["re"], dtype=float)
        im = np.asarray(data["im"], dtype=float)
        V = re + 1j * im if np.any(im) else re
        return cls(np.asarray(data["weights"], dtype=float), V, data.get("povm_id"), data.get("block_tags"))


@dataclass(frozen=True)
class PovmReport:
    ok: bool
    residual: float
    min_weight: float
    max_norm_error: float
    messages: tuple = ()

    def __bool__(self) -> bool:
        return self.ok


def validate_povm(P: Povm, tol: float = COMPLETENESS_TOL) -> PovmReport:
    """Check completeness, weight signs and unit norms. Never raises."""
    messages = []
    d = P.dim
    R = np.sqrt(np.clip(P.weights, 0, None) * d)[:, None] * P.vectors
    S = R.T @ R.conj()
    residual = float(np.linalg.norm(S - np.eye(d)))
    min_w = float(P.weights.min()) if len(P) else 0.0
    norm_err = float(np.max(np.abs(np.linalg.norm(P.vectors, axis=1) - 1))) if len(P) else 0.0
    if residual > tol:
        messages.append(f"completeness residual {residual:.3e} exceeds {tol:.1e}")
    if min_w < 0:
        messages.append(f"negative weight {min_w:.3e}")
    if norm_err > UNIT_TOL:
        messages.append(f"vector norm off by {norm_err:.3e}")
    return PovmReport(not messages, residual, min_w, norm_err, tuple(messages))


def _rho_matrix(rho) -> np.ndarray:
    return np.asarray(rho.entries if isinstance(rho, DensityMatrix) else rho)


def born_probabilities(P: Povm, rho) -> np.ndarray:
    """Unclamped w_x d x^dagger rho x."""
    R = _rho_matrix(rho)
    if R.shape != (P.dim, P.dim):
        raise DimensionMismatch(f"POVM dim {P.dim} vs state shape {R.shape}")
    X = P.vectors
    quad = np.einsum("ki,ij,kj->k", X.conj(), R, X).real
    return P.weights * P.dim * quad


def outcome_distribution(P: Povm, rho) -> np.ndarray:
    """Outcome probabilities, clamped at zero, floored at 1e-15 and renormalised."""
    p = born_probabilities(P, rho)
    p = np.where(p < PROB_FLOOR, 0.0, p)
    return p / p.sum()


@dataclass(frozen=True, eq=False)
class Step:
    vector: np.ndarray
    weight: float
    povm_id: str
    outcome: int
    log_p0: float
    block: int | None = None

    def to_dict(self) -> dict:
        v = np.asarray(self.vector)
        return {
            "povm_id": self.povm_id,
            "outcome": int(self.outcome),
            "weight": float(self.weight),
            "log_p0": float(self.log_p0),
            "block": self.block,
            "re": np.real(v).tolist(),
            "im": np.imag(v).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Step":
        re = np.asarray(data["re"], dtype=float)
        im = np.asarray(data["im"], dtype=float)
        v = re + 1j * im if np.any(im) else re
        return cls(v, float(data["weight"]), data["povm_id"], int(data["outcome"]), float(data["log_p0"]), data.get("block"))


@dataclass(frozen=True, eq=False)
class Transcript:
    """Root-to-node path of the learning tree."""

    steps: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Transcript(self.steps[i])
        return self.steps[i]

    @property
    def log_p0(self) -> float:
        return math.fsum(s.log_p0 for s in self.steps)

    def vectors(self) -> np.ndarray:
        if not self.steps:
            return np.zeros((0, 0))
        return np.stack([np.asarray(s.vector) for s in self.steps])

    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.steps], dtype=float)

    def raw_vectors(self) -> np.ndarray:
        V = self.vectors()
        if not self.steps:
            return V
        return np.sqrt(self.weights() * V.shape[1])[:, None] * V

    def append(self, step: Step) -> "Transcript":
        return Transcript(self.steps + (step,))

    def without(self, i: int) -> "Transcript":
        return Transcript(self.steps[:i] + self.steps[i + 1 :])

    def digest(self) -> str:
        if not self.steps:
            return _digest(np.zeros(0))
        return _digest(self.vectors(), self.weights())

    def to_jsonl(self) -> str:
        return "".join(json.dumps(s.to_dict(), sort_keys=True) + "\n" for s in self.steps)

    @classmethod
    def from_jsonl(cls, text: str) -> "Transcript":
        return cls(tuple(Step.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()))

    @classmethod
    def from_vectors(cls, vectors, weights=None, rho0=None, blocks=None) -> "Transcript":
        """Build a transcript from bare outcome vectors (normalised to unit length).

        Weights default to 1/d; log_p0 increments are filled in if ``rho0`` is given.
        """
        V = np.atleast_2d(np.asarray(vectors))
        if V.size == 0:
            return cls(())
        d = V.shape[1]
        V = V / np.linalg.norm(V, axis=1, keepdims=True)
        w = np.full(V.shape[0], 1 / d) if weights is None else np.asarray(weights, dtype=float)
        R = None if rho0 is None else _rho_matrix(rho0)
        steps = []
        for k, v in enumerate(V):
            lp = 0.0 if R is None else math.log(w[k] * d * float(np.real(v.conj() @ R @ v)))
            steps.append(Step(v, float(w[k]), "adhoc", -1, lp, None if blocks is None else blocks[k]))
        return cls(tuple(steps))


def replay_log_p0(transcript: Transcript, rho0) -> float:
    """Recompute sum_i log(w_i d x_i^dagger rho0 x_i) from the stored vectors."""
    R = _rho_matrix(rho0)
    d = R.shape[0]
    terms = [
        math.log(s.weight * d * float(np.real(np.conj(s.vector) @ R @ s.vector))) for s in transcript
    ]
    return math.fsum(terms)


class Strategy(Protocol):
    dim: int

    def next_povm(self, history: Transcript) -> Povm: ...


def standard_basis_povm(d: int) -> Povm:
    return Povm(np.full(d, 1 / d), np.eye(d), label=f"std{d}")


def haar_basis_povm(d: int, rng, *, real: bool = True) -> Povm:
    """Orthonormal basis from the QR decomposition of a Gaussian matrix
    (phases fixed so the distribution is Haar on O(d) or U(d))."""
    if real:
        Z = rng.standard_normal((d, d))
    else:
        Z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / math.sqrt(2)
    Q, R = np.linalg.qr(Z)
    diag = np.diagonal(R)
    Q = Q * (diag / np.abs(diag))
    return Povm(np.full(d, 1 / d), Q.T.copy())


@dataclass
class StandardBasisStrategy:
    dim: int

    def __post_init__(self):
        self._povm = standard_basis_povm(self.dim)

    def next_povm(self, history: Transcript) -> Povm:
        return self._povm


@dataclass
class FixedStrategy:
    povm: Povm

    @property
    def dim(self) -> int:
        return self.povm.dim

    def next_povm(self, history: Transcript) -> Povm:
        return self.povm


@dataclass
class HaarBasisStrategy:
    """A fresh random basis each round, seeded by (seed, round index)."""

    dim: int
    seed: int = 0
    real: bool = True

    def next_povm(self, history: Transcript) -> Povm:
        rng = np.random.default_rng([self.seed, len(history)])
        return haar_basis_povm(self.dim, rng, real=self.real)


@dataclass
class KEigenbasisStrategy:
    """Adaptive: measure in the eigenbasis of K = sum_i (d z z^T - I)/(z^T A z)
    accumulated over the history (standard basis while K = 0)."""

    dim: int
    A: Sequence[float] | None = None

    def next_povm(self, history: Transcript) -> Povm:
        d = self.dim
        a = np.ones(d) if self.A is None else np.asarray(self.A, dtype=float)
        K = np.zeros((d, d))
        for s in history:
            z = np.real(np.asarray(s.vector))
            K += (d * np.outer(z, z) - np.eye(d)) / float(z @ (a * z))
        if not np.any(K):
            return standard_basis_povm(d)
        _, V = np.linalg.eigh(K)
        return Povm(np.full(d, 1 / d), V.T.copy())


def sample_outcome(p: np.ndarray, rng) -> int:
    """Inverse-CDF draw from a probability vector."""
    c = np.cumsum(p)
    k = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    return min(k, p.size - 1)


def simulate_transcript(strategy, rho, n: int, rng, *, null=None) -> Transcript:
    """Run ``n`` rounds of ``strategy`` on ``rho``.

    log-probabilities are accumulated under ``null`` (default: ``rho`` itself).
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    R = _rho_matrix(rho)
    R0 = R if null is None else _rho_matrix(null)
    t = Transcript(())
    for _ in range(n):
        P = strategy.next_povm(t)
        report = validate_povm(P)
        if not report.ok or P.dim != R.shape[0]:
            raise PovmError(report)
        k = sample_outcome(outcome_distribution(P, R), rng)
        x = P.vectors[k]
        w = float(P.weights[k])
        p0 = w * P.dim * float(np.real(x.conj() @ R0 @ x))
        block = None if P.block_tags is None else P.block_tags[k]
        t = t.append(Step(x, w, P.povm_id, k, math.log(p0), block))
    return t


def block_restrict_povm(P: Povm, blocks) -> tuple[Povm, np.ndarray]:
    """Split every element along a partition of the coordinates.

    Element (w, x) becomes, for each block b with x_b != 0, the element
    (w ||x_b||^2, x_b / ||x_b||). Returns the new POVM and the pushforward map
    f (new outcome index -> original outcome index).
    """
    blocks = [np.asarray(b, dtype=int) for b in blocks]
    covered = np.sort(np.concatenate(blocks)) if blocks else np.zeros(0, dtype=int)
    if not np.array_equal(covered, np.arange(P.dim)):
        raise ValueError("blocks must partition the index set")
    weights, vectors, tags, f = [], [], [], []
    for k in range(len(P)):
        x = P.vectors[k]
        for nu, b in enumerate(blocks):
            part = np.zeros_like(x)
            part[b] = x[b]
            mass = float(np.real(np.vdot(part, part)))
            if mass > 0:
                weights.append(P.weights[k] * mass)
                vectors.append(part / math.sqrt(mass))
                tags.append(nu)
                f.append(k)
    new = Povm(np.array(weights), np.array(vectors), block_tags=tuple(tags))
    return new, np.array(f, dtype=int)


def pushforward(p: np.ndarray, f: np.ndarray, size: int) -> np.ndarray:
    """Sum probabilities of new outcomes into their original outcome bins."""
    return np.bincount(f, weights=p, minlength=size)
