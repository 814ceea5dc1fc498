"""Density matrices, diagonal spectra and the state functionals used by the
bound calculator: trace-norm distance, fidelity and Schatten quasi-norms."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidStateError, NotPSDError

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = -1e-9


def hermitianize(X: np.ndarray) -> np.ndarray:
    """Return (X + X^dagger) / 2."""
    return (X + X.conj().T) / 2


def _real_if_close(X: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(X) and not np.any(X.imag):
        return X.real.copy()
    return X


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A validated d x d Hermitian PSD matrix with unit trace.

    Real inputs stay real so that the exact likelihood engines (which only
    accept real outcome vectors) can operate on states built from them.
    """

    entries: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        X = np.array(self.entries, dtype=complex if np.iscomplexobj(self.entries) else float)
        if X.ndim != 2 or X.shape[0] != X.shape[1] or X.shape[0] == 0:
            raise InvalidStateError(f"expected a non-empty square matrix, got shape {X.shape}")
        X = _real_if_close(X)
        X.setflags(write=False)
        object.__setattr__(self, "entries", X)
        if self.validate:
            problems = density_violations(X)
            if problems:
                raise InvalidStateError("; ".join(problems))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(hermitianize(self.entries))

    @classmethod
    def maximally_mixed(cls, d: int) -> "DensityMatrix":
        return cls(np.eye(d) / d)

    @classmethod
    def from_diagonal(cls, values) -> "DensityMatrix":
        return cls(np.diag(np.asarray(values, dtype=float)))

    def to_dict(self) -> dict:
        X = np.asarray(self.entries)
        return {
            "dim": self.dim,
            "re": np.real(X).tolist(),
            "im": np.imag(X).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DensityMatrix":
        re = np.asarray(data["re"], dtype=float)
        im = np.asarray(data.get("im", np.zeros_like(re)), dtype=float)
        if re.shape != (data["dim"], data["dim"]):
            raise InvalidStateError("stored dim does not match matrix shape")
        X = re + 1j * im if np.any(im) else re
        return cls(X)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DensityMatrix":
        return cls.from_dict(json.loads(text))


def density_violations(X: np.ndarray) -> list[str]:
    """List every density-matrix invariant that ``X`` breaks (empty if valid)."""
    problems = []
    if not np.all(np.isfinite(X)):
        return ["non-finite entries"]
    herm_err = float(np.max(np.abs(X - X.conj().T)))
    if herm_err > HERMITIAN_TOL:
        problems.append(f"not Hermitian (max |X - X^dagger| = {herm_err:.3e})")
    tr = complex(np.trace(X))
    if abs(tr - 1) > TRACE_TOL:
        problems.append(f"trace {tr.real:.12g} != 1")
    lam_min = float(np.linalg.eigvalsh(hermitianize(X))[0])
    if lam_min < PSD_TOL:
        problems.append(f"not PSD (smallest eigenvalue {lam_min:.3e})")
    return problems


@dataclass(frozen=True, eq=False)
class DiagonalSpectrum:
    """Nonnegative real vector of eigenvalues, possibly sub-normalised."""

    values: np.ndarray
    sorted: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise InvalidStateError("spectrum has non-finite entries")
        if np.any(v < 0):
            raise InvalidStateError("spectrum entries must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def trace(self) -> float:
        return float(np.sum(self.values))

    def is_subnormalized(self) -> bool:
        return self.trace <= 1 + 1e-10

    def sorted_desc(self) -> "DiagonalSpectrum":
        return DiagonalSpectrum(np.sort(self.values)[::-1], sorted=True)

    def to_matrix(self) -> np.ndarray:
        return np.diag(self.values)

    def to_dict(self) -> dict:
        return {"diag": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "DiagonalSpectrum":
        return cls(np.asarray(data["diag"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DiagonalSpectrum":
        return cls.from_dict(json.loads(text))


def load_state_dict(data: dict):
    """Decode either JSON schema: ``{"diag": ...}`` or ``{"dim", "re", "im"}``."""
    if "diag" in data:
        return DiagonalSpectrum.from_dict(data)
    return DensityMatrix.from_dict(data)


def _as_array(x) -> np.ndarray:
    if isinstance(x, DensityMatrix):
        return np.asarray(x.entries)
    if isinstance(x, DiagonalSpectrum):
        return x.to_matrix()
    return np.asarray(x)


def _psd_spectrum(x) -> np.ndarray:
    """Eigenvalues of a PSD input, clamped at zero."""
    if isinstance(x, DiagonalSpectrum):
        lam = x.values
    else:
        X = _as_array(x)
        if X.ndim == 1:
            lam = np.asarray(X, dtype=float)
        else:
            lam = np.linalg.eigvalsh(hermitianize(X))
    if lam.size and lam.min() < PSD_TOL:
        raise NotPSDError(f"input is not PSD (smallest eigenvalue {lam.min():.3e})")
    return np.clip(lam, 0.0, None)


def _psd_sqrt(X: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(hermitianize(X))
    if lam[0] < PSD_TOL:
        raise NotPSDError(f"input is not PSD (smallest eigenvalue {lam[0]:.3e})")
    return (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.conj().T


def trace_norm_distance(rho, sigma) -> float:
    """Full trace norm ||rho - sigma||_1 (no factor 1/2)."""
    R, S = _as_array(rho), _as_array(sigma)
    if R.shape != S.shape:
        raise DimensionMismatch(f"shapes {R.shape} and {S.shape} differ")
    return float(np.sum(np.abs(np.linalg.eigvalsh(hermitianize(R - S)))))


def fidelity(rho, sigma) -> float:
    """Squared-root fidelity F = (Tr sqrt(rho^1/2 sigma rho^1/2))^2.

    Evaluated as the squared nuclear norm of sqrt(rho) sqrt(sigma), which
    is the same quantity but avoids a second matrix square root.
    """
    R, S = _as_array(rho), _as_array(sigma)
    if R.shape != S.shape:
        raise DimensionMismatch(f"shapes {R.shape} and {S.shape} differ")
    s = np.linalg.svd(_psd_sqrt(R) @ _psd_sqrt(S), compute_uv=False)
    return float(np.sum(s) ** 2)


def schatten_quasinorm(sigma, p: float) -> float:
    """(sum_i sigma_i^p)^(1/p) over the eigenvalues, negatives clamped at 0."""
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    lam = _psd_spectrum(sigma)
    return float(np.sum(lam**p) ** (1.0 / p))


def fidelity_mm_quasinorm(sigma_psd) -> float:
    """Fidelity of sigma/Tr(sigma) with the maximally mixed state, computed
    from the half quasi-norm: (1/d) * ||sigma||_{1/2} / Tr(sigma).
    """
    lam = _psd_spectrum(sigma_psd)
    tr = float(np.sum(lam))
    if tr <= 0:
        raise ValueError("zero matrix has no normalised state")
    d = lam.shape[0]
    return float(np.sum(np.sqrt(lam)) ** 2 / (d * tr))
