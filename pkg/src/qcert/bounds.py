"""Instance-optimal copy-complexity calculator for state certification.

Eigenvalues are grouped into dyadic buckets S_j = {i : 2^-(j+1) < sigma_i <= 2^-j},
light mass is zeroed, and the bound is (d sqrt(d_eff) / eps^2) F(sigma*, I/d)
with unit constants.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import AllMassRemoved, NonBracketing, ParameterError
from .states import DensityMatrix, DiagonalSpectrum, fidelity_mm_quasinorm

SCHEMES = ("simple", "refined")


def bucket_index(x: float) -> int:
    """The j with 2^-(j+1) < x <= 2^-j, computed exactly from the binary exponent."""
    if not x > 0:
        raise ValueError(f"bucket index needs a positive value, got {x}")
    mant, exp = math.frexp(x)  # x = mant * 2^exp, mant in [0.5, 1)
    return 1 - exp if mant == 0.5 else -exp


def _spectrum(sigma) -> np.ndarray:
    if isinstance(sigma, DiagonalSpectrum):
        return np.asarray(sigma.values, dtype=float)
    if isinstance(sigma, DensityMatrix):
        return np.clip(sigma.eigenvalues(), 0.0, None)
    s = np.asarray(sigma, dtype=float)
    if s.ndim == 2:
        return np.clip(np.linalg.eigvalsh((s + s.T.conj()) / 2), 0.0, None)
    return s.reshape(-1)


@dataclass(frozen=True, eq=False)
class BucketDecomposition:
    sigma: np.ndarray
    eps: float
    scheme: str
    buckets: dict  # j -> sorted index array
    removed: np.ndarray  # indices zeroed in sigma'
    surviving: tuple  # J*
    sigma_prime: DiagonalSpectrum
    sigma_star: DiagonalSpectrum
    m: int
    light: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    tail: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    mass_constant: float = 1.0

    @property
    def d(self) -> int:
        return self.sigma.size

    @property
    def sizes(self) -> dict:
        return {j: int(idx.size) for j, idx in self.buckets.items()}

    @property
    def d_eff(self) -> int:
        return int(np.count_nonzero(self.sigma_prime.values))

    @property
    def removed_mass(self) -> float:
        return float(self.sigma[self.removed].sum()) if self.removed.size else 0.0

    @property
    def removed_buckets(self) -> tuple:
        return tuple(j for j, idx in self.buckets.items() if np.isin(idx, self.removed).all())

    def mass_bound(self) -> float:
        """The guaranteed ceiling on removed mass for this scheme."""
        if self.scheme == "simple":
            return self.eps * len(self.removed_buckets)
        return self.mass_constant * self.eps

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "eps": self.eps,
            "buckets": {str(j): idx.tolist() for j, idx in sorted(self.buckets.items())},
            "surviving": list(self.surviving),
            "removed": self.removed.tolist(),
            "removed_mass": self.removed_mass,
            "d_eff": self.d_eff,
            "m": self.m,
            "mass_constant": self.mass_constant,
        }


def _buckets(s: np.ndarray) -> tuple[dict, np.ndarray]:
    j_of = np.full(s.size, -1, dtype=int)
    for i, x in enumerate(s):
        if x > 0:
            j_of[i] = bucket_index(float(x))
    out = {}
    for j in sorted(set(j_of[j_of >= 0].tolist())):
        out[j] = np.flatnonzero(j_of == j)
    return out, j_of


def bucket(
    sigma,
    eps: float,
    scheme: str = "simple",
    *,
    c_tail: float = 1.0,
    a_star: int = 1,
) -> BucketDecomposition:
    """Dyadic bucketing with mass removal.

    simple: zero every bucket of total mass < eps.
    refined: zero S_light (the largest prefix of smallest entries with mass
    <= eps, plus buckets of mass <= 2 eps / log2(d/eps)) and S_tail (the
    non-light prefix, in order of sigma_i / d_j(i)^2, of mass <= c_tail eps).
    """
    s = _spectrum(sigma)
    d = s.size
    problems = []
    if d < 1:
        problems.append("empty spectrum")
    if np.any(s < 0) or np.any(s > 1 + 1e-12):
        problems.append("spectrum entries must lie in [0, 1]")
    if not 0 < eps < 1:
        problems.append(f"eps must lie in (0, 1), got {eps}")
    if scheme not in SCHEMES:
        problems.append(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if problems:
        raise ParameterError(problems)
    buckets, j_of = _buckets(s)
    light = np.zeros(0, dtype=int)
    tail = np.zeros(0, dtype=int)
    mass_constant = 1.0
    if scheme == "simple":
        keep = tuple(j for j, idx in buckets.items() if s[idx].sum() >= eps)
        removed = np.sort(
            np.concatenate([idx for j, idx in buckets.items() if j not in keep] or [np.zeros(0, dtype=int)])
        ).astype(int)
        m = len(keep)
        surviving = keep
    else:
        log_term = math.log2(d / eps)
        order = np.lexsort((np.arange(d), s))  # ascending, ties by index
        csum = np.cumsum(s[order])
        b = int(np.searchsorted(csum, eps, side="right"))
        light1 = set(order[:b].tolist())
        thresh = 2 * eps / log_term if log_term > 0 else math.inf
        light2 = {int(i) for j, idx in buckets.items() if s[idx].sum() <= thresh for i in idx}
        light_set = light1 | light2
        light = np.array(sorted(light_set), dtype=int)
        sizes = {j: idx.size for j, idx in buckets.items()}
        cand = [i for i in range(d) if s[i] > 0 and i not in light_set]
        key = sorted(cand, key=lambda i: (s[i] / sizes[j_of[i]] ** 2, i))
        tail_list, acc = [], 0.0
        for i in key:
            if acc + s[i] > c_tail * eps:
                break
            acc += s[i]
            tail_list.append(i)
        tail = np.array(sorted(tail_list), dtype=int)
        removed = np.array(sorted(light_set | set(tail_list) | set(np.flatnonzero(s == 0).tolist())), dtype=int)
        m = sum(1 for idx in buckets.values() if not (set(idx.tolist()) & light_set))
        many = {i for j, idx in buckets.items() if idx.size >= a_star for i in idx}
        surviving = tuple(
            j for j, idx in buckets.items() if set(idx.tolist()) & (many - light_set)
        )
        L = log_term
        mass_constant = 1 + (2 * math.ceil(L) / L if L > 0 else 0) + c_tail
    sp = s.copy()
    sp[removed] = 0.0
    tr = sp.sum()
    if tr <= 0:
        raise AllMassRemoved(f"bucketing at eps={eps} removed all of the mass")
    return BucketDecomposition(
        sigma=s,
        eps=float(eps),
        scheme=scheme,
        buckets=buckets,
        removed=removed,
        surviving=surviving,
        sigma_prime=DiagonalSpectrum(sp),
        sigma_star=DiagonalSpectrum(sp / tr),
        m=m,
        light=light,
        tail=tail,
        mass_constant=mass_constant,
    )


def bound_value(decomp: BucketDecomposition, eps: float) -> float:
    """(d sqrt(d_eff) / eps^2) * F(sigma*, I/d)."""
    return decomp.d * math.sqrt(decomp.d_eff) * fidelity_mm_quasinorm(decomp.sigma_prime) / eps**2


@dataclass(frozen=True)
class BoundReport:
    lower: float
    upper: float
    d_eff: int
    fidelity_term: float
    lower_decomp: BucketDecomposition
    upper_decomp: BucketDecomposition
    eps: float
    scheme: str

    def to_dict(self) -> dict:
        ld = self.lower_decomp
        return {
            "scheme": self.scheme,
            "eps": self.eps,
            "buckets": {str(j): int(v) for j, v in sorted(ld.sizes.items())},
            "removed_mass": ld.removed_mass,
            "d_eff": self.d_eff,
            "fidelity_term": self.fidelity_term,
            "lower": self.lower,
            "upper": self.upper,
            "upper_d_eff": self.upper_decomp.d_eff,
            "upper_removed_mass": self.upper_decomp.removed_mass,
        }


def instance_optimal_bound(
    sigma,
    eps: float,
    scheme: str = "simple",
    *,
    lower_scale: float | None = None,
    upper_scale: float | None = None,
) -> BoundReport:
    """Unit-constant sandwich: lower removes mass at scale eps, upper at eps^2."""
    lo_scale = eps if lower_scale is None else lower_scale
    up_scale = eps**2 if upper_scale is None else upper_scale
    lo = bucket(sigma, lo_scale, scheme)
    up = bucket(sigma, up_scale, scheme)
    return BoundReport(
        lower=bound_value(lo, eps),
        upper=bound_value(up, eps),
        d_eff=lo.d_eff,
        fidelity_term=fidelity_mm_quasinorm(lo.sigma_prime),
        lower_decomp=lo,
        upper_decomp=up,
        eps=float(eps),
        scheme=scheme,
    )


@dataclass(frozen=True)
class PerturbationPlan:
    zeta: float
    eps_j: dict
    caps: dict
    slopes: dict
    alpha: dict
    residual: float
    sanity_ratio: float
    eps: float

    def sanity_holds(self, C: float = 10.0) -> bool:
        """zeta <= C eps / sum_j 2^(-2j/3) d_j^(5/3)."""
        return self.sanity_ratio <= C

    def to_dict(self) -> dict:
        return {
            "zeta": self.zeta,
            "eps_j": {str(j): v for j, v in sorted(self.eps_j.items())},
            "residual": self.residual,
            "sanity_ratio": self.sanity_ratio,
        }


def tune_perturbations(decomp: BucketDecomposition, eps: float, *, theta: float = 1.0) -> PerturbationPlan:
    """Solve sum_j d_j min(cap_j, zeta slope_j) = eps for zeta over j in J*.

    cap_j = 2^-(j+1) / alpha_j with alpha_j = 12 + theta sqrt(ln m / d_j) and
    slope_j = 2^(-2(j+1)/3) d_j^(2/3). Per-block perturbations are
    eps_j = d min(cap_j, zeta slope_j).
    """
    J = list(decomp.surviving)
    if not J:
        raise ParameterError("no surviving buckets to perturb")
    m = max(decomp.m, 1)
    sizes = decomp.sizes
    dj = np.array([sizes[j] for j in J], dtype=float)
    jj = np.array(J, dtype=float)
    alpha = 12 + theta * np.sqrt(math.log(m) / dj)
    caps = 2.0 ** (-(jj + 1)) / alpha
    slopes = 2.0 ** (-2 * (jj + 1) / 3) * dj ** (2 / 3)

    def total(z: float) -> float:
        return float(np.sum(dj * np.minimum(caps, z * slopes)))

    feasible_max = float(np.sum(dj * caps))
    if not 0 < eps <= feasible_max:
        raise NonBracketing(
            f"eps={eps} is outside (0, {feasible_max:.6g}], the range of the normalisation map",
            feasible_max,
        )
    z_hi = float(np.max(caps / slopes))
    z = brentq(lambda x: total(x) - eps, 0.0, z_hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    # polish with the closed form on the active set (the map is piecewise linear)
    capped = z * slopes >= caps
    free = ~capped
    if free.any():
        z = (eps - float(np.sum(dj[capped] * caps[capped]))) / float(np.sum(dj[free] * slopes[free]))
    residual = abs(total(z) - eps)
    S = float(np.sum(2.0 ** (-2 * jj / 3) * dj ** (5 / 3)))
    d = decomp.d
    eps_j = {j: d * float(min(c, z * sl)) for j, c, sl in zip(J, caps, slopes)}
    return PerturbationPlan(
        zeta=float(z),
        eps_j=eps_j,
        caps={j: d * float(c) for j, c in zip(J, caps)},
        slopes={j: float(sl) for j, sl in zip(J, slopes)},
        alpha={j: float(a) for j, a in zip(J, alpha)},
        residual=float(residual),
        sanity_ratio=float(z * S / eps),
        eps=float(eps),
    )


def family_lower_bounds(family: str, **params) -> float:
    """Closed-form lower-bound values with unit constants.

    mixedness(d, eps): d^1.5 / eps^2
    offdiag(d1, d2, eps): sqrt(d1) d2 / eps^2
    classical(d, eps): sqrt(d) / eps^2
    multiblock(blocks=[(d_nu, eps_nu, j_nu)], d): (1/m) min_nu sqrt(d_nu) d^2 / (eps_nu^2 2^j_nu)
    """
    def positive(*names):
        bad = [n for n in names if not (n in params and params[n] > 0)]
        if bad:
            raise ParameterError([f"{n} must be given and positive" for n in bad])

    if family == "mixedness":
        positive("d", "eps")
        return params["d"] ** 1.5 / params["eps"] ** 2
    if family == "offdiag":
        positive("d1", "d2", "eps")
        if params["d1"] < params["d2"]:
            raise ParameterError("need d1 >= d2")
        return math.sqrt(params["d1"]) * params["d2"] / params["eps"] ** 2
    if family == "classical":
        positive("d", "eps")
        return math.sqrt(params["d"]) / params["eps"] ** 2
    if family == "multiblock":
        blocks = params.get("blocks") or []
        if not blocks:
            raise ParameterError("multiblock needs a non-empty list of (d_nu, eps_nu, j_nu)")
        d = params.get("d", sum(b[0] for b in blocks))
        if any(b[0] <= 0 or b[1] <= 0 for b in blocks):
            raise ParameterError("block dimensions and eps_nu must be positive")
        m = len(blocks)
        return min(math.sqrt(dn) * d**2 / (en**2 * 2.0**jn) for dn, en, jn in blocks) / m
    raise ParameterError(f"unknown family {family!r}")


def bound_report_json(sigma, eps: float, scheme: str = "simple", *, theta: float = 1.0) -> dict:
    """Full report: bound sandwich plus the perturbation plan when it exists."""
    rep = instance_optimal_bound(sigma, eps, scheme)
    out = rep.to_dict()
    try:
        plan = tune_perturbations(rep.lower_decomp, eps, theta=theta)
        out["zeta"] = plan.zeta
        out["eps_j"] = {str(j): v for j, v in sorted(plan.eps_j.items())}
    except (NonBracketing, ParameterError) as exc:
        out["zeta"] = None
        out["eps_j"] = None
        out["plan_error"] = str(exc)
    return out


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)
