"""Config-driven experiments: TV scans, distinguisher scans, martingale and
Doob diagnostics, the K-versus-kappa demo and the bound calculator.

Every command returns an :class:`ExperimentResult`; all randomness derives
from ``config.seed`` through per-trial streams ``default_rng([seed, tag, i])``
so outputs are reproducible and independent of the worker count.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from . import bounds
from .ensembles import (
    TruncationPolicy,
    goe_star_accepts_batch,
    multiblock_eps_cap,
    offdiag_eps_cap,
    sample_goe_star_batch,
    sample_truncated_batch,
)
from .errors import BudgetExceeded, ConfigError
from .likelihood import (
    GoeLikelihoodContext,
    MultiblockLikelihoodContext,
    OffdiagLikelihoodContext,
    doob_summary_from_norms,
    exact_likelihood_goe,
    k_matrix_offdiag,
    k_norms_standard_basis,
    kappa_bruteforce,
    martingale_step_expectation,
    martingale_trace,
)
from .measurement import (
    HaarBasisStrategy,
    KEigenbasisStrategy,
    StandardBasisStrategy,
    block_restrict_povm,
    haar_basis_povm,
    simulate_transcript,
)
from .states import DensityMatrix, load_state_dict

COMMANDS = ("tv-scan", "distinguisher-scan", "martingale", "doob", "kappa-demo", "bound-calc")
EXHAUSTIVE_BUDGET = 10**7
SCHEMA_VERSION = 1

# stream tags for default_rng([seed, tag, ...])
_BANK, _TRIAL, _H1, _PREFIX = 1, 2, 3, 4


@dataclass
class ExperimentConfig:
    command: str
    family: str = "mixedness"
    strategy: str = "standard"
    d: int = 8
    d1: int | None = None
    d2: int | None = None
    eps: float = 1 / 12
    n: int = 8
    n_values: list | None = None
    d_values: list | None = None
    trials: int = 1000
    samples: int = 2000
    seed: int = 0
    scheme: str = "simple"
    path: str = "auto"
    likelihood: str = "exact"
    a: float = 0.1
    b: float = 0.1
    t: int = 4
    prefixes: int = 100
    sigma: object = None
    max_n: int = 1 << 16
    force: bool = False
    workers: int = 1
    out: str | None = None
    format: str = "csv"

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        if "command" not in data:
            raise ConfigError("config needs a 'command'")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self) -> None:
        problems = []
        if self.command not in COMMANDS:
            problems.append(f"command must be one of {COMMANDS}, got {self.command!r}")
        if self.family not in ("mixedness", "paninski", "offdiag", "multiblock"):
            problems.append(f"unknown family {self.family!r}")
        if self.strategy not in ("standard", "haar", "k-eigen"):
            problems.append(f"unknown strategy {self.strategy!r}")
        if self.path not in ("auto", "exhaustive", "estimator"):
            problems.append(f"unknown path {self.path!r}")
        if self.likelihood not in ("exact", "bank"):
            problems.append(f"unknown likelihood {self.likelihood!r}")
        if self.format not in ("csv", "json"):
            problems.append(f"format must be csv or json, got {self.format!r}")
        if self.scheme not in bounds.SCHEMES:
            problems.append(f"scheme must be one of {bounds.SCHEMES}")
        for name in ("d", "trials", "samples", "prefixes", "workers", "max_n"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                problems.append(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 0:
            problems.append(f"n must be a nonnegative integer, got {self.n!r}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            problems.append(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not isinstance(self.eps, (int, float)) or not 0 <= self.eps < 1:
            problems.append(f"eps must lie in [0, 1), got {self.eps!r}")
        for name in ("n_values", "d_values"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, list) or not all(isinstance(x, int) and x >= 0 for x in v)):
                problems.append(f"{name} must be a list of nonnegative integers")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentResult:
    command: str
    columns: list
    rows: list
    meta: dict = field(default_factory=dict)

    @property
    def schema(self) -> str:
        return f"qcert.{self.command}/v{SCHEMA_VERSION}"

    def to_dict(self) -> dict:
        return {"schema": self.schema, "columns": self.columns, "rows": self.rows, "meta": self.meta}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema: {self.schema}\n")
        for k in sorted(self.meta):
            buf.write(f"# {k}: {json.dumps(_jsonable(self.meta[k]), sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_cell(row.get(c)) for c in self.columns])
        return buf.getvalue()

    def render(self, fmt: str) -> str:
        return self.to_json() if fmt == "json" else self.to_csv()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed, *tags])


def _parallel_map(fn, items, workers: int):
    """Ordered map; workers == 1 runs inline (identical results either way)."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


# ----------------------------------------------------------------------------
# exhaustive TV for diagonal instances measured in the standard basis


def compositions(n: int, k: int) -> np.ndarray:
    """All count vectors of length k summing to n, one per row."""
    if k == 1:
        return np.array([[n]])
    rows = []
    for bars in itertools.combinations(range(n + k - 1), k - 1):
        edges = (-1,) + bars + (n + k - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(k)])
    return np.array(rows, dtype=int)


def paninski_patterns(d: int) -> np.ndarray:
    """Every distinct sign vector P Z P^T arising from a permutation of the
    first 2 floor(d/2) coordinates (all equally likely)."""
    k = d // 2
    out = []
    for plus in itertools.combinations(range(2 * k), k):
        z = np.zeros(d)
        z[: 2 * k] = -1.0
        z[list(plus)] = 1.0
        out.append(z)
    return np.array(out)


def goe_bank_diagonals(d: int, size: int, rng, policy: TruncationPolicy | None = None) -> np.ndarray:
    M, _ = sample_truncated_batch(
        lambda s, g: sample_goe_star_batch(d, s, g), goe_star_accepts_batch, size,
        policy or TruncationPolicy.goe_star(), rng,
    )
    return np.diagonal(M, axis1=1, axis2=2).copy()


def goe_bank(d: int, size: int, rng, policy: TruncationPolicy | None = None) -> np.ndarray:
    M, _ = sample_truncated_batch(
        lambda s, g: sample_goe_star_batch(d, s, g), goe_star_accepts_batch, size,
        policy or TruncationPolicy.goe_star(), rng,
    )
    return M


@dataclass(frozen=True)
class ExhaustiveResult:
    tv: float
    success: float
    sequences: int


def exhaustive_tv(a: np.ndarray, eps: float, perturbations: np.ndarray, n: int) -> ExhaustiveResult:
    """Exact TV between p0 and the uniform mixture over ``perturbations``.

    Null outcome law is a/d; under perturbation m it is (a + eps m)/d. The
    sum over all d^n sequences is done over count types with multinomial
    weights. ``success`` is the optimal-test success probability with equal
    priors (ties at L* == 1 split evenly), computed separately from ``tv``.
    """
    d = a.size
    if float(d) ** n > EXHAUSTIVE_BUDGET:
        raise BudgetExceeded(f"exhaustive path needs d^n = {d}^{n} > {EXHAUSTIVE_BUDGET}", d**n, EXHAUSTIVE_BUDGET)
    C = compositions(n, d)
    log_mult = gammaln(n + 1) - gammaln(C + 1).sum(axis=1)
    logp0_i = np.log(a / d)
    p0 = np.exp(log_mult + C @ logp0_i)
    ratios = np.log1p(eps * perturbations / a)  # (S, d)
    lstar = np.exp(C @ ratios.T).mean(axis=1) if eps != 0 else np.ones(C.shape[0])
    p1 = p0 * lstar
    tv = math.fsum((p0 * np.clip(1 - lstar, 0, None)).tolist())
    below, above, tie = lstar < 1, lstar > 1, lstar == 1
    success = 0.5 * (
        math.fsum(p0[below].tolist()) + math.fsum(p1[above].tolist()) + 0.5 * math.fsum((p0 + p1)[tie].tolist())
    )
    return ExhaustiveResult(tv, success, d**n)


# ----------------------------------------------------------------------------
# per-transcript likelihood ratios for the estimator path


def paninski_likelihood(V: np.ndarray, a: np.ndarray, eps: float, patterns: np.ndarray) -> float:
    """Exact L* for the permuted-sign instance: mean over sign patterns of
    prod_i x_i^dagger(A + eps Z)x_i / x_i^dagger A x_i."""
    if V.shape[0] == 0:
        return 1.0
    W = np.abs(V) ** 2
    base = W @ a
    logs = np.log1p(eps * (W @ patterns.T) / base[:, None]).sum(axis=0)
    return float(np.exp(logs).mean())


def bank_likelihood(V: np.ndarray, a: np.ndarray, eps: float, bank: np.ndarray) -> float:
    """Mixture L* over a fixed bank of truncated GOE* draws."""
    if V.shape[0] == 0:
        return 1.0
    V = np.real(V)
    Q = np.einsum("ki,sij,kj->sk", V, bank, V)
    logs = np.log1p(eps * Q / (V**2 @ a)).sum(axis=1)
    return float(np.exp(logs).mean())


def _strategy(cfg: ExperimentConfig, d: int, trial: int):
    if cfg.strategy == "standard":
        return StandardBasisStrategy(d)
    if cfg.strategy == "haar":
        return HaarBasisStrategy(d, seed=int(np.random.SeedSequence([cfg.seed, trial]).generate_state(1)[0]))
    return KEigenbasisStrategy(d)


@dataclass(frozen=True)
class _TvJob:
    cfg: ExperimentConfig
    n: int
    trial: int
    bank: np.ndarray | None
    patterns: np.ndarray | None


def _tv_trial(job: _TvJob) -> float:
    cfg = job.cfg
    d = cfg.d
    a = np.ones(d)
    rng = _rng(cfg.seed, _TRIAL, job.n, job.trial)
    t = simulate_transcript(_strategy(cfg, d, job.trial), DensityMatrix(np.eye(d) / d), job.n, rng)
    V = t.vectors() if len(t) else np.zeros((0, d))
    if cfg.family == "paninski":
        return paninski_likelihood(V, a, cfg.eps, job.patterns)
    if cfg.likelihood == "bank":
        return bank_likelihood(V, a, cfg.eps, job.bank)
    return exact_likelihood_goe(V, a, cfg.eps) if len(t) else 1.0


def cmd_tv_scan(cfg: ExperimentConfig) -> ExperimentResult:
    """TV distance between n-copy transcript laws, by exhaustive enumeration or
    by the estimator E_{p0}[(L* - 1)_-] over sampled null transcripts."""
    if cfg.family not in ("mixedness", "paninski"):
        raise ConfigError("tv-scan supports the mixedness and paninski families")
    d, eps = cfg.d, cfg.eps
    n_values = cfg.n_values or [cfg.n]
    a = np.ones(d)
    can_exhaust = cfg.strategy == "standard" and all(float(d) ** n <= EXHAUSTIVE_BUDGET for n in n_values)
    path = cfg.path
    if path == "auto":
        path = "exhaustive" if can_exhaust else "estimator"
    if path == "exhaustive" and not can_exhaust:
        raise BudgetExceeded(
            f"exhaustive path needs the standard basis and d^n <= {EXHAUSTIVE_BUDGET}", None, EXHAUSTIVE_BUDGET
        )
    if path == "estimator" and cfg.family == "mixedness" and cfg.likelihood == "exact" and max(n_values) > 20:
        raise BudgetExceeded("estimator path needs n <= 20 for the exact likelihood", max(n_values), 20)
    patterns = paninski_patterns(d) if cfg.family == "paninski" else None
    bank = None
    if cfg.family == "mixedness" and (path == "exhaustive" or cfg.likelihood == "bank"):
        bank = goe_bank(d, cfg.samples, _rng(cfg.seed, _BANK))
    rows = []
    for n in n_values:
        if path == "exhaustive":
            pert = patterns if cfg.family == "paninski" else np.diagonal(bank, axis1=1, axis2=2)
            res = exhaustive_tv(a, eps, pert, n)
            if cfg.family == "paninski":
                se = 0.0
            else:
                # spread over 10 sub-banks as a rough Monte-Carlo error of the bank mixture
                parts = np.array_split(pert, 10)
                sub = [exhaustive_tv(a, eps, p, n).tv for p in parts if p.shape[0]]
                se = float(np.std(sub, ddof=1) / math.sqrt(len(sub))) if len(sub) > 1 else 0.0
            rows.append({"n": n, "tv": res.tv, "stderr": se, "success": res.success, "path": "exhaustive"})
        else:
            if cfg.strategy == "standard" and (cfg.family == "paninski" or cfg.likelihood == "bank"):
                # L* depends on the outcome counts only
                pert = patterns if cfg.family == "paninski" else np.diagonal(bank, axis1=1, axis2=2)
                counts = _rng(cfg.seed, _TRIAL, n).multinomial(n, a / d, size=cfg.trials)
                logr = np.log1p(eps * pert / a).T
                L = np.concatenate([np.exp(c @ logr).mean(axis=1) for c in np.array_split(counts, -(-cfg.trials // 4096))])
            else:
                jobs = [_TvJob(cfg, n, i, bank, patterns) for i in range(cfg.trials)]
                L = np.array(_parallel_map(_tv_trial, jobs, cfg.workers))
            neg = np.clip(1 - L, 0, None)
            tv = float(math.fsum(neg.tolist()) / L.size)
            se = float(neg.std(ddof=1) / math.sqrt(L.size)) if L.size > 1 else 0.0
            rows.append({"n": n, "tv": tv, "stderr": se, "success": None, "path": "estimator"})
    meta = {"family": cfg.family, "d": d, "eps": eps, "path": path, "seed": cfg.seed,
            "tv_convention": "half_l1", "likelihood": "mixture" if cfg.family == "paninski" else cfg.likelihood}
    return ExperimentResult("tv-scan", ["n", "tv", "stderr", "success", "path"], rows, meta)


# ----------------------------------------------------------------------------
# distinguisher scan


def lr_success_counts(d: int, eps: float, n: int, trials: int, bank_diag: np.ndarray, rng) -> tuple[float, float]:
    """Empirical success of 'declare H1 iff L* > 1' (ties count 1/2) under
    each hypothesis, for the mixedness instance with A = I in the standard
    basis. L* is the mixture over ``bank_diag``; H1 draws a fresh truncated
    perturbation per trial."""
    p0 = np.full(d, 1 / d)
    C0 = rng.multinomial(n, p0, size=trials)
    fresh = goe_bank_diagonals(d, trials, rng)
    P1 = (1 + eps * fresh) / d
    P1 /= P1.sum(axis=1, keepdims=True)
    C1 = rng.multinomial(n, P1)
    logr = np.log1p(eps * bank_diag).T  # (d, S)
    S = bank_diag.shape[0]
    pieces = max(1, trials * S // 4_000_000)

    def score(C):
        return np.concatenate([logsumexp(c @ logr, axis=1) for c in np.array_split(C, pieces)]) - math.log(S)

    def wins(vals, h1: bool):
        hit = vals > 0 if h1 else vals < 0
        return float(np.mean(hit + 0.5 * (vals == 0)))

    if n == 0:
        return 0.5, 0.5
    return wins(score(C0), False), wins(score(C1), True)


def find_n_star(d: int, eps: float, trials: int, bank_diag: np.ndarray, seed: int, max_n: int, target=2 / 3):
    """Smallest n (doubling grid then bisection) with success >= target on
    both hypotheses. Returns (n_star or None, success0, success1, evaluations)."""
    cache = {}

    def ok(n):
        if n not in cache:
            cache[n] = lr_success_counts(d, eps, n, trials, bank_diag, _rng(seed, _H1, d, n))
        s0, s1 = cache[n]
        return s0 >= target and s1 >= target

    lo, hi = 0, 1
    while not ok(hi):
        lo = hi
        hi *= 2
        if hi > max_n:
            return None, cache[lo][0], cache[lo][1], len(cache)
    while hi - lo > max(1, lo // 64):
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi, cache[hi][0], cache[hi][1], len(cache)


def cmd_distinguisher_scan(cfg: ExperimentConfig) -> ExperimentResult:
    d_values = cfg.d_values or [4, 6, 8, 12, 16]
    rows = []
    for d in d_values:
        bank = goe_bank_diagonals(d, cfg.samples, _rng(cfg.seed, _BANK, d))
        n_star, s0, s1, evals = find_n_star(d, cfg.eps, cfg.trials, bank, cfg.seed, cfg.max_n)
        rows.append({
            "d": d, "n_star": n_star, "censored": n_star is None,
            "success_h0": s0, "success_h1": s1, "evaluations": evals,
        })
    meta = {"eps": cfg.eps, "trials": cfg.trials, "bank": cfg.samples, "seed": cfg.seed,
        "test": "declare H1 iff L* > 1, ties 1/2"}
    meta.update(fit_loglog(rows))
    return ExperimentResult(
        "distinguisher-scan", ["d", "n_star", "censored", "success_h0", "success_h1", "evaluations"], rows, meta
    )


def fit_loglog(rows) -> dict:
    pts = [(r["d"], r["n_star"]) for r in rows if r["n_star"]]
    if len(pts) < 3:
        return {"slope": None, "slope_ci95": None, "fit_points": len(pts)}
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    fit = stats.linregress(x, y)
    tq = stats.t.ppf(0.975, len(pts) - 2)
    return {
        "slope": float(fit.slope),
        "slope_stderr": float(fit.stderr),
        "slope_ci95": [float(fit.slope - tq * fit.stderr), float(fit.slope + tq * fit.stderr)],
        "intercept": float(fit.intercept),
        "fit_points": len(pts),
    }


# ----------------------------------------------------------------------------
# martingale / Doob / kappa / bounds


def _martingale_context(family: str, d: int, d1: int | None = None, d2: int | None = None, force: bool = False):
    """Model, vector sampler and POVM sampler for one family at total dim d
    (the off-diagonal split is d1 + d2 when both are given)."""
    if family == "goe":
        ctx = GoeLikelihoodContext(np.ones(d), 1 / 12)

        def vectors(rng, t):
            return rng.standard_normal((t, d))

        def povm(rng):
            return haar_basis_povm(d, rng)

    elif family == "offdiag":
        if d1 is None or d2 is None:
            d2 = d // 2
            d1 = d - d2
        d = d1 + d2
        a = np.full(d1, 1 / d)
        b = np.full(d2, 1 / d)
        ctx = OffdiagLikelihoodContext(a, b, offdiag_eps_cap(d2, 1 / d, 1 / d, force=force))

        def vectors(rng, t):
            return rng.standard_normal((t, d))

        def povm(rng):
            return haar_basis_povm(d, rng)

    elif family == "multiblock":
        h = d // 2
        dims = [h, d - h]
        # A_nu = I: the unit entries sit in bucket j = log2(d)
        j = int(math.ceil(math.log2(d)))
        blocks = [(np.ones(k), multiblock_eps_cap(d, j, 2, k), j) for k in dims]
        ctx = MultiblockLikelihoodContext([(A, e) for A, e, _ in blocks])
        bounds_ = [range(0, h), range(h, d)]

        def vectors(rng, t):
            V = np.zeros((t, d))
            for k in range(t):
                nu = int(rng.integers(2))
                idx = list(bounds_[nu])
                V[k, idx] = rng.standard_normal(len(idx))
            return V

        def povm(rng):
            return block_restrict_povm(haar_basis_povm(d, rng), bounds_)[0]

    else:
        raise ConfigError(f"unknown martingale family {family!r}")
    return ctx, vectors, povm


def martingale_deviations(family: str, d: int, pairs: int, seed: int, max_t: int = 8, **kw) -> np.ndarray:
    ctx, vectors, povm = _martingale_context(family, d, **kw)
    out = np.empty(pairs)
    for k in range(pairs):
        rng = _rng(seed, _PREFIX, k)
        t = int(rng.integers(0, max_t + 1))
        V = vectors(rng, t)
        out[k] = abs(martingale_step_expectation(V, povm(rng), ctx) - 1)
    return out


def cmd_martingale(cfg: ExperimentConfig) -> ExperimentResult:
    rows = []
    for fam in ("goe", "offdiag", "multiblock"):
        dev = martingale_deviations(fam, cfg.d, cfg.prefixes, cfg.seed, d1=cfg.d1, d2=cfg.d2, force=cfg.force)
        rows.append({"family": fam, "pairs": cfg.prefixes, "max_deviation": float(dev.max()),
                     "mean_deviation": float(dev.mean())})
    return ExperimentResult("martingale", ["family", "pairs", "max_deviation", "mean_deviation"], rows,
                            {"d": cfg.d, "d1": cfg.d1, "d2": cfg.d2, "force": cfg.force, "seed": cfg.seed})


def _doob_trial(args):
    cfg, n, trial = args
    d = cfg.d
    rng = _rng(cfg.seed, _TRIAL, n, trial)
    t = simulate_transcript(_strategy(cfg, d, trial), DensityMatrix(np.eye(d) / d), n, rng)
    return martingale_trace(t, np.ones(d)).k_norms_sq


def doob_norms(cfg: ExperimentConfig, n: int) -> np.ndarray:
    """(trials, n) array of ||K_t||_F^2 along null trajectories (A = I)."""
    d = cfg.d
    if cfg.strategy == "standard":
        rng = _rng(cfg.seed, _TRIAL, n)
        outcomes = rng.integers(0, d, size=(cfg.trials, n))
        return k_norms_standard_basis(outcomes, np.ones(d))
    rows = _parallel_map(_doob_trial, [(cfg, n, i) for i in range(cfg.trials)], cfg.workers)
    return np.stack(rows)


def cmd_doob(cfg: ExperimentConfig) -> ExperimentResult:
    n_values = cfg.n_values or [cfg.n]
    rows = []
    for n in n_values:
        if n < 1:
            raise ConfigError("doob needs n >= 1")
        s = doob_summary_from_norms(doob_norms(cfg, n), cfg.d)
        rows.append({
            "n": n, "d": cfg.d, "trials": s.trials, "mean_sup": s.mean_sup, "stderr": s.stderr,
            "q50": s.quantiles["0.5"], "q90": s.quantiles["0.9"], "q99": s.quantiles["0.99"],
            "mean_final": s.mean_final, "bound": s.bound, "aux_bound": s.aux_bound,
            "within_bound": s.within_bound,
        })
    meta = {"d": cfg.d, "seed": cfg.seed, "strategy": cfg.strategy}
    if len(n_values) >= 2:
        fit = stats.linregress(np.log(n_values), np.log([r["mean_sup"] for r in rows]))
        meta["loglog_slope"] = float(fit.slope)
    cols = ["n", "d", "trials", "mean_sup", "stderr", "q50", "q90", "q99", "mean_final",
            "bound", "aux_bound", "within_bound"]
    return ExperimentResult("doob", cols, rows, meta)


def separating_transcript(a: float, b: float, t: int, d1: int = 2, d2: int = 2):
    """Alternating (z, w), (z, -w) with ||z||^2 = b/(a+b), ||w||^2 = a/(a+b):
    K vanishes for even t while kappa = t / (4ab)."""
    z = np.zeros(d1)
    w = np.zeros(d2)
    z[0] = math.sqrt(b / (a + b))
    w[0] = math.sqrt(a / (a + b))
    Z = np.tile(z, (t, 1))
    W = np.array([w if i % 2 == 0 else -w for i in range(t)])
    return Z, W, np.full(d1, a), np.full(d2, b)


def cmd_kappa_demo(cfg: ExperimentConfig) -> ExperimentResult:
    Z, W, A, B = separating_transcript(cfg.a, cfg.b, cfg.t)
    K = k_matrix_offdiag((Z, W), A, B)
    kappa = kappa_bruteforce((Z, W), A, B)
    row = {"a": cfg.a, "b": cfg.b, "t": cfg.t, "k_frobenius": float(np.linalg.norm(K)),
           "kappa": kappa, "expected_kappa": cfg.t / (4 * cfg.a * cfg.b)}
    return ExperimentResult("kappa-demo", list(row), [row], {})


def _load_sigma(sigma):
    if sigma is None:
        raise ConfigError("bound-calc needs sigma (a list of eigenvalues or a JSON state file)")
    if isinstance(sigma, str):
        try:
            with open(sigma) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read sigma file: {exc}") from exc
        if isinstance(data, list):
            return np.asarray(data, dtype=float)
        return load_state_dict(data)
    return np.asarray(sigma, dtype=float)


def cmd_bound_calc(cfg: ExperimentConfig) -> ExperimentResult:
    report = bounds.bound_report_json(_load_sigma(cfg.sigma), cfg.eps, cfg.scheme)
    cols = ["scheme", "eps", "d_eff", "removed_mass", "fidelity_term", "lower", "upper", "zeta", "plan_error"]
    return ExperimentResult("bound-calc", cols, [report], {})


DISPATCH = {
    "tv-scan": cmd_tv_scan,
    "distinguisher-scan": cmd_distinguisher_scan,
    "martingale": cmd_martingale,
    "doob": cmd_doob,
    "kappa-demo": cmd_kappa_demo,
    "bound-calc": cmd_bound_calc,
}


def run(cfg: ExperimentConfig) -> ExperimentResult:
    return DISPATCH[cfg.command](cfg)
