"""Discretized Gelfand triple and the bundled model families.

Everything lives on a finite grid: states are float vectors of length ``n``
holding coordinates of an element of the discrete pivot space H, drifts are
stored through their H-representative, and the duality pairing against the
energy space V reduces to a Gram form.  Four model families are bundled:

* ``linear_sde``    dX = (-a X + kappa mean(mu)) dt + jumps, state-independent jump size
* ``mv_sde``        same drift, jump size modulated by the state and the law
* ``p_laplace``     discrete p-Laplacian plus a Lipschitz mean-field pull
* ``porous_media``  nonlinear diffusion of u|u|^(r-2) in the dual-space geometry

All operations are pure; a built triple is immutable and safe to share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MODEL_IDS = ("linear_sde", "mv_sde", "p_laplace", "porous_media")
PDE_MODELS = ("p_laplace", "porous_media")

# finite-difference step and pass threshold for the continuity smoke test
CONTINUITY_STEP = 1e-6
CONTINUITY_TOL = 1e-3


@dataclass(frozen=True)
class MarkSpace:
    """Finite jump-mark support: points z_j with weights theta_j > 0."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_1d(np.asarray(self.points, dtype=float))
        wts = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if pts.shape != wts.shape or pts.ndim != 1:
            raise ValueError("mark points and weights must be 1-d and of equal length")
        if pts.size and (not np.all(np.isfinite(pts)) or not np.all(np.isfinite(wts))):
            raise ValueError("mark space entries must be finite")
        if pts.size and np.any(wts <= 0):
            raise ValueError("mark weights must be strictly positive")
        pts.setflags(write=False)
        wts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    @property
    def size(self) -> int:
        return int(self.points.size)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class ModelConfig:
    """Static description of one model instance.

    ``h`` is only meaningful for the PDE families, where the grid covers the
    unit interval with Dirichlet ends, so h * (n + 1) = 1 must hold.
    ``exponent`` is p for the p-Laplace family and r for porous media.
    """

    model_id: str
    n: int
    T: float
    mark_space: MarkSpace
    h: Optional[float] = None
    exponent: float = 2.0
    kappa: float = 0.0
    linear_rate: float = 1.0
    sigma: float = 0.5
    envelope_l1: Optional[float] = None
    envelope_l2: Optional[float] = None
    initial_state: object = 1.0

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise ValueError(f"unknown model_id {self.model_id!r}")
        if self.n < 1:
            raise ValueError("spatial_dim n must be >= 1")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if self.model_id in PDE_MODELS:
            if self.h is None or not self.h > 0:
                raise ValueError("PDE models need a positive mesh h")
            if abs(self.h * (self.n + 1) - 1.0) > 1e-9:
                raise ValueError("PDE grid must satisfy h * (n + 1) = 1")
            if self.exponent < 2:
                raise ValueError("exponent must be >= 2 for PDE models")
        x0 = np.broadcast_to(np.asarray(self.initial_state, dtype=float), (self.n,)).copy()
        if not np.all(np.isfinite(x0)):
            raise ValueError("initial state must be finite")
        x0.setflags(write=False)
        object.__setattr__(self, "initial_state", x0)
        if self.envelope_l1 is not None and self.envelope_l1 < 0:
            raise ValueError("envelope_l1 must be nonnegative")
        if self.envelope_l2 is not None and self.envelope_l2 < 0:
            raise ValueError("envelope_l2 must be nonnegative")

    @property
    def is_pde(self) -> bool:
        return self.model_id in PDE_MODELS

    def default_envelope(self) -> float:
        zmax = float(np.max(np.abs(self.mark_space.points))) if self.mark_space.size else 0.0
        return abs(self.sigma) * zmax


def _dirichlet_matrix(n: int, h: float) -> np.ndarray:
    """Stiffness matrix tridiag(-1, 2, -1) / h^2 (the negative of the discrete Laplacian)."""
    L = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    return L / h**2


@dataclass(frozen=True)
class DiscretizedTriple:
    """Fully assembled model: geometry, operators and structural constants.

    ``h_gram`` defines the H inner product, ``alpha``/``delta``/``c_mono``
    are the coercivity exponent, coercivity constant and monotonicity
    constant used by the hypothesis checks and the fixed-point window.
    """

    config: ModelConfig
    h_gram: np.ndarray
    v_norm_spec: str
    alpha: float
    delta: float
    c_mono: float
    # internal operators; identity-like for the SDE families
    stiffness: np.ndarray = field(repr=False, default=None)
    stiffness_inv: np.ndarray = field(repr=False, default=None)
    jump_dir: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        G = np.asarray(self.h_gram, dtype=float)
        if G.shape != (self.config.n, self.config.n):
            raise ValueError("h_gram has wrong shape")
        if not np.allclose(G, G.T, atol=1e-12):
            raise ValueError("h_gram must be symmetric")
        if np.any(np.linalg.eigvalsh(G) <= 0):
            raise ValueError("h_gram must be positive-definite")
        for name in ("h_gram", "stiffness", "stiffness_inv", "jump_dir"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def envelope_l1(self) -> float:
        e = self.config.envelope_l1
        return self.config.default_envelope() if e is None else float(e)

    @property
    def envelope_l2(self) -> float:
        e = self.config.envelope_l2
        return self.config.default_envelope() if e is None else float(e)

    @property
    def state_dependent_jumps(self) -> bool:
        return self.config.model_id != "linear_sde"


def _default_constants(config: ModelConfig) -> tuple[float, float, float]:
    """Structural constants (alpha, delta, c) valid for the model's coefficients.

    The formulas give sufficient (not tight) constants so the sampled
    hypothesis margins stay nonnegative; see the derivations inline.
    """
    k = abs(config.kappa)
    if config.model_id in ("linear_sde", "mv_sde"):
        a = config.linear_rate
        delta = 0.5
        # monotonicity: 2<b(x,mu)-b(y,nu),x-y> <= (k - 2a)|x-y|^2 + k*W2^2
        # coercivity needs c - delta >= k - 2a; growth needs c >= 2a^2 + 2k^2
        c = max(k, k - 2.0 * a + delta, 2.0 * a * a + 2.0 * k * k, 0.1)
        return 2.0, delta, c
    if config.model_id == "p_laplace":
        delta = 1.0
        # drift part is dissipative (-2||u||_V^p); the mean-field pull K
        # contributes at most (k + 2 max(0,-kappa)) |u|^2 + k m2, and the
        # growth bound follows from ||A||_V* <= ||u||_V^(p-1) + k(sqrt(m2)+||u||_V)
        c_k = k + 2.0 * max(0.0, -config.kappa)
        c_growth = 9.0 * k * k + 12.0
        return float(config.exponent), delta, max(c_k, c_growth)
    # porous media: 2<A(u),u> = -2||u||_V^r exactly and ||A||_V*^(r/(r-1)) = ||u||_V^r
    return float(config.exponent), 1.0, 1.0


def make_triple(config: ModelConfig, delta: Optional[float] = None,
                c_mono: Optional[float] = None) -> DiscretizedTriple:
    """Assemble the discrete triple for ``config``.

    ``delta``/``c_mono`` override the derived structural constants; an
    override that is too strong for the actual coefficients is the intended
    way to build a negative control for the hypothesis checker.
    """
    if config.mark_space.size == 0:
        raise ValueError("mark space must be nonempty")
    n = config.n
    alpha, d0, c0 = _default_constants(config)
    dlt = d0 if delta is None else float(delta)
    if dlt <= 0:
        raise ValueError("delta must be positive")
    cmn = c0 if c_mono is None else float(c_mono)

    if config.model_id == "porous_media":
        L = _dirichlet_matrix(n, config.h)
        Linv = np.linalg.inv(L)
        Linv = 0.5 * (Linv + Linv.T)
        gram = config.h * Linv
        vspec = f"discrete L^{config.exponent:g}(h)"
    elif config.model_id == "p_laplace":
        L = _dirichlet_matrix(n, config.h)
        Linv = np.linalg.inv(L)
        gram = config.h * np.eye(n)
        vspec = f"discrete W0^(1,{config.exponent:g})(h)"
    else:
        L = np.eye(n)
        Linv = np.eye(n)
        gram = np.eye(n)
        vspec = "euclidean"

    ones = np.ones(n)
    u_dir = ones / math.sqrt(float(ones @ gram @ ones))

    return DiscretizedTriple(
        config=config, h_gram=gram, v_norm_spec=vspec, alpha=alpha,
        delta=dlt, c_mono=cmn, stiffness=L, stiffness_inv=Linv, jump_dir=u_dir,
    )


# ---------------------------------------------------------------------------
# batched core operations; a single state is a batch of one


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def h_norm_batch(triple: DiscretizedTriple, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.sqrt(np.maximum(np.einsum("bi,ij,bj->b", X, triple.h_gram, X), 0.0))


def v_norm_batch(triple: DiscretizedTriple, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cfg = triple.config
    if cfg.model_id == "porous_media":
        return (cfg.h * np.sum(np.abs(X) ** cfg.exponent, axis=1)) ** (1.0 / cfg.exponent)
    if cfg.model_id == "p_laplace":
        g = _edge_gradient(X, cfg.h)
        return (cfg.h * np.sum(np.abs(g) ** cfg.exponent, axis=1)) ** (1.0 / cfg.exponent)
    return np.sqrt(np.sum(X * X, axis=1))


def _edge_gradient(X: np.ndarray, h: float) -> np.ndarray:
    """Forward differences on the n+1 edges of the Dirichlet grid."""
    B, n = X.shape
    padded = np.zeros((B, n + 2))
    padded[:, 1:-1] = X
    return np.diff(padded, axis=1) / h


def _edge_divergence(W: np.ndarray, h: float) -> np.ndarray:
    """Adjoint of the edge gradient: maps n+1 edge values to n node values."""
    return np.diff(W, axis=1) / h


def drift_batch(triple: DiscretizedTriple, t: float, X: np.ndarray,
                mean: np.ndarray, m2: np.ndarray) -> np.ndarray:
    """Model drift evaluated rowwise; ``mean``/``m2`` are the law statistics."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cfg = triple.config
    mean = np.asarray(mean, dtype=float)
    if cfg.model_id in ("linear_sde", "mv_sde"):
        return -cfg.linear_rate * X + cfg.kappa * mean
    if cfg.model_id == "p_laplace":
        g = _edge_gradient(X, cfg.h)
        flux = np.abs(g) ** (cfg.exponent - 2.0) * g
        return _edge_divergence(flux, cfg.h) + cfg.kappa * (mean - X)
    # porous media: V*-representative of the dual-space diffusion of psi(u)
    psi = np.abs(X) ** (cfg.exponent - 2.0) * X
    return -psi @ triple.stiffness.T


def jump_profile_batch(triple: DiscretizedTriple, X: np.ndarray,
                       sqrt_m2: np.ndarray) -> np.ndarray:
    """State/law modulation of the jump coefficient (1 for linear_sde).

    The tanh clamps keep the profile below 1 + |x|_H + sqrt(m2), which is
    what makes the constant envelopes valid bounds.
    """
    if not triple.state_dependent_jumps:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.ones(X.shape[0])
    return 1.0 + np.tanh(h_norm_batch(triple, X)) + np.tanh(np.asarray(sqrt_m2, dtype=float))


def vstar_norm_batch(triple: DiscretizedTriple, A: np.ndarray) -> np.ndarray:
    """Dual norm sup{ pairing(a, v) : |v|_V = 1 }, exact per model family."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    cfg = triple.config
    if cfg.model_id in ("linear_sde", "mv_sde"):
        return np.sqrt(np.sum(A * A, axis=1))
    if cfg.model_id == "porous_media":
        # pairing(a, v) = h (L^-1 a)^T v, so the dual of L^r(h) is L^r'(h)
        rp = cfg.exponent / (cfg.exponent - 1.0)
        W = A @ triple.stiffness_inv.T
        return (cfg.h * np.sum(np.abs(W) ** rp, axis=1)) ** (1.0 / rp)
    return _plaplace_dual_norm(A, cfg.h, cfg.exponent)


def _plaplace_dual_norm(A: np.ndarray, h: float, p: float) -> np.ndarray:
    """Exact W0^(1,p) dual norm via the first-order conditions.

    The maximizer v of h a^T v on the unit V-ball has edge flux
    |v'|^(p-2) v' equal to c - (h cumsum a) for the unique c that makes the
    reconstructed v vanish at the right boundary; c is found by bisection.
    """
    B, n = A.shape
    acum = np.zeros((B, n + 1))
    acum[:, 1:] = h * np.cumsum(A, axis=1)
    lo = acum.min(axis=1).copy()
    hi = acum.max(axis=1).copy()
    inv = 1.0 / (p - 1.0)

    def gsum(c):
        W = c[:, None] - acum
        return np.sum(np.sign(W) * np.abs(W) ** inv, axis=1)

    for _ in range(100):
        mid = 0.5 * (lo + hi)
        s = gsum(mid)
        take_hi = s > 0.0
        hi = np.where(take_hi, mid, hi)
        lo = np.where(take_hi, lo, mid)
    c = 0.5 * (lo + hi)
    W = c[:, None] - acum
    g = np.sign(W) * np.abs(W) ** inv
    v = h * np.cumsum(g, axis=1)[:, :n]
    vnorm = (h * np.sum(np.abs(g) ** p, axis=1)) ** (1.0 / p)
    raw = h * np.sum(A * v, axis=1)
    out = np.zeros(B)
    ok = vnorm > 0
    out[ok] = raw[ok] / vnorm[ok]
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# public single-state operations


def drift_A(triple: DiscretizedTriple, t: float, x: np.ndarray, mu) -> np.ndarray:
    """Drift A(t, x, mu) as a vector in the shared coordinate representation."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("state must be finite")
    if len(mu.atoms) == 0:
        raise ValueError("empty measure")
    mean = mu.mean(triple)
    return drift_batch(triple, t, x, mean, np.array([mu.second_moment(triple)]))[0]


def jump_f(triple: DiscretizedTriple, t: float, x: np.ndarray, mu, z: float) -> np.ndarray:
    """Jump coefficient f(t, x, mu, z); ``z`` must be a configured mark value."""
    pts = triple.config.mark_space.points
    if not np.any(np.isclose(pts, z, rtol=0.0, atol=1e-12)):
        raise ValueError(f"mark {z!r} is not in the mark space")
    x = np.asarray(x, dtype=float)
    prof = jump_profile_batch(triple, x, np.sqrt(mu.second_moment(triple)))[0]
    return triple.config.sigma * float(z) * prof * triple.jump_dir


def pairing(triple: DiscretizedTriple, a_star: np.ndarray, v: np.ndarray) -> float:
    """Duality pairing; coincides with the H inner product on discrete H."""
    a_star = np.asarray(a_star, dtype=float)
    v = np.asarray(v, dtype=float)
    if a_star.shape != (triple.n,) or v.shape != (triple.n,):
        raise ValueError("pairing arguments must be state vectors of matching length")
    return float(a_star @ triple.h_gram @ v)


def pairing_batch(triple: DiscretizedTriple, A: np.ndarray, V: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    return np.einsum("bi,ij,bj->b", A, triple.h_gram, V)


def norm(triple: DiscretizedTriple, space: str, x: np.ndarray) -> float:
    """Norm of ``x`` in H, V or V*."""
    x = np.asarray(x, dtype=float)
    if space == "H":
        return float(h_norm_batch(triple, x)[0])
    if space == "V":
        return float(v_norm_batch(triple, x)[0])
    if space in ("V_star", "V*"):
        return float(vstar_norm_batch(triple, x)[0])
    raise ValueError(f"unknown space {space!r}")


# ---------------------------------------------------------------------------
# sampled hypothesis verification


@dataclass
class HypothesisRecord:
    name: str
    samples_tested: int = 0
    violations: int = 0
    worst_margin: float = math.inf
    witness: Optional[dict] = None

    def update(self, margin: float, witness: dict):
        self.samples_tested += 1
        if margin < self.worst_margin:
            self.worst_margin = margin
            if margin < 0.0:
                self.witness = witness
        if margin < 0.0:
            self.violations += 1


@dataclass
class HypothesisReport:
    records: dict

    @property
    def total_violations(self) -> int:
        return sum(r.violations for r in self.records.values())

    def __str__(self):
        lines = []
        for name, r in sorted(self.records.items()):
            lines.append(f"{name}: {r.violations}/{r.samples_tested} violations, "
                         f"worst margin {r.worst_margin:.3e}")
        return "\n".join(lines)


def _random_measure(triple, rng, n_atoms=3, scale=1.0):
    from .measure import EmpiricalMeasure
    atoms = scale * rng.standard_normal((n_atoms, triple.n))
    w = rng.exponential(size=n_atoms)
    return EmpiricalMeasure(atoms=atoms, weights=w / w.sum())


def check_hypotheses(triple: DiscretizedTriple, sample_budget: int, rng_seed: int) -> HypothesisReport:
    """Sample-based audit of the structural conditions on A and f.

    Coercivity, monotonicity, growth and the two jump-coefficient bounds are
    checked with the triple's (alpha, delta, c_mono) and envelopes; drift
    continuity is a finite-difference smoke test.  Violations are reported
    with a witness, never raised.
    """
    from .measure import wasserstein2
    from .prm import derive_rng

    if sample_budget < 1:
        raise ValueError("sample_budget must be >= 1")
    rng = derive_rng(rng_seed, 0xC0)
    cfg = triple.config
    names = ("continuity", "coercivity", "monotonicity",
             "growth", "jump_lipschitz", "jump_growth")
    rec = {name: HypothesisRecord(name) for name in names}
    c, dlt, alpha = triple.c_mono, triple.delta, triple.alpha
    l1, l2 = triple.envelope_l1, triple.envelope_l2
    marks = cfg.mark_space.points

    for _ in range(sample_budget):
        t = rng.uniform(0.0, cfg.T)
        scale = rng.choice((0.3, 1.0, 3.0))
        x = scale * rng.standard_normal(triple.n)
        y = scale * rng.standard_normal(triple.n)
        mu = _random_measure(triple, rng, scale=scale)
        nu = _random_measure(triple, rng, scale=scale)
        z = marks[rng.integers(marks.size)]
        mmu, m2mu = mu.mean(triple), mu.second_moment(triple)
        mnu, m2nu = nu.mean(triple), nu.second_moment(triple)
        w2 = wasserstein2(triple, mu, nu)
        witness = {"t": t, "x": x, "y": y, "mu": mu, "nu": nu, "z": float(z)}

        hx = float(h_norm_batch(triple, x)[0])
        hy = float(h_norm_batch(triple, y)[0])
        vx = float(v_norm_batch(triple, x)[0])
        Ax = drift_batch(triple, t, x, mmu, m2mu)[0]
        Ay = drift_batch(triple, t, y, mnu, m2nu)[0]

        m = c * (hx**2 + m2mu + 1.0) - dlt * vx**alpha - 2.0 * pairing(triple, Ax, x)
        rec["coercivity"].update(m, witness)

        diff = x - y
        m = (c * float(h_norm_batch(triple, diff)[0]) ** 2 + c * w2**2
             - 2.0 * pairing(triple, Ax - Ay, diff))
        rec["monotonicity"].update(m, witness)

        vsn = float(vstar_norm_batch(triple, Ax)[0])
        m = c * (vx**alpha + m2mu + 1.0) - vsn ** (alpha / (alpha - 1.0))
        rec["growth"].update(m, witness)

        fx = jump_f(triple, t, x, mu, z)
        fy = jump_f(triple, t, y, nu, z)
        df = float(h_norm_batch(triple, fx - fy)[0])
        m = l1 * (float(h_norm_batch(triple, diff)[0]) + w2) - df
        rec["jump_lipschitz"].update(m, witness)

        m = l2 * (hx + math.sqrt(m2mu) + 1.0) - float(h_norm_batch(triple, fx)[0])
        rec["jump_growth"].update(m, witness)

        # continuity along a random direction, relative to the pairing scale
        d = rng.standard_normal(triple.n)
        d /= max(np.linalg.norm(d), 1e-300)
        base = pairing(triple, Ax, y)
        Axp = drift_batch(triple, t, x + CONTINUITY_STEP * d, mmu, m2mu)[0]
        jump = abs(pairing(triple, Axp, y) - base) / (1.0 + abs(base))
        rec["continuity"].update(CONTINUITY_TOL - jump, witness)

    return HypothesisReport(records=rec)
