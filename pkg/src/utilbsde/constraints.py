"""Closed constraint sets, their images under the volatility matrix, and projections.

Strategies are row vectors ``c`` in R^d; the admissible values in noise
coordinates are the image set ``{c @ sigma : c in C}`` in R^m.  Every
projection is solved in strategy space against the quadratic form with Gram
matrix ``sigma @ sigma.T`` and reported both as the image point and the
strategy-space point that produces it (the "pullback").
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceFailure, InvalidArgument

TAU_PROJ = 1e-10
MAX_ITER = 10_000
# Above this many active-set patterns the exact enumeration is replaced by
# projected gradient descent.
MAX_PATTERNS = 6561
_TIE_RTOL = 1e-12


def _as_matrix(x, ncols, name="a"):
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1 and (arr.ndim == 0 or arr.shape[0] == ncols)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if single else arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != ncols:
        raise InvalidArgument(f"{name} must have trailing dimension {ncols}, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} contains non-finite values")
    return arr, single


class ConstraintSpec:
    """Base class of the closed sets a strategy may take values in."""

    kind = "abstract"
    dim: int

    @property
    def is_bounded(self) -> bool:
        raise NotImplementedError

    @property
    def is_convex_cone(self) -> bool:
        return False

    def truncate(self, radius: float) -> "ConstraintSpec":
        raise NotImplementedError

    def sample(self, rng, size, scale=3.0):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class FullSpace(ConstraintSpec):
    dim: int
    kind = "full"

    def __post_init__(self):
        if int(self.dim) < 1:
            raise InvalidArgument("dim must be positive")

    @property
    def is_bounded(self):
        return False

    @property
    def is_convex_cone(self):
        return True

    def truncate(self, radius):
        return Box(-radius * np.ones(self.dim), radius * np.ones(self.dim))

    def sample(self, rng, size, scale=3.0):
        return scale * rng.standard_normal((size, self.dim))

    def to_dict(self):
        return {"kind": "full", "dim": int(self.dim)}


@dataclass(frozen=True, eq=False)
class FiniteSet(ConstraintSpec):
    """Finitely many points; stored in lexicographic order.

    Ties between equidistant points resolve to the lexicographically smallest.
    """

    points: np.ndarray
    kind = "finite"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InvalidArgument("finite set needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("finite set points must be finite")
        order = np.lexsort(pts.T[::-1])
        object.__setattr__(self, "points", pts[order])

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def is_bounded(self):
        return True

    @property
    def is_convex_cone(self):
        return bool(np.all(self.points == 0.0))

    def truncate(self, radius):
        keep = np.linalg.norm(self.points, axis=1) <= radius
        if not keep.any():
            raise InvalidArgument(f"truncation to radius {radius} leaves the set empty")
        return FiniteSet(self.points[keep])

    def sample(self, rng, size, scale=3.0):
        return self.points[rng.integers(0, len(self.points), size)]

    def to_dict(self):
        return {"kind": "finite", "points": self.points.tolist()}


@dataclass(frozen=True, eq=False)
class Box(ConstraintSpec):
    lower: np.ndarray
    upper: np.ndarray
    kind = "box"

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidArgument("box bounds must be vectors of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise InvalidArgument("box bounds must not be NaN")
        if np.any(lo > hi):
            raise InvalidArgument("box requires lower <= upper componentwise")
        if np.any(lo == np.inf) or np.any(hi == -np.inf):
            raise InvalidArgument("box would be empty")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.shape[0]

    @property
    def is_bounded(self):
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    @property
    def is_convex_cone(self):
        return bool(np.all(np.isin(self.lower, [0.0, -np.inf])) and np.all(np.isin(self.upper, [0.0, np.inf])))

    def truncate(self, radius):
        lo = np.maximum(self.lower, -radius)
        hi = np.minimum(self.upper, radius)
        if np.any(lo > hi):
            raise InvalidArgument(f"truncation to radius {radius} leaves the set empty")
        return Box(lo, hi)

    def sample(self, rng, size, scale=3.0):
        lo = np.where(np.isfinite(self.lower), self.lower, np.minimum(self.upper, 0.0) - scale)
        hi = np.where(np.isfinite(self.upper), self.upper, np.maximum(self.lower, 0.0) + scale)
        return lo + (hi - lo) * rng.random((size, self.dim))

    def to_dict(self):
        enc = lambda v: [x if np.isfinite(x) else ("inf" if x > 0 else "-inf") for x in v.tolist()]
        return {"kind": "box", "lower": enc(self.lower), "upper": enc(self.upper)}


@dataclass(frozen=True, eq=False)
class NonnegativeOrthantCone(ConstraintSpec):
    dim: int
    kind = "orthant"

    def __post_init__(self):
        if int(self.dim) < 1:
            raise InvalidArgument("dim must be positive")

    @property
    def is_bounded(self):
        return False

    @property
    def is_convex_cone(self):
        return True

    def truncate(self, radius):
        return Box(np.zeros(self.dim), radius * np.ones(self.dim))

    def sample(self, rng, size, scale=3.0):
        return scale * np.abs(rng.standard_normal((size, self.dim)))

    def to_dict(self):
        return {"kind": "orthant", "dim": int(self.dim)}


@dataclass(frozen=True, eq=False)
class GeneratedCone(ConstraintSpec):
    """Nonnegative combinations of the generator rows.

    ``coef_bound`` caps every coefficient; it is set only by :meth:`truncate`.
    """

    generators: np.ndarray
    coef_bound: float = np.inf
    kind = "cone"

    def __post_init__(self):
        g = np.asarray(self.generators, dtype=float)
        if g.ndim == 1:
            g = g.reshape(1, -1)
        if g.ndim != 2 or g.shape[0] == 0:
            raise InvalidArgument("cone needs at least one generator")
        if not np.all(np.isfinite(g)):
            raise InvalidArgument("generators must be finite")
        if np.any(np.linalg.norm(g, axis=1) == 0.0):
            raise InvalidArgument("cone generators must be nonzero")
        object.__setattr__(self, "generators", g)

    @property
    def dim(self):
        return self.generators.shape[1]

    @property
    def is_bounded(self):
        return bool(np.isfinite(self.coef_bound))

    @property
    def is_convex_cone(self):
        return not np.isfinite(self.coef_bound)

    def truncate(self, radius):
        return GeneratedCone(self.generators, coef_bound=min(self.coef_bound, radius))

    def sample(self, rng, size, scale=3.0):
        k = self.generators.shape[0]
        lam = rng.exponential(scale / k, (size, k))
        if np.isfinite(self.coef_bound):
            lam = np.minimum(lam, self.coef_bound)
        return lam @ self.generators

    def to_dict(self):
        return {"kind": "cone", "generators": self.generators.tolist()}


@dataclass(frozen=True, eq=False)
class CustomGrid(ConstraintSpec):
    """User-enumerated point cloud; ties resolve to the smallest enumeration index."""

    points: np.ndarray
    resolution: float = 0.0
    kind = "grid"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InvalidArgument("grid needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("grid points must be finite")
        object.__setattr__(self, "points", pts)

    @classmethod
    def lattice(cls, lower, upper, resolution):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        axes = [np.arange(lo, hi + 0.5 * resolution, resolution) for lo, hi in zip(lower, upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return cls(np.stack([m.ravel() for m in mesh], axis=1), resolution)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def is_bounded(self):
        return True

    def truncate(self, radius):
        keep = np.linalg.norm(self.points, axis=1) <= radius
        if not keep.any():
            raise InvalidArgument(f"truncation to radius {radius} leaves the set empty")
        return CustomGrid(self.points[keep], self.resolution)

    def sample(self, rng, size, scale=3.0):
        return self.points[rng.integers(0, len(self.points), size)]

    def to_dict(self):
        return {"kind": "grid", "points": self.points.tolist(), "resolution": float(self.resolution)}


def constraint_from_dict(cfg: dict) -> ConstraintSpec:
    """Build a constraint from its scenario-file block."""
    dec = lambda v: np.array([float(x) for x in v])
    kind = cfg.get("kind")
    if kind == "full":
        return FullSpace(int(cfg["dim"]))
    if kind == "finite":
        return FiniteSet(np.asarray(cfg["points"], dtype=float))
    if kind == "box":
        return Box(dec(cfg["lower"]), dec(cfg["upper"]))
    if kind == "orthant":
        return NonnegativeOrthantCone(int(cfg["dim"]))
    if kind == "cone":
        return GeneratedCone(np.asarray(cfg["generators"], dtype=float))
    if kind == "grid":
        if "points" in cfg:
            return CustomGrid(np.asarray(cfg["points"], dtype=float), float(cfg.get("resolution", 0.0)))
        return CustomGrid.lattice(cfg["lower"], cfg["upper"], float(cfg["resolution"]))
    raise InvalidArgument(f"unknown constraint kind {kind!r}")


@dataclass(frozen=True, eq=False)
class InducedSet:
    """The image ``base @ sigma`` of a strategy set, a closed subset of R^m."""

    base: ConstraintSpec
    sigma: np.ndarray
    tau_proj: float = TAU_PROJ
    max_iter: int = MAX_ITER
    gram: np.ndarray = field(init=False)
    k1_bound: float = field(init=False)

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim == 0:
            sigma = sigma.reshape(1, 1)
        elif sigma.ndim == 1:
            sigma = sigma.reshape(1, -1)
        if sigma.shape[0] != self.base.dim:
            raise InvalidArgument(f"sigma has {sigma.shape[0]} rows but the set lives in R^{self.base.dim}")
        if sigma.shape[0] > sigma.shape[1]:
            raise InvalidArgument("sigma must be d x m with d <= m")
        if not np.all(np.isfinite(sigma)):
            raise InvalidArgument("sigma must be finite")
        gram = sigma @ sigma.T
        if np.linalg.matrix_rank(gram) < sigma.shape[0]:
            raise InvalidArgument("sigma must have full row rank")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "_diag", bool(np.all(gram == np.diag(np.diag(gram)))))
        object.__setattr__(self, "k1_bound", float(distance(np.zeros(self.m), self)))

    @property
    def d(self):
        return self.sigma.shape[0]

    @property
    def m(self):
        return self.sigma.shape[1]

    def truncated(self, radius) -> "InducedSet":
        return InducedSet(self.base.truncate(radius), self.sigma, self.tau_proj, self.max_iter)

    def sample(self, rng, size, scale=3.0):
        return self.base.sample(rng, size, scale) @ self.sigma


# -- projection kernels -------------------------------------------------------


def _nearest_point(A, points, images):
    """Index-ordered nearest neighbour; the first minimiser wins ties."""
    n, k = A.shape[0], images.shape[0]
    best = np.empty(n, dtype=np.int64)
    chunk = max(1, 4_000_000 // max(1, k * images.shape[1]))
    for start in range(0, n, chunk):
        block = A[start:start + chunk]
        d2 = np.sum((block[:, None, :] - images[None, :, :]) ** 2, axis=2)
        dmin = d2.min(axis=1, keepdims=True)
        within = d2 <= dmin + _TIE_RTOL * (1.0 + dmin)
        best[start:start + chunk] = np.argmax(within, axis=1)
    return points[best], images[best]


def _bound_states(lo, hi):
    states = []
    for l, h in zip(lo, hi):
        s = ["free"]
        if np.isfinite(l):
            s.append("lo")
        if np.isfinite(h) and h != l:
            s.append("hi")
        if np.isfinite(l) and l == h:
            s = ["lo"]
        states.append(s)
    return states


def _box_lsq(M, A, lo, hi, tau, max_iter):
    """Minimise |x @ M - a|^2 over lo <= x <= hi, row-wise for every a in A.

    Exact active-set enumeration when the pattern count is small, otherwise
    projected gradient descent with step 1/lambda_max(M M^T).
    """
    n, k = A.shape[0], M.shape[0]
    states = _bound_states(lo, hi)
    n_patterns = int(np.prod([len(s) for s in states]))
    if n_patterns > MAX_PATTERNS:
        return _box_pgd(M, A, lo, hi, tau, max_iter)

    best_x = np.zeros((n, k))
    best_obj = np.full(n, np.inf)
    for pattern in itertools.product(*states):
        free = np.array([p == "free" for p in pattern])
        fixed_vals = np.array([lo[j] if p == "lo" else hi[j] if p == "hi" else 0.0 for j, p in enumerate(pattern)])
        x = np.broadcast_to(fixed_vals, (n, k)).copy()
        resid_target = A - fixed_vals @ M
        if free.any():
            Ms = M[free]
            x[:, free] = resid_target @ np.linalg.pinv(Ms)
            slack = 1e-12 * (1.0 + np.abs(x[:, free]))
            ok = np.all((x[:, free] >= lo[free] - slack) & (x[:, free] <= hi[free] + slack), axis=1)
            x[:, free] = np.clip(x[:, free], lo[free], hi[free])
        else:
            ok = np.ones(n, dtype=bool)
        obj = np.sum((x @ M - A) ** 2, axis=1)
        with np.errstate(invalid="ignore"):
            thresh = np.where(np.isfinite(best_obj), best_obj - _TIE_RTOL * (1.0 + best_obj), np.inf)
        better = ok & (obj < thresh)
        best_x[better] = x[better]
        best_obj[better] = obj[better]
    if not np.all(np.isfinite(best_obj)):
        return _box_pgd(M, A, lo, hi, tau, max_iter)
    return best_x


def _box_pgd(M, A, lo, hi, tau, max_iter):
    n, k = A.shape[0], M.shape[0]
    L = float(np.linalg.eigvalsh(M @ M.T).max())
    step = 1.0 / L
    x = np.clip(np.zeros((n, k)), lo, hi)
    active = np.ones(n, dtype=bool)
    for _ in range(max_iter):
        xa = x[active]
        grad = (xa @ M - A[active]) @ M.T
        x_new = np.clip(xa - step * grad, lo, hi)
        moved = np.linalg.norm(x_new - xa, axis=1)
        x[active] = x_new
        idx = np.flatnonzero(active)
        active[idx[moved <= tau]] = False
        if not active.any():
            return x
    best = x @ M
    raise ConvergenceFailure(
        f"projected gradient did not reach tolerance {tau} in {max_iter} iterations",
        best=best,
        best_distance=np.linalg.norm(best - A, axis=1),
    )


def _project_rows(A, s: InducedSet):
    base, sigma = s.base, s.sigma
    if isinstance(base, FullSpace):
        pull = np.linalg.solve(s.gram, sigma @ A.T).T
        return pull @ sigma, pull
    if isinstance(base, (FiniteSet, CustomGrid)):
        pull, img = _nearest_point(A, base.points, base.points @ sigma)
        return img, pull
    if isinstance(base, (Box, NonnegativeOrthantCone)):
        if isinstance(base, Box):
            lo, hi = base.lower, base.upper
        else:
            lo, hi = np.zeros(base.dim), np.full(base.dim, np.inf)
        if s._diag:
            pull = np.clip((A @ sigma.T) / np.diag(s.gram), lo, hi)
        else:
            pull = _box_lsq(sigma, A, lo, hi, s.tau_proj, s.max_iter)
        return pull @ sigma, pull
    if isinstance(base, GeneratedCone):
        M = base.generators @ sigma
        k = M.shape[0]
        lam = _box_lsq(M, A, np.zeros(k), np.full(k, base.coef_bound), s.tau_proj, s.max_iter)
        pull = lam @ base.generators
        return pull @ sigma, pull
    raise InvalidArgument(f"unsupported constraint {type(base).__name__}")


# -- public operations --------------------------------------------------------


def project_with_pullback(a, s: InducedSet):
    """Return ``(image, pullback)`` with ``image = pullback @ sigma`` nearest to ``a``."""
    A, single = _as_matrix(a, s.m)
    img, pull = _project_rows(A, s)
    if single:
        return img[0], pull[0]
    return img, pull


def project(a, s: InducedSet):
    """An element of the nearest-point set of ``a`` in the image set.

    ``a`` may be a single vector of length m or an (n, m) batch.
    """
    return project_with_pullback(a, s)[0]


def distance(a, s: InducedSet):
    A, single = _as_matrix(a, s.m)
    img, _ = _project_rows(A, s)
    out = np.linalg.norm(A - img, axis=1)
    return float(out[0]) if single else out


def contains(points, s: InducedSet, tol=None):
    """Membership up to ``tol * (1 + |point|)`` (default tolerance ``s.tau_proj``)."""
    tol = s.tau_proj if tol is None else tol
    P, single = _as_matrix(points, s.m, "points")
    img, _ = _project_rows(P, s)
    inside = np.linalg.norm(P - img, axis=1) <= tol * (1.0 + np.linalg.norm(P, axis=1))
    return bool(inside[0]) if single else inside


def cone_identity_residual(a, cone: InducedSet):
    """``<P(a), a - P(a)>`` where P projects onto a convex cone (zero in exact arithmetic)."""
    if not cone.base.is_convex_cone:
        raise InvalidArgument(f"{cone.base.kind} set is not a convex cone")
    A, single = _as_matrix(a, cone.m)
    img, _ = _project_rows(A, cone)
    res = np.sum(img * (A - img), axis=1)
    return float(res[0]) if single else res


def grid_spacing(n: int, m: int) -> float:
    # covering radius h*sqrt(m)/2 must not exceed 1/n
    return min(1.0 / n, 2.0 / (n * np.sqrt(m)))


def grid_select(a, s: InducedSet, n: int, radius=None):
    """Grid-based nearest-point selection.

    Lattice points of spacing ``grid_spacing(n, m)`` lying within ``1/n`` of
    the (possibly truncated) set are scanned and the one closest to ``a`` is
    returned; equidistant candidates resolve to the lexicographically
    smallest lattice index.  Unbounded sets need ``radius``.
    """
    if int(n) < 1:
        raise InvalidArgument("resolution index n must be >= 1")
    a_vec, _ = _as_matrix(a, s.m)
    if a_vec.shape[0] != 1:
        raise InvalidArgument("grid_select takes a single point")
    a_vec = a_vec[0]
    target = s
    if radius is not None:
        target = s.truncated(float(radius))
    elif not s.base.is_bounded:
        raise InvalidArgument("unbounded set: pass radius to truncate it")

    h = grid_spacing(n, s.m)
    reach = 1.0 / n
    base = target.base
    if isinstance(base, (FiniteSet, CustomGrid)):
        centers = base.points @ target.sigma
        half = np.full(len(centers), reach)
    else:
        p = project(a_vec, target)
        D = float(np.linalg.norm(a_vec - p))
        centers = p.reshape(1, -1)
        # nearby lattice points of the 1/n-neighbourhood lie in this ball
        half = np.array([np.sqrt(4.0 * D * reach + 4.0 * reach**2) + reach])

    blocks = []
    for c, r in zip(centers, half):
        lo = np.floor((c - r) / h).astype(np.int64) - 1
        hi = np.ceil((c + r) / h).astype(np.int64) + 1
        axes = [np.arange(l, u + 1) for l, u in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        blocks.append(np.stack([m_.ravel() for m_ in mesh], axis=1))
    idx = np.unique(np.concatenate(blocks, axis=0), axis=0)
    pts = idx * h
    near = distance(pts, target) <= reach * (1.0 + 1e-9)
    if not near.any():
        raise InvalidArgument("no lattice point near the truncated set")
    idx, pts = idx[near], pts[near]
    d2 = np.sum((pts - a_vec) ** 2, axis=1)
    dmin = d2.min()
    cand = np.flatnonzero(d2 <= dmin + _TIE_RTOL * (1.0 + dmin))
    # np.unique sorted rows lexicographically, so the first candidate is smallest
    return pts[cand[0]]
