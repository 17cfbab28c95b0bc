"""Model container for the two-dimensional regime-switching stopping problem.

State dynamics per coordinate i in {0, 1}, in regime iota:

    dX^i = (a^i(iota) + sum_j B^{ij}(iota) X^j) dt + sigma^i(iota) X^i dW^i

with an independent CTMC regime, a per-regime discount rate lambda(iota) > 0,
and a running cost H(iota, x) that is paid until the stopping time.  The
shipped cost family is affine,

    H(iota, x) = p1(iota) x1 + p2(iota) x2 - kappa(iota),

which is concave, increasing and coercive along the axes whenever p1, p2 > 0.
CostSpec.kind is the seam for other concave costs; only "affine" is
implemented.
"""

from dataclasses import dataclass

import numpy as np

from .regimes import GeneratorMatrix


@dataclass(frozen=True)
class CostSpec:
    """Running cost specification.  Arrays are per regime."""

    kind: str
    p1: np.ndarray
    p2: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        if self.kind != "affine":
            raise NotImplementedError(f"cost kind {self.kind!r} not implemented")
        for name in ("p1", "p2", "kappa"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.p1.shape == self.p2.shape == self.kappa.shape) or self.p1.ndim != 1:
            raise ValueError("p1, p2, kappa must be 1-d arrays of equal length")
        if np.any(self.p1 <= 0) or np.any(self.p2 <= 0):
            raise ValueError("affine cost requires p1 > 0 and p2 > 0 per regime")

    @property
    def n_regimes(self):
        return self.p1.size


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients of the stopping problem.  All arrays indexed by regime first."""

    q: GeneratorMatrix
    a: np.ndarray        # (n, 2) additive drift
    b: np.ndarray        # (n, 2, 2) linear drift matrix
    sigma: np.ndarray    # (n, 2) volatility loadings
    lam: np.ndarray      # (n,) discount rates
    cost: CostSpec

    def __post_init__(self):
        n = self.q.n
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        lam = np.asarray(self.lam, dtype=float)
        if a.shape != (n, 2) or sigma.shape != (n, 2):
            raise ValueError(f"a and sigma must have shape ({n}, 2)")
        if b.shape != (n, 2, 2):
            raise ValueError(f"b must have shape ({n}, 2, 2)")
        if lam.shape != (n,):
            raise ValueError(f"lam must have shape ({n},)")
        if self.cost.n_regimes != n:
            raise ValueError("cost arrays must match the number of regimes")
        for name, val in (("a", a), ("b", b), ("sigma", sigma), ("lam", lam)):
            object.__setattr__(self, name if name != "lam" else "lam", val)

    @property
    def n_regimes(self):
        return self.q.n

    @property
    def lambda_min(self):
        return float(self.lam.min())

    @property
    def lambda_is_constant(self):
        return float(self.lam.max() - self.lam.min()) == 0.0

    @property
    def h_floor(self):
        """inf over regimes of H(iota, (0, 0)); negative in any non-degenerate setup."""
        return float((-self.cost.kappa).min())

    def to_dict(self):
        return {
            "Q": self.q.rates.tolist(),
            "a": self.a.tolist(),
            "B": self.b.tolist(),
            "sigma": self.sigma.tolist(),
            "lambda": self.lam.tolist(),
            "cost": {"kind": self.cost.kind, "p1": self.cost.p1.tolist(),
                     "p2": self.cost.p2.tolist(), "kappa": self.cost.kappa.tolist()},
        }


def model_from_dict(d):
    """Inverse of ModelSpec.to_dict, used by the JSON config layer."""
    cost = d["cost"]
    return ModelSpec(
        q=GeneratorMatrix(np.asarray(d["Q"], dtype=float)),
        a=np.asarray(d["a"], dtype=float),
        b=np.asarray(d["B"], dtype=float),
        sigma=np.asarray(d["sigma"], dtype=float),
        lam=np.asarray(d["lambda"], dtype=float),
        cost=CostSpec(kind=cost.get("kind", "affine"), p1=cost["p1"], p2=cost["p2"],
                      kappa=cost["kappa"]),
    )


def eval_cost(m, iota, x):
    """Running cost H(iota, x).  x is (2,) or (..., 2); coordinates must be >= 0."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError("x must have a trailing dimension of size 2")
    if np.any(x < 0):
        raise ValueError("cost evaluated at a negative coordinate")
    c = m.cost
    out = c.p1[iota] * x[..., 0] + c.p2[iota] * x[..., 1] - c.kappa[iota]
    return out if out.ndim else float(out)


def cutoff_cost(m, iota, x, n_cut):
    """Cost truncated from above: min(H, N).  N must be positive."""
    if not n_cut > 0:
        raise ValueError("cutoff level N must be positive")
    h = eval_cost(m, iota, x)
    return np.minimum(h, float(n_cut)) if np.ndim(h) else min(h, float(n_cut))


def check_assumptions(m):
    """Structural checks on a ModelSpec, report-style.

    Checks the coefficient sign conditions (positive discounting, non-negative
    additive drift, non-degenerate volatility, cooperative off-diagonal drift),
    the affine-cost conditions, and the recurrence condition.  Recurrence is only
    certified through the sufficient condition a^i(iota) > 0 for all i, iota and
    B^{ii}(iota) >= 0; when that fails the report says "A3 not certified" rather
    than claiming a violation.
    """
    problems_a1 = []
    if np.any(m.lam <= 0):
        problems_a1.append("discount rate lambda must be positive in every regime")
    if np.any(m.a < 0):
        problems_a1.append("additive drift a^i(iota) must be >= 0")
    if np.any(m.sigma == 0):
        problems_a1.append("volatility sigma^i(iota) must be nonzero")
    off = m.b.copy()
    off[:, [0, 1], [0, 1]] = 0.0
    if np.any(off < 0):
        problems_a1.append("off-diagonal drift couplings b^{ij}(iota), i != j, must be >= 0")

    problems_a2 = []
    if m.cost.kind != "affine":
        problems_a2.append(f"cost kind {m.cost.kind!r} not checkable")
    # p1, p2 > 0 is enforced by CostSpec; an affine H with positive slopes is
    # concave, locally Lipschitz, increasing and grows without bound along the axes.

    diag = m.b[:, [0, 1], [0, 1]]
    a3_certified = bool(np.all(m.a > 0) and np.all(diag >= 0))
    a3_note = ("certified via the sufficient condition: a^i(iota) > 0 and b^{ii}(iota) >= 0"
               if a3_certified else "A3 not certified")

    return {
        "a1": {"ok": not problems_a1, "problems": problems_a1},
        "a2": {"ok": not problems_a2, "problems": problems_a2},
        "a3": {"certified": a3_certified, "note": a3_note},
        "ok": not problems_a1 and not problems_a2,
    }
