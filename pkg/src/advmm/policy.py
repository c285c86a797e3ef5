"""Linear stochastic policies over a polynomial state basis.

The market maker plays a diagonal Gaussian over ``(p_tilde, psi)``: the
reservation offset's mean is linear in the features, while the spread's mean
and both variances pass through softplus. The adversary plays independent
Beta distributions rescaled onto its parameter intervals, with shape
parameters ``softplus(w . phi) + 1``.

Weights are stored as 2-D arrays, one row per linear output:

* Gaussian: rows ``mean_ptilde, mean_psi_raw, var_ptilde_raw, var_psi_raw``.
* Beta: rows ``alpha_raw, beta_raw`` for each controlled parameter, in order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma

SNAPSHOT_FORMAT = "advmm.policy"
SNAPSHOT_VERSION = 1
PSI_FLOOR = 1e-4
BETA_NUDGE = 1e-12


class InvalidPolicy(ValueError):
    pass


class UndefinedScore(ValueError):
    pass


def softplus(x: float) -> float:
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def monomial_powers(degree: int) -> list[tuple[int, int]]:
    """``(t_power, h_power)`` pairs by total degree, t-heavy first."""
    return [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]


@dataclass(frozen=True)
class FeatureBasis:
    degree: int = 3
    h_scale: float = 50.0

    @property
    def size(self) -> int:
        return (self.degree + 1) * (self.degree + 2) // 2

    def __call__(self, t: float, h: float) -> np.ndarray:
        return features(t, h, self.h_scale, self.degree)


def features(t: float, h: float, h_max: float = 50.0, degree: int = 3) -> np.ndarray:
    """Monomials of ``(t, h / h_max)`` up to ``degree``, constant first."""
    if abs(h) > h_max:
        raise ValueError(f"|h|={abs(h)} exceeds h_max={h_max}")
    hn = h / h_max
    if degree == 3:
        t2, h2 = t * t, hn * hn
        return np.array([1.0, t, hn, t2, t * hn, h2, t2 * t, t2 * hn, t * h2, h2 * hn])
    return np.array([t**i * hn**j for i, j in monomial_powers(degree)])


@dataclass
class GaussianPolicy:
    weights: np.ndarray
    basis: FeatureBasis = field(default_factory=FeatureBasis)
    var_floor: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(4, self.basis.size)

    @classmethod
    def zeros(cls, basis: FeatureBasis | None = None, var_floor: float = 0.0) -> GaussianPolicy:
        basis = basis or FeatureBasis()
        return cls(np.zeros((4, basis.size)), basis, var_floor)

    def _check(self):
        if not np.all(np.isfinite(self.weights)):
            raise InvalidPolicy("Gaussian policy has non-finite weights")

    def _linear(self, phi):
        z = self.weights @ phi
        return float(z[0]), float(z[1]), float(z[2]), float(z[3])

    def moments(self, phi: np.ndarray) -> tuple[float, float, float, float]:
        """``(mean_ptilde, mean_psi, var_ptilde, var_psi)`` at features ``phi``."""
        z0, z1, z2, z3 = self._linear(phi)
        return z0, softplus(z1), max(softplus(z2), self.var_floor), max(softplus(z3), self.var_floor)

    def sample(self, phi: np.ndarray, rng: np.random.Generator) -> tuple[float, float]:
        """Raw ``(p_tilde, psi)`` draw; ``psi`` may be non-positive."""
        self._check()
        m_p, m_s, v_p, v_s = self.moments(phi)
        a_p = m_p + math.sqrt(v_p) * rng.standard_normal()
        a_s = m_s + math.sqrt(v_s) * rng.standard_normal()
        return a_p, a_s

    def mode(self, phi: np.ndarray) -> tuple[float, float]:
        m_p, m_s, _, _ = self.moments(phi)
        return m_p, m_s

    def log_density(self, phi: np.ndarray, action: tuple[float, float]) -> float:
        m_p, m_s, v_p, v_s = self.moments(phi)
        out = 0.0
        for a, m, v in ((action[0], m_p, v_p), (action[1], m_s, v_s)):
            out += -0.5 * math.log(2.0 * math.pi * v) - (a - m) ** 2 / (2.0 * v)
        return out

    def score(self, phi: np.ndarray, action: tuple[float, float]) -> np.ndarray:
        """Gradient of the log-density w.r.t. the weights, shaped like ``weights``."""
        z0, z1, z2, z3 = self._linear(phi)
        m_p, m_s = z0, softplus(z1)
        sp_p, sp_s = softplus(z2), softplus(z3)
        v_p, v_s = max(sp_p, self.var_floor), max(sp_s, self.var_floor)
        e_p, e_s = action[0] - m_p, action[1] - m_s
        g_mean_p = e_p / v_p
        g_mean_s = e_s / v_s * sigmoid(z1)
        # the floor is flat, so variance weights get no gradient while it binds
        g_var_p = (e_p * e_p / (2.0 * v_p * v_p) - 0.5 / v_p) * sigmoid(z2) if sp_p >= self.var_floor else 0.0
        g_var_s = (e_s * e_s / (2.0 * v_s * v_s) - 0.5 / v_s) * sigmoid(z3) if sp_s >= self.var_floor else 0.0
        return np.outer([g_mean_p, g_mean_s, g_var_p, g_var_s], phi)

    def to_dict(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "kind": "gaussian",
            "basis": {"degree": self.basis.degree, "h_scale": self.basis.h_scale},
            "var_floor": self.var_floor,
            "psi_floor": PSI_FLOOR,
            "rows": ["mean_ptilde", "mean_psi_raw", "var_ptilde_raw", "var_psi_raw"],
            "weights": self.weights.tolist(),
        }


@dataclass
class BetaPolicy:
    """Scaled Beta policy; one ``(alpha, beta)`` weight pair per parameter."""

    weights: np.ndarray
    names: tuple[str, ...]
    bounds: tuple[tuple[float, float], ...]
    basis: FeatureBasis = field(default_factory=FeatureBasis)

    def __post_init__(self):
        self.names = tuple(self.names)
        self.bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(self.names) == 0:
            raise InvalidPolicy("Beta policy needs at least one controlled parameter")
        if len(self.bounds) != len(self.names):
            raise InvalidPolicy("one interval per controlled parameter is required")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise InvalidPolicy(f"degenerate interval [{lo}, {hi}]")
        self.weights = np.asarray(self.weights, dtype=float).reshape(len(self.names), 2, self.basis.size)

    @classmethod
    def zeros(cls, names, bounds, basis: FeatureBasis | None = None) -> BetaPolicy:
        basis = basis or FeatureBasis()
        return cls(np.zeros((len(names), 2, basis.size)), names, bounds, basis)

    def shapes(self, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = self.weights @ phi
        alpha = np.array([softplus(v) + 1.0 for v in z[:, 0]])
        beta = np.array([softplus(v) + 1.0 for v in z[:, 1]])
        return alpha, beta

    def sample(self, phi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if not np.all(np.isfinite(self.weights)):
            raise InvalidPolicy("Beta policy has non-finite weights")
        alpha, beta = self.shapes(phi)
        out = np.empty(len(self.names))
        for i, (lo, hi) in enumerate(self.bounds):
            x = rng.beta(alpha[i], beta[i])
            x = min(max(x, BETA_NUDGE), 1.0 - BETA_NUDGE)
            out[i] = lo + (hi - lo) * x
        return out

    def _unit(self, values) -> np.ndarray:
        x = np.empty(len(self.names))
        for i, ((lo, hi), v) in enumerate(zip(self.bounds, values)):
            if not lo < v < hi:
                raise UndefinedScore(f"{self.names[i]}={v} is not strictly inside ({lo}, {hi})")
            x[i] = (v - lo) / (hi - lo)
        return x

    def log_density(self, phi: np.ndarray, values) -> float:
        x = self._unit(values)
        alpha, beta = self.shapes(phi)
        out = 0.0
        for i, (lo, hi) in enumerate(self.bounds):
            a, b = alpha[i], beta[i]
            log_norm = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
            out += (a - 1) * math.log(x[i]) + (b - 1) * math.log1p(-x[i]) - log_norm - math.log(hi - lo)
        return out

    def score(self, phi: np.ndarray, values) -> np.ndarray:
        x = self._unit(values)
        z = self.weights @ phi
        g = np.empty((len(self.names), 2))
        for i in range(len(self.names)):
            a, b = softplus(z[i, 0]) + 1.0, softplus(z[i, 1]) + 1.0
            common = digamma(a + b)
            g[i, 0] = (math.log(x[i]) - digamma(a) + common) * sigmoid(z[i, 0])
            g[i, 1] = (math.log1p(-x[i]) - digamma(b) + common) * sigmoid(z[i, 1])
        return g[:, :, None] * phi[None, None, :]

    def mode(self, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Most probable parameter values and a per-parameter undefined flag."""
        alpha, beta = self.shapes(phi)
        out = np.empty(len(self.names))
        undefined = np.zeros(len(self.names), dtype=bool)
        for i, (lo, hi) in enumerate(self.bounds):
            denom = alpha[i] + beta[i] - 2.0
            if denom == 0.0:
                undefined[i] = True
                out[i] = 0.5 * (lo + hi)
            else:
                out[i] = lo + (hi - lo) * (alpha[i] - 1.0) / denom
        return out, undefined

    def to_dict(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "kind": "beta",
            "basis": {"degree": self.basis.degree, "h_scale": self.basis.h_scale},
            "names": list(self.names),
            "bounds": [list(b) for b in self.bounds],
            "weights": self.weights.tolist(),
        }


def policy_from_dict(d: dict) -> GaussianPolicy | BetaPolicy:
    if d.get("format") != SNAPSHOT_FORMAT:
        raise InvalidPolicy(f"not a policy snapshot (format={d.get('format')!r})")
    if d.get("version") != SNAPSHOT_VERSION:
        raise InvalidPolicy(f"unsupported policy snapshot version {d.get('version')!r}")
    basis = FeatureBasis(int(d["basis"]["degree"]), float(d["basis"]["h_scale"]))
    if d["kind"] == "gaussian":
        return GaussianPolicy(np.array(d["weights"], dtype=float), basis, float(d.get("var_floor", 0.0)))
    if d["kind"] == "beta":
        return BetaPolicy(np.array(d["weights"], dtype=float), tuple(d["names"]),
                          tuple(tuple(b) for b in d["bounds"]), basis)
    raise InvalidPolicy(f"unknown policy kind {d['kind']!r}")


# Functional forms of the policy operations.

def gaussian_sample(spec: GaussianPolicy, phi: np.ndarray, rng: np.random.Generator) -> tuple[float, float]:
    """Sample ``(p_tilde, psi)`` with ``psi`` floored at ``PSI_FLOOR``."""
    p, s = spec.sample(phi, rng)
    return p, max(s, PSI_FLOOR)


def gaussian_score(spec: GaussianPolicy, phi: np.ndarray, action) -> np.ndarray:
    return spec.score(phi, action)


def beta_sample(spec: BetaPolicy, phi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return spec.sample(phi, rng)


def beta_score(spec: BetaPolicy, phi: np.ndarray, values) -> np.ndarray:
    return spec.score(phi, values)
