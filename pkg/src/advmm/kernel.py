"""Backend selection and the flat workspace shared by both episode kernels.

The compiled core (``advmm._core``) is used when it imports; otherwise the
pure-Python twin in ``advmm._pycore`` runs the same algorithm. Setting the
environment variable ``ADVMM_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import _pycore

OK = _pycore.OK
DIVERGED = _pycore.DIVERGED
NONFINITE_TD = _pycore.NONFINITE_TD
NONFINITE_ACTION = _pycore.NONFINITE_ACTION
REGIME_CODES = {"fixed": _pycore.REGIME_FIXED, "random": _pycore.REGIME_RANDOM,
                "strategic": _pycore.REGIME_STRATEGIC}
PARAM_CODES = {"b": 0, "A": 1, "k": 2}
STATUS_NAMES = {OK: "ok", DIVERGED: "weight norm above ceiling", NONFINITE_TD: "non-finite TD error",
                NONFINITE_ACTION: "non-finite action"}


def _load_compiled():
    if os.environ.get("ADVMM_BACKEND", "").lower() == "python":
        return None
    try:
        from . import _core
    except ImportError:
        return None
    return _core


_compiled = _load_compiled()
BACKEND = "cython" if _compiled is not None else "python"


def backends() -> dict:
    """Available kernels by name."""
    out = {"python": _pycore.run_batch}
    if _compiled is not None:
        out["cython"] = _compiled.run_batch
    return out


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1))


@dataclass
class Workspace:
    """Everything one kernel call reads, as flat contiguous arrays and scalars.

    Weight arrays (``theta``, ``atheta``, ``wv``, ``wa``, ``awv``, ``awa``)
    and ``step_counter`` are mutated in place by learning runs.
    """

    n_steps: int
    dt: float
    z0: float
    sigma: float
    h_min: int
    h_max: int
    h_scale: float
    theta: np.ndarray
    var_floor: float = 0.0
    regime: int = 0
    fixed_params: np.ndarray = field(default_factory=lambda: np.array([0.0, 140.0, 140.0, 1.5, 1.5]))
    bounds: np.ndarray = field(default_factory=lambda: np.array([-5.0, 5.0, 105.0, 175.0, 1.125, 1.875]))
    ctrl: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    atheta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    random_start: bool = False
    n0: int = 0
    h0: int = 0
    n0_lo: int = 0
    n0_hi: int = 0
    h0_lo: int = 0
    h0_hi: int = 0
    greedy: bool = False
    centers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    widths: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.2]))
    wv: np.ndarray = field(default_factory=lambda: np.zeros(0))
    wa: np.ndarray = field(default_factory=lambda: np.zeros(0))
    awv: np.ndarray = field(default_factory=lambda: np.zeros(0))
    awa: np.ndarray = field(default_factory=lambda: np.zeros(0))
    learn_mm: bool = False
    learn_adv: bool = False
    policy_updates: bool = False
    lr_critic: float = 1e-4
    lr_policy: float = 1e-4
    trace_decay: float = 0.97
    eta: float = 0.0
    zeta: float = 0.0
    update_period: int = 100
    advantage_decay: float = 1.0
    max_policy_step: float = float("inf")
    weight_ceiling: float = 1e6
    step_counter: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))

    def __post_init__(self):
        for name in ("theta", "atheta", "fixed_params", "bounds", "centers", "widths", "wv", "wa", "awv", "awa"):
            setattr(self, name, _f64(getattr(self, name)))
        self.ctrl = np.ascontiguousarray(self.ctrl, dtype=np.int64).reshape(-1)
        self.step_counter = np.ascontiguousarray(self.step_counter, dtype=np.int64).reshape(1)
        if self.theta.size != 40:
            raise ValueError("the episode kernels support the degree-3 basis only (40 Gaussian weights)")
        if self.atheta.size != 20 * self.ctrl.size:
            raise ValueError("adversary weights must hold 20 entries per controlled parameter")
        if self.centers.size != 2 * self.wv.size or self.awv.size != self.wv.size:
            raise ValueError("critic value weights must match the number of RBF centres")
        if self.wa.size not in (0, self.theta.size) or self.awa.size not in (0, self.atheta.size):
            raise ValueError("advantage weights must match the policy weight count")
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")


def run_batch(ws: Workspace, rng: np.random.Generator, n_episodes: int, backend: str | None = None):
    """Run ``n_episodes`` episodes and return per-episode outcome arrays.

    Returns ``(status, done, wealth, inventory, spread, total_reward)`` with
    arrays truncated to the ``done`` completed episodes.
    """
    fn = backends()[backend or BACKEND]
    wealth = np.zeros(n_episodes)
    inventory = np.zeros(n_episodes)
    spread = np.zeros(n_episodes)
    total = np.zeros(n_episodes)
    status, done = fn(ws, rng, int(n_episodes), wealth, inventory, spread, total)
    return status, done, wealth[:done], inventory[:done], spread[:done], total[:done]
