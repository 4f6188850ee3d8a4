"""Linear-quadratic mean-field control solved in closed loop.

The state follows a linear recursion driven by the state, the control, their
means, and a scalar standard normal multiplying a state/control-dependent
vector.  The cost is quadratic in the state, the control, and their means,
plus linear terms.  The value function is quadratic in (dispersion, mean):

    value_k(mu) = Var(mu)(var_weight_k) + mean' mean_weight_k mean
                  + linear_k' mean + constant_k

and the four coefficient sequences satisfy a backward Riccati system.  The
per-stage minimization is convex and coercive when the semidefiniteness and
rank conditions checked by :func:`check_conditions` hold; positive
definiteness of the two control Hessians is asserted at every stage anyway.

Matrix inverses are never formed: all solves go through symmetric
positive-definite Cholesky factorizations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .measure import DiscreteMeasure

SYM_TOL = 1e-10
PSD_EIG_TOL = -1e-10
PD_EIG_TOL = 1e-10
RANK_REL_TOL = 1e-10


class ConditionsNotMet(ValueError):
    """The convexity/coercivity conditions fail; carries the full report."""

    def __init__(self, report):
        self.report = report
        super().__init__(report.message())


class NotPositiveDefinite(RuntimeError):
    """A control Hessian lost positive definiteness at a named stage."""


def _sym(mat):
    return 0.5 * (mat + mat.swapaxes(-1, -2))


def _check_sym(name, mat):
    if np.max(np.abs(mat - mat.swapaxes(-1, -2))) > SYM_TOL:
        raise ValueError(f"{name} is not symmetric within {SYM_TOL}")
    return _sym(mat)


def _is_psd(mat) -> bool:
    return float(np.linalg.eigvalsh(_sym(mat)).min()) >= PSD_EIG_TOL


def _is_pd(mat) -> bool:
    return float(np.linalg.eigvalsh(_sym(mat)).min()) > PD_EIG_TOL


def _has_full_row_rank(mat, d) -> bool:
    if mat.shape[0] != d:
        return False
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return False
    return sv.size >= d and sv[d - 1] >= RANK_REL_TOL * sv[0]


@dataclass(frozen=True)
class LQModel:
    """Coefficients of a linear-quadratic mean-field model.

    Dynamics matrices per stage (lists stacked to arrays of length ``n``):

    * ``drift_state`` (d, d), ``drift_state_mean`` (d, d): act on the state
      and on its mean in the drift.
    * ``drift_control`` (d, m), ``drift_control_mean`` (d, m): act on the
      control and on its mean in the drift.
    * ``noise_*``: same shapes, building the vector multiplied by the scalar
      unit-variance noise.

    Cost matrices per stage: ``cost_state`` / ``cost_state_mean`` (d, d,
    symmetric), ``cost_control`` / ``cost_control_mean`` (m, m, symmetric),
    ``cost_linear`` / ``cost_linear_mean`` (d,).  Terminal analogues carry the
    ``terminal_`` prefix.  The initial law is given by mean and covariance
    (optionally backed by a discrete measure used when sampling particles).
    """

    drift_state: np.ndarray
    drift_state_mean: np.ndarray
    drift_control: np.ndarray
    drift_control_mean: np.ndarray
    noise_state: np.ndarray
    noise_state_mean: np.ndarray
    noise_control: np.ndarray
    noise_control_mean: np.ndarray
    cost_state: np.ndarray
    cost_state_mean: np.ndarray
    cost_control: np.ndarray
    cost_control_mean: np.ndarray
    cost_linear: np.ndarray
    cost_linear_mean: np.ndarray
    terminal_state: np.ndarray
    terminal_state_mean: np.ndarray
    terminal_linear: np.ndarray
    terminal_linear_mean: np.ndarray
    initial_mean: np.ndarray
    initial_cov: np.ndarray
    initial_measure: Optional[DiscreteMeasure] = None

    def __post_init__(self):
        as_f = lambda x: np.asarray(x, dtype=float)
        stage_shapes = None
        for name in self.__dataclass_fields__:
            if name == "initial_measure":
                continue
            object.__setattr__(self, name, as_f(getattr(self, name)))
        n, d, _ = self.drift_state.shape
        m = self.drift_control.shape[2]
        stage_shapes = {
            "drift_state": (n, d, d), "drift_state_mean": (n, d, d),
            "drift_control": (n, d, m), "drift_control_mean": (n, d, m),
            "noise_state": (n, d, d), "noise_state_mean": (n, d, d),
            "noise_control": (n, d, m), "noise_control_mean": (n, d, m),
            "cost_state": (n, d, d), "cost_state_mean": (n, d, d),
            "cost_control": (n, m, m), "cost_control_mean": (n, m, m),
            "cost_linear": (n, d), "cost_linear_mean": (n, d),
            "terminal_state": (d, d), "terminal_state_mean": (d, d),
            "terminal_linear": (d,), "terminal_linear_mean": (d,),
            "initial_mean": (d,), "initial_cov": (d, d),
        }
        for name, shape in stage_shapes.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape} "
                                 "(stage lists must have exactly horizon entries)")
        for name in ["cost_state", "cost_state_mean", "cost_control", "cost_control_mean",
                     "terminal_state", "terminal_state_mean", "initial_cov"]:
            object.__setattr__(self, name, _check_sym(name, getattr(self, name)))
        for name in stage_shapes:
            getattr(self, name).setflags(write=False)

    @property
    def horizon(self) -> int:
        return self.drift_state.shape[0]

    @property
    def state_dim(self) -> int:
        return self.drift_state.shape[1]

    @property
    def control_dim(self) -> int:
        return self.drift_control.shape[2]

    # -- serialization --------------------------------------------------------
    _STAGE_KEYS = (
        "drift_state", "drift_state_mean", "drift_control", "drift_control_mean",
        "noise_state", "noise_state_mean", "noise_control", "noise_control_mean",
        "cost_state", "cost_state_mean", "cost_control", "cost_control_mean",
        "cost_linear", "cost_linear_mean",
    )

    def to_json(self) -> dict:
        payload = {
            "state_dim": self.state_dim,
            "control_dim": self.control_dim,
            "horizon": self.horizon,
            "stages": [
                {key: getattr(self, key)[k].tolist() for key in self._STAGE_KEYS}
                for k in range(self.horizon)
            ],
            "terminal": {
                "cost_state": self.terminal_state.tolist(),
                "cost_state_mean": self.terminal_state_mean.tolist(),
                "cost_linear": self.terminal_linear.tolist(),
                "cost_linear_mean": self.terminal_linear_mean.tolist(),
            },
            "initial_law": {
                "mean": self.initial_mean.tolist(),
                "cov": self.initial_cov.tolist(),
            },
        }
        if self.initial_measure is not None:
            payload["initial_law"]["measure"] = self.initial_measure.to_json()
        return payload

    @classmethod
    def from_json(cls, payload) -> "LQModel":
        if isinstance(payload, str):
            payload = json.loads(payload)
        stages = payload["stages"]
        fields = {key: np.array([s[key] for s in stages], dtype=float)
                  for key in cls._STAGE_KEYS}
        if "horizon" in payload and int(payload["horizon"]) != len(stages):
            raise ValueError(f"declared horizon {payload['horizon']} but "
                             f"{len(stages)} stage blocks")
        declared = (payload.get("state_dim"), payload.get("control_dim"))
        got = fields["drift_control"].shape[1:]
        if any(v is not None and int(v) != g for v, g in zip(declared, got)):
            raise ValueError(f"declared dims {declared} do not match stage blocks {got}")
        init = payload["initial_law"]
        measure = None
        if "measure" in init:
            measure = DiscreteMeasure.from_json(init["measure"])
            mean, cov = measure.mean(), measure.covariance()
        else:
            mean = np.asarray(init["mean"], dtype=float)
            cov = np.asarray(init["cov"], dtype=float)
        term = payload["terminal"]
        return cls(
            terminal_state=np.asarray(term["cost_state"], dtype=float),
            terminal_state_mean=np.asarray(term["cost_state_mean"], dtype=float),
            terminal_linear=np.asarray(term["cost_linear"], dtype=float),
            terminal_linear_mean=np.asarray(term["cost_linear_mean"], dtype=float),
            initial_mean=mean,
            initial_cov=cov,
            initial_measure=measure,
            **fields,
        )


def mean_variance_model(gamma: float, b: float, sigma: float, delta: float,
                        n: int, x0: float) -> LQModel:
    """Wealth model for the mean-variance objective, encoded as an LQModel.

    One risky asset with rate of return ``b`` and volatility ``sigma`` over
    steps of length ``delta``; the control is the invested amount; the
    objective is ``(gamma/2) Var(X_n) - E[X_n]``.
    """
    if gamma <= 0 or sigma <= 0 or delta <= 0:
        raise ValueError("need gamma > 0, sigma > 0, delta > 0")
    if n < 1:
        raise ValueError("need n >= 1")
    zs = np.zeros((n, 1, 1))
    zv = np.zeros((n, 1))
    return LQModel(
        drift_state=np.ones((n, 1, 1)),
        drift_state_mean=zs,
        drift_control=np.full((n, 1, 1), b * delta),
        drift_control_mean=zs,
        noise_state=zs,
        noise_state_mean=zs,
        noise_control=np.full((n, 1, 1), sigma * math.sqrt(delta)),
        noise_control_mean=zs,
        cost_state=zs,
        cost_state_mean=zs,
        cost_control=zs,
        cost_control_mean=zs,
        cost_linear=zv,
        cost_linear_mean=zv,
        terminal_state=[[gamma / 2.0]],
        terminal_state_mean=[[-gamma / 2.0]],
        terminal_linear=[0.0],
        terminal_linear_mean=[-1.0],
        initial_mean=[x0],
        initial_cov=[[0.0]],
        initial_measure=DiscreteMeasure.dirac([x0]),
    )


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _stage_pieces(model: LQModel, k: int):
    B = model.drift_state[k]
    Bq = B + model.drift_state_mean[k]
    C = model.drift_control[k]
    Cq = C + model.drift_control_mean[k]
    D = model.noise_state[k]
    Dq = D + model.noise_state_mean[k]
    H = model.noise_control[k]
    Hq = H + model.noise_control_mean[k]
    return B, Bq, C, Cq, D, Dq, H, Hq


def _hessians(model: LQModel, k: int, lam: np.ndarray, gam: np.ndarray):
    """Control Hessians and cross terms induced by the next-stage weights."""
    B, Bq, C, Cq, D, Dq, H, Hq = _stage_pieces(model, k)
    dev_hess = model.cost_control[k] + H.T @ lam @ H + C.T @ lam @ C
    mean_hess = (model.cost_control[k] + model.cost_control_mean[k]
                 + Cq.T @ gam @ Cq + Hq.T @ lam @ Hq)
    cross_dev = D.T @ lam @ H + B.T @ lam @ C
    cross_mean = Dq.T @ lam @ Hq + Bq.T @ gam @ Cq
    return _sym(dev_hess), _sym(mean_hess), cross_dev, cross_mean


@dataclass
class RiccatiSolution:
    """Backward coefficient sequences of the quadratic value function.

    ``var_weight[k]`` weighs the dispersion of the law, ``mean_weight[k]`` the
    quadratic in the mean, ``linear[k]`` and ``constant[k]`` the affine part.
    Per-stage intermediates: the two control Hessians (``dev_hessian`` for the
    centered component, ``mean_hessian`` for the mean component), the two
    cross-term matrices, and the closed-loop mean transition matrix.
    """

    var_weight: np.ndarray      # (n+1, d, d)
    mean_weight: np.ndarray     # (n+1, d, d)
    linear: np.ndarray          # (n+1, d)
    constant: np.ndarray        # (n+1,)
    dev_hessian: np.ndarray     # (n, m, m)
    mean_hessian: np.ndarray    # (n, m, m)
    dev_cross: np.ndarray       # (n, d, m)
    mean_cross: np.ndarray      # (n, d, m)
    mean_transition: np.ndarray  # (n, d, d)

    @property
    def horizon(self) -> int:
        return self.dev_hessian.shape[0]

    @property
    def state_dim(self) -> int:
        return self.var_weight.shape[1]

    @property
    def control_dim(self) -> int:
        return self.dev_hessian.shape[1]

    def to_json(self) -> dict:
        return {name: getattr(self, name).tolist() for name in (
            "var_weight", "mean_weight", "linear", "constant",
            "dev_hessian", "mean_hessian", "dev_cross", "mean_cross",
            "mean_transition")}

    @classmethod
    def from_json(cls, payload) -> "RiccatiSolution":
        if isinstance(payload, str):
            payload = json.loads(payload)
        return cls(**{name: np.asarray(payload[name], dtype=float) for name in (
            "var_weight", "mean_weight", "linear", "constant",
            "dev_hessian", "mean_hessian", "dev_cross", "mean_cross",
            "mean_transition")})


@dataclass
class StageConditions:
    stage: int
    nonneg_ok: bool
    nonneg_failures: list
    dev_coercive_ok: bool
    dev_coercive_via: Optional[str]
    mean_coercive_ok: bool
    mean_coercive_via: Optional[str]
    hessians_pd: bool
    evaluated: bool


@dataclass
class ConditionReport:
    stages: list
    terminal_ok: bool
    terminal_failures: list
    first_failure: Optional[tuple]

    @property
    def ok(self) -> bool:
        return self.first_failure is None

    def message(self) -> str:
        if self.ok:
            return "all conditions hold at every stage"
        stage, what = self.first_failure
        return f"conditions violated at stage {stage}: {what}"


def check_conditions(model: LQModel) -> ConditionReport:
    """Per-stage report of the nonnegativity and coercivity conditions.

    The nonnegativity block requires PSD state/control cost matrices and
    mean-augmented sums (terminal included).  The coercivity alternatives at
    stage ``k`` are: positive definite control cost, or full row rank of the
    control-to-drift (resp. control-to-noise) matrix combined with positive
    definiteness of the backward weight matrix it meets.  The weights are the
    ones actually propagated from the terminal stage, which at ``k = n-1``
    are exactly the terminal cost matrices.  The induced control Hessians are
    also tested directly; when one fails, earlier stages cannot be evaluated
    and are reported as such.
    """
    n, d = model.horizon, model.state_dim
    stage_rows: list = [None] * n
    terminal_failures = []
    if not _is_psd(model.terminal_state):
        terminal_failures.append("terminal state cost not PSD")
    if not _is_psd(model.terminal_state + model.terminal_state_mean):
        terminal_failures.append("terminal state+mean cost not PSD")
    failures_by_stage: dict = {}
    if terminal_failures:
        failures_by_stage[n] = "; ".join(terminal_failures)

    lam = model.terminal_state.copy()
    gam = model.terminal_state + model.terminal_state_mean
    alive = True
    for k in range(n - 1, -1, -1):
        nonneg_failures = []
        if not _is_psd(model.cost_state[k]):
            nonneg_failures.append("state cost not PSD")
        if not _is_psd(model.cost_state[k] + model.cost_state_mean[k]):
            nonneg_failures.append("state+mean cost not PSD")
        if not _is_psd(model.cost_control[k]):
            nonneg_failures.append("control cost not PSD")
        if not _is_psd(model.cost_control[k] + model.cost_control_mean[k]):
            nonneg_failures.append("control+mean cost not PSD")

        if not alive:
            stage_rows[k] = StageConditions(k, not nonneg_failures, nonneg_failures,
                                            False, None, False, None, False, False)
            if nonneg_failures:
                failures_by_stage[k] = "; ".join(nonneg_failures)
            continue

        B, Bq, C, Cq, D, Dq, H, Hq = _stage_pieces(model, k)
        R = model.cost_control[k]
        Rq = R + model.cost_control_mean[k]

        dev_coercive_via = None
        if _is_pd(R):
            dev_coercive_via = "control_cost"
        elif _has_full_row_rank(C, d) and _is_pd(lam):
            dev_coercive_via = "drift_rank"
        elif _has_full_row_rank(H, d) and _is_pd(lam):
            dev_coercive_via = "noise_rank"
        mean_coercive_via = None
        if _is_pd(Rq):
            mean_coercive_via = "control_cost"
        elif _has_full_row_rank(Cq, d) and _is_pd(gam):
            mean_coercive_via = "drift_rank"
        elif _has_full_row_rank(Hq, d) and _is_pd(lam):
            mean_coercive_via = "noise_rank"

        dev_hess, mean_hess, cross_dev, cross_mean = _hessians(model, k, lam, gam)
        hessians_pd = _is_pd(dev_hess) and _is_pd(mean_hess)

        stage_rows[k] = StageConditions(
            stage=k, nonneg_ok=not nonneg_failures, nonneg_failures=nonneg_failures,
            dev_coercive_ok=dev_coercive_via is not None, dev_coercive_via=dev_coercive_via,
            mean_coercive_ok=mean_coercive_via is not None, mean_coercive_via=mean_coercive_via,
            hessians_pd=hessians_pd, evaluated=True)

        failures = list(nonneg_failures)
        if dev_coercive_via is None:
            failures.append("per-state control minimization not coercive")
        if mean_coercive_via is None:
            failures.append("mean control minimization not coercive")
        if not hessians_pd:
            failures.append("control Hessian not positive definite")
        if failures:
            failures_by_stage[k] = "; ".join(failures)
        if not hessians_pd:
            alive = False
            continue

        chol_dev = cho_factor(dev_hess, lower=True)
        chol_mean = cho_factor(mean_hess, lower=True)
        new_lam = _sym(model.cost_state[k] + B.T @ lam @ B + D.T @ lam @ D
                       - cross_dev @ cho_solve(chol_dev, cross_dev.T))
        new_gam = _sym(model.cost_state[k] + model.cost_state_mean[k]
                       + Bq.T @ gam @ Bq + Dq.T @ lam @ Dq
                       - cross_mean @ cho_solve(chol_mean, cross_mean.T))
        lam, gam = new_lam, new_gam

    first_failure = None
    if failures_by_stage:
        stage = min(failures_by_stage)
        first_failure = (stage, failures_by_stage[stage])
    return ConditionReport(stage_rows, not terminal_failures, terminal_failures,
                           first_failure)


def solve_riccati(model: LQModel, force: bool = False) -> RiccatiSolution:
    """Backward Riccati recursion for the quadratic value function.

    Refuses to run (raising :class:`ConditionsNotMet`) when
    :func:`check_conditions` reports a failure, unless ``force`` is set.
    Positive definiteness of both control Hessians is asserted at every
    stage; the weight matrices are re-symmetrized after each update.
    """
    if not force:
        report = check_conditions(model)
        if not report.ok:
            raise ConditionsNotMet(report)
    n, d, m = model.horizon, model.state_dim, model.control_dim
    var_weight = np.zeros((n + 1, d, d))
    mean_weight = np.zeros((n + 1, d, d))
    linear = np.zeros((n + 1, d))
    constant = np.zeros(n + 1)
    dev_hessian = np.zeros((n, m, m))
    mean_hessian = np.zeros((n, m, m))
    dev_cross = np.zeros((n, d, m))
    mean_cross = np.zeros((n, d, m))
    mean_transition = np.zeros((n, d, d))

    var_weight[n] = model.terminal_state
    mean_weight[n] = model.terminal_state + model.terminal_state_mean
    linear[n] = model.terminal_linear + model.terminal_linear_mean
    constant[n] = 0.0

    for k in range(n - 1, -1, -1):
        lam, gam = var_weight[k + 1], mean_weight[k + 1]
        dev_hess, mean_hess, cross_dev, cross_mean = _hessians(model, k, lam, gam)
        try:
            chol_dev = cho_factor(dev_hess, lower=True)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(
                f"centered control Hessian not positive definite at stage {k}") from None
        try:
            chol_mean = cho_factor(mean_hess, lower=True)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(
                f"mean control Hessian not positive definite at stage {k}") from None
        if not (_is_pd(dev_hess) and _is_pd(mean_hess)):
            raise NotPositiveDefinite(
                f"control Hessian not positive definite at stage {k}")

        B, Bq, C, Cq, D, Dq, H, Hq = _stage_pieces(model, k)
        var_weight[k] = _sym(model.cost_state[k] + B.T @ lam @ B + D.T @ lam @ D
                             - cross_dev @ cho_solve(chol_dev, cross_dev.T))
        mean_weight[k] = _sym(model.cost_state[k] + model.cost_state_mean[k]
                              + Bq.T @ gam @ Bq + Dq.T @ lam @ Dq
                              - cross_mean @ cho_solve(chol_mean, cross_mean.T))
        transition = Bq - Cq @ cho_solve(chol_mean, cross_mean.T)
        mean_transition[k] = transition
        linear[k] = (model.cost_linear[k] + model.cost_linear_mean[k]
                     + transition.T @ linear[k + 1])
        constant[k] = constant[k + 1] - 0.25 * float(
            linear[k + 1] @ Cq @ cho_solve(chol_mean, Cq.T @ linear[k + 1]))
        dev_hessian[k] = dev_hess
        mean_hessian[k] = mean_hess
        dev_cross[k] = cross_dev
        mean_cross[k] = cross_mean

    return RiccatiSolution(var_weight, mean_weight, linear, constant,
                           dev_hessian, mean_hessian, dev_cross, mean_cross,
                           mean_transition)


def mean_variance_closed_form(gamma: float, b: float, sigma: float, delta: float,
                              n: int) -> RiccatiSolution:
    """Closed-form coefficient sequences for the mean-variance wealth model.

    With ``r = (sigma^2 + b^2 delta) / sigma^2``:

    * ``var_weight[k] = (gamma/2) r^-(n-k)``
    * ``mean_weight[k] = 0``, ``linear[k] = -1``
    * ``constant[k] = -(1/(2 gamma)) (r^(n-k) - 1)``

    The per-stage intermediates follow from the same sequences.
    """
    if gamma <= 0 or sigma <= 0 or delta <= 0:
        raise ValueError("need gamma > 0, sigma > 0, delta > 0")
    if n < 1:
        raise ValueError("need n >= 1")
    ratio = sigma**2 / (sigma**2 + b**2 * delta)
    ks = np.arange(n + 1)
    lam = (gamma / 2.0) * ratio ** (n - ks)
    chi = -(1.0 / (2.0 * gamma)) * ((1.0 / ratio) ** (n - ks) - 1.0)
    lam_next = lam[1:]
    dev = (sigma**2 * delta + b**2 * delta**2) * lam_next
    mean_h = sigma**2 * delta * lam_next
    cross = b * delta * lam_next
    shape4 = lambda v, extra: v.reshape((-1,) + extra)
    return RiccatiSolution(
        var_weight=shape4(lam, (1, 1)),
        mean_weight=np.zeros((n + 1, 1, 1)),
        linear=np.full((n + 1, 1), -1.0),
        constant=chi,
        dev_hessian=shape4(dev, (1, 1)),
        mean_hessian=shape4(mean_h, (1, 1)),
        dev_cross=shape4(cross, (1, 1)),
        mean_cross=np.zeros((n, 1, 1)),
        mean_transition=np.ones((n, 1, 1)),
    )


# ---------------------------------------------------------------------------
# Policies and values
# ---------------------------------------------------------------------------

@dataclass
class AffinePolicy:
    """Per-stage affine feedback ``a = G (x - xbar) + Gbar xbar + c``.

    ``gain_state`` acts on the deviation from the current state mean,
    ``gain_mean`` on the mean itself, ``offset`` is the constant part.
    """

    gain_state: np.ndarray   # (n, m, d)
    gain_mean: np.ndarray    # (n, m, d)
    offset: np.ndarray       # (n, m)

    def __post_init__(self):
        self.gain_state = np.asarray(self.gain_state, dtype=float)
        self.gain_mean = np.asarray(self.gain_mean, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        n, m, d = self.gain_state.shape
        if self.gain_mean.shape != (n, m, d) or self.offset.shape != (n, m):
            raise ValueError("inconsistent policy coefficient shapes")

    @property
    def horizon(self) -> int:
        return self.gain_state.shape[0]

    @property
    def control_dim(self) -> int:
        return self.gain_state.shape[1]

    @property
    def state_dim(self) -> int:
        return self.gain_state.shape[2]

    @classmethod
    def zero(cls, n: int, d: int, m: int) -> "AffinePolicy":
        return cls(np.zeros((n, m, d)), np.zeros((n, m, d)), np.zeros((n, m)))

    def action(self, stage: int, x, mean):
        """Action at ``x`` (shape (d,) or (N, d)) given the current state mean."""
        x = np.asarray(x, dtype=float)
        mean = np.asarray(mean, dtype=float)
        dev = x - mean
        return (dev @ self.gain_state[stage].T + mean @ self.gain_mean[stage].T
                + self.offset[stage])

    def mean_action(self, stage: int, mean):
        mean = np.asarray(mean, dtype=float)
        return mean @ self.gain_mean[stage].T + self.offset[stage]

    def perturbed(self, other: "AffinePolicy", eps: float) -> "AffinePolicy":
        return AffinePolicy(self.gain_state + eps * other.gain_state,
                            self.gain_mean + eps * other.gain_mean,
                            self.offset + eps * other.offset)

    def to_json(self) -> dict:
        return {"gain_state": self.gain_state.tolist(),
                "gain_mean": self.gain_mean.tolist(),
                "offset": self.offset.tolist()}

    @classmethod
    def from_json(cls, payload) -> "AffinePolicy":
        if isinstance(payload, str):
            payload = json.loads(payload)
        return cls(np.asarray(payload["gain_state"], dtype=float),
                   np.asarray(payload["gain_mean"], dtype=float),
                   np.asarray(payload["offset"], dtype=float))


def optimal_policy(model: LQModel, sol: RiccatiSolution) -> AffinePolicy:
    """Minimizing affine feedback, including the offset driven by the linear
    coefficient of the value function."""
    n, d, m = model.horizon, model.state_dim, model.control_dim
    gain_state = np.zeros((n, m, d))
    gain_mean = np.zeros((n, m, d))
    offset = np.zeros((n, m))
    for k in range(n):
        chol_dev = cho_factor(sol.dev_hessian[k], lower=True)
        chol_mean = cho_factor(sol.mean_hessian[k], lower=True)
        Cq = model.drift_control[k] + model.drift_control_mean[k]
        gain_state[k] = -cho_solve(chol_dev, sol.dev_cross[k].T)
        gain_mean[k] = -cho_solve(chol_mean, sol.mean_cross[k].T)
        offset[k] = -0.5 * cho_solve(chol_mean, Cq.T @ sol.linear[k + 1])
    return AffinePolicy(gain_state, gain_mean, offset)


@dataclass
class ExplicitControls:
    """Stage coefficients expressing the optimal control from the state alone.

    ``action_k(x) = feedback[k] @ x + constant[k]``, with ``constant`` built
    from the optimal mean flow ``state_means`` (the closed-loop mean
    propagated from the initial mean, offsets included).
    """

    feedback: np.ndarray     # (n, m, d)
    constant: np.ndarray     # (n, m)
    state_means: np.ndarray  # (n+1, d)

    def action(self, stage: int, x):
        x = np.asarray(x, dtype=float)
        return x @ self.feedback[stage].T + self.constant[stage]

    def to_json(self) -> dict:
        return {"feedback": self.feedback.tolist(),
                "constant": self.constant.tolist(),
                "state_means": self.state_means.tolist()}


def explicit_control_coefficients(model: LQModel, sol: RiccatiSolution) -> ExplicitControls:
    """Optimal control as a function of the state realization only.

    Substitutes the deterministic optimal mean flow into the feedback rule:
    the mean follows ``mean_{k+1} = mean_transition[k] @ mean_k +
    (drift_control + drift_control_mean) @ offset_k``, starting from the
    initial mean, so the returned coefficients reproduce the feedback policy
    along the optimal flow for every state realization.
    """
    policy = optimal_policy(model, sol)
    n, d, m = model.horizon, model.state_dim, model.control_dim
    means = np.zeros((n + 1, d))
    means[0] = model.initial_mean
    for k in range(n):
        Cq = model.drift_control[k] + model.drift_control_mean[k]
        means[k + 1] = sol.mean_transition[k] @ means[k] + Cq @ policy.offset[k]
    feedback = policy.gain_state.copy()
    constant = np.zeros((n, m))
    for k in range(n):
        constant[k] = ((policy.gain_mean[k] - policy.gain_state[k]) @ means[k]
                       + policy.offset[k])
    return ExplicitControls(feedback, constant, means)


def value_at(sol: RiccatiSolution, stage: int, law) -> float:
    """Quadratic value at a law given as ``(mean, cov)``, a GaussianState-like
    object (``.mean``/``.cov``), or a :class:`DiscreteMeasure`."""
    if not 0 <= stage <= sol.horizon:
        raise ValueError(f"stage {stage} out of range [0, {sol.horizon}]")
    if isinstance(law, DiscreteMeasure):
        disp = law.variance_form(sol.var_weight[stage])
        mean = law.mean()
    else:
        if hasattr(law, "mean") and hasattr(law, "cov"):
            mean = np.asarray(law.mean, dtype=float)
            cov = np.asarray(law.cov, dtype=float)
        else:
            mean, cov = law
            mean = np.asarray(mean, dtype=float)
            cov = np.asarray(cov, dtype=float)
        if mean.shape != (sol.state_dim,) or cov.shape != (sol.state_dim,) * 2:
            raise ValueError("law dimensions do not match the solution")
        disp = float(np.trace(sol.var_weight[stage] @ cov))
    return float(disp + mean @ sol.mean_weight[stage] @ mean
                 + sol.linear[stage] @ mean + sol.constant[stage])


def stationarity_residual(model: LQModel, sol: RiccatiSolution,
                          policy: AffinePolicy, stage: int, x, mean) -> np.ndarray:
    """Gradient of the per-stage control functional at ``policy``, at point ``x``.

    Vanishes identically (for every ``x``) at the minimizing feedback.
    """
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    a = policy.action(stage, x, mean)
    abar = policy.mean_action(stage, mean)
    Cq = model.drift_control[stage] + model.drift_control_mean[stage]
    return (2.0 * sol.dev_hessian[stage] @ a
            + 2.0 * (sol.mean_hessian[stage] - sol.dev_hessian[stage]) @ abar
            + 2.0 * sol.dev_cross[stage].T @ (x - mean)
            + 2.0 * sol.mean_cross[stage].T @ mean
            + Cq.T @ sol.linear[stage + 1])
