"""Numerical toolkit for discrete-time mean-field (McKean-Vlasov) optimal control.

Submodules
----------
measure    discrete laws, moment functionals, image measures, pushforwards
model      finite mean-field models, lifted costs, validation, config tags
dpp        exact value recursion on laws, brute-force and factorization oracles
lq         linear-quadratic models, Riccati recursion, policies, closed forms
moments    exact cost evaluation by second-moment propagation
particles  seeded N-particle Monte Carlo evaluation
cli        scenario runner (``mfctrl`` console script)

Imports are lazy so the CLI can apply the ``MFCTRL_THREADS`` cap to BLAS
thread pools before any numerical module loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "DiscreteMeasure": "measure",
    "TabularMap": "measure",
    "image_measure": "measure",
    "pushforward": "measure",
    "FiniteMFModel": "model",
    "TransitionKernel": "model",
    "FirstOrderSpec": "model",
    "lifted_stage_cost": "model",
    "lifted_terminal_cost": "model",
    "validate": "model",
    "finite_model_from_config": "model",
    "solve": "dpp",
    "brute_force_value": "dpp",
    "rollforward": "dpp",
    "classical_factorization_check": "dpp",
    "first_order_value_tensor": "dpp",
    "first_order_value_tensors": "dpp",
    "first_order_check": "dpp",
    "SolveResult": "dpp",
    "ValueNode": "dpp",
    "BudgetExceeded": "dpp",
    "LQModel": "lq",
    "RiccatiSolution": "lq",
    "AffinePolicy": "lq",
    "check_conditions": "lq",
    "solve_riccati": "lq",
    "mean_variance_model": "lq",
    "mean_variance_closed_form": "lq",
    "optimal_policy": "lq",
    "explicit_control_coefficients": "lq",
    "value_at": "lq",
    "stationarity_residual": "lq",
    "ConditionsNotMet": "lq",
    "NotPositiveDefinite": "lq",
    "GaussianState": "moments",
    "exact_moment_step": "moments",
    "exact_cost": "moments",
    "exact_trajectory": "moments",
    "ParticleCloud": "particles",
    "SimulationResult": "particles",
    "simulate": "particles",
}

_SUBMODULES = ("measure", "model", "dpp", "lq", "moments", "particles",
               "fixtures", "cli")

__all__ = sorted(_EXPORTS) + list(_SUBMODULES)


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(import_module(f".{_EXPORTS[name]}", __name__), name)
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
