"""Uniform entry point over the five solvers."""

from __future__ import annotations

from . import backend
from .model import BlockAngularProblem
from .palm import PalmParams, PalmSolver
from .sgs_admm import SgsAdmmParams, SgsAdmmSolver

SOLVERS = ("sgs-admm", "spalm", "spalm-b", "dqa", "iapg")
_VARIANT = {"spalm": "SPALM", "spalm-b": "SPALMB", "dqa": "DQA", "iapg": "IAPG"}


def make_params(solver, tol=1e-5, tau=None, sigma=None, max_iter=None, threads=1, **extra):
    """Parameter object for ``solver``; ``None`` keeps each solver's default."""
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {', '.join(SOLVERS)}")
    kw = {"tol": tol, "threads": threads}
    if solver == "sgs-admm":
        if tau is not None:
            kw["tau"] = tau
        if sigma is not None:
            kw["sigma0"] = sigma
        if max_iter is not None:
            kw["max_iter"] = max_iter
        kw.update(extra)
        return SgsAdmmParams(**kw)
    kw["variant"] = _VARIANT[solver]
    if tau is not None:
        kw["tau"] = tau
    if sigma is not None:
        kw["sigma"] = sigma
    if max_iter is not None:
        kw["max_outer"] = max_iter
    kw.update(extra)
    return PalmParams(**kw)


def run_solver(problem: BlockAngularProblem, solver="sgs-admm", params=None, kernels=None, **kw):
    """Solve ``problem``; returns ``(PrimalDualIterate, SolveReport)``."""
    params = params or make_params(solver, **kw)
    kernels = kernels or backend.kernels
    if solver == "sgs-admm":
        s = SgsAdmmSolver(problem, params, kernels)
        state, rep = s.run(s.initial_state())
        return state.it, rep
    s = PalmSolver(problem, params, kernels)
    st, rep = s.run()
    return st.recovery.iterate, rep
