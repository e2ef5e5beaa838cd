"""Online change detection and sparse localization of admittance updates.

Detection is threshold-based on the Ohm's-law prediction-error norm; the
turning point test runs alongside as a whiteness sanity monitor, not as the
trigger.  Localization solves a weighted l1 regression for the sparse
symmetric difference matrix over a short post-event window, since only a
handful of admittance entries change in a switching action, trip, or fault.
"""

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as _normal

from . import symvec
from .identify import design_operator, lowrank_identify
from .netmodel import AdmittanceMatrix
from .phasors import PhasorDataset
from .solvers import SparseSolution, _NormalForm, adaptive_lasso, lasso_path_solve


def prediction_error(y0, v_k, i_k):
    """e(k) = i(k) - Y0 v(k)."""
    Y = y0.to_dense() if isinstance(y0, AdmittanceMatrix) else np.asarray(y0)
    v_k = np.asarray(v_k)
    i_k = np.asarray(i_k)
    if Y.shape[1] != v_k.shape[0] or i_k.shape[0] != Y.shape[0]:
        raise ValueError("shape mismatch between model and measurements")
    return i_k - Y @ v_k


@dataclass(frozen=True)
class TurningPointResult:
    n: int
    turning_points: int
    z_score: float
    p_value: float
    is_white: bool

    @property
    def verdict(self):
        return "white" if self.is_white else "not-white"


def turning_point_test(series, alpha: float = 0.05) -> TurningPointResult:
    """Nonparametric whiteness check counting local extrema.

    Under i.i.d. data the count is approximately normal with mean 2(n-2)/3
    and variance (16n-29)/90; the null is rejected two-sided at level alpha.
    """
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n < 20:
        raise ValueError(f"turning point test needs at least 20 samples, got {n}")
    d = np.diff(x)
    t_count = int(np.sum(d[:-1] * d[1:] < 0))
    mean = 2.0 * (n - 2) / 3.0
    var = (16.0 * n - 29.0) / 90.0
    z = (t_count - mean) / math.sqrt(var)
    p = 2.0 * float(_normal.sf(abs(z)))
    crit = float(_normal.ppf(1.0 - alpha / 2.0))
    return TurningPointResult(n=n, turning_points=t_count, z_score=float(z),
                              p_value=p, is_white=abs(z) <= crit)


@dataclass(frozen=True)
class Detection:
    t: int
    residual: float
    threshold: float


@dataclass
class DetectorState:
    """Sequential single-owner detector state.

    ``threshold`` is either a number or "auto", in which case the threshold
    is ``c`` times the median of the recent quiet-residual history, floored
    at ``min_threshold`` (so a noiseless stream never fires spuriously).
    Residuals are added to the history only while quiet, which keeps the
    auto threshold from absorbing post-event energy.
    """

    y0: AdmittanceMatrix
    threshold: float | str = "auto"
    c: float = 10.0
    window: int = 300
    warmup: int = 30
    min_threshold: float = 1e-8
    residuals: deque = field(init=False)
    slot: int = field(default=0, init=False)
    mode: int = field(default=0, init=False)
    event_time: int | None = field(default=None, init=False)

    def __post_init__(self):
        self.residuals = deque(maxlen=self.window)
        self._y_dense = self.y0.to_dense()
        if isinstance(self.threshold, str) and self.threshold != "auto":
            raise ValueError(f"threshold must be a number or 'auto', not {self.threshold!r}")

    def current_threshold(self):
        """Active threshold, or None while the auto mode is warming up."""
        if not isinstance(self.threshold, str):
            return float(self.threshold)
        if len(self.residuals) < self.warmup:
            return None
        return max(self.c * float(np.median(self.residuals)), self.min_threshold)

    def whiteness(self, alpha: float = 0.05) -> TurningPointResult:
        return turning_point_test(np.array(self.residuals), alpha)

    def rebase(self, y_new: AdmittanceMatrix):
        """Adopt an updated model after a localized event; history is kept
        (it contains quiet residuals only)."""
        self.y0 = y_new
        self._y_dense = y_new.to_dense()
        self.mode = 0
        self.event_time = None


def detect_step(state: DetectorState, v_k, i_k):
    """Process one slot; returns a Detection when ||e(k)|| crosses the
    threshold, None while quiet."""
    k = state.slot
    state.slot = k + 1
    e = i_k - state._y_dense @ np.asarray(v_k)
    r = float(np.linalg.norm(e))
    tau = state.current_threshold()
    if tau is not None and r > tau:
        state.mode = 1
        if state.event_time is None:
            state.event_time = k
        return Detection(t=k, residual=r, threshold=tau)
    state.residuals.append(r)
    return None


# ---------------------------------------------------------------- localization

@dataclass
class LocalizationResult:
    delta: AdmittanceMatrix
    support: tuple
    solution: object
    residual: float  # relative Ohm residual of Y0 + delta on the window


def localize(y0, window_ds: PhasorDataset, method: str = "adaptive",
             lam=None, gamma: float = 1.0, lam_rel: float = 1e-6,
             support_rtol: float = 1e-6, **solver_kwargs) -> LocalizationResult:
    """Sparse estimate of the admittance change over a post-event window.

    Solves the weighted l1 regression with b = vec(I - Y0 V).  ``lam=None``
    scales the penalty to ``lam_rel`` times the zero-solution gradient
    magnitude, which is noise-free-appropriate; pass an explicit value (or
    run cross-validation upstream) for noisy streams.
    """
    Y0 = y0.to_dense() if isinstance(y0, AdmittanceMatrix) else np.asarray(y0)
    terminals = window_ds.terminals
    V, I = window_ds.V, window_ds.I
    if Y0.shape != (window_ds.dim, window_ds.dim):
        raise ValueError("model dimension does not match the window")
    b = (I - Y0 @ V).ravel(order="F")
    op = design_operator(V)
    nf = _NormalForm(op, b)
    grad0 = 2.0 * float(np.max(np.abs(nf.atb))) if nf.atb.size else 0.0
    if grad0 == 0.0:  # window already explained by Y0 exactly
        zero = AdmittanceMatrix.zeros(terminals)
        sol = SparseSolution(x=np.zeros(nf.cols, dtype=complex), lam=0.0, gamma=None,
                             weights=np.ones(nf.cols), objective=float(nf.bnorm2),
                             iterations=0, converged=True, pg_residual=0.0)
        return LocalizationResult(delta=zero, support=(), solution=sol, residual=0.0)
    if lam is None:
        lam = lam_rel * grad0
    if method == "adaptive":
        sol = adaptive_lasso(nf, lam=float(lam), gamma=float(gamma), **solver_kwargs)
    elif method == "lasso":
        sol = lasso_path_solve(nf, lam=float(lam), **solver_kwargs)
    else:
        raise ValueError(f"unknown method {method!r}")
    D = symvec.f_unvec(sol.x)
    delta = AdmittanceMatrix.from_dense(D, terminals)
    tol = support_rtol * delta.max_abs()
    support = tuple(sorted(
        (terminals[i], terminals[j]) for i, j, v in delta.nonzeros(tol)
    ))
    resid = np.linalg.norm(I - (Y0 + D) @ V, "fro") / max(np.linalg.norm(I, "fro"), 1e-300)
    return LocalizationResult(delta=delta, support=support, solution=sol,
                              residual=float(resid))


def samples_needed(changed_entries: int, dim: int, margin_factor: int = 3) -> int:
    """Window-length heuristic for sparse recovery of a change with the
    given number of nonzero entries.

    A unique S-sparse solution needs the design's Spark to exceed 2S;
    computing Spark exactly is intractable, so this settles for the row
    count needed for rank 2S+1 (each slot contributes ``dim`` rows) times a
    safety margin.  Pair it with :func:`recovery_rank_check` on small cases.
    """
    if changed_entries < 1:
        raise ValueError("expected at least one changed entry")
    if dim < 1 or margin_factor < 1:
        raise ValueError("dim and margin_factor must be positive")
    return math.ceil((2 * changed_entries + 1) / dim) * margin_factor


def recovery_rank_check(V_window, changed_entries: int) -> bool:
    """Post-hoc necessary condition on a materializable window: the dense
    design must reach rank 2S+1.  Small cases only (the dense operator is
    dim^2 K by (dim^2+dim)/2)."""
    V = np.asarray(V_window)
    n, k = V.shape
    if n * n * k * symvec.tril_size(n) > 5e7:
        raise ValueError("window too large to materialize the dense design")
    A = symvec.design_dense(V)
    return int(np.linalg.matrix_rank(A)) >= 2 * changed_entries + 1


# ------------------------------------------------------------------ tracking

@dataclass
class TrackedEvent:
    t: int
    residual: float
    threshold: float
    localization: LocalizationResult | None
    resolved: bool
    method: str


def default_window(ds: PhasorDataset, margin_factor: int = 3) -> int:
    """Localization window sized for one switching action on the widest
    phase set present (4 blocks of p x p entries).

    Floored at dim + 2 slots: below dim slots the window's voltage matrix
    cannot have full row rank, so an exact solution family exists and the
    recovered values depend on the sparsity prior alone instead of data.
    """
    p = max(len(phases) for _, phases in _phases_by_node(ds))
    return max(samples_needed(4 * p * p, ds.dim, margin_factor), ds.dim + 2)


def run_detector(ds: PhasorDataset, y0: AdmittanceMatrix, *,
                 threshold="auto", c: float = 10.0, window: int = 300,
                 warmup: int = 30, min_threshold: float = 1e-8,
                 loc_window: int | None = None, method: str = "adaptive",
                 lam=None, gamma: float = 1.0, accept_tol: float = 1e-6,
                 reidentify: bool = True, **solver_kwargs):
    """Stream a dataset through the detector, localizing each event.

    When the localized model passes ``accept_tol`` on the window the
    detector rebases on Y0 + delta; otherwise it attempts a full
    re-identification on the window, and failing that leaves the model
    stale and the event marked unresolved (further alarms are then
    suppressed until something rebases).  Returns (events, final_state).
    """
    state = DetectorState(y0=y0, threshold=threshold, c=c, window=window,
                          warmup=warmup, min_threshold=min_threshold)
    events = []
    k = 0
    while k < ds.slots:
        det = detect_step(state, ds.V[:, k], ds.I[:, k])
        if det is None:
            k += 1
            continue
        k += 1
        if events and not events[-1].resolved:
            continue  # stale model keeps alarming; one unresolved record is enough
        w = loc_window if loc_window is not None else default_window(ds)
        stop = min(det.t + w, ds.slots)
        win = ds.window(det.t, stop)
        loc = localize(state.y0, win, method=method, lam=lam, gamma=gamma,
                       **solver_kwargs)
        resolved = False
        how = method
        if loc.residual <= accept_tol:
            state.rebase(state.y0 + loc.delta)
            resolved = True
        elif reidentify:
            part = lowrank_identify(win, method=method, lam=1e-6, gamma=1.0,
                                    **solver_kwargs)
            refit = part.full_matrix()
            resid = np.linalg.norm(win.I - refit.to_dense() @ win.V, "fro") \
                / max(np.linalg.norm(win.I, "fro"), 1e-300)
            if resid <= accept_tol:
                state.rebase(refit)
                resolved = True
                how = "reidentify"
        events.append(TrackedEvent(t=det.t, residual=det.residual,
                                   threshold=det.threshold, localization=loc,
                                   resolved=resolved, method=how))
        if resolved:
            k = stop
            state.slot = stop  # the window's slots were consumed unseen
    return events, state


def _phases_by_node(ds: PhasorDataset):
    by_node = {}
    for node, phase in ds.terminals:
        by_node.setdefault(node, set()).add(phase)
    return [(n, tuple(sorted(p))) for n, p in by_node.items()]
