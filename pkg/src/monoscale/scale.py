"""Per-pair scale measurements and the four running scale estimators.

Estimators:
    - ``ma-add``: arithmetic mean of the measurements (additive error model).
    - ``ma-log``: geometric mean, i.e. mean of logs (multiplicative error model).
    - ``ar``: autoregressive filter with Yule-Walker weights.
    - ``kf``: scalar Kalman filter with a random-walk model (a = h = 1).

The update functions are pure: they take a state and return a new one.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, NotReadyError, SingularSystemError
from .geometry import as_vec3

EPS_INERTIAL = 1e-6
EPS_MONOCULAR = 1e-9
ESTIMATORS = ("ma-add", "ma-log", "ar", "kf")


@dataclass(frozen=True)
class ScaleMeasurement:
    """Ratio of inertial to monocular translation norms for one frame pair."""

    pair: tuple[int, int]
    inertial_norm: float
    monocular_norm: float
    lam: float
    valid: bool


def measure_lambda(
    inertial_t,
    monocular_t,
    eps_i: float = EPS_INERTIAL,
    eps_m: float = EPS_MONOCULAR,
    pair: tuple[int, int] = (0, 1),
) -> ScaleMeasurement:
    """``|t_inertial| / |t_monocular|``; invalid when either norm is under its epsilon."""
    ni = float(np.linalg.norm(as_vec3(inertial_t, "inertial translation")))
    nm = float(np.linalg.norm(as_vec3(monocular_t, "monocular translation")))
    if ni < eps_i or nm < eps_m:
        return ScaleMeasurement(pair, ni, nm, math.nan, False)
    return ScaleMeasurement(pair, ni, nm, ni / nm, True)


def invalid_measurement(pair: tuple[int, int]) -> ScaleMeasurement:
    return ScaleMeasurement(pair, math.nan, math.nan, math.nan, False)


# -- moving averages ---------------------------------------------------------


@dataclass(frozen=True)
class MovingAverageState:
    """Count and running sum (of values or of logs) of accepted measurements.

    ``seen`` counts every valid measurement offered, so the first one can be
    skipped.
    """

    count: int = 0
    total: float = 0.0
    seen: int = 0
    skip_first: bool = True

    @property
    def mean(self) -> float | None:
        return self.total / self.count if self.count else None


def _ma_accept(state: MovingAverageState, m: ScaleMeasurement) -> tuple[bool, MovingAverageState]:
    if not m.valid:
        return False, state
    state = replace(state, seen=state.seen + 1)
    if state.skip_first and state.seen == 1:
        return False, state
    return True, state


def ma_additive_update(
    state: MovingAverageState, m: ScaleMeasurement
) -> tuple[MovingAverageState, float | None]:
    """Fold one measurement into the arithmetic mean."""
    ok, state = _ma_accept(state, m)
    if ok:
        state = replace(state, count=state.count + 1, total=state.total + m.lam)
    return state, state.mean


def ma_multiplicative_update(
    state: MovingAverageState, m: ScaleMeasurement
) -> tuple[MovingAverageState, float | None]:
    """Fold one measurement into the geometric mean; nonpositive values are rejected."""
    if m.valid and not m.lam > 0:
        return state, _exp_or_none(state.mean)
    ok, state = _ma_accept(state, m)
    if ok:
        state = replace(state, count=state.count + 1, total=state.total + math.log(m.lam))
    return state, _exp_or_none(state.mean)


def _exp_or_none(x):
    return None if x is None else math.exp(x)


# -- autoregressive filter ---------------------------------------------------


def yule_walker_system(y: Sequence[float], order: int) -> tuple[np.ndarray, np.ndarray]:
    """Augmented ``(p+1) x (p+1)`` system ``A [K, a_1..a_p] = b``.

    Uses the signal mean ``mu`` and non-centered lagged correlations
    ``c_l = mean(y[i] * y[i-l])`` over all available products.
    """
    y = np.asarray(y, dtype=np.float64)
    p = int(order)
    if p < 1:
        raise InvalidConfigError(f"AR order must be >= 1, got {order}")
    if y.size <= p + 1:
        raise InvalidInputError(f"need more than {p + 1} samples for order {p}, got {y.size}")
    mu = float(np.mean(y))
    c = np.array([np.mean(y[lag:] * y[: y.size - lag]) for lag in range(p + 1)])
    A = np.empty((p + 1, p + 1))
    A[0, 0] = 1.0
    A[0, 1:] = mu
    A[1:, 0] = mu
    for r in range(p):
        for k in range(p):
            A[r + 1, k + 1] = c[abs(r - k)]
    b = np.concatenate([[mu], c[1:]])
    return A, b


def ar_fit_yule_walker(y: Sequence[float], order: int) -> tuple[float, np.ndarray]:
    """Fit the bias term ``K`` and weights ``a_1..a_p`` of an AR(p) model.

    A signal with (numerically) zero variance has no identifiable dynamics; it
    gets ``K = mean, a = 0``, which satisfies the system exactly.

    Raises:
        SingularSystemError: the system matrix is singular for a non-constant
            signal.
    """
    A, b = yule_walker_system(y, order)
    y = np.asarray(y, dtype=np.float64)
    scale = max(float(np.max(np.abs(y))), 1.0)
    if float(np.var(y)) <= (1e-12 * scale) ** 2:
        return float(np.mean(y)), np.zeros(int(order))
    if np.linalg.cond(A) > 1e12:
        raise SingularSystemError("Yule-Walker system is singular or ill-conditioned")
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    return float(x[0]), x[1:].copy()


@dataclass(frozen=True, eq=False)
class ArState:
    """AR filter state.

    Attributes:
        order: Filter order ``p``.
        weights: ``a_1..a_p`` or None before the first fit.
        K: Bias term.
        history: Last ``p`` outputs, most recent first.
        buffer: Recent measurements used for refits.
    """

    order: int = 4
    weights: np.ndarray | None = None
    K: float = 0.0
    history: tuple[float, ...] = ()
    buffer: tuple[float, ...] = ()

    @property
    def fitted(self) -> bool:
        return self.weights is not None


def ar_update(state: ArState, m: ScaleMeasurement) -> tuple[ArState, float]:
    """``y(i) = K + s(i) + sum_j a_j y(i-j)`` with ``s(i) = lambda(i) - K``.

    Missing history entries (fewer than ``p`` past outputs) count as the
    current measurement.
    """
    if not state.fitted:
        raise NotReadyError("AR filter has not been fitted")
    lam = m.lam
    hist = list(state.history[: state.order])
    hist += [lam] * (state.order - len(hist))
    s = lam - state.K
    y = state.K + s + float(np.dot(state.weights, hist))
    new_hist = (y,) + tuple(hist[: state.order - 1])
    return replace(state, history=new_hist), y


# -- Kalman filter -----------------------------------------------------------


@dataclass(frozen=True)
class KalmanState:
    """Scalar random-walk Kalman filter, ``a = h = 1``."""

    estimate: float
    variance: float
    q: float
    r: float

    def __post_init__(self):
        if not self.variance > 0:
            raise InvalidConfigError(f"variance must be positive, got {self.variance}")
        if not self.q >= 0:
            raise InvalidConfigError(f"q must be nonnegative, got {self.q}")
        if not self.r > 0:
            raise InvalidConfigError(f"r must be positive, got {self.r}")


def kf_predict(state: KalmanState) -> KalmanState:
    return replace(state, variance=state.variance + state.q)


def kf_update(state: KalmanState, z: float) -> KalmanState:
    if not math.isfinite(z):
        raise InvalidInputError(f"measurement must be finite, got {z}")
    p = state.variance
    k = p / (p + state.r)
    estimate = state.estimate + k * (z - state.estimate)
    # p * r / (p + r) equals p * (1 - k) but cannot round to zero when r << p
    return replace(state, estimate=estimate, variance=p * state.r / (p + state.r))


# -- streaming wrappers used by the pipeline ---------------------------------


class AdditiveAverage:
    name = "ma-add"

    def __init__(self, skip_first=True):
        self.state = MovingAverageState(skip_first=skip_first)
        self.value = None

    def update(self, m: ScaleMeasurement):
        self.state, self.value = ma_additive_update(self.state, m)
        return self.value


class LogAverage:
    name = "ma-log"

    def __init__(self, skip_first=True):
        self.state = MovingAverageState(skip_first=skip_first)
        self.value = None

    def update(self, m: ScaleMeasurement):
        self.state, self.value = ma_multiplicative_update(self.state, m)
        return self.value


class ArFilter:
    """AR filter that refits its weights on a sliding measurement buffer.

    Outputs None until the first fit. A singular fit disables the filter for
    the rest of the run (``disabled`` holds the reason).
    """

    name = "ar"

    def __init__(self, order=4, refit_every=50, window=500, skip_first=True):
        if order < 1:
            raise InvalidConfigError(f"AR order must be >= 1, got {order}")
        self.state = ArState(order=order)
        self.refit_every = refit_every
        self.window = window
        self.skip_first = skip_first
        self._buffer: deque[float] = deque(maxlen=window)
        self._since_fit = 0
        self._seen = 0
        self.value = None
        self.disabled: str | None = None

    def update(self, m: ScaleMeasurement):
        if not m.valid or self.disabled:
            return self.value
        self._seen += 1
        if self.skip_first and self._seen == 1:
            return self.value
        self._buffer.append(m.lam)
        self._since_fit += 1
        need = max(self.refit_every, self.state.order + 2)
        if len(self._buffer) >= need and (not self.state.fitted or self._since_fit >= self.refit_every):
            try:
                K, w = ar_fit_yule_walker(list(self._buffer), self.state.order)
            except SingularSystemError as exc:
                self.disabled = str(exc)
                self.value = None
                return None
            self.state = replace(self.state, K=K, weights=w, buffer=tuple(self._buffer))
            self._since_fit = 0
        if self.state.fitted:
            self.state, self.value = ar_update(self.state, m)
        return self.value


class KalmanScale:
    """Kalman filter over the raw pair measurements.

    The first accepted measurement initialises the estimate unless ``init`` is
    given; every later one runs predict then update.
    """

    name = "kf"

    def __init__(self, q=1e-5, r=1e-2, p0=1.0, init=None, skip_first=True):
        # validates the parameters up front
        KalmanState(estimate=0.0, variance=p0, q=q, r=r)
        self.q, self.r, self.p0 = q, r, p0
        self.skip_first = skip_first
        self._seen = 0
        self.state = None if init is None else KalmanState(init, p0, q, r)
        self.value = None if init is None else float(init)

    def update(self, m: ScaleMeasurement):
        if not m.valid:
            return self.value
        self._seen += 1
        if self.skip_first and self._seen == 1:
            return self.value
        if self.state is None:
            self.state = KalmanState(m.lam, self.p0, self.q, self.r)
        else:
            self.state = kf_update(kf_predict(self.state), m.lam)
        self.value = self.state.estimate
        return self.value


@dataclass
class EstimatorParams:
    kf_q: float = 1e-5
    kf_r: float = 1e-2
    kf_p0: float = 1.0
    kf_init: float | None = None
    ar_order: int = 4
    ar_refit_every: int = 50
    ar_window: int = 500
    skip_first: bool = True

    def validate(self):
        if self.kf_q < 0:
            raise InvalidConfigError("kf-q must be >= 0")
        if self.kf_r <= 0:
            raise InvalidConfigError("kf-r must be > 0")
        if self.kf_p0 <= 0:
            raise InvalidConfigError("kf-p0 must be > 0")
        if self.ar_order < 1:
            raise InvalidConfigError("ar-order must be >= 1")
        if self.ar_refit_every < 1 or self.ar_window < self.ar_order + 2:
            raise InvalidConfigError("AR refit interval/window too small")


def make_estimator(name: str, params: EstimatorParams | None = None):
    params = params or EstimatorParams()
    if name == "ma-add":
        return AdditiveAverage(params.skip_first)
    if name == "ma-log":
        return LogAverage(params.skip_first)
    if name == "ar":
        return ArFilter(params.ar_order, params.ar_refit_every, params.ar_window, params.skip_first)
    if name == "kf":
        return KalmanScale(params.kf_q, params.kf_r, params.kf_p0, params.kf_init, params.skip_first)
    raise InvalidConfigError(f"unknown estimator {name!r}; expected one of {ESTIMATORS}")


def expand_estimators(selection: str) -> list[str]:
    if selection == "all":
        return list(ESTIMATORS)
    names = [s.strip() for s in selection.split(",") if s.strip()]
    for n in names:
        if n not in ESTIMATORS:
            raise InvalidConfigError(f"unknown estimator {n!r}; expected one of {ESTIMATORS} or 'all'")
    return names
