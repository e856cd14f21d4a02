"""scikit-learn style wrappers around the Green function machinery.

``fit`` does not learn from data: it validates the parameters and computes
the quantities that every later evaluation shares (the ball, and for a
drift the contraction majorant). The data passed to ``fit`` only fixes the
source points of the kernel transformer.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .drift import DriftField
from .errors import ParameterError
from .geometry import Ball
from .kernels import StableParams, green_ball_values
from .perturb import SeriesConfig, SeriesWorkspace, _n_terms, majorant_report


def _make_drift(kind, d, k, vector):
    if kind == "zero":
        return DriftField.zero(d)
    if kind == "ou":
        return DriftField.ornstein_uhlenbeck(k, d)
    if kind == "constant":
        return DriftField.constant(vector if vector is not None else (0.0,) * d)
    raise ParameterError(f"drift kind {kind!r} is not supported by the estimators")


class _GreenBase(BaseEstimator):
    def __init__(self, d=2, alpha=1.5, center=None, radius=1.0, drift="zero", drift_k=0.0, drift_vector=None, n_max=4):
        self.d = d
        self.alpha = alpha
        self.center = center
        self.radius = radius
        self.drift = drift
        self.drift_k = drift_k
        self.drift_vector = drift_vector
        self.n_max = n_max

    def _setup(self):
        self.params_ = StableParams(self.d, self.alpha)
        c = (0.0,) * self.d if self.center is None else tuple(self.center)
        self.ball_ = Ball(c, self.radius)
        self.drift_ = _make_drift(self.drift, self.d, self.drift_k, self.drift_vector)
        self.config_ = SeriesConfig(n_max=self.n_max)
        self.majorant_ = None
        if not self.drift_.is_zero:
            self.majorant_ = majorant_report(self.params_, self.ball_, self.drift_)

    def _rows(self, x, ys):
        """Kernel values ``G~(x, y)`` for one ``x`` and many ``y``."""
        if self.drift_.is_zero:
            return green_ball_values(self.params_, self.ball_, x, ys)
        n = _n_terms(self.majorant_.contraction_factor, self.config_)
        ws = SeriesWorkspace(self.params_, self.ball_, self.drift_, x, self.config_, n_levels=n)
        return ws.tilde_at(ys)


class GreenKernelTransformer(TransformerMixin, _GreenBase):
    """Map points ``x`` to the row ``[G~(x, s_1), ..., G~(x, s_m)]`` over fitted sources ``s_j``."""

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[1] != self.d:
            raise ParameterError(f"sources must have {self.d} columns")
        self._setup()
        self.sources_ = X
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "sources_")
        X = check_array(X)
        if X.shape[1] != self.d:
            raise ParameterError(f"points must have {self.d} columns")
        return np.stack([self._rows(x, self.sources_) for x in X])


class GreenPairEstimator(RegressorMixin, _GreenBase):
    """Predict ``G~(x, y)`` for rows ``[x, y]`` of length ``2 d``."""

    def fit(self, X=None, y=None):
        if X is not None:
            X = check_array(X)
            if X.shape[1] != 2 * self.d:
                raise ParameterError(f"pairs must have {2 * self.d} columns")
            self.n_features_in_ = X.shape[1]
        self._setup()
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        if X.shape[1] != 2 * self.d:
            raise ParameterError(f"pairs must have {2 * self.d} columns")
        xs, ys = X[:, : self.d], X[:, self.d :]
        out = np.empty(len(X))
        # group by x so each series workspace is built once
        keys, inverse = np.unique(xs, axis=0, return_inverse=True)
        for i, x in enumerate(keys):
            sel = np.flatnonzero(inverse.ravel() == i)
            out[sel] = self._rows(x, ys[sel])
        return out
