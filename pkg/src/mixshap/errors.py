"""Exception types shared across the package.

Everything raised on purpose derives from MixshapError so callers can
catch library failures without swallowing programming errors.
"""

from __future__ import annotations


class MixshapError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(MixshapError):
    """Feature schema is malformed (bad names, levels, or kinds)."""


class ArityMismatch(MixshapError):
    """Row length does not match the schema."""


class KindMismatch(MixshapError):
    """Cell value is incompatible with the feature kind (non-integral
    categorical code, or a missing/non-finite value)."""


class LevelOutOfRange(MixshapError):
    """Categorical code outside 1..L, or a label absent from the schema."""


class DimensionTooLarge(MixshapError):
    """Coalition enumeration requested above the supported feature count."""


class NonFiniteContribution(MixshapError):
    """A contribution vector contains NaN or infinity."""


class NonFinitePrediction(MixshapError):
    """The predictive model returned NaN or infinity."""


class SchemaUnsupported(MixshapError):
    """Sampler kind cannot handle this schema (raw categoricals need
    one-hot encoding first for the continuous-only estimators)."""


class SingularSystem(MixshapError):
    """The weighted least squares system could not be solved."""


class NotAPartition(MixshapError):
    """Feature groups do not form a partition of the feature indices."""


class SingularBlock(MixshapError):
    """Conditioning block of a covariance matrix is singular."""


class CholeskyFailure(MixshapError):
    """Covariance matrix is not positive definite."""


class AccuracyNotReached(MixshapError):
    """Requested integration accuracy was not met.

    Rectangle probabilities do not raise this; they return the best
    estimate with ``converged=False``. Kept for callers that want to
    escalate the flag into an error.
    """


class MaxSubdivisionsExceeded(MixshapError):
    """Adaptive quadrature hit its subdivision limit before converging."""

    def __init__(self, message: str, estimate: float | None = None):
        super().__init__(message)
        self.estimate = estimate


class DegenerateCovariance(MixshapError):
    """Estimated or supplied covariance is not positive definite."""


class RowMisalignment(MixshapError):
    """Predictor and response tables disagree on row count."""


class EmptyLeaf(MixshapError):
    """A tree leaf holds no training rows (should be unreachable)."""


class UnfittedCoalition(MixshapError):
    """A coalition was routed before its tree was fitted."""


class UnseenLevel(MixshapError):
    """Categorical level absent from the training data.

    Routing does not raise this: unseen levels fall back to the child
    with more training rows. The class exists for callers that validate
    inputs up front.
    """


class ZeroProbabilityCondition(MixshapError):
    """Conditioning event has probability below 1e-12."""


class LengthMismatch(MixshapError):
    """Aligned sequences differ in length."""


class NonPDCovariance(MixshapError):
    """Requested equicorrelation does not give a positive definite matrix."""


class ConfigError(MixshapError):
    """A CLI or experiment configuration file is invalid."""
