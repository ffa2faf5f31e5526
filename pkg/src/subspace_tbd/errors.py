"""Exception types raised by the library."""

import numpy as np


class GenerationFailedError(RuntimeError):
    """Rejection sampling ran out of attempts."""


class NearFieldError(ValueError):
    """A source sits on (or within ``r_min`` of) a microphone."""


class NotPSDError(np.linalg.LinAlgError):
    """Covariance could not be factored even at the maximum diagonal loading."""


class SNRUndefinedError(ValueError):
    """A finite SNR was requested but no target is ever valid."""


class UndefinedMetricError(ValueError):
    """The RMSE has no valid (frame, slot) pair to average over."""
