"""Subspace-likelihood track-before-detect for microphone arrays."""

from .errors import (GenerationFailedError, NearFieldError, NotPSDError, SNRUndefinedError,
                     UndefinedMetricError)
from .filtering import FilterConfig, FilterResult, run_filter, systematic_resample
from .likelihood import (BaselineLikelihood, BaselineParams, BinghamParams, BoundaryParams,
                         SubspaceLikelihood, baseline_loglik, subspace_loglik)
from .scenario import (BirthModel, MicArray, MotionModel, RoomConfig, build_perimeter_array,
                       generate_truth)
from .synth import synthesize
from .wavefield import FrequencyGrid, projector, steering, stft_grid

__version__ = "0.1.0"
