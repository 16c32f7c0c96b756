"""Neural decoders: kinematic filter, discriminants and band-power trigger."""

from .discriminant import (
    LdaModel,
    MulticlassModel,
    argmax_class,
    lda_fit,
    lda_predict,
    multiclass_fit,
    multiclass_predict,
    multiclass_predict_batch,
    rate_threshold_decode,
)
from .kalman import (
    KalmanBelief,
    KalmanModel,
    initial_belief,
    kalman_filter,
    kalman_fit,
    kalman_step,
    kinematic_state,
)
from .trigger import MU_BAND, TriggerResult, band_power, band_power_trigger

__all__ = [
    "KalmanBelief",
    "KalmanModel",
    "LdaModel",
    "MU_BAND",
    "MulticlassModel",
    "TriggerResult",
    "argmax_class",
    "band_power",
    "band_power_trigger",
    "initial_belief",
    "kalman_filter",
    "kalman_fit",
    "kalman_step",
    "kinematic_state",
    "lda_fit",
    "lda_predict",
    "multiclass_fit",
    "multiclass_predict",
    "multiclass_predict_batch",
    "rate_threshold_decode",
]
