"""Dynamic noisy multi-client functional encryption for private logistic regression."""

from .dp import (BudgetLedger, PointMass, PrivacyParams, RoundedGaussian, allocate_schedule,
                 gm_calibrate)
from .dyno import dyno_dec, dyno_ekeygen, dyno_enc, dyno_keygen, dyno_setup
from .errors import BudgetRefused, DynoError
from .logreg import expansion_size, predict_accuracy, synthetic_dataset
from .protocol import (Analyst, Authority, ProtocolConfig, open_study, run_training,
                       submit_dataset)
from .ring import FixedPointCodec, Modulus, RingVector

__all__ = [
    "Analyst", "Authority", "BudgetLedger", "BudgetRefused", "DynoError", "FixedPointCodec",
    "Modulus", "PointMass", "PrivacyParams", "ProtocolConfig", "RingVector", "RoundedGaussian",
    "allocate_schedule", "dyno_dec", "dyno_ekeygen", "dyno_enc", "dyno_keygen", "dyno_setup",
    "expansion_size", "gm_calibrate", "open_study", "predict_accuracy", "run_training",
    "submit_dataset", "synthetic_dataset",
]
