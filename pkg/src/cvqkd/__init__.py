"""Desk-scale CV-QKD link simulator and postprocessing stack."""

__version__ = "0.1.0"

from .core import (
    ChannelParams,
    DetectorParams,
    SlotLayout,
    SystemParams,
    loss_db,
    preset,
    snr,
    transmittance,
)
from .keyrate import (
    KeyRateReport,
    delta_n,
    holevo_bound,
    mutual_information,
    optimize_va,
    secret_key_rate,
    sweep,
)

__all__ = [
    "ChannelParams",
    "DetectorParams",
    "SlotLayout",
    "SystemParams",
    "KeyRateReport",
    "loss_db",
    "transmittance",
    "snr",
    "preset",
    "mutual_information",
    "holevo_bound",
    "delta_n",
    "secret_key_rate",
    "optimize_va",
    "sweep",
    "__version__",
]
