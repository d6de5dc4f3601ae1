"""Rate-splitting multigroup multicast beamforming over multiple subcarriers."""
from .model import (
    CONVENTION_TAG,
    ChannelSet,
    CommonRateSplit,
    PowerBudget,
    PrecoderSet,
    RateReport,
    SystemDims,
    ValidationError,
)

__all__ = [
    "CONVENTION_TAG",
    "ChannelSet",
    "CommonRateSplit",
    "PowerBudget",
    "PrecoderSet",
    "RateReport",
    "SystemDims",
    "ValidationError",
]
__version__ = "0.1.0"
