"""SecAgg and SecAgg+XNoise round protocol."""
from .encoding import FixedPointEncoder
from .messages import Stage, deserialize, serialize
from .network import SimNetwork
from .params import ProtocolAbort, ProtocolParams, ThreatMode, Variant
from .round import Adversary, DropPoint, RoundResult, make_pki, run_round

__all__ = [
    "Adversary", "DropPoint", "FixedPointEncoder", "ProtocolAbort", "ProtocolParams", "RoundResult",
    "SimNetwork", "Stage", "ThreatMode", "Variant", "deserialize", "make_pki", "run_round", "serialize",
]
