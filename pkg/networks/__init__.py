# networks/__init__.py

from .conditional import ConditionalModule
from .encoders import ENCODERS, MLPEncoder, PatchAttentionEncoder, build_encoder
from .epsilon import EpsilonNetwork
from .guidance import GuidanceClassifier
from .layers import BatchNorm1d, LayerNorm, Linear

__all__ = [
    'ConditionalModule',
    'ENCODERS',
    'MLPEncoder',
    'PatchAttentionEncoder',
    'build_encoder',
    'EpsilonNetwork',
    'GuidanceClassifier',
    'BatchNorm1d',
    'LayerNorm',
    'Linear',
]
