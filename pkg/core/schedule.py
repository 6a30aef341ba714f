"""
Noise schedules and the closed-form coefficients of the forward and
posterior processes.

Indexing follows the timestep: ``gamma[t - 1]`` is the variance added at
step t (t = 1..T) and ``delta_bar[t]`` is the retained signal after t steps,
with ``delta_bar[0] = 1``.
"""
import math
from typing import Dict, NamedTuple, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from .errors import ConfigurationError, UsageError

COSINE_OFFSET = 0.008
COSINE_CLIP_MIN = 1e-8
COSINE_CLIP_MAX = 0.999


class PosteriorCoeffs(NamedTuple):
    """Weights of z_0, z_t and g in the posterior mean, plus its variance."""

    lambda0: float
    lambda1: float
    lambda2: float
    var: float


class ScheduleSpec(BaseModel):
    """Serialized form of a schedule as stored in checkpoint manifests."""

    type: str
    T: int = Field(ge=2)
    beta1: Union[float, None] = None
    betaT: Union[float, None] = None
    s: Union[float, None] = None


class Schedule:
    """
    Precomputed per-timestep noise quantities. Immutable after construction.
    """

    def __init__(self, gamma: np.ndarray, spec: ScheduleSpec):
        gamma = np.asarray(gamma, dtype=np.float64)
        if gamma.ndim != 1 or gamma.size < 2:
            raise ConfigurationError("a schedule needs at least 2 timesteps")
        if np.any(gamma <= 0.0) or np.any(gamma >= 1.0):
            raise ConfigurationError("every gamma_t must lie strictly inside (0, 1)")
        self.spec = spec
        self.T = int(gamma.size)
        self.gamma = gamma
        self.delta = 1.0 - gamma
        self.delta_bar = np.concatenate([[1.0], np.cumprod(self.delta)])
        prev = self.delta_bar[:-1]
        curr = self.delta_bar[1:]
        self.posterior_var = gamma * (1.0 - prev) / (1.0 - curr)
        for array in (self.gamma, self.delta, self.delta_bar, self.posterior_var):
            array.setflags(write=False)

    @property
    def kind(self) -> str:
        return self.spec.type

    def check_t(self, t: int) -> int:
        if not 1 <= int(t) <= self.T:
            raise UsageError(f"timestep {t} outside 1..{self.T}")
        return int(t)

    def to_dict(self) -> Dict:
        return self.spec.model_dump(exclude_none=True)

    def get_status(self) -> Dict:
        return {
            'type': self.kind,
            'T': self.T,
            'gamma_first': round(float(self.gamma[0]), 6),
            'gamma_last': round(float(self.gamma[-1]), 6),
            'delta_bar_T': round(float(self.delta_bar[-1]), 6),
        }


def make_linear(T: int, beta1: float = 1e-4, betaT: float = 0.02) -> Schedule:
    """gamma rises at a constant rate from beta1 to betaT."""
    if T < 2:
        raise ConfigurationError(f"T must be at least 2, got {T}")
    if not 0.0 < beta1 <= betaT < 1.0:
        raise ConfigurationError(f"need 0 < beta1 <= betaT < 1, got beta1={beta1}, betaT={betaT}")
    steps = np.arange(T, dtype=np.float64)
    gamma = beta1 + steps / (T - 1) * (betaT - beta1)
    # exact endpoints
    gamma[0], gamma[-1] = beta1, betaT
    return Schedule(gamma, ScheduleSpec(type='linear', T=T, beta1=beta1, betaT=betaT))


def cosine_signal(u, T: int, s: float):
    """f(u) = cos^2(((u / T + s) / (1 + s)) * pi / 2)."""
    return np.cos(((np.asarray(u, dtype=np.float64) / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2


def cosine_gamma_unclipped(T: int, s: float = COSINE_OFFSET) -> np.ndarray:
    f = cosine_signal(np.arange(T + 1), T, s)
    delta_bar = f / f[0]
    return 1.0 - delta_bar[1:] / delta_bar[:-1]


def make_cosine(T: int, s: float = COSINE_OFFSET) -> Schedule:
    """Signal follows a squared cosine; gamma is clipped to (1e-8, 0.999)."""
    if T < 2:
        raise ConfigurationError(f"T must be at least 2, got {T}")
    if s <= 0.0:
        raise ConfigurationError(f"cosine offset s must be positive, got {s}")
    gamma = np.clip(cosine_gamma_unclipped(T, s), COSINE_CLIP_MIN, COSINE_CLIP_MAX)
    return Schedule(gamma, ScheduleSpec(type='cosine', T=T, s=s))


SCHEDULES = {
    'linear': make_linear,
    'cosine': make_cosine,
}


def schedule_from_spec(spec: Union[ScheduleSpec, Dict]) -> Schedule:
    if isinstance(spec, dict):
        spec = ScheduleSpec.model_validate(spec)
    if spec.type == 'linear':
        return make_linear(spec.T, spec.beta1, spec.betaT)
    if spec.type == 'cosine':
        return make_cosine(spec.T, spec.s if spec.s is not None else COSINE_OFFSET)
    raise ConfigurationError(f"unknown schedule type {spec.type!r}; expected one of {sorted(SCHEDULES)}")


def posterior_coeffs(s: Schedule, t: int) -> PosteriorCoeffs:
    """Coefficients of q(z_{t-1} | z_t, z_0, g) = N(l0 z_0 + l1 z_t + l2 g, var)."""
    t = s.check_t(t)
    gamma = s.gamma[t - 1]
    prev = s.delta_bar[t - 1]
    curr = s.delta_bar[t]
    lambda0 = gamma * math.sqrt(prev) / (1.0 - curr)
    lambda1 = math.sqrt(s.delta[t - 1]) * (1.0 - prev) / (1.0 - curr)
    # the affine identity fixes lambda2
    lambda2 = 1.0 - lambda0 - lambda1
    return PosteriorCoeffs(float(lambda0), float(lambda1), float(lambda2), float(s.posterior_var[t - 1]))


def forward_marginal_params(s: Schedule, t: int) -> Tuple[float, float, float]:
    """(coefficient of z_0, coefficient of g, variance) of q(z_t | z_0, g)."""
    t = s.check_t(t)
    root = math.sqrt(s.delta_bar[t])
    return root, 1.0 - root, float(1.0 - s.delta_bar[t])
