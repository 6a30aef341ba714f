"""
Conditional diffusion in label space.

The forward process pulls the one-hot label z_0 toward the guidance
prediction g while adding Gaussian noise:

    q(z_t | z_0, g) = N(sqrt(db_t) z_0 + (1 - sqrt(db_t)) g, (1 - db_t) I)

with db_t = delta_bar[t]. The reverse process starts from N(g, I), predicts
the injected noise, inverts the marginal to estimate z_0, and steps with the
posterior mean l0 z0_hat + l1 z_t + l2 g.

Arrays here are plain numpy: z-values are [C] or [B, C] and ``t`` is a
scalar or a length-B integer array. Networks enter through ``EpsFn``
callables so oracle denoisers can stand in for trained ones.
"""
import hashlib
import logging
import math
from contextlib import contextmanager
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from .errors import ShapeError, UsageError
from .schedule import Schedule, posterior_coeffs
from .tensor import Tensor, no_grad, one_hot

logger = logging.getLogger(__name__)

TimeLike = Union[int, np.ndarray]
EpsFn = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
GuidanceFn = Callable[[np.ndarray], np.ndarray]

LIKELIHOOD_VAR_FLOOR = 1e-4
PREDICT_CHUNK = 256


def _timesteps(s: Schedule, t: TimeLike) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    if t.size == 0 or t.min() < 1 or t.max() > s.T:
        raise UsageError(f"timestep outside 1..{s.T}")
    return t


def _per_row(values: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Shape per-timestep coefficients so they broadcast against z ([C] or [B, C])."""
    return values[..., None] if values.ndim and z.ndim == 2 else values


def forward_sample(s: Schedule, z0: np.ndarray, g: np.ndarray, t: TimeLike, eps: np.ndarray) -> np.ndarray:
    """Draw from the closed-form marginal q(z_t | z_0, g) given the unit noise ``eps``."""
    t = _timesteps(s, t)
    z0, g, eps = np.asarray(z0, float), np.asarray(g, float), np.asarray(eps, float)
    root = _per_row(np.sqrt(s.delta_bar[t]), z0)
    return root * z0 + (1.0 - root) * g + np.sqrt(1.0 - root ** 2) * eps


def forward_step(s: Schedule, z_prev: np.ndarray, g: np.ndarray, t: TimeLike, eta: np.ndarray) -> np.ndarray:
    """Single-step kernel z_t = sqrt(1 - gamma_t) z_{t-1} + (1 - sqrt(1 - gamma_t)) g + sqrt(gamma_t) eta."""
    t = _timesteps(s, t)
    z_prev = np.asarray(z_prev, float)
    gamma = _per_row(s.gamma[t - 1], z_prev)
    keep = np.sqrt(1.0 - gamma)
    return keep * z_prev + (1.0 - keep) * np.asarray(g, float) + np.sqrt(gamma) * np.asarray(eta, float)


def estimate_z0(s: Schedule, z_t: np.ndarray, g: np.ndarray, t: TimeLike, eps_hat: np.ndarray) -> np.ndarray:
    """Invert the marginal: z0_hat = (z_t - (1 - sqrt(db_t)) g - sqrt(1 - db_t) eps_hat) / sqrt(db_t)."""
    t = _timesteps(s, t)
    z_t = np.asarray(z_t, float)
    root = _per_row(np.sqrt(s.delta_bar[t]), z_t)
    return (z_t - (1.0 - root) * np.asarray(g, float) - np.sqrt(1.0 - root ** 2) * np.asarray(eps_hat, float)) / root


def posterior_mean(s: Schedule, z0: np.ndarray, z_t: np.ndarray, g: np.ndarray, t: int) -> np.ndarray:
    c = posterior_coeffs(s, t)
    return c.lambda0 * np.asarray(z0, float) + c.lambda1 * np.asarray(z_t, float) + c.lambda2 * np.asarray(g, float)


class ReverseStep(NamedTuple):
    z_prev: np.ndarray
    z0_hat: np.ndarray


def reverse_step(eps_fn: EpsFn, s: Schedule, w: np.ndarray, z_t: np.ndarray, g: np.ndarray,
                 t: int, eta: np.ndarray) -> ReverseStep:
    """
    One ancestral step z_t -> z_{t-1} for a batch sharing timestep t.

    w: [B, ch, H, W]; z_t, g, eta: [B, C]. The final step (t = 1) is
    deterministic and returns z0_hat itself.
    """
    t = int(_timesteps(s, t))
    z_t = np.asarray(z_t, float)
    g = np.asarray(g, float)
    steps = np.full(z_t.shape[0], t)
    eps_hat = np.asarray(eps_fn(w, z_t, g, steps), float)
    if eps_hat.shape != z_t.shape:
        raise ShapeError(f"denoiser returned {eps_hat.shape}, expected {z_t.shape}")
    z0_hat = estimate_z0(s, z_t, g, t, eps_hat)
    c = posterior_coeffs(s, t)
    mean = c.lambda0 * z0_hat + c.lambda1 * z_t + c.lambda2 * g
    if t == 1:
        return ReverseStep(mean, z0_hat)
    return ReverseStep(mean + math.sqrt(c.var) * np.asarray(eta, float), z0_hat)


def network_eps_fn(net) -> EpsFn:
    """Wrap an epsilon network as a tape-free numpy denoiser."""

    def eps_fn(w, z_t, g, t):
        with no_grad():
            return net(Tensor(w), z_t, g, t).data

    return eps_fn


def training_loss(net, guidance: GuidanceFn, s: Schedule, batch: Tuple[np.ndarray, np.ndarray],
                  rng: np.random.Generator, t: Optional[np.ndarray] = None,
                  eps: Optional[np.ndarray] = None) -> Tensor:
    """
    Noise-estimation loss: mean over the batch of ||eps - eps_theta(w, z_t, g, t)||^2
    with t ~ U{1..T} and eps ~ N(0, I) drawn per sample.
    """
    images, labels = batch
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise UsageError("training_loss needs a nonempty batch")
    g = np.asarray(guidance(images), float)
    batch_size, num_classes = g.shape
    z0 = one_hot(labels, num_classes)
    if t is None:
        t = rng.integers(1, s.T + 1, size=batch_size)
    if eps is None:
        eps = rng.standard_normal((batch_size, num_classes))
    z_t = forward_sample(s, z0, g, t, eps)
    residual = Tensor(eps) - net(Tensor(images), z_t, g, t)
    return (residual * residual).sum(axis=1).mean()


class Prediction(NamedTuple):
    labels: np.ndarray
    probs: np.ndarray
    z0_mean: np.ndarray


def image_key(w: np.ndarray) -> List[int]:
    """Four 32-bit words of the SHA-256 of an image's float64 pixels."""
    # adding 0.0 folds -0.0 into 0.0
    pixels = np.ascontiguousarray(np.asarray(w, dtype=np.float64) + 0.0)
    digest = hashlib.sha256(pixels.tobytes()).digest()
    return [int.from_bytes(digest[i:i + 4], 'little') for i in range(0, 16, 4)]


def chain_noise(seed: int, n_chains: int, images: np.ndarray, T: int, num_classes: int) -> np.ndarray:
    """
    Gaussian draws for reverse chains, [n_chains, B, T + 1, C]: slot 0 is the
    z_T offset and slot k the step-(T + 1 - k) noise. Chain c of image w reads
    the stream seeded by (seed + c, image_key(w)), so the draws depend only on
    the pixels and never on batch position or chunking.
    """
    if seed < 0:
        raise UsageError(f"seed must be non-negative, got {seed}")
    noise = np.empty((n_chains, len(images), T + 1, num_classes))
    for row, w in enumerate(images):
        key = image_key(w)
        for c in range(n_chains):
            noise[c, row] = np.random.default_rng([seed + c, *key]).standard_normal((T + 1, num_classes))
    return noise


def _run_chains(eps_fn: EpsFn, s: Schedule, images: np.ndarray, g: np.ndarray,
                noise: np.ndarray, keep_path: bool = False):
    """Reverse chains for every (chain, image) pair; returns final z0 [n, B, C] and optionally the paths."""
    n, (batch, num_classes) = len(noise), g.shape
    tiled_w = np.concatenate([images] * n, axis=0)
    tiled_g = np.concatenate([g] * n, axis=0)
    flat = noise.reshape(n * batch, s.T + 1, num_classes)
    z = tiled_g + flat[:, 0]
    path = [z.copy()] if keep_path else None
    for t in range(s.T, 0, -1):
        z = reverse_step(eps_fn, s, tiled_w, z, tiled_g, t, flat[:, s.T + 1 - t]).z_prev
        if keep_path:
            path.append(z.copy())
    final = z.reshape(n, batch, num_classes)
    if keep_path:
        return final, np.stack(path, axis=1).reshape(n, batch, s.T + 1, num_classes)
    return final, None


def softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_batch(eps_fn: EpsFn, guidance: GuidanceFn, s: Schedule, images: np.ndarray,
                  n_samples: int = 10, seed: int = 0) -> Prediction:
    """
    Average the final z0_hat of ``n_samples`` reverse chains per image,
    starting from z_T ~ N(g, I). Chain draws are keyed by image content (see
    ``chain_noise``), so an image gets the same prediction in any batch.
    """
    if n_samples < 1:
        raise UsageError(f"n_samples must be at least 1, got {n_samples}")
    images = np.asarray(images, float)
    if images.ndim != 4:
        raise ShapeError(f"expected a [B, ch, H, W] batch, got {images.shape}")
    means = []
    for start in range(0, len(images), PREDICT_CHUNK):
        chunk = images[start:start + PREDICT_CHUNK]
        g = np.asarray(guidance(chunk), float)
        noise = chain_noise(seed, n_samples, chunk, s.T, g.shape[1])
        final, _ = _run_chains(eps_fn, s, chunk, g, noise)
        means.append(final.mean(axis=0))
    z0_mean = np.concatenate(means, axis=0)
    probs = softmax_rows(z0_mean)
    # argmax returns the lowest index among ties
    return Prediction(probs.argmax(axis=1), probs, z0_mean)


def predict(eps_fn: EpsFn, guidance: GuidanceFn, s: Schedule, w: np.ndarray,
            n_samples: int = 10, seed: int = 0) -> Tuple[int, np.ndarray]:
    """Label and class probabilities for one image [ch, H, W]."""
    w = np.asarray(w, float)
    if w.ndim != 3:
        raise ShapeError(f"expected one [ch, H, W] image, got {w.shape}")
    result = predict_batch(eps_fn, guidance, s, w[None], n_samples, seed)
    return int(result.labels[0]), result.probs[0]


def sample_trajectory(eps_fn: EpsFn, guidance: GuidanceFn, s: Schedule, w: np.ndarray,
                      n_chains: int, seed: int = 0) -> np.ndarray:
    """
    Reverse chains for one image: [n_chains, T + 1, C], row 0 is z_T and row T
    the final z0_hat. The chains replay the draws ``predict`` makes for the same
    image and seed.
    """
    if n_chains < 1:
        raise UsageError(f"n_chains must be at least 1, got {n_chains}")
    w = np.asarray(w, float)
    if w.ndim != 3:
        raise ShapeError(f"expected one [ch, H, W] image, got {w.shape}")
    g = np.asarray(guidance(w[None]), float)
    noise = chain_noise(seed, n_chains, w[None], s.T, g.shape[1])
    _, path = _run_chains(eps_fn, s, w[None], g, noise, keep_path=True)
    return path[:, 0]


def gaussian_kl(mean_q: np.ndarray, var_q: float, mean_p: np.ndarray, var_p: float) -> float:
    """KL(N(mean_q, var_q I) || N(mean_p, var_p I)) summed over coordinates."""
    mean_q, mean_p = np.asarray(mean_q, float), np.asarray(mean_p, float)
    dims = mean_q.shape[-1] if mean_q.ndim else 1
    return float(0.5 * (dims * (var_q / var_p - 1.0 + math.log(var_p / var_q))
                        + np.sum((mean_q - mean_p) ** 2, axis=-1) / var_p))


def elbo_terms(eps_fn: EpsFn, guidance: GuidanceFn, s: Schedule, z0: np.ndarray, w: np.ndarray,
               n_mc: int = 64, seed: int = 0) -> np.ndarray:
    """
    Monte-Carlo ELBO decomposition for one (image, label) pair.

    Entry 0 is L_0 = E[-log p(z_0 | z_1, g)], entry t - 1 (t = 2..T) is the
    expected KL between the true and learned posteriors at step t, and entry
    T is L_T = KL(q(z_T | z_0, g) || N(g, I)).
    """
    if n_mc < 1:
        raise UsageError(f"n_mc must be at least 1, got {n_mc}")
    z0 = np.asarray(z0, float)
    w = np.asarray(w, float)
    if w.ndim != 3 or z0.ndim != 1:
        raise ShapeError("elbo_terms expects one [ch, H, W] image and a [C] label point")
    rng = np.random.default_rng(seed)
    g = np.asarray(guidance(w[None]), float)[0]
    num_classes = z0.size
    images = np.repeat(w[None], n_mc, axis=0)
    z0_rows = np.tile(z0, (n_mc, 1))
    g_rows = np.tile(g, (n_mc, 1))
    terms = np.zeros(s.T + 1)

    root_T = math.sqrt(s.delta_bar[s.T])
    terms[s.T] = gaussian_kl(root_T * z0 + (1.0 - root_T) * g, 1.0 - s.delta_bar[s.T], g, 1.0)

    for t in range(1, s.T + 1):
        eps = rng.standard_normal((n_mc, num_classes))
        z_t = forward_sample(s, z0_rows, g_rows, t, eps)
        eps_hat = np.asarray(eps_fn(images, z_t, g_rows, np.full(n_mc, t)), float)
        z0_hat = estimate_z0(s, z_t, g_rows, t, eps_hat)
        if t == 1:
            var = max(s.posterior_var[0], LIKELIHOOD_VAR_FLOOR)
            nll = 0.5 * (np.sum((z0_rows - z0_hat) ** 2, axis=1) / var + num_classes * math.log(2 * math.pi * var))
            terms[0] = float(nll.mean())
            continue
        var = s.posterior_var[t - 1]
        mean_q = posterior_mean(s, z0_rows, z_t, g_rows, t)
        mean_p = posterior_mean(s, z0_hat, z_t, g_rows, t)
        terms[t - 1] = float(np.mean(np.sum((mean_q - mean_p) ** 2, axis=1) / (2.0 * var)))
    return terms


class DiffusionClassifier:
    """
    A trained epsilon network, its frozen guidance classifier and the
    schedule, bundled for loss evaluation and prediction.
    """

    def __init__(self, net, guidance, schedule: Schedule):
        self.net = net
        self.guidance = guidance
        self.schedule = schedule

    def guidance_fn(self, images: np.ndarray) -> np.ndarray:
        return self.guidance.predict_array(images)

    def eps_fn(self) -> EpsFn:
        return network_eps_fn(self.net)

    @contextmanager
    def _eval_mode(self):
        was_training = self.net.training
        self.net.eval()
        try:
            yield
        finally:
            self.net.train(was_training)

    def loss(self, net, batch, rng: np.random.Generator) -> Tensor:
        return training_loss(net, self.guidance_fn, self.schedule, batch, rng)

    def loss_on(self, dataset, seed: int = 0, batch_size: int = 64) -> float:
        """Training loss averaged over ``dataset`` with a fixed random stream."""
        rng = np.random.default_rng(seed)
        total = 0.0
        with self._eval_mode(), no_grad():
            for start in range(0, len(dataset), batch_size):
                idx = np.arange(start, min(start + batch_size, len(dataset)))
                total += training_loss(self.net, self.guidance_fn, self.schedule,
                                       dataset.batch(idx), rng).item() * len(idx)
        return total / len(dataset)

    def predict_batch(self, images: np.ndarray, n_samples: int = 10, seed: int = 0) -> Prediction:
        with self._eval_mode():
            return predict_batch(self.eps_fn(), self.guidance_fn, self.schedule, images, n_samples, seed)

    def sample_trajectory(self, w: np.ndarray, n_chains: int, seed: int = 0) -> np.ndarray:
        with self._eval_mode():
            return sample_trajectory(self.eps_fn(), self.guidance_fn, self.schedule, w, n_chains, seed)

    def elbo(self, z0: np.ndarray, w: np.ndarray, n_mc: int = 64, seed: int = 0) -> np.ndarray:
        with self._eval_mode():
            return elbo_terms(self.eps_fn(), self.guidance_fn, self.schedule, z0, w, n_mc, seed)

    def get_status(self) -> Dict:
        return {
            'schedule': self.schedule.get_status(),
            'epsilon': self.net.get_status(),
            'guidance': self.guidance.get_status(),
        }
