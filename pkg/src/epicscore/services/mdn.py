"""
Mixture density network with frozen MC-dropout masks.

The network maps x to a K-component Gaussian mixture over the normalized
score. T dropout masks are drawn once at fit time; the predictive CDF
averages the T mixture CDFs (analytic mode) or is the empirical CDF of
mixture samples drawn with common random numbers frozen at fit (sampling
mode). A softmax-head variant gives the label predictive for classification.
"""

from typing import List, Optional, Tuple

import numpy as np
import torch
from sklearn.preprocessing import StandardScaler
from torch import nn

from epicscore.exceptions import InsufficientDataError, LengthMismatchError
from epicscore.models.config import MdnConfig, PredictiveKind
from epicscore.services.neural import (
    FeedForward,
    adaptive_batch_size,
    holdout_split,
    sample_dropout_masks,
    to_tensor,
    train_network,
)
from epicscore.services.predictive import (
    MIN_FIT_POINTS,
    LabelPredictiveModel,
    PredictiveCdfModel,
    mixture_cdf,
)
from epicscore.services.scores import as_matrix
from epicscore.utils.logger import get_logger

logger = get_logger(__name__)

SIGMA_MIN = 1e-4


def split_mixture_output(output: torch.Tensor, n_components: int) -> Tuple[torch.Tensor, ...]:
    """(log_pi, mu, sigma) from the raw network output of width 3K."""
    logits, mu, raw_sigma = torch.split(output, n_components, dim=-1)
    log_pi = torch.log_softmax(logits, dim=-1)
    sigma = nn.functional.softplus(raw_sigma) + SIGMA_MIN
    return log_pi, mu, sigma


def mixture_nll(n_components: int):
    """Mean negative log-likelihood of targets under the predicted mixture."""
    def loss(output: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        log_pi, mu, sigma = split_mixture_output(output, n_components)
        component = torch.distributions.Normal(mu, sigma).log_prob(target.unsqueeze(-1))
        return -torch.logsumexp(log_pi + component, dim=-1).mean()
    return loss


def _frozen_passes(network: FeedForward, masks: List[torch.Tensor], Z: np.ndarray) -> List[torch.Tensor]:
    """Network outputs for every frozen mask, one tensor per pass."""
    network.eval()
    inputs = to_tensor(Z)
    n_passes = masks[0].shape[0]
    with torch.no_grad():
        return [network(inputs, masks=[m[t] for m in masks]) for t in range(n_passes)]


def _fit_network(
    network: FeedForward,
    loss_fn,
    Z: np.ndarray,
    target: torch.Tensor,
    config: MdnConfig,
    seed: int
) -> None:
    fit_idx, val_idx = holdout_split(Z.shape[0], config.validation_fraction, seed)
    inputs = to_tensor(Z)
    summary = train_network(
        network,
        loss_fn,
        inputs[fit_idx], target[fit_idx],
        inputs[val_idx], target[val_idx],
        learning_rate=config.learning_rate,
        max_epochs=config.max_epochs,
        patience=config.patience,
        batch_size=config.batch_size or adaptive_batch_size(len(fit_idx)),
        seed=seed,
        lr_step_epochs=config.lr_step_epochs,
        lr_decay=config.lr_decay,
    )
    logger.debug(f"Dropout network trained on {len(fit_idx)} points: {summary}")


class MixtureDensityModel(PredictiveCdfModel):
    """MC-dropout mixture density network predictive."""

    kind = PredictiveKind.MDN_DROPOUT

    def __init__(self, config: Optional[MdnConfig] = None, seed: int = 0):
        super().__init__(seed)
        self.config = config or MdnConfig()
        self.network: Optional[FeedForward] = None
        self.masks: List[torch.Tensor] = []
        self.crn_uniform: Optional[np.ndarray] = None   # (T, J) component draws
        self.crn_normal: Optional[np.ndarray] = None    # (T, J) standard normals

    @property
    def sampling(self) -> bool:
        return self.config.cdf_mode == "sampling"

    def _build_network(self, n_inputs: int) -> FeedForward:
        return FeedForward(
            n_inputs, self.config.hidden_layers, 3 * self.config.n_components, self.config.dropout
        )

    def _fit(self, Z: np.ndarray, z: np.ndarray) -> None:
        torch.manual_seed(self.seed)
        self.network = self._build_network(Z.shape[1])
        _fit_network(
            self.network, mixture_nll(self.config.n_components), Z, to_tensor(z),
            self.config, self.seed,
        )
        self._draw_frozen_randomness()

    def _draw_frozen_randomness(self) -> None:
        self.masks = sample_dropout_masks(
            self.network.hidden_widths, self.config.dropout, self.config.mc_passes, self.seed + 1
        )
        rng = np.random.default_rng(self.seed + 2)
        shape = (self.config.mc_passes, self.config.samples_per_pass)
        self.crn_uniform = rng.random(shape)
        self.crn_normal = rng.standard_normal(shape)

    def mixture_parameters(self, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Mixture parameters under each frozen mask.

        Args:
            Z: Standardized features, shape (m, p).

        Returns:
            (pi, mu, sigma), each of shape (T, m, K), float64, normalized units.
        """
        outputs = _frozen_passes(self.network, self.masks, Z)
        K = self.config.n_components
        pis, mus, sigmas = [], [], []
        for output in outputs:
            log_pi, mu, sigma = split_mixture_output(output.double(), K)
            pis.append(torch.exp(log_pi).numpy())
            mus.append(mu.numpy())
            sigmas.append(sigma.numpy())
        return np.stack(pis), np.stack(mus), np.stack(sigmas)

    def _mixture_samples(self, pi, mu, sigma) -> np.ndarray:
        """Sorted common-random-number samples, shape (m, T * J)."""
        cumulative = np.cumsum(pi, axis=2)                                    # (T, m, K)
        u = self.crn_uniform[:, None, :, None]                                # (T, 1, J, 1)
        component = np.sum(u > cumulative[:, :, None, :], axis=3)             # (T, m, J)
        component = np.minimum(component, pi.shape[2] - 1)
        chosen_mu = np.take_along_axis(mu, component, axis=2)
        chosen_sigma = np.take_along_axis(sigma, component, axis=2)
        samples = chosen_mu + chosen_sigma * self.crn_normal[:, None, :]
        m = pi.shape[1]
        return np.sort(samples.transpose(1, 0, 2).reshape(m, -1), axis=1)

    def _prepare(self, Z: np.ndarray):
        pi, mu, sigma = self.mixture_parameters(Z)
        if self.sampling:
            return self._mixture_samples(pi, mu, sigma)
        return pi, mu, sigma

    def _cdf_from(self, state, z):
        z = np.asarray(z, dtype=float)
        if self.sampling:
            return np.sum(state <= z[:, None], axis=1) / state.shape[1]
        return mixture_cdf(*state, z)

    def _bracket_hint(self, state, m):
        if self.sampling:
            return np.median(state, axis=1), np.ones(m)
        mean, sd = _moments(*state)
        return mean, sd

    def _invert(self, state, t):
        if not self.sampling:
            return super()._invert(state, t)
        n = state.shape[1]
        rank = np.clip(np.ceil(t * n - 1e-9).astype(np.int64), 1, n)
        return state[np.arange(state.shape[0]), rank - 1]

    def predictive_moments(self, X) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and standard deviation of the predictive mixture, original units."""
        self._check_fitted()
        Z = self.feature_scaler.transform(as_matrix(X))
        mean, sd = _moments(*self.mixture_parameters(Z))
        return self.score_normalizer.inverse(mean), sd * self.score_normalizer.scale

    def export_state(self):
        params = {
            "config": self.config.model_dump(),
            "n_inputs": int(self.network.hidden[0].in_features),
        }
        arrays = {f"net.{k}": v.detach().numpy() for k, v in self.network.state_dict().items()}
        for i, mask in enumerate(self.masks):
            arrays[f"mask.{i}"] = mask.numpy()
        arrays["crn_uniform"] = self.crn_uniform
        arrays["crn_normal"] = self.crn_normal
        return params, arrays

    def restore_state(self, params, arrays) -> None:
        self.config = MdnConfig(**params["config"])
        self.network = self._build_network(int(params["n_inputs"]))
        self.network.load_state_dict({
            k[len("net."):]: torch.as_tensor(v) for k, v in arrays.items() if k.startswith("net.")
        })
        self.network.eval()
        self.masks = [
            torch.as_tensor(arrays[f"mask.{i}"]) for i in range(len(self.network.hidden))
        ]
        self.crn_uniform = np.asarray(arrays["crn_uniform"])
        self.crn_normal = np.asarray(arrays["crn_normal"])


def _moments(pi, mu, sigma) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and sd of the pass-averaged mixture."""
    mean = np.mean(np.sum(pi * mu, axis=2), axis=0)
    second = np.mean(np.sum(pi * (sigma ** 2 + mu ** 2), axis=2), axis=0)
    return mean, np.sqrt(np.maximum(second - mean ** 2, 1e-12))


class DropoutClassifierModel(LabelPredictiveModel):
    """Softmax classifier whose label predictive averages T frozen dropout passes."""

    def __init__(self, n_classes: int, config: Optional[MdnConfig] = None, seed: int = 0):
        self.n_classes = int(n_classes)
        self.config = config or MdnConfig()
        self.seed = int(seed)
        self.feature_scaler = None
        self.network: Optional[FeedForward] = None
        self.masks: List[torch.Tensor] = []

    def fit(self, X, y) -> "DropoutClassifierModel":
        X = as_matrix(X)
        y = np.asarray(y).astype(np.int64).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise LengthMismatchError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if y.size < MIN_FIT_POINTS:
            raise InsufficientDataError(
                f"Dropout classifier needs at least {MIN_FIT_POINTS} points, got {y.size}"
            )

        self.feature_scaler = StandardScaler().fit(X)
        Z = self.feature_scaler.transform(X)
        torch.manual_seed(self.seed)
        self.network = FeedForward(
            Z.shape[1], self.config.hidden_layers, self.n_classes, self.config.dropout
        )
        _fit_network(
            self.network, nn.functional.cross_entropy, Z,
            torch.as_tensor(y, dtype=torch.long), self.config, self.seed,
        )
        self.masks = sample_dropout_masks(
            self.network.hidden_widths, self.config.dropout, self.config.mc_passes, self.seed + 1
        )
        return self

    def pass_probabilities(self, X) -> np.ndarray:
        """Softmax output of every frozen pass, shape (T, m, K)."""
        Z = self.feature_scaler.transform(as_matrix(X))
        outputs = _frozen_passes(self.network, self.masks, Z)
        return np.stack([torch.softmax(out.double(), dim=-1).numpy() for out in outputs])

    def predict_proba(self, X) -> np.ndarray:
        probs = self.pass_probabilities(X).mean(axis=0)
        return probs / probs.sum(axis=1, keepdims=True)
