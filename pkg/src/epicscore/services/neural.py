"""
Shared PyTorch building blocks.

Feed-forward networks with optional frozen dropout masks, and the
early-stopping training loop used by the MLP predictors, the MDN and the
dropout classifier.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from torch.utils.data import DataLoader, TensorDataset

from epicscore.utils.logger import get_logger

logger = get_logger(__name__)

LossFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def adaptive_batch_size(n: int) -> int:
    """Batch size by data size: 40 below 10k rows, 125 below 50k, else 250."""
    if n < 10_000:
        return 40
    if n < 50_000:
        return 125
    return 250


def holdout_split(n: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Random (fit, validation) index split.
    
    Args:
        n: Number of rows.
        fraction: Share reserved for validation.
        seed: RNG seed.
    
    Returns:
        (fit_indices, validation_indices); validation has at least one row
        and fit keeps at least one row.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = int(round(fraction * n))
    n_val = min(max(n_val, 1), n - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def to_tensor(values: np.ndarray) -> torch.Tensor:
    """float32 tensor view of a numpy array."""
    return torch.as_tensor(np.ascontiguousarray(values), dtype=torch.float32)


class FeedForward(nn.Module):
    """
    ReLU multilayer perceptron with dropout after every hidden layer.
    
    In training mode dropout is stochastic. Passing `masks` (one keep-mask per
    hidden layer, already scaled by 1/(1-p)) replaces it with a fixed
    sub-network, which is how frozen MC-dropout passes are evaluated.
    """
    
    def __init__(self, n_inputs: int, hidden_layers: Sequence[int], n_outputs: int, dropout: float):
        super().__init__()
        widths = [n_inputs] + list(hidden_layers)
        self.hidden = nn.ModuleList(
            nn.Linear(w_in, w_out) for w_in, w_out in zip(widths[:-1], widths[1:])
        )
        self.output = nn.Linear(widths[-1], n_outputs)
        self.dropout = float(dropout)
    
    @property
    def hidden_widths(self) -> List[int]:
        return [layer.out_features for layer in self.hidden]
    
    def forward(self, x: torch.Tensor, masks: Optional[Sequence[torch.Tensor]] = None) -> torch.Tensor:
        h = x
        for i, layer in enumerate(self.hidden):
            h = torch.relu(layer(h))
            if masks is not None:
                h = h * masks[i]
            elif self.dropout > 0.0:
                h = nn.functional.dropout(h, p=self.dropout, training=self.training)
        return self.output(h)


def sample_dropout_masks(
    hidden_widths: Sequence[int],
    dropout: float,
    n_passes: int,
    seed: int
) -> List[torch.Tensor]:
    """
    Draw T keep-masks per hidden layer.
    
    Returns:
        One tensor of shape (T, width) per hidden layer, entries 0 or 1/(1-p).
    """
    generator = torch.Generator().manual_seed(int(seed))
    keep = 1.0 - dropout
    masks = []
    for width in hidden_widths:
        bernoulli = torch.rand((n_passes, width), generator=generator) < keep
        masks.append(bernoulli.to(torch.float32) / keep)
    return masks


@dataclass
class TrainingSummary:
    """Outcome of an early-stopped training run."""
    
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    
    def __str__(self) -> str:
        return (
            f"TrainingSummary(epochs={self.epochs_run}, best_epoch={self.best_epoch}, "
            f"val_loss={self.best_val_loss:.5g})"
        )


def train_network(
    model: nn.Module,
    loss_fn: LossFn,
    x_fit: torch.Tensor,
    y_fit: torch.Tensor,
    x_val: torch.Tensor,
    y_val: torch.Tensor,
    learning_rate: float,
    max_epochs: int,
    patience: int,
    batch_size: int,
    seed: int,
    lr_step_epochs: Optional[int] = None,
    lr_decay: float = 1.0
) -> TrainingSummary:
    """
    Adam training with validation early stopping and best-state restore.
    
    Args:
        model: Network, trained in place.
        loss_fn: loss_fn(model_output, target) -> scalar tensor.
        x_fit, y_fit: Training tensors.
        x_val, y_val: Validation tensors.
        learning_rate: Adam step size.
        max_epochs: Epoch budget.
        patience: Epochs without validation improvement before stopping.
        batch_size: Mini-batch size.
        seed: Seed for the batch shuffling.
        lr_step_epochs: Decay the learning rate every this many epochs.
        lr_decay: Multiplicative decay factor.
    
    Returns:
        TrainingSummary; the model holds the best validation state on return.
    """
    generator = torch.Generator().manual_seed(int(seed))
    loader = DataLoader(
        TensorDataset(x_fit, y_fit),
        batch_size=min(batch_size, len(x_fit)),
        shuffle=True,
        generator=generator,
    )
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    scheduler = (
        torch.optim.lr_scheduler.StepLR(optimizer, step_size=lr_step_epochs, gamma=lr_decay)
        if lr_step_epochs else None
    )
    
    best_loss = float("inf")
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    best_epoch = 0
    epoch = 0
    
    for epoch in range(1, max_epochs + 1):
        model.train()
        for xb, yb in loader:
            optimizer.zero_grad()
            loss = loss_fn(model(xb), yb)
            loss.backward()
            optimizer.step()
        if scheduler is not None:
            scheduler.step()
        
        model.eval()
        with torch.no_grad():
            val_loss = float(loss_fn(model(x_val), y_val))
        
        if val_loss < best_loss - 1e-7:
            best_loss = val_loss
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        elif epoch - best_epoch >= patience:
            break
    
    model.load_state_dict(best_state)
    model.eval()
    summary = TrainingSummary(epochs_run=epoch, best_epoch=best_epoch, best_val_loss=best_loss)
    logger.debug(f"Network training finished: {summary}")
    return summary
