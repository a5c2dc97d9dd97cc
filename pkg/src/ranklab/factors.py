"""Latent-factor scoring model and its SGD update primitive.

A score is the inner product of a user row and an item row. Both training
paradigms reduce to per-item score-space gradients, which are pushed through
the factors here: for a gradient g_i on item i's score,

    user_row += lr * (sum_i g_i * item_row_i - l2 * user_row)
    item_row_i += lr * (g_i * user_row - l2 * item_row_i)

with every item update reading the pre-update user row, so the result does
not depend on item order within one call.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import TrainingError
from .util import subseed
from .validation import check_indices, check_positive_int

_CHECKPOINT_MAGIC = b"RLCKPT1\n"


@dataclass
class SgdConfig:
    learning_rate: float
    l2: float = 0.0
    seed: int = 0
    init_std: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.l2 < 0:
            raise ValueError(f"l2 must be non-negative, got {self.l2}")
        if self.init_std < 0:
            raise ValueError(f"init_std must be non-negative, got {self.init_std}")


@dataclass
class FactorModel:
    """User and item factor matrices, float64, rows per user/item."""

    user_factors: np.ndarray
    item_factors: np.ndarray

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    @property
    def n_factors(self) -> int:
        return self.user_factors.shape[1]

    def scores(self, user: int, items) -> np.ndarray:
        """Predicted relevance of the given items for one user."""
        if not 0 <= user < self.n_users:
            raise ValueError(f"user index {user} out of range")
        items = check_indices(items, self.n_items)
        return self.item_factors[items] @ self.user_factors[user]

    def copy(self) -> "FactorModel":
        return FactorModel(self.user_factors.copy(), self.item_factors.copy())


def init_model(n_users: int, n_items: int, n_factors: int, seed: int, init_std: float = 0.1) -> FactorModel:
    """Gaussian-initialized factors, deterministic given the seed."""
    check_positive_int(n_users, "n_users")
    check_positive_int(n_items, "n_items")
    check_positive_int(n_factors, "n_factors")
    if init_std < 0:
        raise ValueError(f"init_std must be non-negative, got {init_std}")
    rng = np.random.default_rng(subseed("init", seed))
    return FactorModel(
        user_factors=rng.normal(0.0, 1.0, size=(n_users, n_factors)) * init_std,
        item_factors=rng.normal(0.0, 1.0, size=(n_items, n_factors)) * init_std,
    )


def predict_scores(model: FactorModel, user: int, items) -> np.ndarray:
    return model.scores(user, items)


def apply_score_gradients(model: FactorModel, user: int, items, gradients, cfg: SgdConfig, epoch=None) -> None:
    """Apply one accumulated score-space ascent step for a single user, in place.

    ``gradients[i] > 0`` raises the score of ``items[i]`` (for small learning
    rates). Items must be unique within one call.
    """
    items = check_indices(items, model.n_items)
    g = np.asarray(gradients, dtype=np.float64)
    if g.shape != items.shape:
        raise ValueError("gradients must match items in length")
    if not np.all(np.isfinite(g)):
        raise TrainingError("non-finite score gradient", epoch=epoch, user=user)
    if np.unique(items).size != items.size:
        raise ValueError("items must be unique within one update")
    lr = cfg.learning_rate
    u_row = model.user_factors[user].copy()
    v_rows = model.item_factors[items]
    model.user_factors[user] += lr * (g @ v_rows - cfg.l2 * u_row)
    model.item_factors[items] += lr * (g[:, None] * u_row[None, :] - cfg.l2 * v_rows)


def save_checkpoint(model: FactorModel, path, seed: int = 0) -> None:
    """Binary checkpoint: magic, JSON header line, then row-major float64 payloads.

    Round-trips bit-exactly and contains no timestamps, so identical models
    produce identical files.
    """
    header = {
        "n_users": model.n_users,
        "n_items": model.n_items,
        "n_factors": model.n_factors,
        "seed": int(seed),
    }
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(model.user_factors, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.item_factors, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[FactorModel, int]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a factor-model checkpoint")
        header = json.loads(fh.readline().decode("ascii"))
        m, n, d = header["n_users"], header["n_items"], header["n_factors"]
        u = np.frombuffer(fh.read(m * d * 8), dtype="<f8").reshape(m, d).copy()
        v = np.frombuffer(fh.read(n * d * 8), dtype="<f8").reshape(n, d).copy()
    return FactorModel(user_factors=u, item_factors=v), int(header["seed"])
