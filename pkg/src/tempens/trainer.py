"""Training episodes: epochs of noisy passes, ensemble refresh, per-epoch evaluation."""
from __future__ import annotations

import hashlib
import json
import logging
import statistics
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import AugmentationConfig, Dataset, SeedSelection, augment_gaussian, sample_seeds
from .ensemble import EnsembleState, bias_corrected_targets, update_ensemble
from .errors import EmptyTestSet, NonFiniteActivation
from .losses import RampSchedule, combined_loss
from .nn import NetworkConfig, backward, forward, init_network, predict
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    epochs: int = 30
    batch_size: int = 100
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    alpha: float = 0.6
    noise_std: float = 0.15
    ramp_length: int = 80
    max_weight: float = 30.0
    seed_size: int = 100
    balanced: bool = True
    # loss flags: the supervised baseline turns the consistency term off and labels everything
    unsupervised: bool = True
    label_all: bool = False
    ensemble_source: str = "noisy"  # or "clean": eval-mode pass after each epoch
    precision: str = "float32"
    eval_batch_size: int = 500

    def __post_init__(self):
        if isinstance(self.network, dict):
            object.__setattr__(self, "network", NetworkConfig(**self.network))
        if self.ensemble_source not in ("noisy", "clean"):
            raise ValueError(f"ensemble_source must be 'noisy' or 'clean', got {self.ensemble_source!r}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network"] = self.network.to_dict()
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    supervised_loss: float
    unsupervised_loss: float
    w_t: float
    test_accuracy: float


@dataclass
class EpisodeResult:
    fingerprint: str
    sampling_seed: int
    rng_seed: int
    epochs: list
    selection: SeedSelection | None = None
    # final model, kept for checkpointing; not part of exported results
    params: dict | None = field(default=None, repr=False, compare=False)
    optimizer: AdamState | None = field(default=None, repr=False, compare=False)

    @property
    def final_accuracy(self) -> float:
        return self.epochs[-1].test_accuracy

    @property
    def best_epoch(self) -> int:
        accs = [m.test_accuracy for m in self.epochs]
        return self.epochs[int(np.argmax(accs))].epoch

    @property
    def best_accuracy(self) -> float:
        return max(m.test_accuracy for m in self.epochs)


def train_epoch(params, opt_state: AdamState, train: Dataset, labeled: np.ndarray, targets: np.ndarray,
                epoch: int, schedule: RampSchedule, cfg: TrainConfig, rng: np.random.Generator):
    """One pass over every training sample in shuffled batches.

    ``labeled`` is a boolean mask over the training set. Returns
    ``(params, opt_state, z_epoch, (sup_loss, unsup_loss, w_t))`` where z_epoch
    holds each sample's prediction from its noisy training pass.
    """
    n = len(train)
    aug = AugmentationConfig(cfg.noise_std)
    w_override = None if cfg.unsupervised else 0.0
    z_epoch = np.full((n, train.num_classes), np.nan, dtype=targets.dtype)
    order = rng.permutation(n)
    sup_sum = unsup_sum = 0.0
    sup_count = 0
    w_t = 0.0
    for start in range(0, n, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        x = augment_gaussian(train.images[idx], aug, rng)
        probs, cache = forward(params, x, cfg.network, "train", rng)
        mask = labeled[idx]
        parts, dprobs = combined_loss(probs, train.labels[idx], mask, targets[idx], epoch, schedule, w_override)
        grads = backward(params, cache, dprobs.astype(probs.dtype, copy=False), cfg.network)
        params, opt_state = adam_step(params, grads, opt_state)
        z_epoch[idx] = probs
        k = int(mask.sum())
        sup_sum += parts.supervised * k
        sup_count += k
        unsup_sum += parts.unsupervised * len(idx)
        w_t = parts.w_t
    losses = (sup_sum / sup_count if sup_count else 0.0, unsup_sum / n, w_t)
    return params, opt_state, z_epoch, losses


def accuracy_from_probabilities(probs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax hits; np.argmax already breaks ties toward the lowest class."""
    if len(labels) == 0:
        raise EmptyTestSet("cannot score an empty test set")
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def evaluate(params, test: Dataset, cfg: NetworkConfig, batch_size: int = 500) -> float:
    if len(test) == 0:
        raise EmptyTestSet("cannot score an empty test set")
    return accuracy_from_probabilities(predict(params, test.images, cfg, batch_size), test.labels)


def select_labeled(train: Dataset, cfg: TrainConfig, sampling_seed: int) -> SeedSelection:
    if cfg.label_all:
        return SeedSelection(np.arange(len(train)), len(train), sampling_seed, balanced=False)
    return sample_seeds(train, cfg.seed_size, sampling_seed, cfg.balanced)


def run_episode(cfg: TrainConfig, train: Dataset, test: Dataset, sampling_seed: int, rng_seed: int,
                selection: SeedSelection | None = None, on_epoch=None) -> EpisodeResult:
    """Train one network from scratch and score it on ``test`` after every epoch.

    ``selection`` replays an exported labeled set instead of sampling one.
    ``on_epoch(metrics)`` is called after each epoch for progress reporting.
    """
    dtype = cfg.dtype
    train = _as_dtype(train, dtype)
    test = _as_dtype(test, dtype)
    if selection is None:
        selection = select_labeled(train, cfg, sampling_seed)
    labeled = selection.mask(len(train))
    schedule = RampSchedule(cfg.max_weight, cfg.ramp_length, selection.seed_size / len(train))

    rng = np.random.default_rng(rng_seed)
    params = init_network(cfg.network, rng, dtype)
    opt = AdamState.for_params(params, learning_rate=cfg.learning_rate, beta1=cfg.beta1,
                               beta2=cfg.beta2, eps=cfg.adam_eps)
    ens = EnsembleState.empty(len(train), train.num_classes, cfg.alpha, dtype)
    history = []
    for epoch in range(cfg.epochs):
        # epoch 0 has no ensemble yet; zero targets under a near-zero ramp weight
        targets = np.zeros_like(ens.Z) if ens.t == 0 else bias_corrected_targets(ens).astype(dtype)
        try:
            params, opt, z_epoch, (sup, unsup, w_t) = train_epoch(
                params, opt, train, labeled, targets, epoch, schedule, cfg, rng)
            if cfg.ensemble_source == "clean":
                z_epoch = predict(params, train.images, cfg.network, cfg.eval_batch_size)
            acc = evaluate(params, test, cfg.network, cfg.eval_batch_size)
        except NonFiniteActivation as exc:
            raise NonFiniteActivation(exc.layer, epoch) from exc
        ens = update_ensemble(ens.with_predictions(z_epoch))
        metrics = EpochMetrics(epoch, float(sup), float(unsup), float(w_t), acc)
        history.append(metrics)
        log.debug("epoch %d sup %.4f unsup %.5f w %.4f acc %.4f", epoch, sup, unsup, w_t, acc)
        if on_epoch is not None:
            on_epoch(metrics)
    return EpisodeResult(cfg.fingerprint(), sampling_seed, rng_seed, history, selection, params, opt)


def _as_dtype(ds: Dataset, dtype) -> Dataset:
    if ds.images.dtype == dtype:
        return ds
    from dataclasses import replace
    return replace(ds, images=ds.images.astype(dtype))


def mean_std(values) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation (divide by n)."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("need at least one value")
    return statistics.fmean(values), statistics.pstdev(values)


def aggregate_episodes(results) -> dict:
    if not results:
        raise ValueError("need at least one episode")
    return {
        "best_accuracy": mean_std(r.best_accuracy for r in results),
        "final_accuracy": mean_std(r.final_accuracy for r in results),
    }
