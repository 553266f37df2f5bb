"""
A small from-scratch CNN trained with SGD + momentum on synthetic stripe images.

Architecture: conv(1->8, k3, S1) -> ReLU -> conv(8->8, k3, S2) -> ReLU
-> global average pool -> linear(8->2) -> softmax cross-entropy.
The training loss is L = L_task + lambda * L_orth with one orthogonality term per conv layer.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from orthoconv.conv import ConvGeometry, conv2d_batch, conv2d_batch_grad_input, conv2d_batch_grad_kernel
from orthoconv.exceptions import ConfigError, NumericalError, TrainingError
from orthoconv.gradcheck import finite_difference, max_relative_error
from orthoconv.io import TrainConfig, write_frame
from orthoconv.logger import get_logger
from orthoconv.orthreg import (OrthLossReport, conv_orth_loss, kernel_mode_for, kernel_orth_loss,
                               orth_mode_for)
from orthoconv.tensor import KernelTensor, make_rng

logger = get_logger()

IMAGE_SIZE = 12
NOISE_STD = 0.3
N_CLASSES = 2
CONV_LAYERS = ("conv1", "conv2")
DEFAULT_SWEEP_LAMBDAS = (0.05, 0.1, 0.5, 1.0)


@dataclass(frozen=True, eq=False)
class ToyDataset:
    """Images [N, 1, 12, 12] with labels 0 (horizontal stripes) and 1 (vertical stripes)."""
    images: np.ndarray
    labels: np.ndarray
    n_classes: int = N_CLASSES

    def __len__(self):
        return int(self.labels.size)


def gen_dataset(seed: int, n_per_class: int) -> ToyDataset:
    """
    Two balanced classes of 1x12x12 stripe images plus Gaussian noise (sigma 0.3).
    Each image gets a random stripe width (1 or 2) and phase; the same seed gives the same dataset.
    """
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = make_rng(seed)
    images = np.empty((2 * n_per_class, 1, IMAGE_SIZE, IMAGE_SIZE))
    labels = np.repeat(np.arange(N_CLASSES), n_per_class)
    t = np.arange(IMAGE_SIZE)
    for n, label in enumerate(labels):
        width = int(rng.integers(1, 3))
        phase = int(rng.integers(0, 2 * width))
        profile = np.where(((t + phase) // width) % 2 == 0, 1.0, -1.0)
        pattern = np.repeat(profile[:, None], IMAGE_SIZE, axis=1)
        if label == 1:
            pattern = pattern.T
        images[n, 0] = pattern + NOISE_STD * rng.standard_normal((IMAGE_SIZE, IMAGE_SIZE))
    return ToyDataset(images=images, labels=labels)


def stripe_baseline_accuracy(dataset: ToyDataset) -> float:
    """
    Closed-form two-parameter classifier: horizontal when the variance of row means
    exceeds the variance of column means (weights +1 / -1).
    """
    row_var = dataset.images[:, 0].mean(axis=2).var(axis=1)
    col_var = dataset.images[:, 0].mean(axis=1).var(axis=1)
    predicted = np.where(row_var - col_var > 0.0, 0, 1)
    return float(np.mean(predicted == dataset.labels))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient (softmax - onehot) / batch at the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    n = logits.shape[0]
    loss = -float(np.mean(log_probs[np.arange(n), labels]))
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


class ToyCnn:
    """Parameters and hand-derived backpropagation of the toy network."""

    def __init__(self, params: Dict[str, np.ndarray], channels: int, image_size: int = IMAGE_SIZE):
        self.params = params
        self.channels = channels
        self.geometries = {
            "conv1": ConvGeometry(c_in=1, h=image_size, w=image_size, m_out=channels, k=3, stride=1),
        }
        side = self.geometries["conv1"].h_out
        self.geometries["conv2"] = ConvGeometry(c_in=channels, h=side, w=side, m_out=channels, k=3, stride=2)

    @classmethod
    def initialize(cls, rng: np.random.Generator, channels: int = 8) -> "ToyCnn":
        """Scaled normal weights (std sqrt(2 / fan_in)) and zero biases."""
        params = {
            "conv1.weight": KernelTensor.he_normal(channels, 1, 3, rng).data.copy(),
            "conv1.bias": np.zeros(channels),
            "conv2.weight": KernelTensor.he_normal(channels, channels, 3, rng).data.copy(),
            "conv2.bias": np.zeros(channels),
            "fc.weight": np.sqrt(2.0 / channels) * rng.standard_normal((N_CLASSES, channels)),
            "fc.bias": np.zeros(N_CLASSES),
        }
        return cls(params, channels)

    def kernel(self, layer: str) -> KernelTensor:
        return KernelTensor(self.params[f"{layer}.weight"])

    @property
    def strides(self) -> List[int]:
        return [self.geometries[layer].stride for layer in CONV_LAYERS]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        p, g = self.params, self.geometries
        a1 = conv2d_batch(x, p["conv1.weight"], g["conv1"]) + p["conv1.bias"][None, :, None, None]
        r1 = np.maximum(a1, 0.0)
        a2 = conv2d_batch(r1, p["conv2.weight"], g["conv2"]) + p["conv2.bias"][None, :, None, None]
        r2 = np.maximum(a2, 0.0)
        pooled = r2.mean(axis=(2, 3))
        logits = pooled @ p["fc.weight"].T + p["fc.bias"]
        cache = {"x": x, "a1": a1, "r1": r1, "a2": a2, "pooled": pooled}
        return logits, cache

    def backward(self, d_logits: np.ndarray, cache: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        p, g = self.params, self.geometries
        grads = {
            "fc.weight": d_logits.T @ cache["pooled"],
            "fc.bias": d_logits.sum(axis=0),
        }
        d_pooled = d_logits @ p["fc.weight"]
        spatial = g["conv2"].h_out * g["conv2"].w_out
        d_a2 = np.where(cache["a2"] > 0.0, d_pooled[:, :, None, None] / spatial, 0.0)
        grads["conv2.weight"] = conv2d_batch_grad_kernel(cache["r1"], d_a2, g["conv2"])
        grads["conv2.bias"] = d_a2.sum(axis=(0, 2, 3))
        d_r1 = conv2d_batch_grad_input(p["conv2.weight"], d_a2, g["conv2"])
        d_a1 = np.where(cache["a1"] > 0.0, d_r1, 0.0)
        grads["conv1.weight"] = conv2d_batch_grad_kernel(cache["x"], d_a1, g["conv1"])
        grads["conv1.bias"] = d_a1.sum(axis=(0, 2, 3))
        return grads

    def orth_reports(self, mode: str, lam: float) -> List[OrthLossReport]:
        """Per-layer regularizer terms for mode 'conv' or 'kernel'; empty for 'none'."""
        if mode == "none":
            return []
        reports = []
        for layer in CONV_LAYERS:
            kernel, geom = self.kernel(layer), self.geometries[layer]
            if mode == "conv":
                reports.append(conv_orth_loss(kernel, geom.stride, orth_mode_for(geom), lam))
            else:
                reports.append(kernel_orth_loss(kernel, kernel_mode_for(kernel), lam))
        return reports

    def conv_orth_losses(self) -> Dict[str, float]:
        """Conv-orthogonality loss of every conv layer, in the form orth_mode_for selects."""
        return {layer: conv_orth_loss(self.kernel(layer), self.geometries[layer].stride,
                                      orth_mode_for(self.geometries[layer])).loss
                for layer in CONV_LAYERS}

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray, lam: float,
                       mode: str) -> Tuple[float, float, Dict[str, np.ndarray]]:
        """Total loss L_task + lambda * L_orth, the task loss alone, and gradients of the total."""
        logits, cache = self.forward(x)
        task, d_logits = softmax_cross_entropy(logits, labels)
        grads = self.backward(d_logits, cache)
        total = task
        for layer, report in zip(CONV_LAYERS, self.orth_reports(mode, lam)):
            total += report.weighted_loss
            grads[f"{layer}.weight"] = grads[f"{layer}.weight"] + report.weighted_grad
        return total, task, grads

    def evaluate(self, dataset: ToyDataset) -> Tuple[float, float]:
        """Task loss and accuracy over the whole dataset."""
        logits, _ = self.forward(dataset.images)
        loss, _ = softmax_cross_entropy(logits, dataset.labels)
        accuracy = float(np.mean(np.argmax(logits, axis=1) == dataset.labels))
        return loss, accuracy

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([self.params[name].ravel() for name in sorted(self.params)])

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        offset = 0
        for name in sorted(self.params):
            size = self.params[name].size
            self.params[name] = flat[offset:offset + size].reshape(self.params[name].shape).copy()
            offset += size


class TrainMetrics:
    """
    Per-epoch training history backed by a pandas DataFrame, plus kernel snapshots.
    Epoch 0 (before any update) is kept separately in `initial_orth`.
    """

    def __init__(self, initial_orth: Dict[str, float], initial_kernels: Dict[str, np.ndarray]):
        self.initial_orth = initial_orth
        self.initial_kernels = initial_kernels
        self.final_kernels: Dict[str, np.ndarray] = {}
        self._dataframe = pd.DataFrame(columns=self.columns())

    @staticmethod
    def columns() -> List[str]:
        return ["epoch", "task_loss", "orth_loss", "accuracy"] + [f"orth_loss_{layer}" for layer in CONV_LAYERS]

    def add_epoch(self, epoch: int, task_loss: float, orth: Dict[str, float], accuracy: float) -> None:
        row = {"epoch": epoch, "task_loss": task_loss, "orth_loss": sum(orth[l] for l in CONV_LAYERS),
               "accuracy": accuracy}
        row.update({f"orth_loss_{layer}": orth[layer] for layer in CONV_LAYERS})
        new_row = pd.DataFrame([row], columns=self.columns())
        if self._dataframe.empty:
            self._dataframe = new_row
        else:
            self._dataframe = pd.concat([self._dataframe, new_row], ignore_index=True)
        self._dataframe["epoch"] = self._dataframe["epoch"].astype(np.int64)

    def get_history(self) -> pd.DataFrame:
        return self._dataframe.copy()

    def final_orth(self) -> Dict[str, float]:
        last = self._dataframe.iloc[-1]
        return {layer: float(last[f"orth_loss_{layer}"]) for layer in CONV_LAYERS}

    @property
    def final_accuracy(self) -> float:
        return float(self._dataframe["accuracy"].iloc[-1])

    def __len__(self):
        return len(self._dataframe)

    def save(self, path: str) -> None:
        write_frame(path, self._dataframe)


def _run_epoch(model: ToyCnn, velocity: Dict[str, np.ndarray], dataset: ToyDataset, config: TrainConfig,
               rng: np.random.Generator, epoch: int) -> Tuple[float, float, Dict[str, float]]:
    """One pass over shuffled minibatches followed by full-dataset evaluation."""
    n = len(dataset)
    order = rng.permutation(n)
    for start in range(0, n, config.batch_size):
        batch = order[start:start + config.batch_size]
        total, _, grads = model.loss_and_grads(dataset.images[batch], dataset.labels[batch],
                                               config.lam, config.mode)
        if not np.isfinite(total):
            logger.error(f"Loss became non-finite in epoch {epoch}")
            raise TrainingError(f"Training diverged in epoch {epoch}: loss is {total}")
        for name, grad in grads.items():
            velocity[name] = config.momentum * velocity[name] + grad
            model.params[name] = model.params[name] - config.lr * velocity[name]
    task_loss, accuracy = model.evaluate(dataset)
    orth = model.conv_orth_losses()
    if not (np.isfinite(task_loss) and all(np.isfinite(v) for v in orth.values())):
        logger.error(f"Metrics became non-finite in epoch {epoch}")
        raise TrainingError(f"Training diverged in epoch {epoch}")
    return task_loss, accuracy, orth


def train(config: TrainConfig, dataset: ToyDataset, channels: int = 8) -> Tuple[TrainMetrics, ToyCnn]:
    """
    SGD with momentum (v <- mu v + g; w <- w - lr v) over shuffled minibatches.

    Gradients are backprop(task) + lambda * regularizer gradient per conv layer. One
    generator seeded from config.seed drives both initialization and shuffling.

    Raises:
        TrainingError: if the loss becomes non-finite, naming the epoch
    """
    if len(dataset) == 0:
        raise ConfigError("Training dataset is empty")
    rng = make_rng(config.seed)
    model = ToyCnn.initialize(rng, channels)
    metrics = TrainMetrics(initial_orth=model.conv_orth_losses(),
                           initial_kernels={l: model.params[f"{l}.weight"].copy() for l in CONV_LAYERS})
    velocity = {name: np.zeros_like(value) for name, value in model.params.items()}
    n = len(dataset)
    logger.info(f"Training {model.parameter_count()} parameters on {n} images: {config}")

    for epoch in range(1, config.epochs + 1):
        try:
            task_loss, accuracy, orth = _run_epoch(model, velocity, dataset, config, rng, epoch)
        except TrainingError:
            raise
        except NumericalError as e:
            logger.error(f"Numerical failure in epoch {epoch}: {e}")
            raise TrainingError(f"Training diverged in epoch {epoch}: {e}") from e
        metrics.add_epoch(epoch, task_loss, orth, accuracy)
        logger.debug(f"Epoch {epoch}: task_loss={task_loss:.6f}, accuracy={accuracy:.3f}, orth={orth}")

    metrics.final_kernels = {l: model.params[f"{l}.weight"].copy() for l in CONV_LAYERS}
    logger.info(f"Finished {config.epochs} epochs: accuracy={metrics.final_accuracy:.3f}, "
                f"orth {metrics.initial_orth} -> {metrics.final_orth()}")
    return metrics, model


def _kink_safe_model(rng: np.random.Generator, dataset: ToyDataset, channels: int,
                     margin: float, attempts: int = 200) -> ToyCnn:
    """Draw initializations until every pre-activation is at least `margin` away from the ReLU kink."""
    for _ in range(attempts):
        model = ToyCnn.initialize(rng, channels)
        model.params["conv1.bias"] = 0.1 * rng.standard_normal(channels)
        model.params["conv2.bias"] = 0.1 * rng.standard_normal(channels)
        _, cache = model.forward(dataset.images)
        if min(np.min(np.abs(cache["a1"])), np.min(np.abs(cache["a2"]))) > margin:
            return model
    raise NumericalError(f"No initialization kept all pre-activations {margin} away from 0 in {attempts} draws")


def grad_check_model(config: TrainConfig, eps: float = 1e-5, channels: int = 2,
                     n_per_class: int = 1) -> float:
    """
    Max relative error between backprop gradients of L_task + lambda * L_orth and central
    finite differences, over every parameter of a tiny network.
    """
    if eps <= 0:
        raise ConfigError(f"Finite-difference step must be > 0, got {eps}")
    rng = make_rng(config.seed)
    dataset = gen_dataset(config.seed, n_per_class)
    model = _kink_safe_model(rng, dataset, channels, margin=1e-3)

    _, _, grads = model.loss_and_grads(dataset.images, dataset.labels, config.lam, config.mode)
    analytic = np.concatenate([grads[name].ravel() for name in sorted(grads)])
    start = model.flat_parameters()

    def total_loss(flat):
        model.set_flat_parameters(flat)
        total, _, _ = model.loss_and_grads(dataset.images, dataset.labels, config.lam, config.mode)
        return total

    numeric = finite_difference(total_loss, start, eps)
    model.set_flat_parameters(start)
    error = max_relative_error(analytic, numeric)
    logger.info(f"Model gradient check ({model.parameter_count()} parameters, lambda={config.lam}, "
                f"mode={config.mode}): max relative error {error:.3e}")
    return error


@dataclass
class OrthMinimizeResult:
    kernel: KernelTensor
    losses: List[float] = field(default_factory=list)
    lr: float = 0.0


def _minimize(kernel: KernelTensor, objective, steps: int, lr: float) -> OrthMinimizeResult:
    """
    Gradient descent with a simple step-size rule: a step that increases the loss is
    rejected and the rate halved; an accepted step grows the rate by 5%.
    The recorded trajectory is therefore non-increasing.
    """
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if lr <= 0:
        raise ConfigError(f"lr must be > 0, got {lr}")
    current = objective(kernel)
    losses = [current.loss]
    for _ in range(steps):
        candidate = KernelTensor(kernel.data - lr * current.grad)
        report = objective(candidate)
        if not np.isfinite(report.loss) or report.loss > current.loss:
            lr *= 0.5
            if lr < 1e-30:
                raise NumericalError("Orthogonality minimization diverged: step size underflow")
        else:
            kernel, current = candidate, report
            lr *= 1.05
        losses.append(current.loss)
    if not np.isfinite(current.loss):
        raise NumericalError("Orthogonality minimization produced a non-finite loss")
    return OrthMinimizeResult(kernel=kernel, losses=losses, lr=lr)


def minimize_orth_only(kernel: KernelTensor, stride: int = 1, steps: int = 2000, lr: float = 0.01,
                       mode: str = "row") -> OrthMinimizeResult:
    """Plain gradient descent on conv_orth_loss alone; returns the final kernel and loss trajectory."""
    result = _minimize(kernel, lambda k: conv_orth_loss(k, stride, mode), steps, lr)
    logger.info(f"Conv-orthogonality minimization: {result.losses[0]:.6g} -> {result.losses[-1]:.6g} "
                f"in {steps} steps")
    return result


def minimize_kernel_orth_only(kernel: KernelTensor, steps: int = 2000, lr: float = 0.01,
                              mode: Optional[str] = None) -> OrthMinimizeResult:
    """Gradient descent on kernel_orth_loss alone (the kernel-orthogonality baseline)."""
    mode = mode or kernel_mode_for(kernel)
    result = _minimize(kernel, lambda k: kernel_orth_loss(k, mode), steps, lr)
    logger.info(f"Kernel-orthogonality minimization: {result.losses[0]:.6g} -> {result.losses[-1]:.6g}")
    return result


def lambda_sweep(config: TrainConfig, dataset: ToyDataset,
                 lambdas: Sequence[float] = DEFAULT_SWEEP_LAMBDAS) -> pd.DataFrame:
    """Train one model per lambda (other settings from `config`) and tabulate the final metrics."""
    rows = []
    for lam in lambdas:
        metrics, _ = train(TrainConfig(lam=lam, lr=config.lr, momentum=config.momentum,
                                       epochs=config.epochs, batch_size=config.batch_size,
                                       seed=config.seed, mode=config.mode), dataset)
        last = metrics.get_history().iloc[-1]
        rows.append({"lambda": float(lam), "accuracy": float(last["accuracy"]),
                     "task_loss": float(last["task_loss"]), "orth_loss": float(last["orth_loss"])})
    return pd.DataFrame(rows, columns=["lambda", "accuracy", "task_loss", "orth_loss"])
