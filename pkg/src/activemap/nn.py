"""Small neural-network toolkit on top of the autodiff engine.

Linear layers, batch normalization, MLPs assembled from a width spec, the
Adam optimizer, a finite-difference gradient checker and a versioned JSON
checkpoint format. Everything runs in float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable

import numpy as np

from .autodiff import ContractError, Tensor, backward

__all__ = [
    "ShapeError",
    "DegenerateBatchError",
    "NonFiniteGradientError",
    "Linear",
    "BatchNorm",
    "MlpSpec",
    "Mlp",
    "Adam",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


class ShapeError(ContractError):
    pass


class DegenerateBatchError(ContractError):
    pass


class NonFiniteGradientError(RuntimeError):
    pass


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, name: str = "linear"):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.W = Tensor(glorot_uniform(rng, in_dim, out_dim), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(
                f"{self.name}: input width {x.shape[-1]} != expected {self.in_dim}"
            )
        return x @ self.W + self.b

    def parameters(self) -> Dict[str, Tensor]:
        return {f"{self.name}.W": self.W, f"{self.name}.b": self.b}


class BatchNorm:
    """Batch normalization over the row (batch) dimension.

    Training mode normalizes with the batch statistics of the call and
    optionally folds them into running statistics (momentum 0.9); inference
    mode uses the running statistics. Training batches must have >= 2 rows.
    """

    def __init__(self, dim: int, name: str = "bn", momentum: float = 0.9, eps: float = 1e-10):
        self.name = name
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def __call__(self, x: Tensor, training: bool, update_running: bool = False) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"{self.name}: width {x.shape[-1]} != expected {self.dim}")
        if training:
            if x.shape[0] < 2:
                raise DegenerateBatchError(
                    f"{self.name}: batch statistics need >= 2 rows, got {x.shape[0]}"
                )
            mu = x.mean(axis=0, keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=0, keepdims=True)
            if update_running:
                m = self.momentum
                self.running_mean = m * self.running_mean + (1 - m) * mu.data[0]
                self.running_var = m * self.running_var + (1 - m) * var.data[0]
            xhat = centered / (var + self.eps).sqrt()
        else:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return xhat * self.gamma + self.beta

    def parameters(self) -> Dict[str, Tensor]:
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        self.running_mean = np.array(arrays[f"{self.name}.running_mean"])
        self.running_var = np.array(arrays[f"{self.name}.running_var"])


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths plus normalization/activation placement.

    `widths` lists input width, hidden widths and output width. Every layer
    is followed by batch normalization (when `normalize`) and ReLU; setting
    `final_activation` False leaves the last layer bare, which value heads
    need to produce signed outputs.
    """

    widths: tuple
    normalize: bool = True
    final_activation: bool = True

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ContractError("an MLP needs at least two widths")
        if any(w <= 0 for w in self.widths):
            raise ContractError("layer widths must be positive")


class Mlp:
    def __init__(self, spec: MlpSpec, rng: np.random.Generator, name: str = "mlp"):
        self.spec = spec
        self.name = name
        self.linears = []
        self.norms = []
        n_layers = len(spec.widths) - 1
        for i in range(n_layers):
            activated = spec.final_activation or i < n_layers - 1
            self.linears.append(
                Linear(spec.widths[i], spec.widths[i + 1], rng, name=f"{name}.l{i}")
            )
            if spec.normalize and activated:
                self.norms.append(BatchNorm(spec.widths[i + 1], name=f"{name}.n{i}"))
            else:
                self.norms.append(None)

    def __call__(self, x: Tensor, training: bool = False, update_running: bool = False) -> Tensor:
        if x.shape[0] < 1:
            raise ContractError(f"{self.name}: batch must have >= 1 row")
        n_layers = len(self.linears)
        for i, lin in enumerate(self.linears):
            x = lin(x)
            activated = self.spec.final_activation or i < n_layers - 1
            if self.norms[i] is not None:
                x = self.norms[i](x, training=training, update_running=update_running)
            if activated:
                x = x.relu()
        return x

    def parameters(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for lin in self.linears:
            out.update(lin.parameters())
        for norm in self.norms:
            if norm is not None:
                out.update(norm.parameters())
        return out

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for norm in self.norms:
            if norm is not None:
                out.update(norm.state_arrays())
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for norm in self.norms:
            if norm is not None:
                norm.load_state_arrays(arrays)


def mlp_forward(mlp: Mlp, x, training: bool = False) -> Tensor:
    """Convenience wrapper accepting raw arrays."""
    t = x if isinstance(x, Tensor) else Tensor(x)
    return mlp(t, training=training)


class Adam:
    """Bias-corrected Adam over a named parameter dict.

    A non-finite gradient anywhere rejects the whole update and leaves both
    parameters and moments untouched.
    """

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float,
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        grads = {k: p.grad_or_zeros() for k, p in self.params.items()}
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient for {k!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / c1
            vhat = self.v[k] / c2
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {"adam.t": np.array([float(self.t)])}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out


def gradient_check(
    loss_fn: Callable[[], Tensor],
    params: Dict[str, Tensor],
    step=1e-4,
    stability: float = 1e-6,
    max_entries_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn` must be a deterministic closure over `params` returning a
    scalar tensor. Each checked entry is perturbed individually; with
    `max_entries_per_param` set, a seeded subset per parameter is checked.

    `step` may be a single value or a sequence; with a sequence, each
    entry's error is the minimum over the steps. A wrong gradient fails at
    every step (central differences converge to the true derivative), while
    a ReLU kink inside one step's window resolves at the smaller steps, so
    the sweep keeps the check meaningful for deep piecewise-linear
    networks.
    """
    steps = tuple(np.atleast_1d(np.asarray(step, dtype=np.float64)))
    if any(s <= 0 for s in steps):
        raise ContractError("finite-difference step must be positive")
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    backward(loss, params.values())
    analytic = {k: p.grad_or_zeros().copy() for k, p in params.items()}
    if rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    for k, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            idx = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            idx = np.arange(n)
        for i in idx:
            an = analytic[k].reshape(-1)[i]
            err = np.inf
            for h in steps:
                orig = flat[i]
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                fd = (up - down) / (2 * h)
                err = min(err, abs(an - fd) / (abs(an) + abs(fd) + stability))
            if err > worst:
                worst = err
    return worst


def save_checkpoint(path, arrays: Dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write a named-array checkpoint as versioned JSON (row-major values)."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "arrays": {
            k: {"shape": list(np.asarray(v).shape), "data": np.asarray(v).reshape(-1).tolist()}
            for k, v in arrays.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> tuple[Dict[str, np.ndarray], dict]:
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {version!r}")
    arrays = {
        k: np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
        for k, rec in payload["arrays"].items()
    }
    return arrays, payload.get("meta", {})


def assign_parameters(params: Dict[str, Tensor], arrays: Dict[str, np.ndarray]) -> None:
    """Load checkpoint arrays into an existing parameter dict, shape-checked."""
    for k, p in params.items():
        if k not in arrays:
            raise ContractError(f"checkpoint missing parameter {k!r}")
        a = arrays[k]
        if a.shape != p.data.shape:
            raise ShapeError(f"{k}: checkpoint shape {a.shape} != expected {p.data.shape}")
        p.data = a.copy()
