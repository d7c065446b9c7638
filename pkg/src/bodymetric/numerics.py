"""Dense kernels for training the scoring head.

Small-MLP forward and exact reverse-mode backward passes, the pairwise
preference loss, a decoupled-weight-decay adaptive-moment optimizer, and the
warmup/decay learning-rate schedule. All arithmetic is float64; binary file
formats downcast to float32 at the boundary.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ContractError, DomainError, NumericError, ShapeError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x):
    return (x > 0.0).astype(np.float64)


def _identity(x):
    return x


def _identity_grad(x):
    return np.ones_like(x)


ACTIVATIONS = {
    "gelu": (_gelu, _gelu_grad),
    "relu": (_relu, _relu_grad),
    "identity": (_identity, _identity_grad),
}


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes (input, hidden..., output) plus the hidden activation."""

    layer_dims: tuple
    activation: str = "gelu"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ShapeError(f"layer_dims needs at least 2 entries, got {dims}")
        if any(d < 1 for d in dims):
            raise ShapeError(f"layer_dims must all be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]


@dataclass
class MlpParams:
    """Per-layer weight matrices (out x in) and bias vectors (out)."""

    weights: list
    biases: list

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def check_spec(self, spec: MlpSpec):
        dims = spec.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError(
                f"params have {len(self.weights)} layers, spec wants {len(dims) - 1}"
            )
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]):
                raise ShapeError(
                    f"layer {i}: weight shape {w.shape}, expected {(dims[i + 1], dims[i])}"
                )
            if b.shape != (dims[i + 1],):
                raise ShapeError(f"layer {i}: bias shape {b.shape}, expected ({dims[i + 1]},)")


def init_mlp_params(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Uniform +/- sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    weights, biases = [], []
    dims = spec.layer_dims
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def zeros_like_params(params: MlpParams) -> MlpParams:
    return MlpParams(
        [np.zeros_like(w) for w in params.weights],
        [np.zeros_like(b) for b in params.biases],
    )


@dataclass
class MlpTape:
    """Cached activations from one forward pass, consumed by mlp_backward."""

    spec: MlpSpec
    params: MlpParams
    layer_inputs: list  # input to each linear layer
    preacts: list  # z before the hidden activation (final layer included)


def mlp_forward(spec: MlpSpec, params: MlpParams, x):
    """Forward pass. Returns (output, tape)."""
    params.check_spec(spec)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.in_dim,):
        raise ShapeError(f"layer 0: input length {x.shape}, expected ({spec.in_dim},)")
    act, _ = ACTIVATIONS[spec.activation]
    layer_inputs, preacts = [], []
    a = x
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        layer_inputs.append(a)
        z = w @ a + b
        preacts.append(z)
        a = z if i == n_layers - 1 else act(z)
    return a, MlpTape(spec, params, layer_inputs, preacts)


def mlp_backward(tape: MlpTape, upstream):
    """Exact gradients for the recorded forward pass.

    Returns (param_grads, input_grad) where param_grads mirrors MlpParams.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (tape.spec.out_dim,):
        raise ContractError(
            f"upstream gradient length {upstream.shape}, tape output dim {tape.spec.out_dim}"
        )
    if len(tape.layer_inputs) != len(tape.params.weights):
        raise ContractError("tape does not match its recorded parameters")
    _, act_grad = ACTIVATIONS[tape.spec.activation]
    n_layers = len(tape.params.weights)
    grads = zeros_like_params(tape.params)
    da = upstream
    for i in range(n_layers - 1, -1, -1):
        dz = da if i == n_layers - 1 else da * act_grad(tape.preacts[i])
        grads.weights[i] = np.outer(dz, tape.layer_inputs[i])
        grads.biases[i] = dz
        da = tape.params.weights[i].T @ dz
    return grads, da


_ALLOWED_P = (
    np.array([1.0, 0.0]),
    np.array([0.0, 1.0]),
    np.array([0.5, 0.5]),
)


def kl_preference_loss(p, p_hat):
    """KL(p || p_hat) over a two-image preference, plus its logit gradient.

    p must be one of [1,0], [0,1], [0.5,0.5]; p_hat must come from a softmax
    over the two logits (strictly positive, sums to 1). The gradient with
    respect to the logits is p_hat - p.
    """
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p.shape != (2,) or p_hat.shape != (2,):
        raise ShapeError("preference distributions are 2-vectors")
    if not any(np.array_equal(p, a) for a in _ALLOWED_P):
        raise DomainError(f"p must be [1,0], [0,1] or [0.5,0.5], got {p.tolist()}")
    if np.any(p_hat <= 0.0) or abs(p_hat.sum() - 1.0) > 1e-9:
        raise DomainError(f"p_hat must be strictly positive and sum to 1, got {p_hat.tolist()}")
    mask = p > 0.0
    loss = float(np.sum(p[mask] * (np.log(p[mask]) - np.log(p_hat[mask]))))
    loss = max(loss, 0.0)  # clamp -0.0 / rounding dust at the optimum
    return loss, p_hat - p


@dataclass
class OptimState:
    """Moment accumulators for the decoupled-weight-decay optimizer."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_params(cls, arrays, beta1=0.9, beta2=0.999, epsilon=1e-8, weight_decay=0.01):
        return cls(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
            weight_decay=weight_decay,
        )


def adamw_step(arrays, grads, state: OptimState, lr: float):
    """One in-place AdamW update over a flat list of parameter arrays."""
    if lr < 0.0:
        raise DomainError(f"lr must be >= 0, got {lr}")
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ShapeError("parameter/gradient/state lists differ in length")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter array {i}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        p *= 1.0 - lr * state.weight_decay
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return arrays, state


@dataclass(frozen=True)
class LrSchedule:
    peak_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.warmup_steps >= self.total_steps:
            raise DomainError("warmup_steps must be < total_steps")


def lr_at_step(step: int, cfg: LrSchedule) -> float:
    """Linear ramp 0 -> peak over warmup, then linear decay peak -> 0."""
    if step < 0 or step > cfg.total_steps:
        raise DomainError(f"step {step} outside [0, {cfg.total_steps}]")
    if step <= cfg.warmup_steps:
        if cfg.warmup_steps == 0:
            return cfg.peak_lr
        return cfg.peak_lr * step / cfg.warmup_steps
    return cfg.peak_lr * (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps)
