"""Dense networks, the bounded derivative-order parameter, MSE loss and Adam."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var

__all__ = [
    "MlpConfig",
    "Mlp",
    "AlphaParam",
    "AdamState",
    "mlp_init",
    "mlp_forward",
    "alpha_value",
    "logit",
    "mse_loss",
    "adam_step",
    "save_model",
    "load_model",
]

_ACTIVATIONS = {"tanh", "identity", "sigmoid"}


@dataclass(frozen=True)
class MlpConfig:
    layer_sizes: tuple[int, ...] = (1, 64, 64, 1)
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        if self.hidden_activation != "tanh":
            raise ValueError("hidden activation must be tanh")
        if self.output_activation not in ("identity", "sigmoid"):
            raise ValueError(f"unsupported output activation {self.output_activation!r}")


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    config: MlpConfig

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order (w0, b0, w1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {flat.size}")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos : pos + b.size].copy()
            pos += b.size

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.config)


def mlp_init(config: MlpConfig) -> Mlp:
    """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases."""
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(config.layer_sizes[:-1], config.layer_sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, config)


def mlp_forward(mlp: Mlp, x, params: Sequence | None = None):
    """Apply the network to the input vector ``x``.

    ``params`` optionally replaces ``mlp.arrays()`` with taped Vars (same
    order) so gradients reach the weights; without it the pass is untaped
    unless ``x`` itself is a Var.
    """
    arrays = mlp.arrays() if params is None else list(params)
    n_in = mlp.config.layer_sizes[0]
    if np.shape(ad.value_of(x)) != (n_in,):
        raise ValueError(f"expected input of shape ({n_in},), got {np.shape(ad.value_of(x))}")
    h = x
    n_layers = len(mlp.weights)
    for layer in range(n_layers):
        w, b = arrays[2 * layer], arrays[2 * layer + 1]
        h = ad.add(ad.matvec(w, h), b)
        if layer < n_layers - 1:
            h = ad.tanh(h)
        elif mlp.config.output_activation == "sigmoid":
            h = ad.sigmoid(h)
    return h


def taped_params(mlp: Mlp, tape: Tape, prefix: str) -> list[Var]:
    """Register the network's arrays on ``tape`` as named parameters."""
    out = []
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        out.append(tape.parameter(w, f"{prefix}.w{i}"))
        out.append(tape.parameter(b, f"{prefix}.b{i}"))
    return out


def logit(p: float) -> float:
    """Inverse sigmoid."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"logit needs p in (0, 1), got {p}")
    return math.log(p / (1.0 - p))


@dataclass
class AlphaParam:
    """Derivative order, kept in (0, 1) by a sigmoid.

    ``scalar_logit`` trains a single logit; ``tiny_net`` trains a
    [1, 32, 1] tanh/sigmoid network fed with ``alpha_in``; ``fixed`` holds a
    constant (which may be exactly 1 for the classical case).
    """

    mode: str = "scalar_logit"
    logit: float = field(default_factory=lambda: logit(0.99))
    net: Mlp | None = None
    alpha_in: float = 0.99
    fixed: float | None = None

    def __post_init__(self):
        if self.mode not in ("scalar_logit", "tiny_net", "fixed"):
            raise ValueError(f"unknown alpha mode {self.mode!r}")
        if self.mode == "tiny_net" and self.net is None:
            raise ValueError("tiny_net mode needs a network")
        if self.mode == "fixed" and not (self.fixed is not None and 0.0 < self.fixed <= 1.0):
            raise ValueError("fixed mode needs a value in (0, 1]")

    @classmethod
    def scalar(cls, init: float = 0.99) -> "AlphaParam":
        return cls("scalar_logit", logit=logit(init))

    @classmethod
    def tiny(cls, init: float = 0.99, seed: int = 0) -> "AlphaParam":
        net = mlp_init(MlpConfig((1, 32, 1), "tanh", "sigmoid", seed))
        return cls("tiny_net", net=net, alpha_in=init)

    @classmethod
    def constant(cls, value: float) -> "AlphaParam":
        return cls("fixed", fixed=float(value))

    @property
    def trainable(self) -> bool:
        return self.mode != "fixed"

    def flat(self) -> np.ndarray:
        if self.mode == "scalar_logit":
            return np.array([self.logit])
        if self.mode == "tiny_net":
            return self.net.flat()
        return np.zeros(0)

    def set_flat(self, flat: np.ndarray) -> None:
        if self.mode == "scalar_logit":
            self.logit = float(flat[0])
        elif self.mode == "tiny_net":
            self.net.set_flat(flat)

    def copy(self) -> "AlphaParam":
        return AlphaParam(self.mode, self.logit, self.net.copy() if self.net else None, self.alpha_in, self.fixed)


# sigmoid saturates to exactly 0.0 / 1.0 in float64 for |logit| > ~37; this
# affine squeeze keeps the realised order strictly inside (0, 1)
_ALPHA_EPS = 2.0**-53


def _open_unit(x):
    return ad.add(ad.mul(x, 1.0 - 2.0 * _ALPHA_EPS), _ALPHA_EPS)


def alpha_value(a: AlphaParam, tape: Tape | None = None):
    """Realised derivative order; taped (w.r.t. the logit or net weights) when ``tape`` is given."""
    if a.mode == "fixed":
        return a.fixed
    if a.mode == "scalar_logit":
        z = a.logit if tape is None else tape.parameter(a.logit, "alpha.logit")
        return _open_unit(ad.sigmoid(z))
    params = None if tape is None else taped_params(a.net, tape, "alpha")
    out = mlp_forward(a.net, np.array([a.alpha_in]), params)
    return _open_unit(ad.take(out, 0))


def mse_loss(pred: Sequence, target: Sequence):
    """Mean of squared componentwise differences; taped when ``pred`` holds Vars."""
    if len(pred) != len(target) or len(pred) == 0:
        raise ValueError(f"shape mismatch: {len(pred)} predictions vs {len(target)} targets")
    acc = None
    count = 0
    for p, t in zip(pred, target):
        t = np.asarray(t, dtype=float)
        if np.shape(ad.value_of(p)) != t.shape:
            raise ValueError("prediction and target shapes differ")
        d = ad.sub(p, t)
        sq = ad.total(ad.mul(d, d))
        acc = sq if acc is None else ad.add(acc, sq)
        count += t.size
    return ad.div(acc, float(count))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new params and a new state."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if not (params.shape == grads.shape == state.m.shape):
        raise ValueError("params, grads and optimiser state must have equal length")
    if not np.all(np.isfinite(grads)):
        raise ad.NonFiniteError("non-finite gradient passed to Adam")
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new, AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.epsilon)


# --- serialisation -----------------------------------------------------------

FORMAT_HEADER = "nfde-model 1"


def _fmt(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in np.ravel(values))


def _write_mlp(lines: list[str], tag: str, mlp: Mlp) -> None:
    cfg = mlp.config
    lines.append(f"{tag} {' '.join(map(str, cfg.layer_sizes))}")
    lines.append(f"activations {cfg.hidden_activation} {cfg.output_activation} seed {cfg.seed}")
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        lines.append(f"w{i} {_fmt(w)}")
        lines.append(f"b{i} {_fmt(b)}")


def _read_mlp(it, tag: str) -> Mlp:
    head = next(it).split()
    if head[0] != tag:
        raise ValueError(f"expected {tag!r} section, found {head[0]!r}")
    sizes = tuple(int(s) for s in head[1:])
    act = next(it).split()
    cfg = MlpConfig(sizes, act[1], act[2], int(act[4]))
    weights, biases = [], []
    for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = next(it).split()
        b = next(it).split()
        if w[0] != f"w{i}" or b[0] != f"b{i}":
            raise ValueError("malformed layer record")
        weights.append(np.array([float(x) for x in w[1:]]).reshape(fo, fi))
        biases.append(np.array([float(x) for x in b[1:]]).reshape(fo))
    return Mlp(weights, biases, cfg)


def save_model(path, f_net: Mlp, alpha: AlphaParam | None, extras: dict[str, Sequence[float] | str] | None = None) -> None:
    """Write a network (and optional alpha parameter) in the flat text format.

    ``extras`` are stored as ``key value...`` lines (numbers at 17
    significant digits) and handed back by :func:`load_model`.
    """
    lines = [FORMAT_HEADER]
    _write_mlp(lines, "f_net", f_net)
    if alpha is None:
        lines.append("alpha none")
    elif alpha.mode == "scalar_logit":
        lines.append(f"alpha scalar_logit {alpha.logit:.17g}")
    elif alpha.mode == "fixed":
        lines.append(f"alpha fixed {alpha.fixed:.17g}")
    else:
        lines.append(f"alpha tiny_net {alpha.alpha_in:.17g}")
        _write_mlp(lines, "alpha_net", alpha.net)
    for key, val in (extras or {}).items():
        if isinstance(val, str):
            lines.append(f"{key} {val}")
        else:
            lines.append(f"{key} {_fmt(val)}".rstrip())
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> tuple[Mlp, AlphaParam | None, dict[str, list[str]]]:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != FORMAT_HEADER:
        raise ValueError(f"{path}: not an nfde model file (expected header {FORMAT_HEADER!r})")
    it = iter(text[1:])
    f_net = _read_mlp(it, "f_net")
    parts = next(it).split()
    if parts[0] != "alpha":
        raise ValueError("missing alpha record")
    if parts[1] == "none":
        alpha = None
    elif parts[1] == "scalar_logit":
        alpha = AlphaParam("scalar_logit", logit=float(parts[2]))
    elif parts[1] == "fixed":
        alpha = AlphaParam.constant(float(parts[2]))
    else:
        alpha = AlphaParam("tiny_net", net=_read_mlp(it, "alpha_net"), alpha_in=float(parts[2]))
    extras = {}
    for line in it:
        if line == "end":
            break
        key, *rest = line.split()
        extras[key] = rest
    return f_net, alpha, extras
