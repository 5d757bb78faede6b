"""Control sources: the proportional steering law and ReLU networks.

Controllers work in *control coordinates*: the input is ``(p [m],
theta [deg], latent...)`` and the output is the steering command in degrees,
which is the unit convention of the taxiing benchmark's law
``phi = -0.74 p - 0.44 theta``.  The plant itself runs in radians;
:func:`steering` does the conversion.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geom import Box

DEG = 180.0 / math.pi

KP_DEFAULT = -0.74
KTHETA_DEFAULT = -0.44

LAYER_KEYS = {"weights", "bias", "activation"}
TOP_KEYS = {"input_dim", "output_dim", "layers"}


class ControllerError(ValueError):
    pass


class ParseError(ControllerError):
    pass


class DimChainError(ControllerError):
    pass


class LatentMissing(ControllerError):
    pass


class LatentOutOfRange(ControllerError):
    pass


@dataclass(frozen=True, eq=False)
class Network:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    relu: tuple[bool, ...]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.relu)) or not self.weights:
            raise DimChainError("weights, biases and activations must be non-empty and equally long")
        ws = tuple(np.array(w, dtype=np.float64, order="C") for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2:
                raise DimChainError(f"layer {i}: weight matrix must be 2-d")
            if b.shape[0] != w.shape[0]:
                raise DimChainError(f"layer {i}: bias length {b.shape[0]} != {w.shape[0]} rows")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise DimChainError(
                    f"layer {i}: expects {w.shape[1]} inputs but layer {i - 1} gives {ws[i - 1].shape[0]}"
                )
        for w in ws:
            w.setflags(write=False)
        for b in bs:
            b.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "relu", tuple(bool(r) for r in self.relu))

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def __call__(self, x) -> np.ndarray:
        from ._core import kernels

        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out = kernels.mlp_forward(np.atleast_2d(x), self.weights, self.biases, self.relu)
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "layers": [
                {"weights": w.tolist(), "bias": b.tolist(), "activation": "relu" if r else "id"}
                for w, b, r in zip(self.weights, self.biases, self.relu)
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), separators=(",", ":")).encode()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.relu == other.relu
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
            and len(self.weights) == len(other.weights)
        )

    __hash__ = None


def _validate_scalar_output(net: Network) -> None:
    if net.output_dim != 1:
        raise DimChainError(f"controller network must have one output, got {net.output_dim}")
    if net.relu[-1]:
        raise DimChainError("final layer must use the identity activation")


def network_from_dict(doc, where: str = "<network>", scalar: bool = True) -> Network:
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: top level must be an object")
    unknown = set(doc) - TOP_KEYS
    if unknown:
        raise ParseError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = TOP_KEYS - set(doc)
    if missing:
        raise ParseError(f"{where}: missing field(s) {sorted(missing)}")
    layers = doc["layers"]
    if not isinstance(layers, list) or not layers:
        raise ParseError(f"{where}: 'layers' must be a non-empty list")
    ws, bs, rs = [], [], []
    for i, layer in enumerate(layers):
        ctx = f"{where}: layers[{i}]"
        if not isinstance(layer, dict):
            raise ParseError(f"{ctx} must be an object")
        unknown = set(layer) - LAYER_KEYS
        if unknown:
            raise ParseError(f"{ctx}: unknown field(s) {sorted(unknown)}")
        if set(layer) != LAYER_KEYS:
            raise ParseError(f"{ctx}: missing field(s) {sorted(LAYER_KEYS - set(layer))}")
        act = layer["activation"]
        if act not in ("relu", "id"):
            raise ParseError(f"{ctx}.activation: expected 'relu' or 'id', got {act!r}")
        try:
            w = np.array(layer["weights"], dtype=np.float64)
            b = np.array(layer["bias"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{ctx}: non-numeric or ragged weights/bias ({exc})") from None
        if w.ndim != 2 or b.ndim != 1:
            raise ParseError(f"{ctx}: weights must be a 2-d list and bias a 1-d list")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ParseError(f"{ctx}: non-finite values")
        ws.append(w)
        bs.append(b)
        rs.append(act == "relu")
    net = Network(tuple(ws), tuple(bs), tuple(rs))
    if net.input_dim != doc["input_dim"]:
        raise DimChainError(f"{where}: declared input_dim {doc['input_dim']} != {net.input_dim}")
    if net.output_dim != doc["output_dim"]:
        raise DimChainError(f"{where}: declared output_dim {doc['output_dim']} != {net.output_dim}")
    if scalar:
        _validate_scalar_output(net)
    return net


def load_network(path, scalar: bool = True) -> Network:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return network_from_dict(doc, str(path), scalar=scalar)


def save_network(net: Network, path) -> None:
    Path(path).write_text(net.dumps(), encoding="utf-8")


def surrogate_path() -> Path:
    return Path(__file__).with_name("data") / "aats_surrogate.json"


# -- control sources --------------------------------------------------------

@dataclass(frozen=True)
class AnalyticLaw:
    kp: float = KP_DEFAULT
    ktheta: float = KTHETA_DEFAULT

    def __post_init__(self):
        if not (math.isfinite(self.kp) and math.isfinite(self.ktheta)):
            raise ValueError("law coefficients must be finite")

    latent_box = None

    def to_network(self) -> Network:
        return Network((np.array([[self.kp, self.ktheta]]),), (np.array([0.0]),), (False,))

    def digest(self) -> str:
        return hashlib.sha256(f"analytic:{self.kp!r}:{self.ktheta!r}".encode()).hexdigest()


@dataclass(frozen=True)
class NeuralNet:
    network: Network
    latent_box: Box | None = None

    def __post_init__(self):
        _validate_scalar_output(self.network)
        n_lat = 0 if self.latent_box is None else len(self.latent_box)
        if self.network.input_dim != 2 + n_lat:
            raise DimChainError(
                f"network takes {self.network.input_dim} inputs but state+latent is {2 + n_lat}"
            )

    def to_network(self) -> Network:
        return self.network

    def digest(self) -> str:
        h = hashlib.sha256(self.network.digest().encode())
        if self.latent_box is not None:
            h.update(repr(self.latent_box.bounds()).encode())
        return h.hexdigest()


ControlSource = AnalyticLaw | NeuralNet


def as_network(cs) -> Network:
    if isinstance(cs, Network):
        return cs
    return cs.to_network()


def latent_dim(cs) -> int:
    box = getattr(cs, "latent_box", None)
    return 0 if box is None else len(box)


def require_latent(cs, latent):
    """Validate a latent point against the source's latent box."""
    box = getattr(cs, "latent_box", None)
    if box is None:
        if latent is not None and len(latent):
            raise LatentOutOfRange("controller takes no latent input")
        return None
    if latent is None:
        raise LatentMissing(f"controller needs a {len(box)}-d latent input")
    latent = np.asarray(latent, dtype=float).reshape(-1)
    if len(latent) != len(box) or not box.contains_point(latent):
        raise LatentOutOfRange(f"latent {latent.tolist()} outside {box}")
    return latent


def to_control(states) -> np.ndarray:
    """``(p [m], theta [rad])`` rows to control coordinates ``(p, theta [deg])``."""
    s = np.array(states, dtype=np.float64, ndmin=2)
    s[:, 1] *= DEG
    return s


def evaluate(cs, x, latent=None) -> float | np.ndarray:
    """Steering command in degrees at control-coordinate input(s) ``x``.

    ``x`` is ``(p, theta_deg)`` or an ``(n, 2)`` array; ``latent`` is a point
    (shared) or ``(n, k)`` array of latent inputs.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if isinstance(cs, AnalyticLaw):
        require_latent(cs, latent)
        out = cs.kp * x[:, 0] + cs.ktheta * x[:, 1]
        return float(out[0]) if single else out
    box = getattr(cs, "latent_box", None)
    if box is not None:
        if latent is None:
            raise LatentMissing(f"controller needs a {len(box)}-d latent input")
        lat = np.atleast_2d(np.asarray(latent, dtype=np.float64))
        if lat.shape[1] != len(box) or np.any(lat < box.lo) or np.any(lat > box.hi):
            raise LatentOutOfRange(f"latent outside {box}")
        lat = np.broadcast_to(lat, (x.shape[0], len(box)))
        x = np.hstack([x[:, :2], lat])
    else:
        require_latent(cs, latent)
    out = as_network(cs)(x)[:, 0]
    return float(out[0]) if single else out


def eval_control(cs, s, latent=None) -> float:
    """Steering command in degrees for a state given in control coordinates."""
    return evaluate(cs, np.asarray(tuple(s), dtype=float), latent)


def steering(cs, state, latent=None) -> float:
    """Unclamped steering angle in radians for an SI state."""
    return evaluate(cs, to_control([tuple(state)])[0], latent) / DEG


# -- surrogate network ------------------------------------------------------

DOMAIN_SCALE = np.array([10.0, 30.0])


def surrogate_target(x, amplitude: float = 0.05, latent=None, latent_gain: float = 0.2) -> np.ndarray:
    """Law plus a fixed smooth bump, in control coordinates (deg)."""
    x = np.atleast_2d(x)
    p, th_deg = x[:, 0], x[:, 1]
    y = KP_DEFAULT * p + KTHETA_DEFAULT * th_deg + amplitude * np.sin(p) * np.cos(2.0 * th_deg / DEG)
    if latent is not None:
        lat = np.atleast_2d(latent)
        y = y + latent_gain * lat[:, 0] * (1.0 + 0.5 * np.sin(p))
        if lat.shape[1] > 1:
            y = y + 0.5 * latent_gain * lat[:, 1]
    return y


def _adam_finetune(weights, biases, xs, ys, n_iter, lr, rng, batch):
    """Full-network Adam on mean squared error; every hidden layer is ReLU."""
    params = [a for pair in zip(weights, biases) for a in pair]
    m = [np.zeros_like(a) for a in params]
    v = [np.zeros_like(a) for a in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    n_layers = len(weights)
    for it in range(1, n_iter + 1):
        idx = rng.integers(0, len(xs), size=batch)
        x, y = xs[idx], ys[idx]
        acts = [x]
        for li in range(n_layers):
            z = acts[-1] @ weights[li].T + biases[li]
            acts.append(np.maximum(z, 0.0) if li < n_layers - 1 else z)
        delta = 2.0 * (acts[-1][:, 0] - y)[:, None] / batch
        grads = [None] * (2 * n_layers)
        for li in range(n_layers - 1, -1, -1):
            grads[2 * li] = delta.T @ acts[li]
            grads[2 * li + 1] = delta.sum(axis=0)
            if li:
                delta = (delta @ weights[li]) * (acts[li] > 0.0)
        lr_t = lr * (0.5 * (1.0 + math.cos(math.pi * it / n_iter)))
        for k, (a, g) in enumerate(zip(params, grads)):
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            mh = m[k] / (1 - b1 ** it)
            vh = v[k] / (1 - b2 ** it)
            a -= lr_t * mh / (np.sqrt(vh) + eps)


def synthesize_surrogate(seed: int = 0, hidden_sizes: Sequence[int] = (32, 32), n_train: int = 8192,
                         amplitude: float = 0.05, latent_dim: int = 0, latent_range: float = 0.8,
                         n_iter: int = 6000, lr: float = 5e-3) -> tuple[Network, float]:
    """Fit a ReLU network to :func:`surrogate_target`.

    Initialisation: hidden layers are random ReLU features plus
    identity-carrying channel pairs ``relu(x), relu(-x)`` (so the linear part
    of the target is exactly representable) and the output layer is solved by
    least squares.  Then all weights are fine-tuned with Adam for ``n_iter``
    minibatch steps.  Deterministic for a given seed on a given platform.
    Returns the network and its max abs error (deg) on a 256 x 256 grid.
    """
    rng = np.random.default_rng(seed)
    n_in = 2 + latent_dim
    scale = np.concatenate([DOMAIN_SCALE, np.full(latent_dim, latent_range)])
    xs = rng.uniform(-1.0, 1.0, size=(n_train, n_in)) * scale

    def target(x):
        return surrogate_target(x[:, :2], amplitude, x[:, 2:] if latent_dim else None)

    weights, biases, relu = [], [], []
    width = n_in
    carry = 2 * n_in
    for li, size in enumerate(hidden_sizes):
        n_rand = size - carry
        if n_rand < 1:
            raise ValueError(f"hidden layer {li} must be wider than {carry}")
        W = np.zeros((size, width))
        b = np.zeros(size)
        if li == 0:
            W[:n_in] = np.eye(n_in)
            W[n_in:carry] = -np.eye(n_in)
            W[carry:] = rng.normal(size=(n_rand, n_in)) / scale
            b[carry:] = rng.uniform(-1.0, 1.0, size=n_rand)
        else:
            W[:carry, :carry] = np.eye(carry)
            prev_rand = width - carry
            W[carry:, carry:] = rng.normal(size=(n_rand, prev_rand)) / math.sqrt(prev_rand)
            b[carry:] = rng.uniform(-0.5, 0.5, size=n_rand)
        weights.append(W)
        biases.append(b)
        relu.append(True)
        width = size

    ys = target(xs)
    if hidden_sizes:
        feats = Network(tuple(weights), tuple(biases), tuple(relu))(xs)
    else:
        feats = xs
    design = np.hstack([feats, np.ones((len(xs), 1))])
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    weights.append(coef[:-1].reshape(1, -1))
    biases.append(np.array([coef[-1]]))
    relu.append(False)
    if hidden_sizes and n_iter > 0:
        _adam_finetune(weights, biases, xs, ys, n_iter, lr, rng, batch=min(1024, n_train))
    net = Network(tuple(weights), tuple(biases), tuple(relu))

    g = np.linspace(-1.0, 1.0, 256)
    pp, tt = np.meshgrid(g * scale[0], g * scale[1], indexing="ij")
    grid = np.stack([pp.ravel(), tt.ravel()], axis=1)
    if latent_dim:
        grid = np.hstack([grid, np.zeros((len(grid), latent_dim))])
    err = float(np.max(np.abs(net(grid)[:, 0] - target(grid))))
    return net, err
