"""Networks, input regions and specifications.

A :class:`Network` is a dense ReLU MLP: affine layers with a ReLU between
every pair of consecutive layers and no activation after the last one.
All arithmetic is float64.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class ModelFormatError(ValueError):
    """A model or property file could not be parsed."""


class DimensionError(ValueError):
    """Layer, region or specification dimensions are inconsistent."""


class NonFiniteError(ValueError):
    """A weight, bias or region entry is NaN or infinite."""


@dataclass(frozen=True, eq=False)
class Network:
    """Dense ReLU network ``z(i) = W(i) relu(z(i-1)) + b(i)`` with ``z(0) = x``.

    Parameters
    ----------
    weights : sequence of (d_i, d_{i-1}) arrays
    biases : sequence of (d_i,) arrays
    """

    weights: tuple
    biases: tuple

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64, ndmin=2) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64, ndmin=1) for b in self.biases)
        if not ws:
            raise DimensionError("network needs at least one layer")
        if len(ws) != len(bs):
            raise DimensionError(f"{len(ws)} weight matrices but {len(bs)} bias vectors")
        for i, (w, b) in enumerate(zip(ws, bs), start=1):
            if w.ndim != 2 or b.ndim != 1:
                raise DimensionError(f"layer {i}: weight must be 2-D and bias 1-D")
            if w.shape[0] != b.shape[0]:
                raise DimensionError(
                    f"layer {i}: weight has {w.shape[0]} rows but bias has {b.shape[0]} entries")
            if i > 1 and w.shape[1] != ws[i - 2].shape[0]:
                raise DimensionError(
                    f"layer {i}: expects {w.shape[1]} inputs but layer {i - 1} "
                    f"has {ws[i - 2].shape[0]} outputs")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NonFiniteError(f"layer {i}: non-finite weight or bias")
            w.flags.writeable = False
            b.flags.writeable = False
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def hidden_dims(self) -> list[int]:
        """Widths of the ReLU layers 1..L-1."""
        return [w.shape[0] for w in self.weights[:-1]]

    def __eq__(self, other):
        if not isinstance(other, Network) or self.num_layers != other.num_layers:
            return NotImplemented if not isinstance(other, Network) else False
        return all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights)) and \
            all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))

    def __hash__(self):
        return id(self)


@dataclass(frozen=True)
class InputRegion:
    """The ball ``{x : ||x - x0||_p <= epsilon}``; ``p = inf`` by default."""

    x0: np.ndarray
    epsilon: float
    p: float = math.inf

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=np.float64, ndmin=1)
        if x0.ndim != 1:
            raise DimensionError("x0 must be a vector")
        if not np.all(np.isfinite(x0)):
            raise NonFiniteError("x0 has non-finite entries")
        eps = float(self.epsilon)
        if not math.isfinite(eps) or eps < 0:
            raise ValueError(f"epsilon must be finite and nonnegative, got {self.epsilon!r}")
        p = float(self.p)
        if not (p >= 1):
            raise ValueError(f"norm order p must be >= 1 or inf, got {self.p!r}")
        x0.flags.writeable = False
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "p", p)

    @property
    def dual_norm(self) -> float:
        """The q with 1/p + 1/q = 1."""
        if math.isinf(self.p):
            return 1.0
        if self.p == 1.0:
            return math.inf
        return self.p / (self.p - 1.0)

    @property
    def lower(self) -> np.ndarray:
        return self.x0 - self.epsilon

    @property
    def upper(self) -> np.ndarray:
        return self.x0 + self.epsilon

    def contains(self, x, tol: float = 1e-12) -> bool:
        d = np.asarray(x, dtype=np.float64) - self.x0
        return bool(np.linalg.norm(d, ord=self.p) <= self.epsilon + tol)


@dataclass(frozen=True)
class Specification:
    """Rows of linear functionals over the raw network output.

    Row ``r`` is verified when ``out_coeffs[r] @ y(x) + out_consts[r] > 0`` for
    every x in the region.
    """

    out_coeffs: np.ndarray
    out_consts: np.ndarray = field(default=None)

    def __post_init__(self):
        coeffs = np.array(self.out_coeffs, dtype=np.float64, ndmin=2)
        if coeffs.ndim != 2 or coeffs.shape[0] < 1:
            raise DimensionError("specification needs at least one row")
        consts = np.zeros(coeffs.shape[0]) if self.out_consts is None else \
            np.array(self.out_consts, dtype=np.float64, ndmin=1)
        if consts.shape != (coeffs.shape[0],):
            raise DimensionError(
                f"{coeffs.shape[0]} specification rows but {consts.shape[0]} constants")
        if not (np.all(np.isfinite(coeffs)) and np.all(np.isfinite(consts))):
            raise NonFiniteError("specification has non-finite entries")
        object.__setattr__(self, "out_coeffs", coeffs)
        object.__setattr__(self, "out_consts", consts)

    def __len__(self):
        return self.out_coeffs.shape[0]


@dataclass(frozen=True)
class VerificationProperty:
    region: InputRegion
    spec: Specification


def forward_eval(net: Network, x) -> np.ndarray | float:
    """Evaluate the network exactly.

    Returns a float when the output layer has width one, otherwise the raw
    output vector.
    """
    h = np.asarray(x, dtype=np.float64)
    if h.shape != (net.input_dim,):
        raise DimensionError(f"input has shape {h.shape}, network expects ({net.input_dim},)")
    last = net.num_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = w @ h + b
        if i < last:
            h = np.maximum(h, 0.0)
    if h.shape[0] == 1:
        return float(h[0])
    return h


def merge_specification(net: Network, spec_row, const: float = 0.0) -> Network:
    """Fold a linear functional of the raw output into the last layer."""
    row = np.array(spec_row, dtype=np.float64, ndmin=1)
    if row.shape != (net.output_dim,):
        raise DimensionError(
            f"specification row has length {row.shape[0]}, network output is {net.output_dim}")
    w_last = (row @ net.weights[-1])[None, :]
    b_last = np.array([row @ net.biases[-1] + float(const)])
    return Network(net.weights[:-1] + (w_last,), net.biases[:-1] + (b_last,))


def margin_row(num_classes: int, label: int, other: int) -> np.ndarray:
    """Specification row for the logit margin ``y[label] - y[other]``."""
    if label == other:
        raise ValueError("label and other must differ")
    row = np.zeros(num_classes)
    row[label] = 1.0
    row[other] = -1.0
    return row


# -- file formats ------------------------------------------------------------

def _read_json(path) -> object:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelFormatError(f"{path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _as_matrix(obj, where: str) -> np.ndarray:
    if not isinstance(obj, list) or not obj or not all(isinstance(r, list) for r in obj):
        raise ModelFormatError(f"{where}: expected a non-empty list of rows")
    widths = {len(r) for r in obj}
    if len(widths) != 1:
        raise ModelFormatError(f"{where}: ragged rows (lengths {sorted(widths)})")
    try:
        return np.array(obj, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"{where}: {exc}") from exc


def _as_vector(obj, where: str) -> np.ndarray:
    if not isinstance(obj, list) or any(isinstance(v, (list, dict)) for v in obj):
        raise ModelFormatError(f"{where}: expected a flat list of numbers")
    try:
        return np.array(obj, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"{where}: {exc}") from exc


def network_from_dict(data, source: str = "<model>") -> Network:
    if not isinstance(data, dict) or "layers" not in data:
        raise ModelFormatError(f'{source}: expected an object with a "layers" list')
    layers = data["layers"]
    if not isinstance(layers, list) or not layers:
        raise ModelFormatError(f'{source}: "layers" must be a non-empty list')
    weights, biases = [], []
    for k, layer in enumerate(layers):
        where = f"{source}: layers[{k}]"
        if not isinstance(layer, dict) or "weight" not in layer or "bias" not in layer:
            raise ModelFormatError(f'{where}: needs "weight" and "bias"')
        weights.append(_as_matrix(layer["weight"], where + ".weight"))
        biases.append(_as_vector(layer["bias"], where + ".bias"))
    return Network(weights, biases)


def network_to_dict(net: Network) -> dict:
    return {"layers": [{"weight": w.tolist(), "bias": b.tolist()}
                       for w, b in zip(net.weights, net.biases)]}


def load_network(path) -> Network:
    """Load a model file ``{"layers": [{"weight": [[...]], "bias": [...]}, ...]}``.

    Weights are row-major: one list per output neuron.
    """
    return network_from_dict(_read_json(path), str(path))


def save_network(net: Network, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(network_to_dict(net)) + "\n")


def _parse_p(value, where: str) -> float:
    if value is None:
        return math.inf
    if isinstance(value, str):
        if value.lower() in ("inf", "infinity"):
            return math.inf
        raise ModelFormatError(f'{where}: p must be "inf" or a number, got {value!r}')
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelFormatError(f"{where}: p must be a number")
    return float(value)


def property_from_dict(data, source: str = "<property>") -> VerificationProperty:
    if not isinstance(data, dict):
        raise ModelFormatError(f"{source}: expected a JSON object")
    for key in ("x0", "epsilon", "spec_rows"):
        if key not in data:
            raise ModelFormatError(f'{source}: missing "{key}"')
    x0 = _as_vector(data["x0"], f"{source}: x0")
    eps = data["epsilon"]
    if isinstance(eps, bool) or not isinstance(eps, (int, float)):
        raise ModelFormatError(f"{source}: epsilon must be a number")
    rows = _as_matrix(data["spec_rows"], f"{source}: spec_rows")
    consts = _as_vector(data.get("spec_consts", [0.0] * rows.shape[0]), f"{source}: spec_consts")
    try:
        region = InputRegion(x0, float(eps), _parse_p(data.get("p"), f"{source}: p"))
        spec = Specification(rows, consts)
    except (ValueError, DimensionError) as exc:
        raise ModelFormatError(f"{source}: {exc}") from exc
    return VerificationProperty(region, spec)


def property_to_dict(prop: VerificationProperty) -> dict:
    p = prop.region.p
    return {
        "x0": prop.region.x0.tolist(),
        "epsilon": prop.region.epsilon,
        "p": "inf" if math.isinf(p) else p,
        "spec_rows": prop.spec.out_coeffs.tolist(),
        "spec_consts": prop.spec.out_consts.tolist(),
    }


def load_property(path) -> VerificationProperty:
    return property_from_dict(_read_json(path), str(path))


def save_property(prop: VerificationProperty, path) -> None:
    Path(path).write_text(json.dumps(property_to_dict(prop)) + "\n")


def check_compatible(net: Network, prop: VerificationProperty) -> None:
    if prop.region.x0.shape[0] != net.input_dim:
        raise DimensionError(
            f"x0 has {prop.region.x0.shape[0]} entries, network input is {net.input_dim}")
    if prop.spec.out_coeffs.shape[1] != net.output_dim:
        raise DimensionError(
            f"spec rows have {prop.spec.out_coeffs.shape[1]} columns, "
            f"network output is {net.output_dim}")


def random_network(dims: Sequence[int], rng=None, scale: float = 1.0) -> Network:
    """Gaussian-weight network with layer widths ``dims`` (input first)."""
    rng = np.random.default_rng(rng)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(size=(d_out, d_in)) * scale / math.sqrt(d_in))
        biases.append(rng.normal(size=d_out) * 0.1 * scale)
    return Network(weights, biases)
