"""GRU cell with analytic backward, plus two-layer stacking variants.

The cell follows the standard gated update in row-vector form:

    r = sigmoid(x W_r + h_prev U_r + b_r)
    z = sigmoid(x W_z + h_prev U_z + b_z)
    h~ = tanh(x W_h + (r * h_prev) U_h + b_h)
    h = (1 - z) * h_prev + z * h~

so z is the write gate: z ~ 0 keeps the previous state, z ~ 1 replaces
it with the candidate.

Stacking comes in two flavours besides a single layer:

* conventional: layer 2 reads layer 1's current output and its own
  previous state; both layers recur.
* feedback: layer 1's recurrent input is layer 2's PREVIOUS output
  (not its own), and layer 2 keeps no state at all: its U matrices are
  identically zero and never receive gradient, so they are excluded
  from parameter counts.

Backward passes are hand-derived; no autograd anywhere.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ShapeError
from .linalg import Rng, init_uniform, sigmoid, tanh


class StackKind(str, enum.Enum):
    SINGLE = "single"
    CONVENTIONAL = "conventional"
    FEEDBACK = "feedback"


_GATES = {"gru": 3, "lstm": 4}


@dataclass
class GruParams:
    """One cell's parameters: per-gate input weights, recurrent weights, biases."""

    W_r: np.ndarray
    W_z: np.ndarray
    W_h: np.ndarray
    U_r: np.ndarray
    U_z: np.ndarray
    U_h: np.ndarray
    b_r: np.ndarray
    b_z: np.ndarray
    b_h: np.ndarray

    _NAMES = ("W_r", "W_z", "W_h", "U_r", "U_z", "U_h", "b_r", "b_z", "b_h")

    def __post_init__(self):
        d_in, hidden = self.W_r.shape
        for name in ("W_r", "W_z", "W_h"):
            if getattr(self, name).shape != (d_in, hidden):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(d_in, hidden)}")
        for name in ("U_r", "U_z", "U_h"):
            if getattr(self, name).shape != (hidden, hidden):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(hidden, hidden)}")
        for name in ("b_r", "b_z", "b_h"):
            if getattr(self, name).shape != (hidden,):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(hidden,)}")

    @property
    def d_in(self) -> int:
        return self.W_r.shape[0]

    @property
    def hidden(self) -> int:
        return self.W_r.shape[1]

    @classmethod
    def zeros(cls, d_in: int, hidden: int) -> "GruParams":
        return cls(
            W_r=np.zeros((d_in, hidden)), W_z=np.zeros((d_in, hidden)), W_h=np.zeros((d_in, hidden)),
            U_r=np.zeros((hidden, hidden)), U_z=np.zeros((hidden, hidden)), U_h=np.zeros((hidden, hidden)),
            b_r=np.zeros(hidden), b_z=np.zeros(hidden), b_h=np.zeros(hidden),
        )

    @classmethod
    def init(cls, rng: Rng, d_in: int, hidden: int, scale: float = 0.1) -> "GruParams":
        return cls(
            W_r=init_uniform(rng, d_in, hidden, scale),
            W_z=init_uniform(rng, d_in, hidden, scale),
            W_h=init_uniform(rng, d_in, hidden, scale),
            U_r=init_uniform(rng, hidden, hidden, scale),
            U_z=init_uniform(rng, hidden, hidden, scale),
            U_h=init_uniform(rng, hidden, hidden, scale),
            b_r=np.zeros(hidden), b_z=np.zeros(hidden), b_h=np.zeros(hidden),
        )

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in self._NAMES:
            yield name, getattr(self, name)

    def named_weights(self) -> Iterator[tuple[str, np.ndarray]]:
        """Weight matrices only; biases are excluded (they carry no L2 term)."""
        for name in self._NAMES[:6]:
            yield name, getattr(self, name)

    def zeros_like(self) -> "GruParams":
        return GruParams.zeros(self.d_in, self.hidden)


@dataclass
class GruCache:
    """Forward intermediates needed to run the backward pass."""

    x: np.ndarray
    h_prev: np.ndarray
    r: np.ndarray
    z: np.ndarray
    h_tilde: np.ndarray
    h: np.ndarray


def gru_forward(params: GruParams, x: np.ndarray, h_prev: np.ndarray) -> tuple[np.ndarray, GruCache]:
    """One cell step. Returns the new hidden state and the cache for backward."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape != (params.d_in,):
        raise ShapeError(f"input has shape {x.shape}, expected ({params.d_in},)")
    if h_prev.shape != (params.hidden,):
        raise ShapeError(f"hidden state has shape {h_prev.shape}, expected ({params.hidden},)")
    r = sigmoid(x @ params.W_r + h_prev @ params.U_r + params.b_r)
    z = sigmoid(x @ params.W_z + h_prev @ params.U_z + params.b_z)
    h_tilde = tanh(x @ params.W_h + (r * h_prev) @ params.U_h + params.b_h)
    h = (1.0 - z) * h_prev + z * h_tilde
    return h, GruCache(x=x, h_prev=h_prev, r=r, z=z, h_tilde=h_tilde, h=h)


def gru_backward(params: GruParams, cache: GruCache, dh: np.ndarray) -> tuple[GruParams, np.ndarray, np.ndarray]:
    """Backprop one cell step.

    Given dL/dh, returns (parameter gradients, dL/dx, dL/dh_prev). The
    gradients come back in a GruParams used as a plain container.
    """
    dh = np.asarray(dh, dtype=np.float64)
    if dh.shape != (params.hidden,):
        raise ShapeError(f"upstream gradient has shape {dh.shape}, expected ({params.hidden},)")
    x, h_prev, r, z, h_tilde = cache.x, cache.h_prev, cache.r, cache.z, cache.h_tilde

    dz = dh * (h_tilde - h_prev)
    dh_tilde = dh * z
    dh_prev = dh * (1.0 - z)

    da_h = dh_tilde * (1.0 - h_tilde * h_tilde)
    drh = da_h @ params.U_h.T
    dr = drh * h_prev
    dh_prev = dh_prev + drh * r

    da_z = dz * z * (1.0 - z)
    da_r = dr * r * (1.0 - r)

    grads = params.zeros_like()
    grads.W_r += np.outer(x, da_r)
    grads.W_z += np.outer(x, da_z)
    grads.W_h += np.outer(x, da_h)
    grads.U_r += np.outer(h_prev, da_r)
    grads.U_z += np.outer(h_prev, da_z)
    grads.U_h += np.outer(r * h_prev, da_h)
    grads.b_r += da_r
    grads.b_z += da_z
    grads.b_h += da_h

    dx = da_r @ params.W_r.T + da_z @ params.W_z.T + da_h @ params.W_h.T
    dh_prev = dh_prev + da_r @ params.U_r.T + da_z @ params.U_z.T
    return grads, dx, dh_prev


def layers_for(kind: StackKind, rng: Rng, d_in: int, hidden: int, scale: float = 0.1) -> list[GruParams]:
    """Initialize the layer list a stack kind calls for.

    For the feedback kind, layer 2's recurrent matrices are zeroed:
    that layer is stateless by construction, and since its h_prev input
    is always the zero vector, those entries receive zero gradient and
    stay zero through any amount of training.
    """
    if kind == StackKind.SINGLE:
        return [GruParams.init(rng, d_in, hidden, scale)]
    first = GruParams.init(rng, d_in, hidden, scale)
    second = GruParams.init(rng, hidden, hidden, scale)
    if kind == StackKind.FEEDBACK:
        second.U_r[:] = 0.0
        second.U_z[:] = 0.0
        second.U_h[:] = 0.0
    return [first, second]


def _check_stack(kind: StackKind, layers: list[GruParams]) -> None:
    want = 1 if kind == StackKind.SINGLE else 2
    if len(layers) != want:
        raise ValueError(f"{kind.value} stack needs {want} layer(s), got {len(layers)}")


def stack_forward(
    kind: StackKind, layers: list[GruParams], x: np.ndarray, h_prevs: list[np.ndarray]
) -> tuple[list[np.ndarray], list[GruCache]]:
    """One time step through the stack.

    `h_prevs[j]` is layer j's output at the previous step; the returned
    list is the same thing for this step. The top entry is what output
    projections should read.
    """
    _check_stack(kind, layers)
    if len(h_prevs) != len(layers):
        raise ShapeError(f"expected {len(layers)} previous states, got {len(h_prevs)}")
    if kind == StackKind.SINGLE:
        h, cache = gru_forward(layers[0], x, h_prevs[0])
        return [h], [cache]
    if kind == StackKind.CONVENTIONAL:
        h1, c1 = gru_forward(layers[0], x, h_prevs[0])
        h2, c2 = gru_forward(layers[1], h1, h_prevs[1])
        return [h1, h2], [c1, c2]
    # Feedback: the lower layer recurs on the upper layer's previous
    # output, and the upper layer has no recurrence of its own.
    h1, c1 = gru_forward(layers[0], x, h_prevs[1])
    h2, c2 = gru_forward(layers[1], h1, np.zeros(layers[1].hidden))
    return [h1, h2], [c1, c2]


def stack_backward(
    kind: StackKind, layers: list[GruParams], caches: list[GruCache], dhs: list[np.ndarray]
) -> tuple[list[GruParams], np.ndarray, list[np.ndarray]]:
    """Backprop one stacked step.

    `dhs[j]` is the total upstream gradient on layer j's output at this
    step (output projection plus whatever the next step sent back).
    Returns (per-layer parameter gradients, dL/dx, dL/dh_prevs) with
    dh_prevs indexed like h_prevs in `stack_forward`.
    """
    _check_stack(kind, layers)
    if kind == StackKind.SINGLE:
        grads, dx, dh_prev = gru_backward(layers[0], caches[0], dhs[0])
        return [grads], dx, [dh_prev]
    if kind == StackKind.CONVENTIONAL:
        g2, dh1_up, dh2_prev = gru_backward(layers[1], caches[1], dhs[1])
        g1, dx, dh1_prev = gru_backward(layers[0], caches[0], dhs[0] + dh1_up)
        return [g1, g2], dx, [dh1_prev, dh2_prev]
    # Feedback: layer 2's h_prev slot held zeros, so its gradient is
    # dropped; layer 1's h_prev slot held h2 from the previous step, so
    # that gradient routes to index 1.
    g2, dh1_up, _ = gru_backward(layers[1], caches[1], dhs[1])
    g1, dx, dh2_rec = gru_backward(layers[0], caches[0], dhs[0] + dh1_up)
    return [g1, g2], dx, [np.zeros(layers[0].hidden), dh2_rec]


def param_count(unit: str, d_in: int, hidden: int, kind: StackKind = StackKind.SINGLE) -> int:
    """Trainable parameter count for a recurrent unit or stack of them.

    A single gated layer is gates * (d_in*h + h*h + h): input weights,
    recurrent weights, biases per gate, with gates = 3 for GRU and 4
    for LSTM. The conventional stack adds a full second layer with
    input size h; the feedback stack's second layer has no recurrent
    matrices, so it saves gates * h * h parameters relative to that.
    """
    if unit not in _GATES:
        raise ValueError(f"unknown unit {unit!r}, expected one of {sorted(_GATES)}")
    if d_in <= 0 or hidden <= 0:
        raise ValueError(f"dimensions must be positive, got d_in={d_in}, hidden={hidden}")
    gates = _GATES[unit]
    single = gates * (d_in * hidden + hidden * hidden + hidden)
    if kind == StackKind.SINGLE:
        return single
    second_full = gates * (hidden * hidden + hidden * hidden + hidden)
    if kind == StackKind.CONVENTIONAL:
        return single + second_full
    return single + second_full - gates * hidden * hidden


@dataclass
class PlainStackParams:
    """Weights for the plain-tanh reference stacks (no gates, no biases).

    W_in feeds layer 1 from the input; W_12 feeds layer 2 from layer 1.
    U_1 and U_2 are the conventional stack's recurrences; U_21 is the
    feedback stack's cross-layer recurrence (layer 2's previous output
    into layer 1). The unused fields for a given kind stay None.
    """

    W_in: np.ndarray
    W_12: np.ndarray
    U_1: np.ndarray | None = None
    U_2: np.ndarray | None = None
    U_21: np.ndarray | None = None

    @classmethod
    def init(cls, kind: StackKind, rng: Rng, d_in: int, hidden: int, scale: float = 0.1) -> "PlainStackParams":
        if kind == StackKind.CONVENTIONAL:
            return cls(
                W_in=init_uniform(rng, d_in, hidden, scale),
                W_12=init_uniform(rng, hidden, hidden, scale),
                U_1=init_uniform(rng, hidden, hidden, scale),
                U_2=init_uniform(rng, hidden, hidden, scale),
            )
        if kind == StackKind.FEEDBACK:
            return cls(
                W_in=init_uniform(rng, d_in, hidden, scale),
                W_12=init_uniform(rng, hidden, hidden, scale),
                U_21=init_uniform(rng, hidden, hidden, scale),
            )
        raise ValueError("plain reference stacks exist only for the two-layer kinds")


def plain_stack_step(
    kind: StackKind, params: PlainStackParams, x: np.ndarray, h_prevs: list[np.ndarray]
) -> list[np.ndarray]:
    """One step of the plain-tanh two-layer recurrences.

    Conventional:  h1 = tanh(x W_in + h1_prev U_1)
                   h2 = tanh(h1 W_12 + h2_prev U_2)
    Feedback:      h1 = tanh(x W_in + h2_prev U_21)
                   h2 = tanh(h1 W_12)
    """
    x = np.asarray(x, dtype=np.float64)
    if kind == StackKind.CONVENTIONAL:
        h1 = tanh(x @ params.W_in + h_prevs[0] @ params.U_1)
        h2 = tanh(h1 @ params.W_12 + h_prevs[1] @ params.U_2)
        return [h1, h2]
    if kind == StackKind.FEEDBACK:
        h1 = tanh(x @ params.W_in + h_prevs[1] @ params.U_21)
        h2 = tanh(h1 @ params.W_12)
        return [h1, h2]
    raise ValueError("plain reference stacks exist only for the two-layer kinds")


def plain_param_count(kind: StackKind, d_in: int, hidden: int) -> int:
    """Weight counts for the plain reference stacks (no biases)."""
    if kind == StackKind.CONVENTIONAL:
        return d_in * hidden + 3 * hidden * hidden
    if kind == StackKind.FEEDBACK:
        return d_in * hidden + 2 * hidden * hidden
    raise ValueError("plain reference stacks exist only for the two-layer kinds")
