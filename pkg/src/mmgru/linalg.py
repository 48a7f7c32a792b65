"""Dense float64 linear algebra, activations, and a seeded RNG.

Everything downstream (GRU cells, the caption model, the decoder) goes
through this module so that numeric behaviour is pinned down in one
place: float64 throughout, row-major matrices, row-vector convention
for products (x @ W, never W @ x).

The RNG is splitmix64. It is seedable, has a single 64-bit word of
state, and the same seed yields the same stream on every platform,
which is what makes checkpoints from identical runs byte-identical.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

Matrix = np.ndarray  # 2-D float64
Vector = np.ndarray  # 1-D float64

_U64 = np.uint64
_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Largest double below 1.0 and smallest above 0.0; used to keep the
# saturating activations inside their open ranges even where the exact
# value would round to an endpoint.
_BELOW_ONE = np.nextafter(1.0, 0.0)
_ABOVE_ZERO = np.nextafter(0.0, 1.0)


def as_vector(data) -> Vector:
    """Coerce to a 1-D float64 array."""
    out = np.asarray(data, dtype=np.float64)
    if out.ndim != 1:
        raise ShapeError(f"expected a vector, got array of shape {out.shape}")
    return out


def as_matrix(data) -> Matrix:
    """Coerce to a 2-D float64 array."""
    out = np.asarray(data, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"expected a matrix, got array of shape {out.shape}")
    return out


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit inner-dimension check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def hadamard(a: Vector, b: Vector) -> Vector:
    """Elementwise product of two equal-length vectors."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise product of {a.shape} and {b.shape}")
    return a * b


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, stable for all finite inputs.

    The two-branch form never exponentiates a positive argument, so
    nothing overflows. Results are clamped to the open interval (0, 1):
    past |x| ~ 37 the true value rounds to an endpoint in float64, and
    downstream code relies on gates never being exactly 0 or 1.
    """
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    ex = np.exp(np.where(pos, -x, x))
    out = np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return np.clip(out, _ABOVE_ZERO, _BELOW_ONE)


def tanh(x: np.ndarray) -> np.ndarray:
    """Hyperbolic tangent clamped to the open interval (-1, 1)."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.tanh(x), -_BELOW_ONE, _BELOW_ONE)


def softmax(y: Vector) -> Vector:
    """Probability vector from logits, shifted by the max for stability."""
    y = as_vector(y)
    if y.size == 0:
        raise ShapeError("softmax of an empty vector")
    e = np.exp(y - np.max(y))
    return e / np.sum(e)


def log_softmax(y: Vector) -> Vector:
    """Log of softmax(y) without going through the probabilities.

    Keeps log-likelihoods finite even where softmax underflows to 0.
    """
    y = as_vector(y)
    if y.size == 0:
        raise ShapeError("log_softmax of an empty vector")
    shifted = y - np.max(y)
    return shifted - np.log(np.sum(np.exp(shifted)))


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U64(30))) * _U64(_MIX1)
    z = (z ^ (z >> _U64(27))) * _U64(_MIX2)
    return z ^ (z >> _U64(31))


class Rng:
    """splitmix64 stream: one u64 of state, advanced by a fixed constant.

    Because state after n draws is seed + n * GOLDEN (mod 2**64), a block
    of n outputs can be produced in one vectorized pass; `u64_block`
    and repeated `next_u64` yield the same stream.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def u64_block(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError(f"block size must be nonnegative, got {n}")
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            z = _U64(self.state) + steps * _U64(_GOLDEN)
            out = _mix(z)
        self.state = (self.state + n * _GOLDEN) & _MASK64
        return out

    def next_float(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def float_block(self, n: int) -> np.ndarray:
        return (self.u64_block(n) >> _U64(11)) * 2.0**-53

    def next_index(self, n: int) -> int:
        """Uniform integer in [0, n), rejection-sampled to avoid bias."""
        if n <= 0:
            raise ValueError(f"range must be positive, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_index(i + 1)
            items[i], items[j] = items[j], items[i]


def init_uniform(rng: Rng, rows: int, cols: int, scale: float) -> Matrix:
    """Matrix with entries uniform in [-scale, scale), drawn row-major."""
    if rows <= 0 or cols <= 0:
        raise ShapeError(f"matrix dimensions must be positive, got {rows}x{cols}")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    u = rng.float_block(rows * cols)
    return ((2.0 * u - 1.0) * scale).reshape(rows, cols)
