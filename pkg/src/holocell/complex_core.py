"""Complex-vector arithmetic in the split real/imaginary layout.

A complex vector of n elements is stored as a real array of length 2n:
the first n entries are the real parts, the last n the imaginary parts.
All functions accept arrays with extra leading dimensions (the complex
layout lives on the last axis), are pure, and never mutate their inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, SingularKeyError

__all__ = [
    "split",
    "merge",
    "bind",
    "conjugate",
    "key_inverse",
    "bound",
    "apply_permutation",
    "invert_permutation",
    "modulus",
    "random_unit_key",
    "random_permutation",
]


def _check_even(v: np.ndarray) -> int:
    n = v.shape[-1]
    if n < 2 or n % 2 != 0:
        raise ContractError(f"complex vector length must be even and >= 2, got {n}")
    return n // 2


def split(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (real, imaginary) halves as views."""
    n = _check_even(v)
    return v[..., :n], v[..., n:]


def merge(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    """Stack real and imaginary parts back into the split layout."""
    return np.concatenate([re, im], axis=-1)


def bind(r: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Element-wise complex multiplication: moduli multiply, phases add."""
    if r.shape[-1] != x.shape[-1]:
        raise ContractError(f"bind length mismatch: {r.shape[-1]} vs {x.shape[-1]}")
    r_re, r_im = split(r)
    x_re, x_im = split(x)
    return merge(r_re * x_re - r_im * x_im, r_re * x_im + r_im * x_re)


def conjugate(r: np.ndarray) -> np.ndarray:
    """Negate the imaginary half; moduli unchanged."""
    re, im = split(r)
    return merge(re, -im)


def key_inverse(r: np.ndarray) -> np.ndarray:
    """Per-element reciprocal: modulus inverted, phase negated.

    Raises SingularKeyError on any zero-modulus element.
    """
    re, im = split(r)
    sq = re * re + im * im
    if np.any(sq == 0.0):
        raise SingularKeyError("key has a zero-modulus element")
    return merge(re / sq, -im / sq)


def bound(h: np.ndarray) -> np.ndarray:
    """Divide each complex element by max(1, modulus), capping moduli at 1."""
    re, im = split(h)
    d = np.maximum(1.0, np.sqrt(re * re + im * im))
    return merge(re / d, im / d)


def modulus(h: np.ndarray) -> np.ndarray:
    """Per-element modulus sqrt(re^2 + im^2); output has half the length."""
    re, im = split(h)
    return np.sqrt(re * re + im * im)


def apply_permutation(p: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Permute complex elements: the same index map on both halves.

    ``p`` maps output slot j to input slot p[j]; runs in O(n).
    """
    n = _check_even(r)
    if p.shape != (n,):
        raise ContractError(f"permutation covers {p.shape[0] if p.ndim else '?'} slots, vector has {n}")
    re, im = split(r)
    return merge(re[..., p], im[..., p])


def invert_permutation(p: np.ndarray) -> np.ndarray:
    inv = np.empty_like(p)
    inv[p] = np.arange(p.shape[0])
    return inv


def random_unit_key(n_h: int, rng: np.random.Generator) -> np.ndarray:
    """Sample a key with unit moduli and phases uniform on [0, 2pi)."""
    if n_h < 2 or n_h % 2 != 0:
        raise ContractError(f"key length must be even and >= 2, got {n_h}")
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n_h // 2)
    return merge(np.cos(phase), np.sin(phase))


def random_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random bijection on {0, ..., n-1}."""
    return rng.permutation(n)
