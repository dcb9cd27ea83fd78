"""Seeded generators for the synthetic sequence tasks.

Episodic tasks produce self-contained Episodes with a per-step loss mask;
online tasks produce endless character Streams that are chopped into
fixed-length windows for truncated backpropagation. All generators are
pure functions of their seed.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .errors import ContractError

__all__ = [
    "Vocab",
    "Episode",
    "Stream",
    "gen_copy",
    "copy_vocabs",
    "gen_xml",
    "gen_var_assign",
    "gen_arithmetic",
    "gen_bytes",
    "one_hot",
    "format_episode",
    "TASK_NAMES",
]

TASK_NAMES = ("copy", "copyvar", "xml", "assign", "arith", "bytes")


@dataclass(frozen=True)
class Vocab:
    chars: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.chars)

    def id(self, ch: str) -> int:
        return self.chars.index(ch)

    def encode(self, s: str) -> np.ndarray:
        table = {c: i for i, c in enumerate(self.chars)}
        return np.array([table[c] for c in s], dtype=np.intp)

    def decode(self, ids) -> str:
        return "".join(self.chars[i] for i in ids)


@dataclass
class Episode:
    """One training sequence: per-step input ids, target ids, loss mask."""

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    input_vocab: Vocab
    target_vocab: Vocab

    def __post_init__(self):
        if not (len(self.inputs) == len(self.targets) == len(self.mask)):
            raise ContractError("inputs/targets/mask must have equal length")
        if self.mask.any():
            t = self.targets[self.mask]
            if t.min() < 0 or t.max() >= self.target_vocab.size:
                raise ContractError("masked target id outside vocabulary")


def one_hot(ids: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((len(ids), n))
    out[np.arange(len(ids)), ids] = 1.0
    return out


# ---------------------------------------------------------------------------
# episodic copy

def copy_vocabs(alphabet_size: int = 8) -> tuple[Vocab, Vocab]:
    data = string.ascii_lowercase[:alphabet_size]
    return Vocab(tuple(data) + ("_", "|")), Vocab(tuple(data))


def gen_copy(seed: int, fixed_len: bool = True, alphabet_size: int = 8,
             n_chars: int = 10, n_blanks: int = 100) -> Episode:
    """Memorize-then-repeat episode.

    Input: k data symbols, n_blanks blanks, a delimiter, then k more
    blanks while the answer is due. Loss is counted only on the k answer
    steps, whose targets are the k leading symbols. k = n_chars when
    fixed, otherwise uniform on 1..n_chars.
    """
    rng = np.random.default_rng(seed)
    in_vocab, out_vocab = copy_vocabs(alphabet_size)
    blank = alphabet_size
    delim = alphabet_size + 1
    k = n_chars if fixed_len else int(rng.integers(1, n_chars + 1))
    data = rng.integers(0, alphabet_size, size=k)
    inputs = np.concatenate([
        data, np.full(n_blanks, blank), [delim], np.full(k, blank)
    ]).astype(np.intp)
    targets = np.zeros(len(inputs), dtype=np.intp)
    mask = np.zeros(len(inputs), dtype=bool)
    answer = slice(k + n_blanks + 1, None)
    targets[answer] = data
    mask[answer] = True
    return Episode(inputs, targets, mask, in_vocab, out_vocab)


# ---------------------------------------------------------------------------
# streams

class Stream:
    """An unbounded (or finite) symbol iterator with a per-symbol cost flag.

    ``windows`` pairs each symbol with its successor to form next-symbol
    prediction steps and yields fixed-length Episode chunks without gaps,
    so recurrent state can be carried across them.
    """

    def __init__(self, vocab: Vocab, gen_fn: Callable[[], Iterator[tuple[int, bool]]]):
        self.vocab = vocab
        self._gen_fn = gen_fn

    def symbols(self) -> Iterator[tuple[int, bool]]:
        """(symbol id, counts-toward-cost) pairs from the start."""
        return self._gen_fn()

    def windows(self, length: int) -> Iterator[Episode]:
        if length < 1:
            raise ContractError("window length must be >= 1")
        it = self.symbols()
        try:
            prev, _ = next(it)
        except StopIteration:
            return
        inputs: list[int] = []
        targets: list[int] = []
        mask: list[bool] = []
        for sym, counted in it:
            inputs.append(prev)
            targets.append(sym)
            mask.append(counted)
            prev = sym
            if len(inputs) == length:
                yield Episode(np.array(inputs, dtype=np.intp),
                              np.array(targets, dtype=np.intp),
                              np.array(mask, dtype=bool),
                              self.vocab, self.vocab)
                inputs, targets, mask = [], [], []
        if inputs:
            yield Episode(np.array(inputs, dtype=np.intp),
                          np.array(targets, dtype=np.intp),
                          np.array(mask, dtype=bool),
                          self.vocab, self.vocab)


# ---------------------------------------------------------------------------
# XML tag stream

_XML_VOCAB = Vocab(tuple(string.ascii_lowercase) + ("<", ">", "/"))


def gen_xml(seed: int, max_depth: int = 4, max_name: int = 10) -> Stream:
    """Nested tag stream; only forced characters count toward the cost.

    Every '<' is predictable (tags follow each other back to back), and
    within a closing tag the name and '>' are forced by the innermost
    open tag, so those characters are cost-counted.
    """
    v = _XML_VOCAB
    lt, gt, slash = v.id("<"), v.id(">"), v.id("/")

    def gen() -> Iterator[tuple[int, bool]]:
        rng = np.random.default_rng(seed)
        stack: list[str] = []
        while True:
            open_tag = not stack or (len(stack) < max_depth and rng.random() < 0.5)
            yield lt, True
            if open_tag:
                name = "".join(
                    string.ascii_lowercase[i]
                    for i in rng.integers(0, 26, size=int(rng.integers(1, max_name + 1)))
                )
                stack.append(name)
                for ch in name:
                    yield v.id(ch), False
                yield gt, False
            else:
                name = stack.pop()
                yield slash, False
                for ch in name:
                    yield v.id(ch), True
                yield gt, True

    return Stream(v, gen)


# ---------------------------------------------------------------------------
# variable assignment stream

_ASSIGN_VOCAB = Vocab(tuple(string.ascii_lowercase) + ("(", ")", ",", "."))


def gen_var_assign(seed: int, max_assigns: int = 4, max_name: int = 4) -> Stream:
    """Blocks of s(name,value) assignments closed by q(name) + answer.

    The queried name always appears in the current block; duplicate names
    within a block are resampled. Only the answer character and the '.'
    terminator count toward the cost.
    """
    v = _ASSIGN_VOCAB

    def emit(s: str, counted: bool = False):
        for ch in s:
            yield v.id(ch), counted

    def gen() -> Iterator[tuple[int, bool]]:
        rng = np.random.default_rng(seed)
        while True:
            n = int(rng.integers(1, max_assigns + 1))
            names: list[str] = []
            values: list[str] = []
            while len(names) < n:
                name = "".join(
                    string.ascii_lowercase[i]
                    for i in rng.integers(0, 26, size=int(rng.integers(1, max_name + 1)))
                )
                if name in names:
                    continue
                names.append(name)
                values.append(string.ascii_lowercase[int(rng.integers(0, 26))])
            for name, val in zip(names, values):
                yield from emit(f"s({name},{val}),")
            q = int(rng.integers(0, n))
            yield from emit(f"q({names[q]})")
            yield from emit(values[q] + ".", counted=True)

    return Stream(v, gen)


# ---------------------------------------------------------------------------
# arithmetic stream

_ARITH_VOCAB = Vocab(tuple(string.digits) + ("+", "-", "=", "]"))


def gen_arithmetic(seed: int, max_digits: int = 8) -> Stream:
    """Add/subtract two long numbers; the answer is written reversed.

    Expressions look like ``[-]A+B=`` or ``[-]A-B=`` followed by the
    decimal result reversed (sign trailing) and a ']' delimiter. Operand
    lengths are uniform on 1..max_digits; only the reversed result and
    ']' count toward the cost.
    """
    v = _ARITH_VOCAB

    def emit(s: str, counted: bool = False):
        for ch in s:
            yield v.id(ch), counted

    def gen() -> Iterator[tuple[int, bool]]:
        rng = np.random.default_rng(seed)
        while True:
            def operand() -> int:
                ln = int(rng.integers(1, max_digits + 1))
                if ln == 1:
                    return int(rng.integers(0, 10))
                digits = [int(rng.integers(1, 10))]
                digits += [int(rng.integers(0, 10)) for _ in range(ln - 1)]
                return int("".join(map(str, digits)))

            a = operand()
            b = operand()
            if rng.random() < 0.5:
                a = -a
            op = "+" if rng.random() < 0.5 else "-"
            result = a + b if op == "+" else a - b
            yield from emit(f"{a}{op}{b}=")
            yield from emit(str(result)[::-1] + "]", counted=True)

    return Stream(v, gen)


# ---------------------------------------------------------------------------
# byte stream

_BYTE_VOCAB = Vocab(tuple(chr(i) for i in range(256)))


def gen_bytes(path: str | Path, test_fraction: float = 0.0,
              part: str = "train") -> Stream:
    """Byte-level next-symbol stream over a file; every step is counted.

    The trailing ``test_fraction`` of the file is the test part.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ContractError(f"cannot read {path}: {e}") from e
    if part not in ("train", "test"):
        raise ContractError(f"part must be 'train' or 'test', got {part!r}")
    n_test = int(round(len(data) * test_fraction))
    chunk = data[: len(data) - n_test] if part == "train" else data[len(data) - n_test:]

    def gen() -> Iterator[tuple[int, bool]]:
        for b in chunk:
            yield b, True

    return Stream(_BYTE_VOCAB, gen)


# ---------------------------------------------------------------------------
# rendering

def format_episode(ep: Episode) -> str:
    """Two lines: the symbols, and '^' under each cost-counted position.

    For next-symbol streams the marker sits under the predicted (target)
    character; for episodic tasks, under the masked input step.
    """
    if ep.input_vocab is ep.target_vocab or ep.input_vocab == ep.target_vocab:
        text = ep.input_vocab.decode(ep.inputs[:1]) + ep.target_vocab.decode(ep.targets)
        marks = " " + "".join("^" if m else " " for m in ep.mask)
    else:
        text = ep.input_vocab.decode(ep.inputs)
        marks = "".join("^" if m else " " for m in ep.mask)
    return text + "\n" + marks.rstrip() + "\n"
