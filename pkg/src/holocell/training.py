"""Adam optimizer, training drivers, and evaluation.

Episodic tasks get fresh episodes every minibatch with full-sequence
backpropagation; stream tasks run truncated backpropagation on
fixed-length windows with recurrent state carried across boundaries.
Gradients are never clipped or rescaled; a non-finite gradient aborts
the run.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import tasks as T
from . import checkpoint as ckpt
from .cells import RecurrentModel, build_model, detach_state
from .errors import ContractError, NumericalAbort

__all__ = [
    "Adam",
    "RunConfig",
    "CurveRecord",
    "train",
    "train_episodic",
    "train_online",
    "evaluate",
    "write_curve_csv",
    "write_manifest",
    "uniform_baseline_nats",
]


class Adam:
    """Adam with bias correction; applies no clipping of any kind.

    ``grad_hook``, if set, is called with [(name, param, grad), ...]
    right before each update so tests can verify the gradients reach the
    update untouched.
    """

    def __init__(self, params, alpha: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.named = list(params)  # [(name, Variable)]
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for _, p in self.named]
        self.v = [np.zeros_like(p.value) for _, p in self.named]
        self.grad_hook: Callable | None = None

    def zero_grad(self):
        for _, p in self.named:
            p.zero_grad()

    def step(self):
        grads = []
        for name, p in self.named:
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if not np.all(np.isfinite(g)):
                raise NumericalAbort(f"non-finite gradient in {name}")
            grads.append(g)
        if self.grad_hook is not None:
            self.grad_hook([(n, p, g) for (n, p), g in zip(self.named, grads)])
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for (name, p), m, v, g in zip(self.named, self.m, self.v, grads):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value = p.value - self.alpha * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


@dataclass
class RunConfig:
    task: str
    model: str
    n_h: int = 128
    n_copies: int = 1
    n_heads: int = 1
    layers: int = 1
    minibatch: int = 2
    tbptt_window: int = 100
    seed: int = 0
    max_steps: int = 10000
    eval_every: int = 500
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    forget_bias: float = 0.0
    input_bias: float = 0.0
    use_h_for_update: bool = False
    alphabet_size: int = 8
    copy_len: int = 10
    copy_blanks: int = 100
    bytes_path: str | None = None
    test_fraction: float = 0.05
    eval_episodes: int = 200
    eval_symbols: int = 20000

    def __post_init__(self):
        if self.task not in T.TASK_NAMES:
            raise ContractError(f"unknown task {self.task!r}")
        if self.minibatch < 1:
            raise ContractError("minibatch must be >= 1")
        if self.tbptt_window < 1:
            raise ContractError("tbptt_window must be >= 1")


@dataclass
class CurveRecord:
    step: int
    examples_seen: int
    train_cost: float
    eval_cost: float
    masked_accuracy: float
    exact_match: float | None
    wall_seconds: float


def _task_vocabs(config: RunConfig) -> tuple[int, int]:
    """(input dim, output dim) for the configured task."""
    if config.task in ("copy", "copyvar"):
        vin, vout = T.copy_vocabs(config.alphabet_size)
        return vin.size, vout.size
    stream = _make_stream(config, stream_seed=[0])
    return stream.vocab.size, stream.vocab.size


def _make_stream(config: RunConfig, stream_seed) -> T.Stream:
    if config.task == "xml":
        return T.gen_xml(stream_seed)
    if config.task == "assign":
        return T.gen_var_assign(stream_seed)
    if config.task == "arith":
        return T.gen_arithmetic(stream_seed)
    if config.task == "bytes":
        if config.bytes_path is None:
            raise ContractError("bytes task needs bytes_path")
        return T.gen_bytes(config.bytes_path, config.test_fraction, "train")
    raise ContractError(f"{config.task} is not a stream task")


def build_model_for(config: RunConfig) -> RecurrentModel:
    n_x, n_out = _task_vocabs(config)
    return build_model(
        config.model, n_x, n_out, config.n_h, layers=config.layers,
        n_copies=config.n_copies, n_heads=config.n_heads,
        use_h_for_update=config.use_h_for_update,
        forget_bias=config.forget_bias, input_bias=config.input_bias,
        seed=config.seed,
    )


def _episode_batch(config: RunConfig, tag: int, step: int) -> list[T.Episode]:
    fixed = config.task == "copy"
    return [
        T.gen_copy([config.seed, tag, step, b], fixed_len=fixed,
                   alphabet_size=config.alphabet_size,
                   n_chars=config.copy_len, n_blanks=config.copy_blanks)
        for b in range(config.minibatch)
    ]


def _pad_batch(eps: list[T.Episode], pad_id: int):
    L = max(len(e.inputs) for e in eps)
    B = len(eps)
    inputs = np.full((B, L), pad_id, dtype=np.intp)
    targets = np.zeros((B, L), dtype=np.intp)
    mask = np.zeros((B, L), dtype=bool)
    for i, e in enumerate(eps):
        inputs[i, :len(e.inputs)] = e.inputs
        targets[i, :len(e.targets)] = e.targets
        mask[i, :len(e.mask)] = e.mask
    return inputs, targets, mask


def run_window(model: RecurrentModel, state, inputs: np.ndarray,
               targets: np.ndarray, mask: np.ndarray, n_in: int):
    """Forward a (B, L) batch; masked positions contribute exactly 0 loss.

    Returns (state', loss Variable summed over masked steps, n_masked,
    n_correct).
    """
    B, L = inputs.shape
    loss = None
    n_masked = int(mask.sum())
    n_correct = 0
    for t in range(L):
        x = T.one_hot(inputs[:, t], n_in)
        state, logits = model.step(state, x)
        w = mask[:, t]
        if w.any():
            losses = ad.softmax_cross_entropy(logits, targets[:, t])
            step_loss = ad.vsum(ad.mul(losses, w.astype(float)))
            loss = step_loss if loss is None else ad.add(loss, step_loss)
            pred = logits.value.argmax(axis=1)
            n_correct += int(((pred == targets[:, t]) & w).sum())
    if loss is None:
        loss = ad.constant(0.0)
    return state, loss, n_masked, n_correct


def _eval_episodic(model: RecurrentModel, config: RunConfig, tag: int,
                   n_episodes: int):
    """Cost/seq, masked accuracy, and exact-match over fresh episodes."""
    n_in, _ = _task_vocabs(config)
    pad = n_in - 2  # blank id in the copy vocab
    total_cost = 0.0
    total_masked = 0
    total_correct = 0
    exact = 0
    B = config.minibatch
    done = 0
    round_ = 0
    while done < n_episodes:
        take = min(B, n_episodes - done)
        fixed = config.task == "copy"
        eps = [
            T.gen_copy([config.seed, tag, round_, b], fixed_len=fixed,
                       alphabet_size=config.alphabet_size,
                       n_chars=config.copy_len, n_blanks=config.copy_blanks)
            for b in range(take)
        ]
        inputs, targets, mask = _pad_batch(eps, pad)
        state = model.init_state(take)
        L = inputs.shape[1]
        correct = np.zeros_like(mask)
        for t in range(L):
            state, logits = model.step(state, T.one_hot(inputs[:, t], n_in))
            state = detach_state(state)
            w = mask[:, t]
            if w.any():
                losses = ad.softmax_cross_entropy(logits, targets[:, t]).value
                total_cost += float((losses * w).sum())
                correct[:, t] = (logits.value.argmax(axis=1) == targets[:, t]) & w
        total_masked += int(mask.sum())
        total_correct += int(correct.sum())
        exact += int(sum(correct[i].sum() == mask[i].sum() for i in range(take)))
        done += take
        round_ += 1
    return {
        "cost_per_sequence": total_cost / n_episodes,
        "masked_accuracy": total_correct / max(1, total_masked),
        "exact_match": exact / n_episodes,
        "n": n_episodes,
    }


def _predict(model: RecurrentModel, inputs: np.ndarray, n_in: int) -> np.ndarray:
    B, L = inputs.shape
    state = model.init_state(B)
    out = np.zeros((B, L), dtype=np.intp)
    for t in range(L):
        state, logits = model.step(state, T.one_hot(inputs[:, t], n_in))
        out[:, t] = logits.value.argmax(axis=1)
        state = detach_state(state)
    return out


def train_episodic(config: RunConfig, out_dir: Path | None = None,
                   progress: Callable | None = None) -> list[CurveRecord]:
    """Fresh minibatches, full-sequence backpropagation, masked cost.

    Cost is reported in nats per sequence; evaluation runs on fresh
    held-out episodes at the configured cadence.
    """
    if config.task not in ("copy", "copyvar"):
        raise ContractError(f"{config.task} is not an episodic task")
    n_in, _ = _task_vocabs(config)
    model = build_model_for(config)
    opt = Adam(model.parameters(), alpha=config.learning_rate,
               beta1=config.adam_beta1, beta2=config.adam_beta2,
               eps=config.adam_eps)
    records: list[CurveRecord] = []
    t0 = time.monotonic()
    cost_acc = 0.0
    cost_n = 0
    B = config.minibatch
    for step in range(1, config.max_steps + 1):
        eps = _episode_batch(config, 0, step)
        inputs, targets, mask = _pad_batch(eps, n_in - 2)
        state = model.init_state(B)
        _, loss, _, _ = run_window(model, state, inputs, targets, mask, n_in)
        if not np.isfinite(loss.value):
            raise NumericalAbort(f"non-finite loss at step {step}")
        opt.zero_grad()
        ad.backward(ad.scale(loss, 1.0 / B))
        opt.step()
        cost_acc += float(loss.value) / B
        cost_n += 1
        if step % config.eval_every == 0 or step == config.max_steps:
            m = _eval_episodic(model, config, tag=1 + step, n_episodes=config.eval_episodes)
            rec = CurveRecord(step, step * B, cost_acc / cost_n,
                              m["cost_per_sequence"], m["masked_accuracy"],
                              m["exact_match"], time.monotonic() - t0)
            records.append(rec)
            if progress:
                progress(rec)
            if out_dir is not None:
                write_curve_csv(records, Path(out_dir) / "curve.csv")
                ckpt.save_checkpoint(model, Path(out_dir) / "ckpt_latest.json")
            cost_acc, cost_n = 0.0, 0
    if out_dir is not None:
        write_curve_csv(records, Path(out_dir) / "curve.csv")
        ckpt.save_checkpoint(model, Path(out_dir) / "ckpt_final.json")
    return records


def _eval_online(model: RecurrentModel, config: RunConfig, seed_tag,
                 n_symbols: int):
    """Nats per masked symbol and masked accuracy on a held-out stream."""
    n_v = _task_vocabs(config)[0]
    stream = _make_stream(config, [config.seed, *seed_tag])
    state = model.init_state(1)
    total_cost = 0.0
    total_masked = 0
    total_correct = 0
    seen = 0
    for ep in stream.windows(config.tbptt_window):
        inputs = ep.inputs[None, :]
        targets = ep.targets[None, :]
        mask = ep.mask[None, :]
        state, loss, n_masked, n_correct = run_window(model, state, inputs,
                                                      targets, mask, n_v)
        state = detach_state(state)
        total_cost += float(loss.value)
        total_masked += n_masked
        total_correct += n_correct
        seen += len(ep.inputs)
        if seen >= n_symbols:
            break
    return {
        "nats_per_masked_symbol": total_cost / max(1, total_masked),
        "masked_accuracy": total_correct / max(1, total_masked),
        "n_symbols": seen,
    }


def train_online(config: RunConfig, out_dir: Path | None = None,
                 progress: Callable | None = None) -> list[CurveRecord]:
    """TBPTT over parallel streams; state persists across windows.

    ``step`` counts windows per stream; cost is nats per masked symbol.
    """
    n_v = _task_vocabs(config)[0]
    model = build_model_for(config)
    opt = Adam(model.parameters(), alpha=config.learning_rate,
               beta1=config.adam_beta1, beta2=config.adam_beta2,
               eps=config.adam_eps)
    B = config.minibatch
    gens = [
        _make_stream(config, [config.seed, 0, b]).windows(config.tbptt_window)
        for b in range(B)
    ]
    records: list[CurveRecord] = []
    t0 = time.monotonic()
    state = model.init_state(B)
    cost_acc = 0.0
    masked_acc_n = 0
    for step in range(1, config.max_steps + 1):
        eps = [next(g) for g in gens]
        L = min(len(e.inputs) for e in eps)
        inputs = np.stack([e.inputs[:L] for e in eps])
        targets = np.stack([e.targets[:L] for e in eps])
        mask = np.stack([e.mask[:L] for e in eps])
        state, loss, n_masked, _ = run_window(model, state, inputs, targets,
                                              mask, n_v)
        if not np.isfinite(loss.value):
            raise NumericalAbort(f"non-finite loss at window {step}")
        if n_masked > 0:
            opt.zero_grad()
            ad.backward(ad.scale(loss, 1.0 / n_masked))
            opt.step()
        state = detach_state(state)
        cost_acc += float(loss.value)
        masked_acc_n += n_masked
        if step % config.eval_every == 0 or step == config.max_steps:
            m = _eval_online(model, config, (1, step), config.eval_symbols)
            rec = CurveRecord(step, step * B,
                              cost_acc / max(1, masked_acc_n),
                              m["nats_per_masked_symbol"],
                              m["masked_accuracy"], None,
                              time.monotonic() - t0)
            records.append(rec)
            if progress:
                progress(rec)
            if out_dir is not None:
                write_curve_csv(records, Path(out_dir) / "curve.csv")
                ckpt.save_checkpoint(model, Path(out_dir) / "ckpt_latest.json")
            cost_acc, masked_acc_n = 0.0, 0
    if out_dir is not None:
        write_curve_csv(records, Path(out_dir) / "curve.csv")
        ckpt.save_checkpoint(model, Path(out_dir) / "ckpt_final.json")
    return records


def train(config: RunConfig, out_dir: Path | None = None,
          progress: Callable | None = None) -> list[CurveRecord]:
    if config.task in ("copy", "copyvar"):
        return train_episodic(config, out_dir, progress)
    return train_online(config, out_dir, progress)


def evaluate(model: RecurrentModel, config: RunConfig, n: int,
             seed_tag=(2,)) -> dict:
    """Deterministic metrics on fresh data; no parameter updates."""
    if config.task in ("copy", "copyvar"):
        return _eval_episodic(model, config, tag=hash(seed_tag) % (2**31), n_episodes=n)
    return _eval_online(model, config, seed_tag, n)


def uniform_baseline_nats(n_classes: int) -> float:
    """Cost of a uniform predictor, in nats per masked symbol."""
    return float(np.log(n_classes))


def write_curve_csv(records: list[CurveRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "examples_seen", "train_cost", "eval_cost",
                    "masked_accuracy", "exact_match", "wall_seconds"])
        for r in records:
            w.writerow([
                r.step, r.examples_seen, repr(r.train_cost), repr(r.eval_cost),
                repr(r.masked_accuracy),
                "" if r.exact_match is None else repr(r.exact_match),
                f"{r.wall_seconds:.3f}",
            ])


def write_manifest(config: RunConfig, path: str | Path) -> None:
    from . import __version__
    doc = {"run_config": asdict(config), "library_version": __version__,
           "seed": config.seed}
    Path(path).write_text(json.dumps(doc, indent=1))
