"""Recurrent cells as pure step functions over autodiff Variables.

Every cell maps (state, input) -> (state', output) and exposes its
trainable parameters as named Variables. Fixed structure (permutations,
the DFT factors of the unitary cells) is excluded from the trainable set.
Complex vectors use the split layout from ``complex_core``: the first
half of the last axis holds real parts, the second half imaginary parts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Variable
from .errors import ContractError

__all__ = [
    "LstmCell",
    "AssocLstmCell",
    "PermutationRnnCell",
    "UnitaryRnnCell",
    "MultUnitaryRnnCell",
    "RecurrentModel",
    "build_model",
    "count_parameters",
    "detach_state",
    "lstm_cell_state_update",
    "MODEL_KINDS",
]

_BOUND_EPS = 1e-300  # keeps sqrt differentiable at exactly-zero modulus
_MODRELU_EPS = 1e-12


# ---------------------------------------------------------------------------
# complex helpers on Variables (split real/imaginary halves, last axis)

def _halves(v: Variable) -> tuple[Variable, Variable]:
    n = v.shape[-1]
    if n % 2 != 0:
        raise ContractError(f"complex Variable needs even last axis, got {n}")
    return ad.narrow(v, 0, n // 2), ad.narrow(v, n // 2, n)


def _cmul(a: Variable, b: Variable) -> Variable:
    """Element-wise complex multiply of two split-layout Variables."""
    return ad.cplx_mul(a, b)


def _conj(a: Variable) -> Variable:
    re, im = _halves(a)
    return ad.concat([re, ad.neg(im)])


def _mod_sq(a: Variable) -> Variable:
    re, im = _halves(a)
    return ad.add(ad.mul(re, re), ad.mul(im, im))


def _bound(h: Variable) -> Variable:
    """Divide each complex element by max(1, modulus)."""
    return ad.cplx_bound(h)


def _modrelu(h: Variable, bias: Variable) -> Variable:
    """Rectify the modulus with a learned bias, keeping the phase.

    Output is 0 at zero modulus (the z/|z| singularity is removable).
    """
    m = ad.sqrt(ad.maximum_scalar(_mod_sq(h), _BOUND_EPS))
    scale = ad.div(ad.relu(ad.add(m, bias)), ad.maximum_scalar(m, _MODRELU_EPS))
    re, im = _halves(h)
    return ad.concat([ad.mul(re, scale), ad.mul(im, scale)])


def _dup(g: Variable) -> Variable:
    """Duplicate a half-width gate across real and imaginary halves."""
    return ad.concat([g, g])


def _perm_index(perm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full-width gather indices (and inverse) for a complex permutation."""
    n = perm.shape[-1]
    idx = np.concatenate([perm, perm + n], axis=-1)
    inv = np.empty_like(idx)
    if idx.ndim == 1:
        inv[idx] = np.arange(2 * n)
    else:
        ar = np.arange(2 * n)
        for r in range(idx.shape[0]):
            inv[r][idx[r]] = ar
    return idx, inv


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    lim = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-lim, lim, size=shape)


def lstm_cell_state_update(g_f: np.ndarray, g_i: np.ndarray, u: np.ndarray,
                           c_prev: np.ndarray) -> np.ndarray:
    """The conventional gated cell-state recurrence on plain arrays."""
    return g_f * c_prev + g_i * u


def detach_state(state):
    """Cut the graph at a truncation boundary, keeping the values."""
    if isinstance(state, tuple):
        return tuple(detach_state(s) for s in state)
    return ad.constant(state.value)


# ---------------------------------------------------------------------------
# LSTM

class LstmCell:
    """LSTM with forget gates and no peepholes.

    Gate block ordering in the fused weight matrices is
    [forget, input, output, update], each of width n_h.
    """

    kind = "lstm"

    def __init__(self, n_x: int, n_h: int, rng: np.random.Generator,
                 forget_bias: float = 0.0, input_bias: float = 0.0):
        self.n_x = n_x
        self.n_h = n_h
        self.out_dim = n_h
        self.forget_bias = forget_bias
        self.input_bias = input_bias
        self.W_xh = ad.param(_uniform(rng, (n_x, 4 * n_h), n_x))
        self.W_hh = ad.param(_uniform(rng, (n_h, 4 * n_h), n_h))
        b = np.zeros(4 * n_h)
        b[:n_h] = forget_bias
        b[n_h:2 * n_h] = input_bias
        self.b_h = ad.param(b)

    def parameters(self):
        return [("W_xh", self.W_xh), ("W_hh", self.W_hh), ("b_h", self.b_h)]

    def init_state(self, batch: int):
        z = ad.constant(np.zeros((batch, self.n_h)))
        return (z, ad.constant(np.zeros((batch, self.n_h))))

    def step(self, state, x: Variable):
        # whole recurrence hand-fused into one graph node for speed
        h_prev, c_prev = state
        n_h = self.n_h
        xv, hv, cv = x.value, h_prev.value, c_prev.value
        Wxh, Whh = self.W_xh.value, self.W_hh.value
        B = xv.shape[0]

        pre = xv @ Wxh + hv @ Whh + self.b_h.value
        g_f = 1.0 / (1.0 + np.exp(-pre[:, :n_h]))
        g_i = 1.0 / (1.0 + np.exp(-pre[:, n_h:2 * n_h]))
        g_o = 1.0 / (1.0 + np.exp(-pre[:, 2 * n_h:3 * n_h]))
        u = np.tanh(pre[:, 3 * n_h:])
        c = g_f * cv + g_i * u
        T = np.tanh(c)
        h = g_o * T
        out_val = np.concatenate([h, c], axis=-1)
        parents = (x, h_prev, c_prev, self.W_xh, self.W_hh, self.b_h)

        def bwd(g):
            gh, gc_out = g[:, :n_h], g[:, n_h:]
            gc = gc_out + gh * g_o * (1.0 - T * T)
            gpre = np.concatenate([
                gc * cv * g_f * (1.0 - g_f),
                gc * u * g_i * (1.0 - g_i),
                gh * T * g_o * (1.0 - g_o),
                gc * g_i * (1.0 - u * u),
            ], axis=-1)
            return (
                None if x.const else gpre @ Wxh.T,
                None if h_prev.const else gpre @ Whh.T,
                None if c_prev.const else gc * g_f,
                None if self.W_xh.const else xv.T @ gpre,
                None if self.W_hh.const else hv.T @ gpre,
                None if self.b_h.const else gpre.sum(axis=0),
            )

        out = Variable(out_val, parents, bwd)
        h_var = ad.narrow(out, 0, n_h)
        c_var = ad.narrow(out, n_h, 2 * n_h)
        return (h_var, c_var), h_var


# ---------------------------------------------------------------------------
# Associative LSTM

class AssocLstmCell:
    """LSTM whose cell state is a redundant holographic associative array.

    Gates are computed at half width and duplicated over the real and
    imaginary halves. Each head produces an input key (storage) and an
    output key (lookup); all heads write into the same n_copies traces,
    each under a fixed per-copy permutation, and per-head reads are
    concatenated into the output, so out_dim = n_h * n_heads.

    Fused preactivation layout: [g_f, g_i, g_o] (n_h/2 each), then per
    head [r_i_hat, r_o_hat] (n_h each). Permutations are fixed at init
    (copy 0 is the identity) and carry no trainable parameters, so the
    parameter count is independent of n_copies.

    ``force_unit_keys`` replaces both keys with the all-(1+0i) vector, a
    diagnostic mode in which the cell-state update reduces to the
    conventional LSTM recurrence.
    """

    kind = "alstm"

    def __init__(self, n_x: int, n_h: int, rng: np.random.Generator,
                 n_copies: int = 1, n_heads: int = 1,
                 use_h_for_update: bool = False, forget_bias: float = 0.0,
                 input_bias: float = 0.0, force_unit_keys: bool = False,
                 perms: np.ndarray | None = None):
        if n_h % 2 != 0:
            raise ContractError(f"n_h must be even, got {n_h}")
        if n_copies < 1:
            raise ContractError(f"n_copies must be >= 1, got {n_copies}")
        if n_heads < 1:
            raise ContractError(f"n_heads must be >= 1, got {n_heads}")
        self.n_x = n_x
        self.n_h = n_h
        self.n_copies = n_copies
        self.n_heads = n_heads
        self.use_h_for_update = use_h_for_update
        self.forget_bias = forget_bias
        self.input_bias = input_bias
        self.force_unit_keys = force_unit_keys
        self.out_dim = n_h * n_heads

        n2 = n_h // 2
        gate_dim = 3 * n2 + 2 * n_h * n_heads
        hdim = self.out_dim
        udim = n_h * n_heads
        self.W_xh = ad.param(_uniform(rng, (n_x, gate_dim), n_x))
        self.W_hh = ad.param(_uniform(rng, (hdim, gate_dim), hdim))
        b = np.zeros(gate_dim)
        b[:n2] = forget_bias
        b[n2:2 * n2] = input_bias
        self.b_h = ad.param(b)
        self.W_xu = ad.param(_uniform(rng, (n_x, udim), n_x))
        self.W_hu = ad.param(_uniform(rng, (hdim, udim), hdim)) if use_h_for_update else None
        self.b_u = ad.param(np.zeros(udim))

        if perms is None:
            rows = [np.arange(n2)]
            rows += [rng.permutation(n2) for _ in range(n_copies - 1)]
            perms = np.stack(rows)
        else:
            perms = np.asarray(perms)
            if perms.shape != (n_copies, n2):
                raise ContractError(f"perms shape {perms.shape} != {(n_copies, n2)}")
        self.perms = perms
        self._perm_idx, self._perm_inv = _perm_index(perms)  # (n_copies, n_h)
        self.last_internals: dict | None = None

    def parameters(self):
        out = [("W_xh", self.W_xh), ("W_hh", self.W_hh), ("b_h", self.b_h),
               ("W_xu", self.W_xu), ("b_u", self.b_u)]
        if self.W_hu is not None:
            out.insert(4, ("W_hu", self.W_hu))
        return out

    def init_state(self, batch: int):
        h = ad.constant(np.zeros((batch, self.out_dim)))
        c = ad.constant(np.zeros((batch, self.n_copies, self.n_h)))
        return (h, c)

    def _permute(self, key: Variable) -> Variable:
        """Per-copy permuted key: (B, n_h) -> (B, n_copies, n_h)."""
        k3 = ad.reshape(key, (key.shape[0], 1, self.n_h))
        if self.n_copies == 1:  # copy 0 is the identity permutation
            return k3
        return ad.gather_last(k3, self._perm_idx[None, :, :],
                              self._perm_inv[None, :, :])

    def step(self, state, x: Variable):
        # the hand-fused path computes the same recurrence in one graph
        # node; the composed path stays for the unit-key diagnostic mode
        if self.force_unit_keys:
            return self._step_composed(state, x)
        return self._step_fused(state, x)

    def _step_fused(self, state, x: Variable):
        h_prev, c_prev = state
        B = x.shape[0]
        n_h, n2, H, S = self.n_h, self.n_h // 2, self.n_heads, self.n_copies
        out_dim = self.out_dim
        idx, inv = self._perm_idx, self._perm_inv
        xv, hv, cv = x.value, h_prev.value, c_prev.value
        Wxh, Whh, bh = self.W_xh.value, self.W_hh.value, self.b_h.value
        Wxu, bu = self.W_xu.value, self.b_u.value
        Whu = self.W_hu.value if self.W_hu is not None else None

        def bound_fwd(z):
            re, im = z[:, :n_h // 2], z[:, n_h // 2:]
            m = np.sqrt(re * re + im * im)
            d = np.maximum(1.0, m)
            out = np.concatenate([re / d, im / d], axis=-1)
            return out, (re, im, d, m > 1.0)

        def bound_vjp(g, cache):
            re, im, d, over = cache
            k = n_h // 2
            gr, gi = g[:, :k], g[:, k:]
            invd = 1.0 / d
            dot = np.where(over, (gr * re + gi * im) / (d * d * d), 0.0)
            return np.concatenate([gr * invd - re * dot, gi * invd - im * dot],
                                  axis=-1)

        def cmul(a, b):
            k = n_h // 2
            ar, ai = a[..., :k], a[..., k:]
            br, bi = b[..., :k], b[..., k:]
            return np.concatenate([ar * br - ai * bi, ar * bi + ai * br], axis=-1)

        def cmul_conj(g, b):
            k = n_h // 2
            gr, gi = g[..., :k], g[..., k:]
            br, bi = b[..., :k], b[..., k:]
            return np.concatenate([gr * br + gi * bi, gi * br - gr * bi], axis=-1)

        def permute(key):
            if S == 1:
                return key[:, None, :]
            return key[:, idx]

        def unpermute_sum(g):
            if S == 1:
                return g[:, 0, :]
            return np.take_along_axis(
                g, np.broadcast_to(inv[None], g.shape), axis=-1).sum(axis=1)

        pre = xv @ Wxh + hv @ Whh + bh
        gfh = 1.0 / (1.0 + np.exp(-pre[:, :n2]))
        gih = 1.0 / (1.0 + np.exp(-pre[:, n2:2 * n2]))
        goh = 1.0 / (1.0 + np.exp(-pre[:, 2 * n2:3 * n2]))
        g_f = np.concatenate([gfh, gfh], axis=-1)
        g_i = np.concatenate([gih, gih], axis=-1)
        g_o = np.concatenate([goh, goh], axis=-1)
        u_pre = xv @ Wxu + bu
        if Whu is not None:
            u_pre += hv @ Whu

        heads = []
        write = np.zeros((B, S, n_h))
        internals = {"g_f": g_f, "g_i": g_i, "g_o": g_o, "u": []}
        for k in range(H):
            off = 3 * n2 + 2 * n_h * k
            r_i, ca_ri = bound_fwd(pre[:, off:off + n_h])
            r_o, ca_ro = bound_fwd(pre[:, off + n_h:off + 2 * n_h])
            u, ca_u = bound_fwd(u_pre[:, k * n_h:(k + 1) * n_h])
            internals["u"].append(u)
            v = g_i * u
            riP = permute(r_i)
            roP = permute(r_o)
            write += cmul(riP, v[:, None, :])
            heads.append((off, ca_ri, ca_ro, ca_u, u, v, riP, roP))

        c = g_f[:, None, :] * cv + write
        h_parts = []
        for k, (off, ca_ri, ca_ro, ca_u, u, v, riP, roP) in enumerate(heads):
            read = cmul(roP, c).mean(axis=1)
            b_k, ca_bk = bound_fwd(read)
            h_parts.append(g_o * b_k)
            heads[k] = (off, ca_ri, ca_ro, ca_u, u, v, riP, roP, b_k, ca_bk)
        h = h_parts[0] if H == 1 else np.concatenate(h_parts, axis=-1)
        out_val = np.concatenate([h, c.reshape(B, -1)], axis=-1)

        parents = [x, h_prev, c_prev, self.W_xh, self.W_hh, self.b_h,
                   self.W_xu, self.b_u]
        if self.W_hu is not None:
            parents.append(self.W_hu)

        def bwd(g):
            gh = g[:, :out_dim]
            gc = g[:, out_dim:].reshape(B, S, n_h).copy()
            gpre = np.zeros_like(pre)
            gu_pre = np.zeros_like(u_pre)
            g_gf = np.zeros((B, n_h))
            g_gi = np.zeros((B, n_h))
            g_go = np.zeros((B, n_h))
            for k, (off, ca_ri, ca_ro, ca_u, u, v, riP, roP, b_k, ca_bk) in enumerate(heads):
                gh_k = gh[:, k * n_h:(k + 1) * n_h]
                g_go += gh_k * b_k
                g_read = bound_vjp(gh_k * g_o, ca_bk)
                g_prod = np.broadcast_to(g_read[:, None, :] / S, (B, S, n_h))
                g_ro = unpermute_sum(cmul_conj(g_prod, c))
                gc += cmul_conj(g_prod, roP)
                gpre[:, off + n_h:off + 2 * n_h] += bound_vjp(g_ro, ca_ro)
            g_gf += (gc * cv).sum(axis=1)
            g_cprev = None if c_prev.const else gc * g_f[:, None, :]
            for k, (off, ca_ri, ca_ro, ca_u, u, v, riP, roP, b_k, ca_bk) in enumerate(heads):
                g_ri = unpermute_sum(cmul_conj(gc, np.broadcast_to(
                    v[:, None, :], (B, S, n_h))))
                g_v = cmul_conj(gc, riP).sum(axis=1)
                gpre[:, off:off + n_h] += bound_vjp(g_ri, ca_ri)
                g_gi += g_v * u
                gu_pre[:, k * n_h:(k + 1) * n_h] = bound_vjp(g_v * g_i, ca_u)
            gpre[:, :n2] = (g_gf[:, :n2] + g_gf[:, n2:]) * gfh * (1.0 - gfh)
            gpre[:, n2:2 * n2] = (g_gi[:, :n2] + g_gi[:, n2:]) * gih * (1.0 - gih)
            gpre[:, 2 * n2:3 * n2] = (g_go[:, :n2] + g_go[:, n2:]) * goh * (1.0 - goh)
            gx = None
            if not x.const:
                gx = gpre @ Wxh.T + gu_pre @ Wxu.T
            gh_prev = None
            if not h_prev.const:
                gh_prev = gpre @ Whh.T
                if Whu is not None:
                    gh_prev = gh_prev + gu_pre @ Whu.T
            grads = [gx, gh_prev, g_cprev,
                     None if self.W_xh.const else xv.T @ gpre,
                     None if self.W_hh.const else hv.T @ gpre,
                     None if self.b_h.const else gpre.sum(axis=0),
                     None if self.W_xu.const else xv.T @ gu_pre,
                     None if self.b_u.const else gu_pre.sum(axis=0)]
            if self.W_hu is not None:
                grads.append(None if self.W_hu.const else hv.T @ gu_pre)
            return tuple(grads)

        out = Variable(out_val, tuple(parents), bwd)
        h_var = ad.narrow(out, 0, out_dim)
        c_var = ad.reshape(ad.narrow(out, out_dim, out_dim + S * n_h),
                           (B, S, n_h))
        self.last_internals = internals
        return (h_var, c_var), h_var

    def _step_composed(self, state, x: Variable):
        h_prev, c_prev = state
        B = x.shape[0]
        n_h, n2, H, S = self.n_h, self.n_h // 2, self.n_heads, self.n_copies

        pre = ad.add(ad.add(ad.matmul(x, self.W_xh), ad.matmul(h_prev, self.W_hh)),
                     self.b_h)
        g_f = _dup(ad.sigmoid(ad.narrow(pre, 0, n2)))
        g_i = _dup(ad.sigmoid(ad.narrow(pre, n2, 2 * n2)))
        g_o = _dup(ad.sigmoid(ad.narrow(pre, 2 * n2, 3 * n2)))

        u_pre = ad.add(ad.matmul(x, self.W_xu), self.b_u)
        if self.W_hu is not None:
            u_pre = ad.add(u_pre, ad.matmul(h_prev, self.W_hu))

        ones_key = None
        if self.force_unit_keys:
            k = np.zeros(n_h)
            k[:n2] = 1.0
            ones_key = ad.constant(np.broadcast_to(k, (B, n_h)).copy())

        write = None
        out_keys = []
        internals = {"g_f": g_f.value, "g_i": g_i.value, "g_o": g_o.value, "u": []}
        for head in range(H):
            off = 3 * n2 + 2 * n_h * head
            if ones_key is not None:
                r_i = ones_key
                r_o = ones_key
            else:
                r_i = _bound(ad.narrow(pre, off, off + n_h))
                r_o = _bound(ad.narrow(pre, off + n_h, off + 2 * n_h))
            u = _bound(ad.narrow(u_pre, head * n_h, (head + 1) * n_h))
            internals["u"].append(u.value)
            value = ad.mul(g_i, u)
            w = _cmul(self._permute(r_i), ad.reshape(value, (B, 1, n_h)))
            write = w if write is None else ad.add(write, w)
            out_keys.append(r_o)

        c = ad.add(ad.mul(ad.reshape(g_f, (B, 1, n_h)), c_prev), write)

        reads = []
        for r_o in out_keys:
            r = ad.vmean(_cmul(self._permute(r_o), c), axis=1)
            reads.append(ad.mul(g_o, _bound(r)))
        h = reads[0] if H == 1 else ad.concat(reads, axis=-1)
        self.last_internals = internals
        return (h, c), h


# ---------------------------------------------------------------------------
# Permutation RNN

class PermutationRnnCell:
    """h_t = P h_{t-1} + W x_t with a fixed random permutation P.

    Linear, no nonlinearity; only the input map W is trainable here.
    """

    kind = "permrnn"

    def __init__(self, n_x: int, n_h: int, rng: np.random.Generator,
                 perm: np.ndarray | None = None):
        self.n_x = n_x
        self.n_h = n_h
        self.out_dim = n_h
        self.perm = rng.permutation(n_h) if perm is None else np.asarray(perm)
        self._inv = np.empty_like(self.perm)
        self._inv[self.perm] = np.arange(n_h)
        self.W = ad.param(_uniform(rng, (n_x, n_h), n_x))

    def parameters(self):
        return [("W", self.W)]

    def init_state(self, batch: int):
        return (ad.constant(np.zeros((batch, self.n_h))),)

    def step(self, state, x: Variable):
        (h_prev,) = state
        h = ad.add(ad.gather_last(h_prev, self.perm, self._inv), ad.matmul(x, self.W))
        return (h,), h


# ---------------------------------------------------------------------------
# Unitary RNNs

def _dft_matrices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Real 2n x 2n forms of the unitary DFT and its inverse.

    Complex M = A + iB acts on the split layout as [[A, -B], [B, A]].
    Direct O(n^2) materialization with 1/sqrt(n) normalization.
    """
    j = np.arange(n)
    F = np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)
    def real_form(M):
        return np.block([[M.real, -M.imag], [M.imag, M.real]])
    return real_form(F), real_form(F.conj().T)


class _UnitaryBase:
    """Shared machinery for the seven-factor unitary recurrences."""

    def __init__(self, n_x: int, n_h: int, rng: np.random.Generator):
        if n_h % 2 != 0:
            raise ContractError(f"n_h must be even, got {n_h}")
        self.n_x = n_x
        self.n_h = n_h
        self.out_dim = n_h
        n = n_h // 2
        self.n = n
        self._F, self._Finv = (ad.constant(m.T) for m in _dft_matrices(n))
        self.perm = rng.permutation(n)
        self._perm_idx, self._perm_inv = _perm_index(self.perm)
        self.v1 = ad.param(_uniform(rng, (n_h,), n))
        self.v2 = ad.param(_uniform(rng, (n_h,), n))
        self.V = ad.param(_uniform(rng, (n_x, n_h), n_x))
        self.b = ad.param(np.zeros(n))

    def init_state(self, batch: int):
        return (ad.constant(np.zeros((batch, self.n_h))),)

    def _reflect(self, v: Variable, h: Variable) -> Variable:
        """Householder-style complex reflection h - 2 v (v^dag h) / |v|^2."""
        n = self.n
        t = _cmul(_conj(v), h)
        s_re = ad.vsum(ad.narrow(t, 0, n), axis=-1, keepdims=True)
        s_im = ad.vsum(ad.narrow(t, n, 2 * n), axis=-1, keepdims=True)
        v_re, v_im = _halves(v)
        proj = ad.concat([
            ad.sub(ad.mul(v_re, s_re), ad.mul(v_im, s_im)),
            ad.add(ad.mul(v_re, s_im), ad.mul(v_im, s_re)),
        ])
        norm_sq = ad.maximum_scalar(ad.vsum(ad.mul(v, v)), 1e-16)
        return ad.sub(h, ad.div(ad.scale(proj, 2.0), norm_sq))

    def _diag_phase(self, phases: Variable, h: Variable) -> Variable:
        """Multiply by the unit-modulus diagonal exp(i * phases)."""
        d = ad.concat([ad.cos(phases), ad.sin(phases)])
        return _cmul(d, h)

    def _diags(self, x: Variable) -> tuple[Variable, Variable, Variable]:
        raise NotImplementedError

    def recur_linear(self, h: Variable, x: Variable) -> Variable:
        """The norm-preserving factorized map applied to h (no input term)."""
        d1, d2, d3 = self._diags(x)
        h = self._diag_phase(d1, h)
        h = ad.matmul(h, self._F)
        h = self._reflect(self.v1, h)
        h = ad.gather_last(h, self._perm_idx, self._perm_inv)
        h = self._diag_phase(d2, h)
        h = ad.matmul(h, self._Finv)
        h = self._reflect(self.v2, h)
        h = self._diag_phase(d3, h)
        return h

    def step(self, state, x: Variable):
        (h_prev,) = state
        lin = ad.add(self.recur_linear(h_prev, x), ad.matmul(x, self.V))
        h = _modrelu(lin, self.b)
        return (h,), h


class UnitaryRnnCell(_UnitaryBase):
    """Unitary recurrence with learned fixed phase diagonals."""

    kind = "urnn"

    def __init__(self, n_x: int, n_h: int, rng: np.random.Generator):
        super().__init__(n_x, n_h, rng)
        self.theta1 = ad.param(rng.uniform(-np.pi, np.pi, self.n))
        self.theta2 = ad.param(rng.uniform(-np.pi, np.pi, self.n))
        self.theta3 = ad.param(rng.uniform(-np.pi, np.pi, self.n))

    def parameters(self):
        return [("theta1", self.theta1), ("theta2", self.theta2),
                ("theta3", self.theta3), ("v1", self.v1), ("v2", self.v2),
                ("V", self.V), ("b", self.b)]

    def _diags(self, x: Variable):
        return self.theta1, self.theta2, self.theta3


class MultUnitaryRnnCell(_UnitaryBase):
    """Unitary recurrence whose diagonal phases are input-conditioned."""

    kind = "murnn"

    def __init__(self, n_x: int, n_h: int, rng: np.random.Generator):
        super().__init__(n_x, n_h, rng)
        self.W_xr1 = ad.param(_uniform(rng, (n_x, self.n), n_x))
        self.W_xr2 = ad.param(_uniform(rng, (n_x, self.n), n_x))
        self.W_xr3 = ad.param(_uniform(rng, (n_x, self.n), n_x))

    def parameters(self):
        return [("W_xr1", self.W_xr1), ("W_xr2", self.W_xr2),
                ("W_xr3", self.W_xr3), ("v1", self.v1), ("v2", self.v2),
                ("V", self.V), ("b", self.b)]

    def _diags(self, x: Variable):
        return (ad.matmul(x, self.W_xr1), ad.matmul(x, self.W_xr2),
                ad.matmul(x, self.W_xr3))


# ---------------------------------------------------------------------------
# stacking + output head

_CELL_CLASSES = {c.kind: c for c in
                 (LstmCell, AssocLstmCell, PermutationRnnCell,
                  UnitaryRnnCell, MultUnitaryRnnCell)}
MODEL_KINDS = tuple(_CELL_CLASSES)


@dataclass
class ModelConfig:
    kind: str
    n_x: int
    n_out: int
    n_h: int
    layers: int = 1
    n_copies: int = 1
    n_heads: int = 1
    use_h_for_update: bool = False
    forget_bias: float = 0.0
    input_bias: float = 0.0
    seed: int = 0


class RecurrentModel:
    """A stack of identical cells plus an affine softmax readout.

    Within a time step the output of each layer feeds the input of the
    next; the top layer's output goes through the readout to logits.
    """

    def __init__(self, config: ModelConfig, cells: list, W_out: Variable,
                 b_out: Variable):
        self.config = config
        self.cells = cells
        self.W_out = W_out
        self.b_out = b_out

    def parameters(self):
        out = []
        for i, cell in enumerate(self.cells):
            for name, p in cell.parameters():
                out.append((f"cells.{i}.{name}", p))
        out.append(("W_out", self.W_out))
        out.append(("b_out", self.b_out))
        return out

    def init_state(self, batch: int):
        return tuple(c.init_state(batch) for c in self.cells)

    def step(self, state, x: np.ndarray | Variable):
        """One time step; returns (state', logits)."""
        if not isinstance(x, Variable):
            x = ad.constant(x)
        new_state = []
        h = x
        for cell, st in zip(self.cells, state):
            st2, h = cell.step(st, h)
            new_state.append(st2)
        logits = ad.add(ad.matmul(h, self.W_out), self.b_out)
        return tuple(new_state), logits


def build_model(kind: str, n_x: int, n_out: int, n_h: int, layers: int = 1,
                n_copies: int = 1, n_heads: int = 1,
                use_h_for_update: bool = False, forget_bias: float = 0.0,
                input_bias: float = 0.0, seed: int = 0) -> RecurrentModel:
    if kind not in _CELL_CLASSES:
        raise ContractError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    if layers < 1:
        raise ContractError("layers must be >= 1")
    config = ModelConfig(kind, n_x, n_out, n_h, layers, n_copies, n_heads,
                         use_h_for_update, forget_bias, input_bias, seed)
    rng = np.random.default_rng(seed)
    cells = []
    dim = n_x
    for _ in range(layers):
        if kind == "lstm":
            cell = LstmCell(dim, n_h, rng, forget_bias=forget_bias,
                            input_bias=input_bias)
        elif kind == "alstm":
            cell = AssocLstmCell(dim, n_h, rng, n_copies=n_copies,
                                 n_heads=n_heads,
                                 use_h_for_update=use_h_for_update,
                                 forget_bias=forget_bias,
                                 input_bias=input_bias)
        elif kind == "permrnn":
            cell = PermutationRnnCell(dim, n_h, rng)
        elif kind == "urnn":
            cell = UnitaryRnnCell(dim, n_h, rng)
        else:
            cell = MultUnitaryRnnCell(dim, n_h, rng)
        cells.append(cell)
        dim = cell.out_dim
    W_out = ad.param(_uniform(rng, (dim, n_out), dim))
    b_out = ad.param(np.zeros(n_out))
    return RecurrentModel(config, cells, W_out, b_out)


def count_parameters(model) -> int:
    """Number of trainable scalars (fixed permutations/DFT excluded)."""
    return sum(p.value.size for _, p in model.parameters())


def materialize_recurrent_matrix(cell: _UnitaryBase,
                                 x: np.ndarray | None = None) -> np.ndarray:
    """The full real 2n x 2n matrix of the cell's recurrent linear map.

    Built column by column from basis vectors; used to check unitarity.
    """
    n_h = cell.n_h
    xv = ad.constant(np.zeros((1, cell.n_x)) if x is None else x.reshape(1, -1))
    cols = []
    basis = np.eye(n_h)
    for j in range(n_h):
        h = ad.constant(basis[j][None, :])
        cols.append(cell.recur_linear(h, xv).value[0])
    return np.stack(cols, axis=1)


def real_to_complex_matrix(M: np.ndarray) -> np.ndarray:
    """Convert the real split-layout form back to an n x n complex matrix."""
    n = M.shape[0] // 2
    return M[:n, :n] + 1j * M[n:, :n]
