"""Toy U-shaped enhancement network hosting the reallocation mechanisms.

Two downsampling encoder stages, a channel-attention latent block, two
upsampling decoder stages (each ending in a channel-attention block that can
carry an :class:`~redlab.adr.AdrBlock`), and a 3-channel head clamped to
[0, 1].  Decoder 3x3 convolutions can be swapped for candidate-mixing
dynamic convolutions, giving the static-vs-dynamic probe target.

Attention is transposed (channel-wise): per-channel rows of Q and K are
L2-normalized, their d x d product is scaled by a learnable temperature and
row-softmaxed, and the result mixes V's channel rows.  Reallocation, when
attached, rewrites Q/K/V before any of that happens.

Training is batch-1 Adam on mean-absolute error with a seed-derived shuffle
schedule, so runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .adr import AdrBlock, reallocate
from .dynconv import DynamicConv
from .errors import ContractError, DimensionError, DivergenceError
from .redundancy import psnr
from .rng import Rng, child_seed
from .tensor import Tensor

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8


class Conv2dLayer:
    """Same-padded convolution with bias, kernel uniform +-sqrt(1/fan_in)."""

    def __init__(self, rng: Rng, c_in: int, c_out: int, d_k: int):
        bound = (1.0 / (c_in * d_k * d_k)) ** 0.5
        self.kernel = Tensor(
            rng.fill_uniform((c_out, c_in, d_k, d_k), -bound, bound),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.c_out = c_out

    def forward(self, x: Tensor) -> Tensor:
        return T.add(T.conv2d(x, self.kernel), T.reshape(self.bias, (self.c_out, 1, 1)))

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.kernel", self.kernel), (f"{prefix}.bias", self.bias)]


class ChannelAttentionBlock:
    """Residual channel attention over 1x1-projected Q/K/V.

    The optional reallocation block rewrites Q/K/V between projection and
    attention.  Row normalization carries a 1e-24 additive guard inside the
    square root so an all-zero feature map stays finite (relative effect on
    any non-degenerate row is ~1e-24, far below every stated tolerance).
    """

    def __init__(self, rng: Rng, d: int, adr_dims: tuple | None = None):
        self.d = d
        self.q_conv = Conv2dLayer(rng, d, d, 1)
        self.k_conv = Conv2dLayer(rng, d, d, 1)
        self.v_conv = Conv2dLayer(rng, d, d, 1)
        self.tau = Tensor(np.asarray(1.0), requires_grad=True)
        self.out_conv = Conv2dLayer(rng, d, d, 1)
        if adr_dims is not None:
            d_m, d_e, d_k = adr_dims
            self.adr = AdrBlock(rng, 3 * d, d_m, d_e, d_k)
        else:
            self.adr = None

    def forward(self, f: Tensor, capture: dict | None = None, path: str = "") -> Tensor:
        if f.data.shape[0] != self.d:
            raise DimensionError(
                f"attention block expects {self.d} channels, got {f.data.shape[0]}"
            )
        q = self.q_conv.forward(f)
        k = self.k_conv.forward(f)
        v = self.v_conv.forward(f)
        if self.adr is not None:
            if capture is not None:
                capture.setdefault("adr_inputs", {})[f"{path}.adr"] = T.concat_channels(
                    [q, k, v]
                )
            q, k, v = reallocate(self.adr, q, k, v)
        d, hh, ww = self.d, f.data.shape[1], f.data.shape[2]
        qm = T.reshape(q, (d, hh * ww))
        km = T.reshape(k, (d, hh * ww))
        vm = T.reshape(v, (d, hh * ww))
        qh = T.div(qm, T.sqrt(T.add(T.sum_last(T.square(qm)), 1e-24)))
        kh = T.div(km, T.sqrt(T.add(T.sum_last(T.square(km)), 1e-24)))
        a = T.softmax(T.mul(T.matmul(qh, T.transpose2d(kh)), self.tau))
        if capture is not None:
            capture.setdefault("attention", {})[path] = a.data
        out = self.out_conv.forward(T.reshape(T.matmul(a, vm), (d, hh, ww)))
        return T.add(out, f)

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = self.q_conv.named_parameters(f"{prefix}.qkv.q")
        out += self.k_conv.named_parameters(f"{prefix}.qkv.k")
        out += self.v_conv.named_parameters(f"{prefix}.qkv.v")
        out.append((f"{prefix}.tau", self.tau))
        out += self.out_conv.named_parameters(f"{prefix}.out")
        if self.adr is not None:
            out += self.adr.named_parameters(f"{prefix}.adr")
        return out


class EncoderStage:
    def __init__(self, rng: Rng, c_in: int, c_out: int):
        self.conv = Conv2dLayer(rng, c_in, c_out, 3)

    def forward(self, x: Tensor) -> Tensor:
        return T.downsample2x_mean(T.relu(self.conv.forward(x)))

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        return self.conv.named_parameters(f"{prefix}.conv")


class DecoderStage:
    def __init__(
        self,
        rng: Rng,
        c_in: int,
        c_out: int,
        adr_dims: tuple | None,
        dyn_candidates: int,
    ):
        if dyn_candidates:
            self.conv = DynamicConv(rng, c_in, c_out, 3, dyn_candidates)
            self.dynamic = True
        else:
            self.conv = Conv2dLayer(rng, c_in, c_out, 3)
            self.dynamic = False
        self.attn = ChannelAttentionBlock(rng, c_out, adr_dims)

    def forward(self, x: Tensor, capture: dict | None, path: str) -> Tensor:
        y = self.conv.forward(T.upsample2x(x))
        return self.attn.forward(T.relu(y), capture, f"{path}.attn")

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        sub = "dynconv" if self.dynamic else "conv"
        out = self.conv.named_parameters(f"{prefix}.{sub}")
        out += self.attn.named_parameters(f"{prefix}.attn")
        return out


class ToyEnhancer:
    """3xHxW -> 3xHxW enhancer; H and W must be divisible by 4.

    ``adr_blocks`` switches reallocation per decoder block; with both off
    (and ``dyn_candidates`` 0) the network holds no dynamic parameters.
    Construction consumes the rng in fixed stage order, so a seed pins every
    initial weight.
    """

    def __init__(
        self,
        rng: Rng,
        widths: tuple = (8, 16),
        adr_blocks: tuple = (False, False),
        adr_dims: tuple = (4, 16, 3),
        dyn_candidates: int = 0,
    ):
        w1, w2 = widths
        self.widths = (w1, w2)
        self.adr_blocks = tuple(bool(b) for b in adr_blocks)
        self.adr_dims = tuple(adr_dims)
        self.dyn_candidates = int(dyn_candidates)
        self.enc1 = EncoderStage(rng, 3, w1)
        self.enc2 = EncoderStage(rng, w1, w2)
        self.latent = ChannelAttentionBlock(rng, w2, None)
        self.dec1 = DecoderStage(
            rng, w2, w1, adr_dims if self.adr_blocks[0] else None, dyn_candidates
        )
        self.dec2 = DecoderStage(
            rng, w1, w1, adr_dims if self.adr_blocks[1] else None, dyn_candidates
        )
        self.head = Conv2dLayer(rng, w1, 3, 3)
        self.frozen = False

    def forward(self, x: Tensor, capture: dict | None = None) -> Tensor:
        if x.data.ndim != 3 or x.data.shape[0] != 3:
            raise DimensionError(f"expected [3, H, W] input, got {x.data.shape}")
        h, w = x.data.shape[1], x.data.shape[2]
        if h % 4 or w % 4:
            raise DimensionError(f"H and W must be divisible by 4, got {h}x{w}")
        y = self.enc1.forward(x)
        y = self.enc2.forward(y)
        y = self.latent.forward(y, capture, "latent.attn")
        y = self.dec1.forward(y, capture, "decoder.block1")
        y = self.dec2.forward(y, capture, "decoder.block2")
        return T.clamp01(self.head.forward(y))

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = self.enc1.named_parameters("encoder.stage1")
        out += self.enc2.named_parameters("encoder.stage2")
        out += self.latent.named_parameters("latent.attn")
        out += self.dec1.named_parameters("decoder.block1")
        out += self.dec2.named_parameters("decoder.block2")
        out += self.head.named_parameters("head")
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def freeze(self) -> None:
        for stage in (self.latent, self.dec1.attn, self.dec2.attn):
            if stage.adr is not None:
                stage.adr.freeze()
        self.frozen = True

    def refresh_caches(self) -> None:
        """Re-derive any frozen-generator caches from current parameters."""
        for stage in (self.latent, self.dec1.attn, self.dec2.attn):
            if stage.adr is not None and stage.adr.frozen:
                stage.adr.freeze()


def forward(model: ToyEnhancer, x: Tensor, capture: dict | None = None) -> Tensor:
    return model.forward(x, capture)


def collect_adr_inputs(model: ToyEnhancer, x: Tensor) -> dict:
    """Concatenated Q/K/V conditioning tensors per reallocation block path."""
    capture: dict = {}
    model.forward(x, capture)
    return capture.get("adr_inputs", {})


@dataclass
class TrainState:
    """Everything the optimizer carries between steps."""

    params: list
    m: dict
    v: dict
    step: int
    rng: Rng
    loss_history: list = field(default_factory=list)


def _as_low_ref(pair):
    if hasattr(pair, "low"):
        return pair.low, pair.clean
    low, ref = pair
    return low, ref


def train(model, pairs, steps: int, seed: int, lr: float = 1e-3) -> TrainState:
    """Adam on batch-1 mean-absolute error, deterministic per seed.

    The sample order reshuffles every epoch from a child stream of ``seed``.
    Raises on a frozen model and on any non-finite loss (with the failing
    step recorded on the error).
    """
    if getattr(model, "frozen", False):
        raise ContractError("cannot train a frozen model")
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    if not pairs:
        raise ContractError("training needs at least one pair")
    named = model.named_parameters()
    state = TrainState(
        params=named,
        m={name: np.zeros_like(t.data) for name, t in named},
        v={name: np.zeros_like(t.data) for name, t in named},
        step=0,
        rng=Rng(child_seed(seed, 0)),
    )
    order: list = []
    for step in range(steps):
        if not order:
            order = list(range(len(pairs)))
            state.rng.shuffle(order)
        low, ref = _as_low_ref(pairs[order.pop(0)])
        for _, p in named:
            p.grad = None
        tape = T.Tape()
        with tape:
            loss = T.mean_all(T.absolute(T.sub(model.forward(low), ref)))
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(step)
        T.backward(tape, loss)
        t = step + 1
        for name, p in named:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            state.m[name] = _ADAM_B1 * state.m[name] + (1.0 - _ADAM_B1) * g
            state.v[name] = _ADAM_B2 * state.v[name] + (1.0 - _ADAM_B2) * (g * g)
            m_hat = state.m[name] / (1.0 - _ADAM_B1 ** t)
            v_hat = state.v[name] / (1.0 - _ADAM_B2 ** t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
        state.step = t
        state.loss_history.append(value)
    return state


def evaluate(model, pairs) -> float:
    """Mean reconstruction PSNR (dB, I_max = 1) over the given pairs."""
    if not pairs:
        raise ContractError("evaluate needs at least one pair")
    total = 0.0
    for pair in pairs:
        low, ref = _as_low_ref(pair)
        total += psnr(model.forward(low), ref, 1.0)
    return total / len(pairs)
