"""The forecasting network and its autoregressive rollout.

Architecture per context window: optional instance normalization, additive
trend/seasonal decomposition, then per component a three-layer conv patch
embedding, a learnable positional table, a stack of pre-norm Transformer
encoder blocks, and a linear head that maps each patch representation to
the two-channel values of the following patch. The horizon is generated
one patch at a time; every generated patch is appended to the rolling
input window so each step conditions on everything produced so far.

All forward functions accept an optional leading batch axis.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import (
    ShapeMismatchError,
    Tensor,
    add,
    avgpool1d_replicate,
    concat,
    conv1d,
    layer_norm,
    matmul,
    mul,
    relu,
    softmax_lastdim,
    sub,
)
from .preprocess import NormStats, denormalize_all, identity_stats, normalize

TREND = "trend"
SEASONAL = "seasonal"
FULL = "full"


@dataclass
class ModelConfig:
    """Structural hyperparameters of the forecaster.

    ``horizon`` counts every generated sample, including the lead-time gap
    between context and evaluation target; it must be a multiple of
    ``patch_len`` so the rollout is a whole number of patches.
    """

    context_len: int = 300
    horizon: int = 140
    patch_len: int = 10
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int | None = None
    decomp_window: int = 25
    dropout: float = 0.0
    use_norm: bool = True
    use_decomp: bool = True
    seed: int = 0

    @property
    def n_patches(self) -> int:
        return self.context_len // self.patch_len

    @property
    def n_steps(self) -> int:
        return self.horizon // self.patch_len

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d_model

    def components(self) -> tuple[str, ...]:
        return (TREND, SEASONAL) if self.use_decomp else (FULL,)

    def validate(self) -> None:
        if self.context_len < 1 or self.patch_len < 1:
            raise ValueError("context_len and patch_len must be >= 1")
        if self.context_len % self.patch_len != 0:
            raise ValueError(
                f"context_len {self.context_len} not divisible by "
                f"patch_len {self.patch_len}"
            )
        if self.horizon < 1 or self.horizon % self.patch_len != 0:
            raise ValueError(
                f"horizon {self.horizon} not divisible by patch_len "
                f"{self.patch_len}"
            )
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads "
                f"{self.n_heads}"
            )
        if self.decomp_window < 1 or self.decomp_window % 2 == 0:
            raise ValueError(
                f"decomp_window must be odd and >= 1, got {self.decomp_window}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class EncoderLayerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor


@dataclass
class ComponentParams:
    conv1_kernel: Tensor
    conv1_bias: Tensor
    conv2_kernel: Tensor
    conv2_bias: Tensor
    conv3_kernel: Tensor
    conv3_bias: Tensor
    positional: Tensor
    layers: list[EncoderLayerParams]
    head_weight: Tensor
    head_bias: Tensor


@dataclass
class ModelParams:
    """All learnable arrays, grouped per decomposition component."""

    components: dict[str, ComponentParams] = field(default_factory=dict)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """Deterministic (name, tensor) listing used by the optimizer and
        the checkpoint format."""
        out = []
        for comp_name, comp in self.components.items():
            prefix = comp_name
            out.append((f"{prefix}.conv1.kernel", comp.conv1_kernel))
            out.append((f"{prefix}.conv1.bias", comp.conv1_bias))
            out.append((f"{prefix}.conv2.kernel", comp.conv2_kernel))
            out.append((f"{prefix}.conv2.bias", comp.conv2_bias))
            out.append((f"{prefix}.conv3.kernel", comp.conv3_kernel))
            out.append((f"{prefix}.conv3.bias", comp.conv3_bias))
            out.append((f"{prefix}.positional", comp.positional))
            for i, lp in enumerate(comp.layers):
                lpfx = f"{prefix}.layer{i}"
                out.append((f"{lpfx}.wq", lp.wq))
                out.append((f"{lpfx}.wk", lp.wk))
                out.append((f"{lpfx}.wv", lp.wv))
                out.append((f"{lpfx}.wo", lp.wo))
                out.append((f"{lpfx}.ln1.gamma", lp.ln1_gamma))
                out.append((f"{lpfx}.ln1.beta", lp.ln1_beta))
                out.append((f"{lpfx}.ln2.gamma", lp.ln2_gamma))
                out.append((f"{lpfx}.ln2.beta", lp.ln2_beta))
                out.append((f"{lpfx}.ff.w1", lp.ff_w1))
                out.append((f"{lpfx}.ff.b1", lp.ff_b1))
                out.append((f"{lpfx}.ff.w2", lp.ff_w2))
                out.append((f"{lpfx}.ff.b2", lp.ff_b2))
            out.append((f"{prefix}.head.weight", comp.head_weight))
            out.append((f"{prefix}.head.bias", comp.head_bias))
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def dtype(self):
        return self.tensors()[0].dtype

    def copy(self) -> "ModelParams":
        clone = ModelParams()
        for name, comp in self.components.items():
            clone.components[name] = ComponentParams(
                conv1_kernel=_clone(comp.conv1_kernel),
                conv1_bias=_clone(comp.conv1_bias),
                conv2_kernel=_clone(comp.conv2_kernel),
                conv2_bias=_clone(comp.conv2_bias),
                conv3_kernel=_clone(comp.conv3_kernel),
                conv3_bias=_clone(comp.conv3_bias),
                positional=_clone(comp.positional),
                layers=[
                    EncoderLayerParams(**{
                        f.name: _clone(getattr(lp, f.name))
                        for f in lp.__dataclass_fields__.values()
                    })
                    for lp in comp.layers
                ],
                head_weight=_clone(comp.head_weight),
                head_bias=_clone(comp.head_bias),
            )
        return clone


def _clone(t: Tensor) -> Tensor:
    return Tensor(t.data.copy(), requires_grad=t.requires_grad, dtype=t.dtype)


def _uniform(rng, shape, fan_in, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True,
                  dtype=dtype)


def init_params(config: ModelConfig, dtype=np.float32) -> ModelParams:
    """Seeded parameter initialization.

    Conv and linear weights (and their biases) are uniform in
    +/- 1/sqrt(fan_in); positional tables start at zero; layer-norm
    affine pairs start at identity. Draw order is fixed: per component,
    conv1..conv3, then per layer attention/feed-forward, then the head.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    d = config.d_model
    S = config.patch_len
    params = ModelParams()
    for comp_name in config.components():
        layers = []
        conv1_kernel = _uniform(rng, (d, 2, S), 2 * S, dtype)
        conv1_bias = _uniform(rng, (d,), 2 * S, dtype)
        conv2_kernel = _uniform(rng, (d, d, 3), 3 * d, dtype)
        conv2_bias = _uniform(rng, (d,), 3 * d, dtype)
        conv3_kernel = _uniform(rng, (d, d, 3), 3 * d, dtype)
        conv3_bias = _uniform(rng, (d,), 3 * d, dtype)
        positional = Tensor(np.zeros((config.n_patches, d)),
                            requires_grad=True, dtype=dtype)
        for _ in range(config.n_layers):
            layers.append(EncoderLayerParams(
                wq=_uniform(rng, (d, d), d, dtype),
                wk=_uniform(rng, (d, d), d, dtype),
                wv=_uniform(rng, (d, d), d, dtype),
                wo=_uniform(rng, (d, d), d, dtype),
                ln1_gamma=Tensor(np.ones(d), requires_grad=True, dtype=dtype),
                ln1_beta=Tensor(np.zeros(d), requires_grad=True, dtype=dtype),
                ln2_gamma=Tensor(np.ones(d), requires_grad=True, dtype=dtype),
                ln2_beta=Tensor(np.zeros(d), requires_grad=True, dtype=dtype),
                ff_w1=_uniform(rng, (d, config.ff_width), d, dtype),
                ff_b1=_uniform(rng, (config.ff_width,), d, dtype),
                ff_w2=_uniform(rng, (config.ff_width, d), config.ff_width, dtype),
                ff_b2=_uniform(rng, (d,), config.ff_width, dtype),
            ))
        params.components[comp_name] = ComponentParams(
            conv1_kernel=conv1_kernel,
            conv1_bias=conv1_bias,
            conv2_kernel=conv2_kernel,
            conv2_bias=conv2_bias,
            conv3_kernel=conv3_kernel,
            conv3_bias=conv3_bias,
            positional=positional,
            layers=layers,
            head_weight=_uniform(rng, (d, 2 * S), d, dtype),
            head_bias=_uniform(rng, (2 * S,), d, dtype),
        )
    return params


def parameter_count(config: ModelConfig) -> int:
    """Total learnable scalars; a pure function of the config."""
    d, S, ff = config.d_model, config.patch_len, config.ff_width
    per_layer = 4 * d * d + 4 * d + d * ff + ff + ff * d + d
    per_component = (
        d * 2 * S + d          # conv1
        + 2 * (d * d * 3 + d)  # conv2, conv3
        + config.n_patches * d  # positional
        + config.n_layers * per_layer
        + d * 2 * S + 2 * S    # head
    )
    return len(config.components()) * per_component


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------


def patch_embed(w: Tensor, comp: ComponentParams, config: ModelConfig) -> Tensor:
    """Map a [..., L, 2] window to [..., L/S, d_model] patch tokens.

    The first convolution patchifies (kernel = stride = patch length);
    two kernel-3 convolutions refine at patch resolution, with ReLU
    between layers.
    """
    if w.shape[-2] % config.patch_len != 0:
        raise ShapeMismatchError(
            f"window length {w.shape[-2]} not divisible by patch length "
            f"{config.patch_len}"
        )
    x = conv1d(w, comp.conv1_kernel, comp.conv1_bias,
               stride=config.patch_len, padding=0)
    x = relu(x)
    x = conv1d(x, comp.conv2_kernel, comp.conv2_bias, stride=1, padding=1)
    x = relu(x)
    x = conv1d(x, comp.conv3_kernel, comp.conv3_bias, stride=1, padding=1)
    return x


def add_positional(w_patch: Tensor, table: Tensor) -> Tensor:
    """Add the first L/S rows of the learnable positional table."""
    n = w_patch.shape[-2]
    if n > table.shape[0]:
        raise ShapeMismatchError(
            f"{n} patches exceed positional table of {table.shape[0]} rows"
        )
    return add(w_patch, table[:n])


def _attention(h: Tensor, lp: EncoderLayerParams, config: ModelConfig) -> Tensor:
    """Full bidirectional multi-head scaled dot-product attention."""
    d, nh = config.d_model, config.n_heads
    dh = d // nh
    lead = h.shape[:-1]

    def split_heads(t: Tensor) -> Tensor:
        return t.reshape(lead + (nh, dh)).swapaxes(-3, -2)

    q = split_heads(matmul(h, lp.wq))
    k = split_heads(matmul(h, lp.wk))
    v = split_heads(matmul(h, lp.wv))
    scores = mul(matmul(q, k.swapaxes(-1, -2)), 1.0 / math.sqrt(dh))
    weights = softmax_lastdim(scores)
    ctx = matmul(weights, v).swapaxes(-3, -2)
    ctx = ctx.reshape(lead + (d,))
    return matmul(ctx, lp.wo)


def _dropout(x: Tensor, rate: float, rng, train: bool) -> Tensor:
    if not train or rate <= 0.0 or rng is None:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(np.float64) / keep
    return mul(x, Tensor(mask, dtype=x.dtype))


def encode(w_pos: Tensor, comp: ComponentParams, config: ModelConfig,
           rng=None, train: bool = False) -> Tensor:
    """Stack of pre-norm blocks: x + MHA(LN(x)), then x + FFN(LN(x))."""
    x = w_pos
    for lp in comp.layers:
        h = layer_norm(x, lp.ln1_gamma, lp.ln1_beta)
        x = add(x, _dropout(_attention(h, lp, config), config.dropout, rng, train))
        h = layer_norm(x, lp.ln2_gamma, lp.ln2_beta)
        ff = matmul(relu(add(matmul(h, lp.ff_w1), lp.ff_b1)), lp.ff_w2)
        ff = add(ff, lp.ff_b2)
        x = add(x, _dropout(ff, config.dropout, rng, train))
    return x


def head(z: Tensor, comp: ComponentParams) -> Tensor:
    """Affine map per patch row; row r is the prediction of patch r+1,
    laid out as S consecutive (MAP, SBP) pairs."""
    return add(matmul(z, comp.head_weight), comp.head_bias)


def forecast_step(window: Tensor, params: ModelParams, config: ModelConfig,
                  rng=None, train: bool = False) -> Tensor:
    """One generation step: [..., L, 2] normalized window -> next patch
    [..., S, 2].

    The window is decomposed, each component runs its own encoder stack,
    and the components' next-patch predictions are summed, mirroring the
    additive decomposition.
    """
    if config.use_decomp:
        trend = avgpool1d_replicate(window, config.decomp_window)
        comp_inputs = {TREND: trend, SEASONAL: sub(window, trend)}
    else:
        comp_inputs = {FULL: window}
    fused = None
    for name, comp_input in comp_inputs.items():
        comp = params.components[name]
        x = patch_embed(comp_input, comp, config)
        x = add_positional(x, comp.positional)
        x = _dropout(x, config.dropout, rng, train)
        z = encode(x, comp, config, rng, train)
        y = head(z, comp)
        last = y[..., -1, :]
        fused = last if fused is None else add(fused, last)
    return fused.reshape(fused.shape[:-1] + (config.patch_len, 2))


def rollout(window: Tensor, params: ModelParams, config: ModelConfig,
            rng=None, train: bool = False) -> Tensor:
    """Generate horizon/S patches autoregressively on the normalized scale.

    After each step the oldest patch worth of samples is dropped and the
    generated patch appended, keeping the window at length L. Returns the
    concatenated [..., horizon, 2] prediction.
    """
    S = config.patch_len
    patches = []
    for _ in range(config.n_steps):
        patch = forecast_step(window, params, config, rng, train)
        patches.append(patch)
        window = concat([window[..., S:, :], patch], axis=-2)
    return concat(patches, axis=-2)


@dataclass
class ForecastResult:
    """Raw-scale forecast plus the normalized patch sequence behind it."""

    pred_map: np.ndarray          # [horizon] mmHg
    pred_sbp: np.ndarray          # [horizon] mmHg
    normalized_patches: np.ndarray  # [horizon, 2], generated sequence
    stats: NormStats


def autoregressive_forecast(context_raw: np.ndarray, params: ModelParams,
                            config: ModelConfig) -> ForecastResult:
    """Forecast the full horizon from one raw-scale context window.

    The context is normalized once and those statistics are frozen for
    the whole rollout and the final de-normalization, so outputs return
    to mmHg on the context's own scale.
    """
    config.validate()
    context_raw = np.asarray(context_raw, dtype=np.float64)
    if context_raw.shape != (config.context_len, 2):
        raise ShapeMismatchError(
            f"context shape {context_raw.shape} does not match "
            f"[{config.context_len}, 2]"
        )
    dtype = params.dtype()
    if config.use_norm:
        normalized, stats = normalize(context_raw)
    else:
        normalized = context_raw
        stats = identity_stats(2, dtype=np.float64)
    window = Tensor(normalized, dtype=dtype)
    generated = rollout(window, params, config).data.astype(np.float64)
    pred = denormalize_all(generated, stats)
    return ForecastResult(
        pred_map=pred[:, 0],
        pred_sbp=pred[:, 1],
        normalized_patches=generated,
        stats=stats,
    )


def config_to_dict(config: ModelConfig) -> dict:
    return asdict(config)


def config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(**d)
