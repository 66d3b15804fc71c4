"""Finite-difference verification of every backward rule.

Each differentiable op is exercised over many random shapes and seeds in
64-bit mode; the analytic gradient from the tape must match central
differences within a per-op relative tolerance. A separate end-to-end
check differentiates the full rollout loss with respect to sampled
coordinates from every parameter group. The CLI ``gradcheck`` subcommand
and the test suite both run through this module.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape, Tensor, backward, finite_diff_grad
from .network import ModelConfig, init_params, rollout
from .training import mse_loss

OP_TOLERANCE = 1e-4
END_TO_END_TOLERANCE = 1e-3
FD_STEP = 1e-4


@dataclass
class CheckResult:
    name: str
    n_cases: int
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _check_case(build, wrt: list[Tensor], h: float = FD_STEP) -> float:
    """Compare tape gradients against finite differences for one case.

    ``build`` maps the current values of ``wrt`` to a scalar Tensor; it is
    re-invoked inside the finite-difference oracle, so the two gradient
    routes never share state.
    """
    for t in wrt:
        t.zero_grad()
    with GradTape() as tape:
        loss = build()
    backward(loss, tape)
    worst = 0.0
    for t in wrt:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)

        def f(x, target=t):
            saved = target.data
            target.data = x.data
            try:
                return build()
            finally:
                target.data = saved

        numeric = finite_diff_grad(f, t, h)
        worst = max(worst, _rel_err(analytic, numeric))
    return worst


def _tensor(rng, shape, shift: float = 0.0) -> Tensor:
    data = rng.normal(0.0, 1.0, shape)
    if shift:
        data = data + shift * np.sign(data)
    return Tensor(data, requires_grad=True, dtype=np.float64)


def _projection(rng, shape) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0, shape), dtype=np.float64)


def check_matmul(rng) -> float:
    m, k, n = rng.integers(1, 6, 3)
    a = _tensor(rng, (m, k))
    b = _tensor(rng, (k, n))
    if rng.random() < 0.5:
        a = _tensor(rng, (int(rng.integers(1, 4)), m, k))
    r = _projection(rng, (a.shape[:-2] + (m, n)) if a.ndim > 2 else (m, n))
    return _check_case(lambda: ad.tsum(ad.mul(ad.matmul(a, b), r)), [a, b])


def check_conv1d(rng) -> float:
    L = int(rng.integers(4, 12))
    c_in = int(rng.integers(1, 4))
    c_out = int(rng.integers(1, 4))
    k = int(rng.integers(1, min(4, L + 1)))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 3))
    x = _tensor(rng, (int(rng.integers(1, 3)), L, c_in))
    kernel = _tensor(rng, (c_out, c_in, k))
    bias = _tensor(rng, (c_out,))
    out_shape = ad.conv1d(x, kernel, bias, stride, padding).shape
    r = _projection(rng, out_shape)
    return _check_case(
        lambda: ad.tsum(ad.mul(ad.conv1d(x, kernel, bias, stride, padding), r)),
        [x, kernel, bias],
    )


def check_avgpool(rng) -> float:
    L = int(rng.integers(2, 10))
    c = int(rng.integers(1, 4))
    window = int(rng.choice([w for w in (1, 3, 5, 7) if w <= 2 * L - 1]))
    x = _tensor(rng, (L, c))
    r = _projection(rng, (L, c))
    return _check_case(
        lambda: ad.tsum(ad.mul(ad.avgpool1d_replicate(x, window), r)), [x]
    )


def check_softmax(rng) -> float:
    shape = tuple(rng.integers(1, 5, int(rng.integers(1, 4))))
    x = _tensor(rng, shape)
    r = _projection(rng, shape)
    return _check_case(lambda: ad.tsum(ad.mul(ad.softmax_lastdim(x), r)), [x])


def check_layer_norm(rng) -> float:
    m, d = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    x = _tensor(rng, (m, d))
    gamma = _tensor(rng, (d,))
    beta = _tensor(rng, (d,))
    r = _projection(rng, (m, d))
    return _check_case(
        lambda: ad.tsum(ad.mul(ad.layer_norm(x, gamma, beta), r)),
        [x, gamma, beta],
    )


def check_relu(rng) -> float:
    shape = tuple(rng.integers(1, 5, 2))
    # keep samples away from the kink, where central differences are wrong
    x = _tensor(rng, shape, shift=0.05)
    r = _projection(rng, shape)
    return _check_case(lambda: ad.tsum(ad.mul(ad.relu(x), r)), [x])


def check_add_mul_sub(rng) -> float:
    m, n = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    a = _tensor(rng, (m, n))
    b = _tensor(rng, (n,))
    c = _tensor(rng, (m, n))
    scalar = float(rng.normal())
    r = _projection(rng, (m, n))

    def build():
        out = ad.add(a, b)
        out = ad.mul(out, c)
        out = ad.sub(out, a)
        out = ad.mul(out, scalar)
        return ad.tsum(ad.mul(out, r))

    return _check_case(build, [a, b, c])


def check_slice_concat(rng) -> float:
    m, n = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    a = _tensor(rng, (m, n))
    b = _tensor(rng, (m, n))
    cut = int(rng.integers(1, m + 1))

    def build():
        joined = ad.concat([a[:cut], b], axis=0)
        return ad.tsum(ad.mul(joined, joined))

    return _check_case(build, [a, b])


def check_reshape_swap(rng) -> float:
    m, n = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    a = _tensor(rng, (m, n, 2))
    r = _projection(rng, (2 * n, m))

    def build():
        out = a.swapaxes(0, 2).reshape((2 * n, m))
        return ad.tsum(ad.mul(out, r))

    return _check_case(build, [a])


def check_mean(rng) -> float:
    shape = tuple(rng.integers(1, 5, 2))
    a = _tensor(rng, shape)
    return _check_case(lambda: ad.tmean(ad.mul(a, a)), [a])


OP_CHECKS = {
    "matmul": check_matmul,
    "conv1d": check_conv1d,
    "avgpool1d_replicate": check_avgpool,
    "softmax_lastdim": check_softmax,
    "layer_norm": check_layer_norm,
    "relu": check_relu,
    "add/mul/sub": check_add_mul_sub,
    "slice/concat": check_slice_concat,
    "reshape/swapaxes": check_reshape_swap,
    "sum/mean": check_mean,
}


def run_op_checks(n_seeds: int = 20, tolerance: float = OP_TOLERANCE
                  ) -> list[CheckResult]:
    """Run every per-op oracle over ``n_seeds`` random cases each."""
    results = []
    for name, fn in OP_CHECKS.items():
        worst = 0.0
        for seed in range(n_seeds):
            rng = np.random.default_rng([zlib.crc32(name.encode()), seed])
            worst = max(worst, fn(rng))
        results.append(CheckResult(name, n_seeds, worst, tolerance))
    return results


PARAM_GROUPS = ("conv", "positional", "attention", "norm", "ffn", "head")


def _group_of(name: str) -> str:
    if ".conv" in name:
        return "conv"
    if ".positional" in name:
        return "positional"
    if any(p in name for p in (".wq", ".wk", ".wv", ".wo")):
        return "attention"
    if ".ln" in name:
        return "norm"
    if ".ff." in name:
        return "ffn"
    return "head"


def run_end_to_end_check(coords_per_group: int = 10,
                         tolerance: float = END_TO_END_TOLERANCE,
                         h: float = 1e-5) -> CheckResult:
    """Differentiate the rollout MSE of a tiny model and compare sampled
    parameter coordinates from every group against central differences."""
    config = ModelConfig(context_len=20, horizon=10, patch_len=5, d_model=8,
                         n_layers=1, n_heads=2, d_ff=32, decomp_window=5,
                         seed=3)
    params = init_params(config, dtype=np.float64)
    rng = np.random.default_rng(11)
    ctx = rng.normal(0.0, 1.0, (2, config.context_len, 2))
    tgt = rng.normal(0.0, 1.0, (2, config.horizon, 2))

    def loss_value() -> float:
        pred = rollout(Tensor(ctx, dtype=np.float64), params, config).data
        return mse_loss(pred, tgt)

    for t in params.tensors():
        t.zero_grad()
    with GradTape() as tape:
        pred = rollout(Tensor(ctx, dtype=np.float64), params, config)
        loss = mse_loss(pred, Tensor(tgt, dtype=np.float64))
    backward(loss, tape)

    worst = 0.0
    n_cases = 0
    for comp_name in config.components():
        by_group: dict[str, list] = {g: [] for g in PARAM_GROUPS}
        for name, tensor in params.named_tensors():
            if name.startswith(comp_name):
                by_group[_group_of(name)].append(tensor)
        for group, tensors in by_group.items():
            for _ in range(coords_per_group):
                tensor = tensors[int(rng.integers(0, len(tensors)))]
                idx = tuple(int(rng.integers(0, s)) for s in tensor.shape)
                analytic = tensor.grad[idx] if tensor.grad is not None else 0.0
                orig = tensor.data[idx]
                tensor.data[idx] = orig + h
                f_plus = loss_value()
                tensor.data[idx] = orig - h
                f_minus = loss_value()
                tensor.data[idx] = orig
                numeric = (f_plus - f_minus) / (2 * h)
                scale = max(abs(numeric), abs(analytic), 1e-6)
                worst = max(worst, abs(numeric - analytic) / scale)
                n_cases += 1
    return CheckResult("end-to-end rollout", n_cases, worst, tolerance)


def run_all(n_seeds: int = 20) -> tuple[list[CheckResult], bool]:
    results = run_op_checks(n_seeds)
    results.append(run_end_to_end_check())
    return results, all(r.passed for r in results)


def format_results(results: list[CheckResult]) -> str:
    lines = [f"{'op':<22} {'cases':>5} {'max rel err':>12} {'tol':>8}  status"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(
            f"{r.name:<22} {r.n_cases:>5} {r.max_rel_err:>12.3e} "
            f"{r.tolerance:>8.0e}  {status}"
        )
    return "\n".join(lines)
