"""Built-in verification battery behind the `selfcheck` CLI subcommand.

Gradient checks for every tape op and both networks, exact loss arithmetic,
the analysis/synthesis round trip, and a small metric sanity battery. Each
check reports a measured error; `break_op` deliberately corrupts one op's
backward pass (testing hook) to prove failures surface.
"""
from __future__ import annotations

import contextlib

import numpy as np

from . import autodiff as ad
from . import models, nn, trainer
from .autodiff import Tensor, grad_check
from .datasynth import synth_toy_clean, synth_toy_rirs
from .dsp import StftConfig, Waveform, convolve, istft, stft
from .srmr import srmr


@contextlib.contextmanager
def _corrupted_backward(op_name: str):
    """Scale the named op's backward gradient by 1.05 inside the block."""
    original = getattr(ad, op_name)

    def broken(*args, **kwargs):
        out = original(*args, **kwargs)
        if out._backward_fn is not None:
            inner = out._backward_fn
            out._backward_fn = lambda g: inner(g * 1.05)
        return out

    setattr(ad, op_name, broken)
    try:
        yield
    finally:
        setattr(ad, op_name, original)


def _op_checks(rng):
    def t(shape, positive=False):
        data = rng.standard_normal(shape)
        return Tensor(np.abs(data) + 0.1 if positive else data, requires_grad=True)

    # each entry: name -> (builder producing (fn, tensors))
    def simple(op, *shapes, positive=False, **kwargs):
        tensors = [t(s, positive) for s in shapes]

        def fn():
            return ad.reduce_mean(ad.square(getattr(ad, op)(*tensors, **kwargs)))

        return fn, tensors

    checks = {
        "add": simple("add", (3, 4), (4,)),
        "sub": simple("sub", (3, 4), (3, 4)),
        "mul": simple("mul", (3, 4), (3, 4)),
        "neg": simple("neg", (3, 4)),
        "matmul": simple("matmul", (3, 4), (4, 5)),
        "sigmoid": simple("sigmoid", (4, 4)),
        "tanh": simple("tanh", (4, 4)),
        "leaky_relu": simple("leaky_relu", (4, 4)),
        "square": simple("square", (4, 4)),
        "pow_scalar": simple("pow_scalar", (4, 4), positive=True, exponent=0.3),
        "log1p": simple("log1p", (4, 4), positive=True),
        "clamp_min": simple("clamp_min", (4, 4), floor=0.05),
        "reduce_sum": simple("reduce_sum", (5,)),
        "reduce_mean": simple("reduce_mean", (5,)),
        "reshape": simple("reshape", (3, 4), shape=(4, 3)),
        "conv2d": simple("conv2d", (2, 8, 9), (3, 2, 5, 5)),
        "global_avg_pool2d": simple("global_avg_pool2d", (3, 6, 7)),
    }
    a, b = t((3, 4)), t((2, 4))

    def concat_fn():
        return ad.reduce_mean(ad.square(ad.concat([a, b], axis=0)))

    checks["concat"] = (concat_fn, [a, b])
    c = t((4, 5))

    def slice_fn():
        return ad.reduce_mean(ad.square(ad.slice_(c, (slice(1, 3), slice(0, 4)))))

    checks["slice"] = (slice_fn, [c])
    return checks


def run_selfcheck(break_op: str | None = None, progress=None) -> list[dict]:
    """Run the battery; returns [{name, passed, measured}] records."""
    results = []

    def record(name, passed, measured):
        results.append({"name": name, "passed": bool(passed), "measured": measured})
        if progress:
            progress(results[-1])

    rng = np.random.default_rng(20240601)
    ctx = _corrupted_backward(break_op) if break_op else contextlib.nullcontext()
    with ctx:
        for name, (fn, tensors) in _op_checks(rng).items():
            err = grad_check(fn, tensors)
            record(f"grad/{name}", err < 1e-4, f"max rel err {err:.2e}")

        gspec = models.GeneratorSpec(blstm_layers=2, blstm_width=4, dense_width=6, output_bins=10)
        gp = models.init_generator(gspec, rng)
        feats = Tensor(np.abs(rng.standard_normal((8, 10))))
        err = grad_check(lambda: ad.reduce_mean(models.generator_forward(gp, gspec, feats)),
                         list(gp.values()))
        record("grad/generator", err < 1e-4, f"max rel err {err:.2e}")

        dspec = models.DiscriminatorSpec(conv_layers=4, filters=3, dense_widths=(5, 3))
        dp = models.init_discriminator(dspec, rng)
        mag = Tensor(np.abs(rng.standard_normal((20, 22))))
        err = grad_check(lambda: models.discriminator_forward(dp, dspec, mag),
                         list(dp.values()))
        record("grad/discriminator", err < 1e-4, f"max rel err {err:.2e}")

    # loss arithmetic
    err = abs(trainer.discriminator_loss(Tensor(0.5), 0.8, Tensor(0.3), 0.2).item() - 0.10)
    record("loss/critic-arithmetic", err < 1e-12, f"abs err {err:.2e}")
    err = abs(trainer.generator_loss(Tensor(0.5), 1.0, Tensor(0.2), 0.6).item() - 0.37)
    record("loss/masker-arithmetic", err < 1e-12, f"abs err {err:.2e}")
    err = abs(trainer.discriminator_loss(Tensor(0.7), 0.7, Tensor(0.4), 0.4).item())
    record("loss/perfect-surrogate-zero", err < 1e-12, f"abs err {err:.2e}")

    # analysis/synthesis round trip on the fully overlapped interior
    wave_rng = np.random.default_rng(7)
    cfg = StftConfig()
    w = Waveform(wave_rng.standard_normal(16000) * 0.1)
    back = istft(stft(w, cfg))
    n = cfg.fft_size
    ref = w.samples[n:len(back) - n]
    got = back.samples[n:len(back) - n]
    rel = np.linalg.norm(ref - got) / np.linalg.norm(ref)
    record("dsp/stft-round-trip", rel < 1e-6, f"rel L2 {rel:.2e}")

    # metric sanity: scale invariance, AM ordering, reverberation direction
    toys = synth_toy_clean(4, seed=101, duration_range=(1.6, 2.0))
    rirs = synth_toy_rirs(4, seed=101)
    base = srmr(toys[0][0])
    dev = max(abs(srmr(Waveform(toys[0][0].samples * c)) - base) / base for c in (0.1, 0.5, 2.0))
    record("srmr/scale-invariance", dev < 1e-6, f"max rel dev {dev:.2e}")

    sr = 16000
    t = np.arange(2 * sr) / sr
    carrier = np.sin(2 * np.pi * 1000 * t) * 0.1
    slow = srmr(Waveform((1 + 0.9 * np.sin(2 * np.pi * 4 * t)) * carrier))
    fast = srmr(Waveform((1 + 0.9 * np.sin(2 * np.pi * 100 * t)) * carrier))
    record("srmr/am-ordering", slow > fast, f"4 Hz {slow:.2f} vs 100 Hz {fast:.2f}")

    wins = sum(srmr(c) > srmr(convolve(c, r)) for (c, _), (r, _) in zip(toys, rirs))
    record("srmr/reverb-direction", wins >= 3, f"{wins}/4 clean above reverberant")
    return results
