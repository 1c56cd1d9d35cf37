"""Acceptance criteria, one function each.

Every ``criterion_N`` returns ``(passed, detail)``.  Under pytest each becomes
a test and its verdict line is printed in the terminal summary; run this file
directly (``python3 tests/test_acceptance.py``) to get the lines on stdout.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from conftest import PlainBatchNorm  # noqa: E402

from subspec.experiment import (  # noqa: E402
    ExperimentSpec,
    Hyper,
    ModelSpec,
    SmallCNN,
    ablation_sweep,
    activation_profile,
    generate_dataset,
    train_model,
)
from subspec.fusion import banded_conv_forward, fuse, interior_mask, unfused_forward  # noqa: E402
from subspec.gradcheck import check_norm_gradients, random_shape  # noqa: E402
from subspec.norm import (  # noqa: E402
    SsnConfig,
    SsnParams,
    SsnRunningStats,
    ssn_backward,
    ssn_forward_infer,
    ssn_forward_train,
)
from subspec.tensor import Conv2dParams, moments_per_channel_band  # noqa: E402

RESULTS: list[str] = []


def record(number, title, passed, detail, seconds):
    line = f"CRITERION {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail} ({seconds:.1f}s)"
    RESULTS.append(line)
    print(line, flush=True)
    return passed


def criterion_1():
    """Single-band SSN (both affine types) equals plain BN in every mode."""
    rng = np.random.default_rng(1)
    worst = 0.0
    for trial in range(100):
        shape = tuple(int(v) for v in rng.integers(1, [9, 9, 33, 17]))
        if trial == 0:
            shape = (8, 8, 32, 16)
        n, c = shape[:2]
        x = rng.standard_normal(shape) * rng.uniform(0.1, 10) + rng.uniform(-5, 5)
        dy = rng.standard_normal(shape)
        gamma, beta = rng.uniform(0.2, 3, c), rng.standard_normal(c)
        for affine in ("all", "sub"):
            ref = PlainBatchNorm(c)
            ref.gamma, ref.beta = gamma.copy(), beta.copy()
            cfg = SsnConfig(1, affine)
            params = SsnParams(gamma[:, None].copy(), beta[:, None].copy())
            y, cache, stats = ssn_forward_train(x, params, SsnRunningStats.init(c, 1), cfg)
            y_ref = ref.forward_train(x)
            gx, gg, gb = ssn_backward(dy, cache, params, cfg)
            rx, rg, rb = ref.backward(dy)
            x2 = rng.standard_normal(shape)
            yi = ssn_forward_infer(x2, params, stats, cfg)
            diffs = [
                np.abs(y - y_ref).max(),
                np.abs(yi - ref.forward_infer(x2)).max(),
                np.abs(gx - rx).max(),
                np.abs(gg[:, 0] - rg).max(),
                np.abs(gb[:, 0] - rb).max(),
                np.abs(stats.running_mean[:, 0] - ref.running_mean).max(),
                np.abs(stats.running_var[:, 0] - ref.running_var).max(),
            ]
            worst = max(worst, *diffs)
    return worst < 1e-12, f"max abs diff {worst:.2e} over 100 tensors x 2 affine types (limit 1e-12)"


def criterion_2():
    """Training-mode output is standardized per (channel, band)."""
    rng = np.random.default_rng(2)
    worst_mean = worst_var = 0.0
    for s in (1, 2, 4, 8, 16):
        for _ in range(4):
            x = rng.standard_normal((4, 3, 32, 6)) * rng.uniform(0.05, 20) + rng.uniform(-10, 10)
            cfg = SsnConfig(s)
            y, _, _ = ssn_forward_train(x, SsnParams.init(3, s), SsnRunningStats.init(3, s), cfg)
            _, var_in = moments_per_channel_band(x, s)
            w = 32 // s
            for ch in range(3):
                for b in range(s):
                    piece = y[:, ch, b * w:(b + 1) * w, :]
                    m = piece.mean()
                    v = ((piece - m) ** 2).mean()
                    target = var_in[ch, b] / (var_in[ch, b] + cfg.eps)
                    worst_mean = max(worst_mean, abs(m))
                    worst_var = max(worst_var, abs(v - target))
    ok = worst_mean < 1e-10 and worst_var < 1e-6
    return ok, f"max |mean| {worst_mean:.1e} (limit 1e-10), max |var - target| {worst_var:.1e} (limit 1e-6)"


def criterion_3():
    """Analytic gradients match central differences."""
    rng = np.random.default_rng(3)
    cases = [("ssn", SsnConfig(s, a)) for s in (1, 2, 4, 8) for a in ("all", "sub")]
    cases += [("bnsub", SsnConfig(s)) for s in (1, 2, 4, 8)]
    worst, count = 0.0, 0
    for _ in range(5):
        for kind, cfg in cases:
            res = check_norm_gradients(rng, kind, cfg, random_shape(rng, cfg.s), h=1e-5)
            worst = max(worst, res.max_error)
            count += 1
    return count >= 50 and worst < 1e-6, f"max relative error {worst:.2e} over {count} instances (limit 1e-6)"


def criterion_4():
    """Fused banded conv equals affine-then-conv (everywhere for 1x1, interior rows for 3x3)."""
    rng = np.random.default_rng(4)
    worst = {1: 0.0, 3: 0.0}
    for k in (1, 3):
        for _ in range(100):
            s = int(rng.choice([1, 2, 4, 8]))
            affine = str(rng.choice(["all", "sub"]))
            cfg = SsnConfig(s, affine)
            c_in, c_out = (int(v) for v in rng.integers(1, 5, 2))
            f = s * int(rng.integers(3, 6))
            x = rng.standard_normal((2, c_in, f, int(rng.integers(3, 8))))
            params = SsnParams(rng.uniform(0.2, 3, (c_in, cfg.affine_bands)), rng.standard_normal((c_in, cfg.affine_bands)))
            conv = Conv2dParams(rng.standard_normal((c_out, c_in, k, k)), rng.standard_normal(c_out))
            diff = np.abs(banded_conv_forward(x, fuse(params, cfg, conv)) - unfused_forward(x, params, conv))
            mask = interior_mask(x.shape[2:], s, conv.kernel, conv.padding)
            worst[k] = max(worst[k], diff.max(axis=(0, 1))[mask].max())
    ok = worst[1] < 1e-12 and worst[3] < 1e-12
    return ok, f"1x1 max diff {worst[1]:.1e}, 3x3 interior max diff {worst[3]:.1e} (limit 1e-12)"


def criterion_5():
    """SSN(S=4, Sub) parameter overhead over BN in the stand-in model."""
    input_shape = (1, 1, ExperimentSpec().feature_config.n_mels, 8)
    rng = np.random.default_rng(5)
    bn = SmallCNN(ModelSpec(norm="bn"), input_shape, 4, rng)
    ssn = SmallCNN(ModelSpec(norm="ssn", s=4, affine="sub"), input_shape, 4, rng)
    diff = ssn.n_params() - bn.n_params()
    expected = sum(3 * 2 * c for c in ModelSpec().widths)
    share = diff / bn.n_params()
    ok = diff == expected and share < 0.05
    return ok, f"BN {bn.n_params()} params, SSN {ssn.n_params()}; overhead {diff} (expected {expected}) = {share:.2%} (limit 5%)"


def criterion_6():
    """SSN-Sub (S=2, 4) beats BN on the default task; BN-Sub sits between or ties BN."""
    data = generate_dataset(ExperimentSpec())
    rows = ablation_sweep(ModelSpec(), [2, 4], ["sub"], list(range(5)), data, Hyper())
    acc = {r["variant"]: r["mean_accuracy"] for r in rows}
    bn = acc["BN"]
    one_clip = 1.0 / len(data.y_test)
    ssn_wins = all(acc[f"SSN(S={s},Sub)"] > bn for s in (2, 4))
    # BN-Sub(S) is paired with SSN-Sub at the same S; "ties BN" means within one test clip
    between = {
        s: bn <= acc[f"BN-Sub(S={s})"] <= acc[f"SSN(S={s},Sub)"] or abs(acc[f"BN-Sub(S={s})"] - bn) <= one_clip
        for s in (2, 4)
    }
    summary = ", ".join(f"{k} {v:.4f}" for k, v in acc.items())
    checks = f"SSN-Sub > BN: {ssn_wins}; BN-Sub ordered at S=2: {between[2]}, S=4: {between[4]}"
    return ssn_wins and all(between.values()), f"mean test accuracy over 5 seeds: {summary}; {checks}"


def criterion_7():
    """Activation-norm profile: SSN(All) flattens inter-band spread relative to BN."""
    spec = ExperimentSpec()
    data = generate_dataset(spec)
    spreads, profiles = {}, {}
    for name, model_spec in (
        ("BN", ModelSpec(norm="bn")),
        ("SSN-All", ModelSpec(norm="ssn", s=4, affine="all")),
        ("SSN-Sub", ModelSpec(norm="ssn", s=4, affine="sub")),
    ):
        model, _ = train_model(model_spec, data, Hyper(seed=0))
        prof = activation_profile(model, data.x_test, 0, 4)
        spreads[name] = prof.band_spread
        profiles[name] = prof.band_values
    differs = float(np.abs(profiles["SSN-Sub"] - profiles["SSN-All"]).max())
    ok = spreads["SSN-All"] < spreads["BN"] and differs > 1e-3
    detail = ", ".join(f"{k} spread {v:.4f}" for k, v in spreads.items())
    return ok, f"{detail}; max |SSN-Sub - SSN-All| band value {differs:.3f}"


def criterion_8():
    """Large-dataset accuracies are out of scope; the property suite above stands in for them."""
    return True, ("full-dataset scene-classification and keyword-spotting accuracies are not reproduced; "
                  "criteria 1-7 are the substitute")


CRITERIA = [
    (1, "BN equivalence at S=1", criterion_1, 10),
    (2, "per-band standardization", criterion_2, 10),
    (3, "gradient correctness", criterion_3, 60),
    (4, "fusion equivalence", criterion_4, 30),
    (5, "parameter overhead", criterion_5, None),
    (6, "accuracy ordering on synthetic task", criterion_6, 600),
    (7, "activation-norm profile", criterion_7, 300),
    (8, "explicit non-reproduction", criterion_8, None),
]


def run_criterion(number, title, fn, budget):
    t0 = time.perf_counter()
    passed, detail = fn()
    elapsed = time.perf_counter() - t0
    within = budget is None or elapsed < budget
    if not within:
        detail += f"; exceeded {budget}s budget"
    return record(number, title, passed and within, detail, elapsed)


@pytest.mark.parametrize("number,title,fn,budget", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_criterion(number, title, fn, budget):
    assert run_criterion(number, title, fn, budget), RESULTS[-1]


if __name__ == "__main__":
    results = [run_criterion(*c) for c in CRITERIA]
    sys.exit(0 if all(results) else 1)
