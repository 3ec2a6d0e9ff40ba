"""Acceptance suite. Each test carries a ``criterion`` marker and the run ends
with one PASS/FAIL line per criterion.

    pytest tests/test_acceptance.py
"""
import csv
import json
import time
from dataclasses import replace

import numpy as np
import pytest

import oracles
from streambank.attention import attention_heatmap, extended_attention, self_attention
from streambank.bank import FeatureBank, FrameFeatures, dyme_merge, partition
from streambank.cli import main
from streambank.fusion import FusionConfig, fuse, fusion_mask
from streambank.metrics import warp_error
from streambank.stream_batch import run_pipeline, sequential_denoise
from streambank.synthetic_stream import StreamSpec, blob_field, generate_stream, token_index
from streambank.tensor_core import Rng, cosine_sim_matrix, empty, matmul, row_softmax
from streambank.toy_denoiser import (
    BankConfig, PipelineConfig, denoise_step, initial_latent, make_blocks, run_stream,
)

criterion = pytest.mark.criterion


def instances(count, seed):
    data = np.random.default_rng(seed)
    for _ in range(count):
        n, m, d = (int(x) for x in data.integers(1, (9, 9, 5)))
        yield data, n, m, d


def rand(data, *shape):
    return data.standard_normal(shape).astype(np.float32)


def max_err(got, want):
    return float(np.max(np.abs(np.asarray(got, np.float64) - np.asarray(want, np.float64))))


@criterion(1, "kernels match scalar-loop oracles (200 instances, 1e-6, <10 s)")
def test_kernel_oracles():
    t0 = time.perf_counter()
    worst = {}
    for data, n, m, d in instances(200, seed=2024):
        a, b = rand(data, n, d), rand(data, d, m)
        logits = rand(data, n, m) * 3
        q, k, v = rand(data, n, d), rand(data, n, d), rand(data, n, d)
        k_fb, v_fb = rand(data, m, d), rand(data, m, d)
        o, o_fb = rand(data, n, d), rand(data, m, d)
        # duplicate a bank row into the current frame so the gate sees cos = 1
        o[0] = o_fb[0]
        alpha, thr = float(data.uniform()), float(data.uniform())
        errs = {
            "matmul": max_err(matmul(a, b), oracles.matmul(a, b)),
            "row_softmax": max_err(row_softmax(logits, 0.5),
                                   [oracles.softmax_row(r, 0.5) for r in logits]),
            "cosine_sim_matrix": max_err(cosine_sim_matrix(o, o_fb),
                                         [[oracles.cosine(x, y) for y in o_fb] for x in o]),
            "extended_attention": max_err(extended_attention(q, k, v, k_fb, v_fb),
                                          oracles.extended_attention(q, k, v, k_fb, v_fb)),
            "fuse": max_err(fuse(o, o_fb, FusionConfig(alpha=alpha, threshold=thr)),
                            oracles.fuse(o, o_fb, alpha, thr)),
        }
        for name, e in errs.items():
            worst[name] = max(worst.get(name, 0.0), e)
    elapsed = time.perf_counter() - t0
    print(f"worst abs error {worst}, {elapsed:.2f} s")
    assert all(e <= 1e-6 for e in worst.values()), worst
    assert elapsed < 10.0


@criterion(2, "empty-bank extended attention equals self-attention (100 instances, 1e-7)")
def test_empty_bank_degenerates():
    worst = 0.0
    for data, n, _, d in instances(100, seed=7):
        q, k, v = rand(data, n, d), rand(data, n, d), rand(data, n, d)
        got = extended_attention(q, k, v, empty(d), empty(d))
        worst = max(worst, max_err(got, self_attention(q, k, v)))
        assert max_err(extended_attention(q, k, v), got) == 0.0
    print(f"worst abs error {worst:.3e}")
    assert worst <= 1e-7


@criterion(3, "pipelined emission equals sequential denoising (S in 1,2,4; 1e-6)")
@pytest.mark.parametrize("steps", [1, 2, 4])
def test_pipeline_equivalence(steps):
    spec = StreamSpec(seed=11, height=16, width=16, patch=4, dim=8, frames=10,
                      motion=[4, 0], blobs=2, noise_sigma=0.1)
    frames = generate_stream(spec)
    cfg = PipelineConfig(steps=steps, bank=BankConfig(arm="none"))
    result = run_stream(frames, cfg)
    assert [t for t, _ in result.outputs] == list(range(10))
    blocks = make_blocks(cfg, spec.dim)

    def denoiser(z, s, f):
        return denoise_step(z, s, blocks, None, cfg)

    worst = 0.0
    for t, out in result.outputs:
        ref = sequential_denoise(initial_latent(frames[t].tokens, t, cfg), steps, denoiser)
        worst = max(worst, max_err(out, ref))

    # generic pipeline with a frame-dependent nonlinear denoiser
    latents = [f.tokens for f in frames]

    def toy(z, s, f):
        return np.tanh(z * (1.0 + 0.1 * s)) + 0.01 * f

    emitted = [e for e in run_pipeline(latents, steps, toy) if e.real]
    assert [e.frame for e in emitted] == list(range(10))
    for e in emitted:
        worst = max(worst, max_err(e.latent, sequential_denoise(latents[e.frame], steps, toy, e.frame)))
    print(f"S={steps}: worst abs error {worst:.3e}")
    assert worst <= 1e-6


class TestDyMeInvariants:
    @criterion(4, "DyMe: constant rows, copy idempotence, bit-exact pseudo-code")
    def test_rows_constant_over_200_frames(self):
        spec = StreamSpec(seed=5, height=16, width=16, patch=4, dim=8, frames=200,
                          motion=[4, -4], blobs=2, noise_sigma=0.1)
        cfg = PipelineConfig(blocks=2, steps=2, bank=BankConfig(arm="dyme:1", interval=1))
        result = run_stream(generate_stream(spec), cfg)
        rows = [t["bank_rows"] for t in result.ticks]
        assert result.bank.updates == 200
        assert set(rows[1:]) == {spec.tokens}

    @criterion(4, "DyMe: constant rows, copy idempotence, bit-exact pseudo-code")
    # uniform_grid puts every row's duplicate on the src side, so it is excluded
    @pytest.mark.parametrize("strategy", ["random", "split"])
    def test_copy_update_is_bit_identical(self, strategy):
        data = np.random.default_rng(41)
        bank = FeatureBank(4, "dyme", interval=1, strategy=strategy, seed=3)
        for t in range(3):
            f = FrameFeatures(t)
            for s in (1, 2):
                f.add(s, 0, rand(data, 12, 4), rand(data, 12, 4), rand(data, 12, 4))
            bank.dyme_update(f)
        before = {key: [m.copy() for m in bank.fetch(*key)] for key in ((1, 0), (2, 0))}
        copy = FrameFeatures(3)
        for (s, l), mats in before.items():
            copy.add(s, l, *mats)
        bank.dyme_update(copy)
        for key, mats in before.items():
            for got, want in zip(bank.fetch(*key), mats):
                assert got.tobytes() == want.tobytes()

    @criterion(4, "DyMe: constant rows, copy idempotence, bit-exact pseudo-code")
    def test_merge_matches_pseudo_code(self):
        data = np.random.default_rng(99)
        for _ in range(100):
            n, d = int(data.integers(1, 9)), int(data.integers(1, 5))
            cur, sto = rand(data, n, d), rand(data, n, d)
            perm = data.permutation(2 * n)
            got, match = dyme_merge(cur, sto, perm[:n], perm[n:])
            ref, ref_match = oracles.dynamic_merge(cur, sto, list(perm))
            assert list(match) == ref_match
            assert got.tobytes() == ref.tobytes()

    @criterion(4, "DyMe: constant rows, copy idempotence, bit-exact pseudo-code")
    @pytest.mark.parametrize("strategy", ["random", "uniform_grid", "split"])
    def test_bank_update_replays_pseudo_code(self, strategy):
        data = np.random.default_rng(3)
        for trial in range(10):
            n, d = int(data.integers(1, 9)), int(data.integers(1, 5))
            stored, current = rand(data, n, d), rand(data, n, d)
            bank = FeatureBank(d, "dyme", strategy=strategy, seed=trial)
            boot = FrameFeatures(0)
            boot.add(1, 0, stored, stored, stored)
            bank.dyme_update(boot)
            step = FrameFeatures(1)
            step.add(1, 0, current, current, current)
            src, dst = partition(n, strategy, Rng(trial))
            bank.dyme_update(step)
            ref, _ = oracles.dynamic_merge(current, stored, list(src) + list(dst))
            assert bank.fetch(1, 0)[0].tobytes() == ref.tobytes()


@criterion(5, "fusion gate exactness")
def test_fusion_gate_exactness():
    data = np.random.default_rng(55)
    masked = 0
    for _, n, m, d in instances(300, seed=56):
        o, o_fb = rand(data, n, d), rand(data, m, d)
        o[: min(n, m)] = o_fb[: min(n, m)]
        for cfg in (FusionConfig(alpha=0.6, threshold=1.0), FusionConfig(alpha=0.0, threshold=0.0)):
            assert fuse(o, o_fb, cfg).tobytes() == o.tobytes()
        cfg = FusionConfig(alpha=0.75, threshold=0.9)
        out = fuse(o, o_fb, cfg)
        mask = fusion_mask(o, o_fb, cfg)
        keep = ~mask.fused
        masked += int(keep.sum())
        assert out[keep].tobytes() == o[keep].tobytes()
        assert np.all(mask.similarity[mask.fused] > 0.9)
    assert masked > 0


def suite_arm(frames, spec, base, arm, ea, ff):
    fusion = replace(base.fusion, alpha=base.fusion.alpha if ff else 0.0)
    cfg = replace(base, bank=BankConfig(arm=arm), ea_enabled=ea, fusion=fusion)
    result = run_stream(frames, cfg)
    err = warp_error([o for _, o in result.outputs], [f.displacement for f in frames],
                     spec.grid_shape, spec.patch)
    return err, result.attn_logits_per_block


@pytest.fixture(scope="module")
def suite():
    """Ten constant-content streams; arms: no bank, EA only, EA+FF."""
    t0 = time.perf_counter()
    errs, logits = [], {}
    for seed in range(10):
        spec = StreamSpec(seed=seed, motion=[0, 0], noise_sigma=0.1)
        frames = generate_stream(spec)
        base = PipelineConfig(model_seed=seed, noise_seed=seed + 100)
        row = []
        for arm, ea, ff in (("none", False, False), ("dyme:1", True, False), ("dyme:1", True, True)):
            err, cost = suite_arm(frames, spec, base, arm, ea, ff)
            row.append(err)
        errs.append(row)
        if seed == 0:
            for arm in ("dyme:1", "queue:2"):
                logits[arm] = suite_arm(frames, spec, base, arm, True, True)[1]
            logits["n"] = spec.tokens
    return np.array(errs), logits, time.perf_counter() - t0


@criterion(6, "no bank > dyme:1 EA+FF on >=9/10 seeds, >=20% reduction, logits, <60 s")
def test_bank_reduces_warp_error(suite):
    errs, logits, elapsed = suite
    base, full = errs[:, 0], errs[:, 2]
    wins = int(np.sum(base > full))
    reduction = 1.0 - full.mean() / base.mean()
    n = logits["n"]
    print(f"wins {wins}/10, mean {base.mean():.2f} -> {full.mean():.2f} "
          f"({reduction:.1%}), logits dyme:1 {logits['dyme:1']} queue:2 {logits['queue:2']}, "
          f"{elapsed:.1f} s")
    assert wins >= 9
    assert reduction >= 0.20
    assert logits["dyme:1"] == n * 2 * n
    assert logits["queue:2"] == n * 3 * n
    assert logits["dyme:1"] < logits["queue:2"]
    assert elapsed < 60.0


@criterion(7, "baseline > EA-only > EA+FF, each on >=8/10 seeds")
def test_ablation_direction(suite):
    errs, _, _ = suite
    base, ea, full = errs.T
    print(f"means base {base.mean():.2f}, EA {ea.mean():.2f}, EA+FF {full.mean():.2f}; "
          f"base>EA {int(np.sum(base > ea))}/10, EA>EA+FF {int(np.sum(ea > full))}/10")
    assert base.mean() > ea.mean() > full.mean()
    assert np.sum(base > ea) >= 8
    assert np.sum(ea > full) >= 8


@criterion(8, "heatmap argmax follows ground-truth motion on >=90% of frames")
@pytest.mark.parametrize("motion", [[4, 0], [0, -4], [4, 4], [-8, 4]])
def test_heatmap_correspondence(motion):
    spec = StreamSpec(seed=0, blobs=1, noise_sigma=0.0, motion=motion, frames=20)
    frames = generate_stream(spec)
    cfg = PipelineConfig(sigma_init=0.0)
    step, layer = cfg.steps, 0
    traces = {}

    def record(t, s, l, trace):
        if s == step and l == layer and 0 <= t < spec.frames:
            traces[t] = trace

    run_stream(frames, cfg, record=record)
    _, centres = blob_field(spec)
    cy, cx = centres[0]
    hits = []
    for t in range(1, spec.frames):
        ox, oy = frames[t].offset
        px, py = frames[t - 1].offset
        query = token_index(spec, cy + oy, cx + ox)
        scores = attention_heatmap(traces[t].q[query], traces[t - 1].k)
        hits.append(int(np.argmax(scores)) == token_index(spec, cy + py, cx + px))
    rate = float(np.mean(hits))
    print(f"motion {motion}: {rate:.0%} of frames")
    assert rate >= 0.9


STREAM = {"seed": 1, "height": 16, "width": 16, "patch": 4, "dim": 8, "frames": 8,
          "motion": [4, 0], "blobs": 2, "noise_sigma": 0.1}


@criterion(9, "run twice gives byte-identical report.json")
def test_run_is_deterministic(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"stream": STREAM}))
    for name in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a" / "report.json").read_bytes()
    assert a == (tmp_path / "b" / "report.json").read_bytes()
    assert json.loads(a)["arm"] == "dyme:1"


EXPECTED_ARMS = {
    "bank": ("bank", ["none", "queue", "queue", "queue", "dyme"], ["0", "1", "2", "4", "1"]),
    "threshold": ("threshold", ["0.0", "0.8", "0.9", "1.0"], None),
    "interval": ("interval", ["1", "2", "4", "8", "16"], None),
    "strategy": ("strategy", ["random", "uniform_grid", "split"], None),
    "alpha": ("alpha", ["0.0", "0.25", "0.5", "0.75", "1.0"], None),
}


@criterion(10, "sweep emits exactly the ablation arm sets")
@pytest.mark.parametrize("axis", sorted(EXPECTED_ARMS))
def test_sweep_grids(tmp_path, axis):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"stream": dict(STREAM, frames=5)}))
    assert main(["sweep", "--axis", axis, "--config", str(cfg), "--out", str(tmp_path)]) == 0
    with open(tmp_path / f"sweep_{axis}.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    column, values, sizes = EXPECTED_ARMS[axis]
    assert [r[column] for r in rows] == values
    if sizes is not None:
        assert [r["size"] for r in rows] == sizes
    assert len({r["arm"] for r in rows}) == len(rows)
