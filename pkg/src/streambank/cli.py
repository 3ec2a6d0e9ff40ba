"""Benchmark harness: single runs, ablation sweeps and artifact dumps.

    streambank run   --config exp.json --out results/
    streambank sweep --axis bank --config exp.json --out results/
    streambank dump  --kind heatmap --config exp.json --frame 5 --layer 0 --step 4 --out results/

Exit codes: 0 success, 1 runtime error, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .fusion import FusionConfig, fusion_mask, write_mask_csv
from .attention import write_heatmap_csv
from .metrics import build_report, pca3, write_csv
from .synthetic_stream import StreamSpec, generate_stream
from .tensor_core import save_matrix
from .toy_denoiser import BankConfig, PipelineConfig, run_stream

SWEEPS = {
    "bank": ["none", "queue:1", "queue:2", "queue:4", "dyme:1"],
    "threshold": [0.0, 0.8, 0.9, 1.0],
    "interval": [1, 2, 4, 8, 16],
    "strategy": ["random", "uniform_grid", "split"],
    "alpha": [0.0, 0.25, 0.5, 0.75, 1.0],
}
DUMP_KINDS = ("heatmap", "pca", "fusemask")

_TOP_KEYS = {"stream", "pipeline", "bank", "fusion", "ea", "out"}
_PIPELINE_KEYS = {"blocks", "hidden", "steps", "eta", "sigma_init", "model_seed", "noise_seed",
                  "qk_gain", "v_gain", "qk_tie"}
_BANK_KEYS = {"arm", "interval", "strategy", "seed", "share_across_steps"}
_FUSION_KEYS = {"alpha", "threshold", "blocks", "match_metric"}


@dataclass
class ExperimentConfig:
    stream: StreamSpec
    pipeline: PipelineConfig
    out: str | None = None
    echo: dict = field(default_factory=dict)

    def with_pipeline(self, **changes) -> "ExperimentConfig":
        return replace(self, pipeline=replace(self.pipeline, **changes))


def _section(data, name, allowed) -> dict:
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"'{name}' must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    return sec


def parse_config(data: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    """Validate a config mapping. Nothing is computed before this succeeds."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "stream" not in data:
        raise ConfigError("config needs a 'stream' entry (path or object)")
    stream = data["stream"]
    if isinstance(stream, str):
        spec = StreamSpec.load(base_dir / stream)
    else:
        spec = StreamSpec.from_dict(stream)

    pipe = _section(data, "pipeline", _PIPELINE_KEYS)
    bank = _section(data, "bank", _BANK_KEYS)
    fus = _section(data, "fusion", _FUSION_KEYS)
    ea = data.get("ea", True)
    if not isinstance(ea, bool):
        raise ConfigError("'ea' must be true or false")
    try:
        fusion = FusionConfig(
            alpha=float(fus.get("alpha", 0.75)),
            threshold=float(fus.get("threshold", 0.9)),
            active_blocks=frozenset(fus.get("blocks", [1, 2])),
            match_metric=fus.get("match_metric", "cosine"),
        )
        pipeline = PipelineConfig(**pipe, ea_enabled=ea, bank=BankConfig(**bank), fusion=fusion)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if any(b < 0 or b >= pipeline.blocks for b in fusion.active_blocks):
        raise ConfigError(f"fusion blocks {sorted(fusion.active_blocks)} outside 0..{pipeline.blocks - 1}")
    out = data.get("out")
    return ExperimentConfig(spec, pipeline, out, echo=_echo(spec, pipeline))


def _echo(spec: StreamSpec, pipeline: PipelineConfig) -> dict:
    p = asdict(pipeline)
    p["fusion"]["active_blocks"] = sorted(pipeline.fusion.active_blocks)
    return {"stream": spec.to_json(), "pipeline": p}


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data, path.parent)


def arm_row(name: str, exp: ExperimentConfig, report, wall_ms: float) -> dict:
    p = exp.pipeline
    policy, _, size = p.bank.arm.partition(":")
    return {
        "arm": name,
        "bank": policy,
        "size": int(size) if size else 0,
        "alpha": p.fusion.alpha,
        "threshold": p.fusion.threshold,
        "interval": p.bank.interval,
        "strategy": p.bank.strategy,
        "warp_error": report.warp_error,
        "consec_mse": report.consec_mse,
        "attn_logits": report.cost["attn_logits"],
        "bank_rows": report.cost["bank_rows"],
        "wall_ms": round(wall_ms, 3),
    }


def run_experiment(exp: ExperimentConfig, arm: str | None = None, frames=None, record=None):
    """Run one arm. Returns ``(report, result, wall_ms)``."""
    frames = generate_stream(exp.stream) if frames is None else frames
    t0 = time.perf_counter()
    result = run_stream(frames, exp.pipeline, record=record)
    wall_ms = (time.perf_counter() - t0) * 1000.0
    outputs = [o for _, o in result.outputs]
    cost = {
        "attn_logits": result.attn_logits_per_block,
        "attn_logits_total": result.attn_logits_total,
        "bank_rows": result.bank.max_rows(),
        "bank_floats": result.bank.stored_floats(),
        "bank_updates": result.bank.updates,
    }
    report = build_report(arm or exp.pipeline.bank.arm, outputs, [f.displacement for f in frames],
                          exp.stream.grid_shape, exp.stream.patch, cost, exp.echo)
    return report, result, wall_ms


def _out_dir(exp: ExperimentConfig, out) -> Path:
    out = out or exp.out
    if not out:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_run(config, out=None, overrides=None) -> int:
    exp = _load(config, overrides)
    out = _out_dir(exp, out)
    report, result, wall_ms = run_experiment(exp)
    report.write_json(out / "report.json")
    write_csv(out / "report.csv", [arm_row(report.arm, exp, report, wall_ms)])
    with (out / "frames.jsonl").open("w") as fh:
        for stats in result.ticks:
            fh.write(json.dumps(stats, sort_keys=True) + "\n")
    outputs = out / "outputs"
    outputs.mkdir(exist_ok=True)
    for t, latent in result.outputs:
        save_matrix(outputs / f"frame_{t:04d}.sbnk", latent)
    result.bank.export(out / "bank")
    return 0


def sweep_arms(axis: str, exp: ExperimentConfig):
    """Yield ``(arm name, config)`` for every value on ``axis``; seeds are shared."""
    if axis not in SWEEPS:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEPS)}")
    p = exp.pipeline
    for value in SWEEPS[axis]:
        if axis == "bank":
            pipe = replace(p, bank=replace(p.bank, arm=value))
        elif axis == "interval":
            pipe = replace(p, bank=replace(p.bank, interval=value))
        elif axis == "strategy":
            pipe = replace(p, bank=replace(p.bank, strategy=value))
        else:
            pipe = replace(p, fusion=replace(p.fusion, **{axis: value}))
        arm_exp = replace(exp, pipeline=pipe, echo=_echo(exp.stream, pipe))
        yield f"{axis}={value}", arm_exp


def cmd_sweep(axis, config, out=None, overrides=None) -> int:
    exp = _load(config, overrides)
    arms = list(sweep_arms(axis, exp))
    out = _out_dir(exp, out)
    frames = generate_stream(exp.stream)
    rows = []
    for name, arm_exp in arms:
        report, _, wall_ms = run_experiment(arm_exp, name, frames)
        rows.append(arm_row(name, arm_exp, report, wall_ms))
    write_csv(out / f"sweep_{axis}.csv", rows)
    return 0


def cmd_dump(kind, config, frame, layer, step, out=None, overrides=None) -> int:
    exp = _load(config, overrides)
    if kind not in DUMP_KINDS:
        raise ConfigError(f"unknown dump kind {kind!r}; choose from {DUMP_KINDS}")
    p = exp.pipeline
    if not 0 <= frame < exp.stream.frames:
        raise ConfigError(f"frame {frame} outside 0..{exp.stream.frames - 1}")
    if not 0 <= layer < p.blocks:
        raise ConfigError(f"layer {layer} outside 0..{p.blocks - 1}")
    if not 1 <= step <= p.steps:
        raise ConfigError(f"step {step} outside 1..{p.steps}")
    if kind == "heatmap" and frame < 1:
        raise ConfigError("heatmap needs a previous frame; use --frame >= 1")
    out = _out_dir(exp, out)

    traces = {}

    def record(t, s, l, tr):
        if s != step or l != layer or not 0 <= t < exp.stream.frames:
            return
        if kind == "pca" or t in (frame, frame - 1):
            traces[t] = tr

    run_experiment(exp, record=record)
    if kind == "heatmap":
        write_heatmap_csv(out / "heatmap.csv", traces[frame].q, traces[frame - 1].k)
    elif kind == "fusemask":
        tr = traces[frame]
        write_mask_csv(out / "fusemask.csv", fusion_mask(tr.pre_fusion, tr.o_fb, p.fusion))
    else:
        ts = sorted(traces)
        feats = np.concatenate([traces[t].o for t in ts])
        res = pca3(feats)
        n = traces[ts[0]].o.shape[0]
        with (out / "pca.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "token", "pc1", "pc2", "pc3"])
            for i, row in enumerate(res.projection):
                w.writerow([ts[i // n], i % n, *(repr(float(x)) for x in row)])
        meta = {"eigenvalues": res.eigenvalues.tolist(), "rank_deficient": res.rank_deficient}
        (out / "pca_meta.json").write_text(json.dumps(meta, indent=2))
    return 0


def _load(config, overrides) -> ExperimentConfig:
    exp = config if isinstance(config, ExperimentConfig) else load_config(config)
    if overrides:
        p = exp.pipeline
        if "share_across_steps" in overrides:
            p = replace(p, bank=replace(p.bank, share_across_steps=overrides["share_across_steps"]))
        if "match_metric" in overrides:
            p = replace(p, fusion=replace(p.fusion, match_metric=overrides["match_metric"]))
        exp = replace(exp, pipeline=p, echo=_echo(exp.stream, p))
    return exp


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streambank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment JSON")
        p.add_argument("--out", help="output directory")
        p.add_argument("--share-across-steps", action="store_true",
                       help="one bank entry per layer instead of per (step, layer)")
        p.add_argument("--match-metric", choices=("cosine", "dot"),
                       help="fusion argmax metric (gate is always cosine)")

    common(sub.add_parser("run", help="run one experiment and write a report"))
    p = sub.add_parser("sweep", help="run one ablation axis")
    common(p)
    p.add_argument("--axis", required=True, help="|".join(SWEEPS))
    p = sub.add_parser("dump", help="export heatmap, PCA or fusion-mask CSVs")
    common(p)
    p.add_argument("--kind", required=True, help="|".join(DUMP_KINDS))
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--step", type=int, required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.share_across_steps:
        overrides["share_across_steps"] = True
    if args.match_metric:
        overrides["match_metric"] = args.match_metric
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, overrides)
        if args.command == "sweep":
            return cmd_sweep(args.axis, args.config, args.out, overrides)
        return cmd_dump(args.kind, args.config, args.frame, args.layer, args.step, args.out, overrides)
    except ConfigError as exc:
        print(f"streambank: config error: {exc}", file=sys.stderr)
        return 2
    except (ShapeError, ValueError, ArithmeticError) as exc:
        print(f"streambank: runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
