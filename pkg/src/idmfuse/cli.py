"""Command-line entry points: synth, degrade, train, fuse, eval, bench, preview.

Every command writes ``manifest.json`` into its output directory.  Seeds:
``synth`` uses ``--seed`` as the scene seed; every other consumer gets
``derive_seed(seed, stream)``, the first word of
``SeedSequence(seed, spawn_key=(stream, *cell))``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dae import TrainConfig, load_model, save_model
from .errors import IdmError, InvariantError
from .fusion import METHODS, FusionConfig, fuse_with_artifacts, train_networks
from .metrics import MetricConfig, MetricReport, d_lambda, d_s, q4, reports_to_csv, sam
from .raster import export_preview, has_truth, load_scene, load_truth, save_scene
from .sampling import degrade_pan, degrade_scene
from .synth import SynthConfig, generate, make_observed, metadata_for

log = logging.getLogger("idmfuse")

TRAIN_STREAM = 1
BENCH_COLUMNS = ("scene", "method", "SAM", "Q4", "D_s", "D_lambda", "QNR")


def derive_seed(root: int, stream: int, *cell: int) -> int:
    ss = np.random.SeedSequence(root, spawn_key=(stream, *cell))
    return int(ss.generate_state(1)[0])


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, argv, config: dict, seed, inputs, started: float):
    out = Path(out)
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "config": config,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": str(out),
        "duration_s": round(time.perf_counter() - started, 3),
        "checksums": {str(p.relative_to(out)): _sha256(p) for p in files},
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - {"fusion", "train", "metrics", "synth"}
    if unknown:
        raise InvariantError(f"config {path}: unknown sections {sorted(unknown)}")
    return cfg


def _fusion_config(args, file_cfg: dict) -> FusionConfig:
    fusion = dict(file_cfg.get("fusion", {}))
    train = {**asdict(TrainConfig()), **fusion.pop("train", {}), **file_cfg.get("train", {})}
    if getattr(args, "method", None):
        fusion["method"] = args.method
    for key in ("patch_size", "stride", "ridge"):
        if getattr(args, key, None) is not None:
            fusion[key] = getattr(args, key)
    if getattr(args, "epochs", None) is not None:
        train["epochs"] = args.epochs
    if getattr(args, "seed", None) is not None:
        train["seed"] = derive_seed(args.seed, TRAIN_STREAM)
    return FusionConfig(**fusion, train=TrainConfig(**train))


def _metric_config(file_cfg: dict) -> MetricConfig:
    return MetricConfig(**file_cfg.get("metrics", {}))


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def _check_scene_written(path: Path):
    load_scene(path)


def cmd_synth(args, argv) -> int:
    t0 = time.perf_counter()
    file_cfg = _load_config(args.config)
    synth = {**file_cfg.get("synth", {})}
    for key in ("size", "ratio", "bands", "cross_amount", "texture_octaves"):
        if getattr(args, key) is not None:
            synth[key] = getattr(args, key)
    synth["seed"] = args.seed
    cfg = SynthConfig(**synth)
    hr, pan = generate(cfg)
    meta = metadata_for(cfg)
    pan_obs, ms_obs = make_observed(hr, pan, meta)
    out = Path(args.out)
    save_scene(pan_obs, ms_obs, meta, out, truth=hr)
    _check_scene_written(out)
    write_manifest(out, "synth", argv, asdict(cfg), args.seed, [], t0)
    print(f"synth: PAN {pan_obs.shape[1]}x{pan_obs.shape[0]}, MS {cfg.bands}x"
          f"{ms_obs.shape[2]}x{ms_obs.shape[1]} -> {out}")
    return 0


def cmd_degrade(args, argv) -> int:
    t0 = time.perf_counter()
    pan, ms, meta = load_scene(args.scene)
    pan_lr, ms_lr = degrade_scene(pan, ms, meta)
    out = Path(args.out)
    save_scene(pan_lr, ms_lr, meta, out, truth=ms)
    _check_scene_written(out)
    write_manifest(out, "degrade", argv, asdict(meta), None, [args.scene], t0)
    print(f"degrade: PAN {pan_lr.shape[1]}x{pan_lr.shape[0]}, MS {ms_lr.shape[0]}x"
          f"{ms_lr.shape[2]}x{ms_lr.shape[1]} -> {out}")
    return 0


def cmd_train(args, argv) -> int:
    t0 = time.perf_counter()
    cfg = _fusion_config(args, _load_config(args.config))
    pan, ms, meta = load_scene(args.scene)
    models, history = train_networks(pan, ms, meta, cfg)
    out = Path(args.out)
    unique = list({id(m): m for m in models}.values())
    if len(unique) == 1:
        save_model(unique[0], out)
    else:
        for k, m in enumerate(models):
            save_model(m, out / f"band{k}")
    with open(out / "loss.json", "w", encoding="utf-8") as fh:
        json.dump({"loss_history": history}, fh)
    write_manifest(out, "train", argv, cfg.to_dict(), args.seed, [args.scene], t0)
    print(f"train: {len(history)} epochs, final loss {_fmt(history[-1])} -> {out}")
    return 0


def _load_models(path):
    path = Path(path)
    if (path / "dae.json").is_file():
        return [load_model(path)]
    bands = sorted(path.glob("band*"), key=lambda p: int(p.name[4:]))
    if not bands:
        raise InvariantError(f"no model found under {path}")
    return [load_model(b) for b in bands]


def _run_fusion(scene, cfg: FusionConfig, models=None):
    pan, ms, meta = load_scene(scene)
    log.debug("fusing %s with %s", scene, cfg.to_dict())
    fused, diag = fuse_with_artifacts(pan, ms, meta, cfg, models)
    return pan, ms, meta, fused, diag


def cmd_fuse(args, argv) -> int:
    t0 = time.perf_counter()
    cfg = _fusion_config(args, _load_config(args.config))
    models = _load_models(args.model) if args.model else None
    pan, _, meta, fused, diag = _run_fusion(args.scene, cfg, models)
    out = Path(args.out)
    save_scene(pan, fused, meta.with_ratio(1), out)
    _check_scene_written(out)
    with open(out / "diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump(diag.to_dict(), fh, indent=2)
    if diag.weights is not None:
        with open(out / "weights.json", "w", encoding="utf-8") as fh:
            fh.write(diag.weights.to_json(diag.spec))
    if args.preview:
        export_preview(fused, args.bands, out / args.preview)
    inputs = [args.scene] + ([args.model] if args.model else [])
    write_manifest(out, "fuse", argv, cfg.to_dict(), args.seed, inputs, t0)
    gains = " ".join(_fmt(g) for g in diag.gains) or "-"
    print(f"fuse[{cfg.method}]: {fused.shape[0]}x{fused.shape[2]}x{fused.shape[1]}, gains {gains} -> {out}")
    return 0


def evaluate(fused, scene, mode: str, mcfg: MetricConfig, scene_label="", method=""):
    """Compute a MetricReport for a fused stack against the scene it came from."""
    pan, ms, meta = load_scene(scene)
    rep = dict(scene=scene_label, method=method)
    if mode in ("reduced", "both"):
        if not has_truth(scene):
            raise InvariantError(f"reduced-resolution evaluation needs ground truth in {scene}")
        ref = load_truth(scene)
        rep["sam_deg"] = sam(fused, ref)
        if ref.shape[0] == 4:
            rep["q4"] = q4(fused, ref, mcfg.q4_block)
    if mode in ("full", "both"):
        pan_lp_lr = degrade_pan(pan, meta)
        rep["d_lambda"] = d_lambda(fused, ms, mcfg)
        rep["d_s"] = d_s(fused, ms, pan, pan_lp_lr, mcfg)
    return MetricReport(**rep)


def cmd_eval(args, argv) -> int:
    t0 = time.perf_counter()
    mcfg = _metric_config(_load_config(args.config))
    if args.fused is None:
        fused = load_truth(args.scene)
    else:
        _, fused, _ = load_scene(args.fused)
    label = args.label or Path(args.scene).name
    report = evaluate(fused, args.scene, args.mode, mcfg, label, args.method or "")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    inputs = [args.scene] + ([args.fused] if args.fused else [])
    write_manifest(out, "eval", argv, {"mode": args.mode, "metrics": asdict(mcfg)}, None, inputs, t0)
    print(f"eval[{args.mode}] SAM {_fmt(report.sam_deg)} Q4 {_fmt(report.q4)} "
          f"D_lambda {_fmt(report.d_lambda)} D_s {_fmt(report.d_s)} QNR {_fmt(report.qnr)}")
    return 0


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("IDM_THREADS", "1")))
    except ValueError:
        return 1


def cmd_bench(args, argv) -> int:
    t0 = time.perf_counter()
    file_cfg = _load_config(args.config)
    mcfg = _metric_config(file_cfg)
    methods = list(dict.fromkeys(args.methods))
    if "expand" not in methods:
        methods.append("expand")
    cells = [(si, scene, m) for si, scene in enumerate(args.scenes) for m in methods]

    def run(cell):
        si, scene, method = cell
        ns = argparse.Namespace(method=method, patch_size=args.patch_size, stride=args.stride,
                                ridge=None, epochs=args.epochs, seed=None)
        cfg = _fusion_config(ns, file_cfg)
        cfg.train.seed = derive_seed(args.seed, TRAIN_STREAM, si)
        try:
            _, _, _, fused, _ = _run_fusion(scene, cfg)
            mode = "both" if has_truth(scene) else "full"
            return evaluate(fused, scene, mode, mcfg, Path(scene).name, method)
        except IdmError as exc:
            raise IdmError(f"bench cell (scene={scene}, method={method}) failed: {exc}") from exc

    workers = min(_threads(), len(cells))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run, cells))
    else:
        reports = [run(c) for c in cells]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(reports_to_csv(reports, BENCH_COLUMNS), encoding="utf-8")
    (out / "bench.json").write_text(json.dumps([r.to_dict() for r in reports], indent=2), encoding="utf-8")
    write_manifest(out, "bench", argv, {"methods": methods, "metrics": asdict(mcfg)},
                   args.seed, args.scenes, t0)
    print(f"{'scene':<16}{'method':<10}{'SAM':>8}{'Q4':>8}{'D_s':>8}{'D_lambda':>10}{'QNR':>8}")
    for r in reports:
        print(f"{r.scene:<16}{r.method:<10}{_fmt(r.sam_deg):>8}{_fmt(r.q4):>8}"
              f"{_fmt(r.d_s):>8}{_fmt(r.d_lambda):>10}{_fmt(r.qnr):>8}")
    return 0


def cmd_preview(args, argv) -> int:
    _, ms, _ = load_scene(args.scene)
    src = load_truth(args.scene) if args.truth else ms
    export_preview(src, args.bands, args.out)
    print(f"preview: bands {args.bands} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="idmfuse", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON file with fusion/train/metrics/synth sections")
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    common(sp)
    sp.add_argument("--size", type=int)
    sp.add_argument("--ratio", type=int)
    sp.add_argument("--bands", type=int)
    sp.add_argument("--cross-amount", dest="cross_amount", type=float)
    sp.add_argument("--octaves", dest="texture_octaves", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("degrade", help="Wald-protocol reduction of a scene")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_degrade)

    def fusion_flags(sp):
        sp.add_argument("--scene", required=True)
        sp.add_argument("--method", choices=METHODS, default="idm-dae")
        sp.add_argument("--patch-size", dest="patch_size", type=int)
        sp.add_argument("--stride", type=int)
        sp.add_argument("--ridge", type=float)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("train", help="train the detail network on a scene")
    common(sp)
    fusion_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("fuse", help="pansharpen a scene")
    common(sp)
    fusion_flags(sp)
    sp.add_argument("--model", help="directory written by `train`; skips training")
    sp.add_argument("--preview", help="file name (.png/.ppm) for an RGB preview in --out")
    sp.add_argument("--bands", type=int, nargs=3, default=[2, 1, 0])
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("eval", help="quality metrics of a fused product")
    common(sp, seed=False)
    sp.add_argument("--scene", required=True, help="scene the product was fused from")
    sp.add_argument("--fused", help="fused product directory; omitted = evaluate the ground truth")
    sp.add_argument("--mode", choices=("reduced", "full", "both"), default="both")
    sp.add_argument("--method")
    sp.add_argument("--label")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="scenes x methods comparison table")
    common(sp)
    sp.add_argument("--scenes", nargs="+", required=True)
    sp.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    sp.add_argument("--patch-size", dest="patch_size", type=int)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("preview", help="write an 8-bit RGB preview of a scene")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--bands", type=int, nargs=3, default=[2, 1, 0])
    sp.add_argument("--truth", action="store_true", help="preview the ground truth instead")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_preview)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except (IdmError, OSError, json.JSONDecodeError) as exc:
        print(f"idmfuse {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
