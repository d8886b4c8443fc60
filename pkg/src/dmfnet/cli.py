"""Command-line surface: synth / train / enhance / evaluate / plot / info.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import frontend, metrics
from .audio_io import read_wav, write_wav
from .config import DmfConfig
from .data import Manifest, resample, synthesize_pair, SkipItem
from .figures import emit_spectrogram_figure
from .model import DmfNet, full_forward, load_checkpoint
from .report import MetricReport
from .train import run_pipeline, run_stage, stages_for

CONFIG_ENV = "DMFNET_CONFIG"

log = logging.getLogger(__name__)


def _load_config(args) -> DmfConfig:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        return DmfConfig.load_yaml(path)
    return DmfConfig.preset_by_name(getattr(args, "preset", "paper") or "paper")


def cmd_synth(args) -> int:
    manifest = Manifest.load(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for i, rec in enumerate(manifest.records):
        try:
            pair = synthesize_pair(rec, early_ms=args.early_ms)
        except SkipItem as exc:
            log.warning("skipped item %d: %s", i, exc)
            continue
        stem = f"pair_{rec.seed:08d}"
        write_wav(out / f"{stem}_noisy.wav", pair.noisy, pair.sample_rate)
        write_wav(out / f"{stem}_reverb.wav", pair.target_denoised_reverberant,
                  pair.sample_rate)
        write_wav(out / f"{stem}_clean.wav", pair.target_clean, pair.sample_rate)
        written += 1
    print(f"synthesized {written} pairs into {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    man16 = Manifest.load(args.manifest_16k) if args.manifest_16k else Manifest.load(args.manifest)
    man48 = Manifest.load(args.manifest)
    if args.stage:
        stage = next((s for s in stages_for(cfg) if s.name == args.stage), None)
        if stage is None:
            print(f"unknown stage {args.stage!r}", file=sys.stderr)
            return 2
        if args.resume:
            model, _ = load_checkpoint(args.resume, cfg)
        else:
            model = DmfNet(cfg)
        manifest = man48 if stage.sample_rate == 48000 else man16
        result = run_stage(stage, model, manifest, cfg, args.out)
        print(f"stage {stage.name} done; best checkpoint {result.checkpoint}")
    else:
        final = run_pipeline(cfg, man16, man48, args.out, resume=args.resume)
        print(f"pipeline done; final checkpoint {final}")
    return 0


def cmd_enhance(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    cfg = model.cfg
    wave, rate = read_wav(args.infile)
    if rate != cfg.frontend.sample_rate_hz:
        raise ValueError(f"expected {cfg.frontend.sample_rate_hz} Hz input, got {rate}")
    enhanced = full_forward(wave, model, cfg)
    write_wav(args.out, enhanced, rate)
    print(f"enhanced {args.infile} -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    cfg = model.cfg
    manifest = Manifest.load(args.pairs)
    report = MetricReport(config_echo=cfg.to_dict())
    for rec in manifest.records:
        try:
            pair = synthesize_pair(rec)
        except SkipItem as exc:
            log.warning("skipped: %s", exc)
            continue
        enhanced = full_forward(pair.noisy, model, cfg)
        ref = pair.target_clean
        rate = pair.sample_rate
        est16 = resample(enhanced, rate, 16000)
        ref16 = resample(ref, rate, 16000)
        est_spec = frontend.stft(enhanced, cfg.frontend)
        ref_spec = frontend.stft(ref, cfg.frontend)
        report.add(Path(rec.clean_path).name + f"#{rec.seed}", {
            "si_snr_db": metrics.si_snr(enhanced, ref),
            "stoi": metrics.stoi(est16, ref16, 16000, extended=args.extended_stoi),
            "lsd_db": metrics.lsd(est_spec, ref_spec),
        })
    report.save(args.report)
    agg = report.aggregates()
    print(f"evaluated {report.clip_count} clips: " +
          ", ".join(f"{k}={v:.3f}" for k, v in agg.items()))
    return 0


def cmd_plot(args) -> int:
    labeled = []
    for item in args.wavs:
        label, _, path = item.partition("=")
        if not path:
            label, path = Path(item).stem, item
        wave, rate = read_wav(path)
        labeled.append((label, wave))
    emit_spectrogram_figure(labeled, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_info(args) -> int:
    if args.ckpt:
        model, extra = load_checkpoint(args.ckpt)
    else:
        model = DmfNet(_load_config(args))
        extra = {}
    counts = model.count_parameters()
    for name in model.active_subnets():
        print(f"{name:>6}: {counts[name] / 1e6:8.3f} M parameters")
    print(f"{'total':>6}: {counts['total'] / 1e6:8.3f} M parameters")
    if extra:
        print(f"checkpoint extra: {extra}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmfnet",
                                description="Multi-band full-band speech enhancement toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="synthesize noisy/target pairs from a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--early-ms", type=float, default=50.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="run the staged training pipeline")
    tp.add_argument("--config")
    tp.add_argument("--preset", choices=("paper", "tiny"), default="paper")
    tp.add_argument("--manifest", required=True, help="48 kHz training manifest")
    tp.add_argument("--manifest-16k", help="16 kHz pretraining manifest")
    tp.add_argument("--out", required=True)
    tp.add_argument("--stage")
    tp.add_argument("--resume")
    tp.set_defaults(func=cmd_train)

    ep = sub.add_parser("enhance", help="enhance one WAV file")
    ep.add_argument("--in", dest="infile", required=True)
    ep.add_argument("--out", required=True)
    ep.add_argument("--ckpt", required=True)
    ep.set_defaults(func=cmd_enhance)

    vp = sub.add_parser("evaluate", help="score enhanced clips against targets")
    vp.add_argument("--pairs", required=True, help="mixture manifest")
    vp.add_argument("--ckpt", required=True)
    vp.add_argument("--report", required=True)
    vp.add_argument("--extended-stoi", action="store_true")
    vp.set_defaults(func=cmd_evaluate)

    pp = sub.add_parser("plot", help="emit a multi-panel spectrogram figure")
    pp.add_argument("wavs", nargs="+", metavar="LABEL=PATH")
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=cmd_plot)

    ip = sub.add_parser("info", help="print per-sub-network parameter counts")
    ip.add_argument("--ckpt")
    ip.add_argument("--config")
    ip.add_argument("--preset", choices=("paper", "tiny"), default="paper")
    ip.set_defaults(func=cmd_info)
    return p


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures -> exit 1
        log.error("%s", exc)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
