"""Command-line interface: train, align, transcribe, evaluate, lm, stats.

Configuration is resolved defaults < config file (JSON, sectioned by
module) < command-line flags.  Every randomized operation takes an
explicit seed.  Errors exit nonzero with a single machine-parsable
``error-class: message`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import align, datapipe, decode, metrics, net
from .alphabet import DEFAULT_ALPHABET, TimeGrid, normalize_lyrics, normalize_text

#: The LM weight / insertion bonus grid used by default for grid search.
DEFAULT_GRID = [round(0.2 * i, 1) for i in range(11)]


class CliError(Exception):
    """User-facing error; rendered as ``error-class: message``."""

    error_class = "cli-error"

    def __init__(self, message, error_class=None):
        super().__init__(message)
        if error_class:
            self.error_class = error_class


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config file {path}: {exc}",
                       "config-error") from exc
    if not isinstance(cfg, dict):
        raise CliError("config file must contain a JSON object",
                       "config-error")
    return cfg


def _build(cls, section: dict, overrides: dict):
    """Instantiate a config dataclass from file section plus flag overrides."""
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - fields
    if unknown:
        raise CliError(f"unknown {cls.__name__} keys: {sorted(unknown)}",
                       "config-error")
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items()
                   if v is not None and k in fields})
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid {cls.__name__}: {exc}",
                       "config-error") from exc


def _net_config(args, file_cfg) -> net.NetConfig:
    return _build(net.NetConfig, file_cfg.get("net", {}), vars(args))


def _find_song_files(data_dir) -> list[tuple[str, Path, Path]]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise CliError(f"data directory {data_dir} not found", "data-error")
    pairs = []
    for wav in sorted(data_dir.glob("*.wav")):
        ann = wav.with_suffix(".jsonl")
        if ann.exists():
            pairs.append((wav.stem, wav, ann))
    if not pairs:
        raise CliError(f"no WAV+JSONL song pairs in {data_dir}", "data-error")
    return pairs


def _load_songs(data_dir, cfg: net.NetConfig) -> list[datapipe.Song]:
    songs = []
    for song_id, wav, ann in _find_song_files(data_dir):
        try:
            audio = datapipe.load_audio(wav, cfg.sample_rate)
            lines = datapipe.load_annotations(ann)
        except ValueError as exc:
            raise CliError(f"song {song_id}: {exc}", "data-error") from exc
        songs.append(datapipe.Song(song_id, audio, lines, cfg.sample_rate))
    return songs


# -- commands -------------------------------------------------------------

def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _net_config(args, file_cfg)
    tcfg = _build(net.TrainConfig, file_cfg.get("train", {}), vars(args))
    songs = _load_songs(args.data, cfg)
    samples = []
    for song in songs:
        for s in datapipe.generate_training_samples(song, cfg):
            chunk = datapipe.extract_chunk(song.audio, s.chunk_start_sample,
                                           cfg)
            samples.append((chunk.astype(np.float32), s.target, s.loss_slice))
    if not samples:
        raise CliError("no training samples generated", "data-error")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.resume:
        ck_cfg, params, _, _ = net.load_checkpoint(args.resume)
        if ck_cfg != cfg:
            raise CliError("checkpoint config differs from requested config",
                           "config-error")
    else:
        params = net.init_params(cfg, seed=args.seed)
    result = net.train(params, cfg, samples, tcfg,
                       checkpoint_dir=str(out_dir))
    net.save_checkpoint(out_dir / "final.npz", cfg, result.params,
                        net.adam_init(result.params), result.iterations)
    with open(out_dir / "loss_log.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["iteration", "train_loss", "val_loss", "lr"])
        writer.writeheader()
        writer.writerows(result.log)
    print(out_dir / "final.npz")
    return 0


def _load_model(path):
    try:
        cfg, params, _, _ = net.load_checkpoint(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}",
                       "checkpoint-error") from exc
    return cfg, params


def cmd_align(args) -> int:
    cfg, params = _load_model(args.checkpoint)
    try:
        lyrics_text = Path(args.lyrics).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read lyrics file: {exc}",
                       "data-error") from exc
    audio = datapipe.load_audio(args.audio, cfg.sample_rate)
    acfg = align.AlignConfig(
        delay_seconds=args.delay if args.delay is not None else 0.180,
        noise_seed=args.seed)
    try:
        timings = align.align_song(audio, lyrics_text, params, cfg, acfg)
    except ValueError as exc:
        raise CliError(str(exc), "alignment-error") from exc
    align.write_timing_file(timings, args.out)
    if args.reference:
        ref = metrics.load_reference_timings(args.reference)
        print(f"AE={metrics.alignment_error(timings, ref):.3f}s")
    print(args.out)
    return 0


def cmd_transcribe(args) -> int:
    if args.decoder not in ("greedy", "beam", "lm"):
        raise CliError(f"unknown decoder {args.decoder}", "config-error")
    if args.decoder == "lm" and not args.lm:
        raise CliError("--decoder lm requires --lm FILE", "config-error")
    cfg, params = _load_model(args.checkpoint)
    audio = datapipe.load_audio(args.audio, cfg.sample_rate)
    P = datapipe.song_probabilities(audio, params, cfg)
    if args.decoder == "greedy":
        indices = decode.greedy_decode(P)
    elif args.decoder == "beam":
        indices = decode.beam_search(P, decode.BeamConfig(width=args.width))
    else:
        lm = decode.NgramLm.load(args.lm)
        indices = decode.lm_beam_search(
            P, lm, decode.BeamConfig(width=args.width, alpha=args.alpha,
                                     beta=args.beta))
    text = DEFAULT_ALPHABET.decode(indices)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_evaluate(args) -> int:
    pred_dir, ref_dir = Path(args.pred_dir), Path(args.ref_dir)
    preds = {p.stem: p for p in sorted(pred_dir.glob("*.tsv"))}
    refs = {p.stem: p for p in sorted(ref_dir.glob("*.tsv"))}
    missing = sorted(set(refs) - set(preds))
    if missing:
        raise CliError(f"missing predictions for: {', '.join(missing)}",
                       "data-error")
    if not refs:
        raise CliError(f"no reference files in {ref_dir}", "data-error")
    result = metrics.EvalResult()
    for song_id in sorted(refs):
        pred = metrics.load_reference_timings(preds[song_id])
        ref = metrics.load_reference_timings(refs[song_id])
        pred_text = normalize_text(" ".join(w.word for w in pred))
        ref_text = normalize_text(" ".join(w.word for w in ref))
        result.add(song_id,
                   AE=metrics.alignment_error(pred, ref),
                   Perc=metrics.perc_correct(pred, ref),
                   WER=metrics.wer(pred_text.split(), ref_text.split()),
                   CER=metrics.cer(pred_text, ref_text))
    if args.out:
        result.write_csv(args.out)
    print(result.summary())
    return 0


def cmd_lm_build(args) -> int:
    try:
        raw = Path(args.corpus).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read corpus: {exc}", "data-error") from exc
    lines = [normalize_text(line) for line in raw.splitlines()]
    lines = [line for line in lines if line]
    if not lines:
        raise CliError("corpus contains no usable lines", "data-error")
    lm = decode.train_lm(lines)
    lm.save(args.out)
    print(args.out)
    return 0


def cmd_grid_search(args) -> int:
    cfg, params = _load_model(args.checkpoint)
    lm = decode.NgramLm.load(args.lm)
    dev_dir = Path(args.dev_dir)
    pairs = []
    for wav in sorted(dev_dir.glob("*.wav")):
        txt = wav.with_suffix(".txt")
        if not txt.exists():
            raise CliError(f"missing transcript for {wav.name}", "data-error")
        audio = datapipe.load_audio(wav, cfg.sample_rate)
        P = datapipe.song_probabilities(audio, params, cfg)
        pairs.append((P, normalize_text(txt.read_text(encoding="utf-8"))))
    if not pairs:
        raise CliError(f"no WAV+TXT pairs in {dev_dir}", "data-error")
    alphas = args.alphas or DEFAULT_GRID
    betas = args.betas or DEFAULT_GRID
    a, b = decode.grid_search_lm_weights(pairs, alphas, betas, lm,
                                         width=args.width)
    print(f"alpha={a} beta={b}")
    return 0


def cmd_stats(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _net_config(args, file_cfg)
    songs = _load_songs(args.data, cfg)
    stats = datapipe.dataset_stats(songs, cfg)
    if args.out:
        stats.write_csv(args.out)
    print(stats.report())
    return 0


# -- parser ---------------------------------------------------------------

def _add_net_flags(p):
    p.add_argument("--config", help="JSON config file (sections: net, train)")
    for name in ("num-down-blocks", "num-up-blocks", "down-kernel",
                 "up-kernel", "feature-growth", "decimation",
                 "input-samples", "output-samples", "sample-rate",
                 "num-classes"):
        p.add_argument(f"--{name}", type=int, default=None,
                       dest=name.replace("-", "_"),
                       help=f"override NetConfig.{name.replace('-', '_')}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lyralign",
        description="Lyrics-to-audio alignment and transcription")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the acoustic model")
    _add_net_flags(p)
    p.add_argument("--data", required=True, help="dir of WAV+JSONL pairs")
    p.add_argument("--out", required=True, help="checkpoint output dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume", help="checkpoint to resume from")
    for name, typ in (("learning-rate", float), ("batch-size", int),
                      ("loss-window-iters", int), ("patience", int),
                      ("reduced-lr", float), ("max-iterations", int)):
        p.add_argument(f"--{name}", type=typ, default=None,
                       dest=name.replace("-", "_"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("align", help="force-align lyrics to a song")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--lyrics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--delay", type=float, default=None,
                   help="constant delay in seconds (default 0.180)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reference", help="reference timings; prints AE")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("transcribe", help="transcribe a song")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--decoder", choices=["greedy", "beam", "lm"],
                   default="beam")
    p.add_argument("--lm", help="language model file for --decoder lm")
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--beta", type=float, default=0.4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_transcribe)

    p = sub.add_parser("evaluate", help="score predictions against references")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--out", help="CSV report path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("lm-build", help="train the tri-gram language model")
    p.add_argument("--corpus", required=True, help="text file, one line each")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_lm_build)

    p = sub.add_parser("grid-search", help="search LM weight and word bonus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dev-dir", required=True, help="dir of WAV+TXT pairs")
    p.add_argument("--lm", required=True)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--alphas", type=float, nargs="*")
    p.add_argument("--betas", type=float, nargs="*")
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("stats", help="dataset line-length statistics")
    _add_net_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="CSV histogram path")
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"{exc.error_class}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FloatingPointError) as exc:
        print(f"runtime-error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
