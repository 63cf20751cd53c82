"""Command-line entry point.

Every subcommand accepts ``--config FILE``: an INI file whose section named
after the subcommand supplies option values (``key = value``, list values
space- or comma-separated, optionally in brackets). Flags given on the
command line override the file. Each run writes ``effective_config.ini``
next to its outputs; feeding it back through ``--config`` repeats the run.
"""

import argparse
import configparser
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics, psd, room_sim, vace
from .audio_io import ENCODINGS, read_wav, write_wav
from .stft import StftConfig, Waveform, istft, stft
from .wpe import WpeConfig, wpe_iterative, wpe_with_psd

log = logging.getLogger("vacewpe")

EFFECTIVE_CONFIG = "effective_config.ini"
ERROR_LOG = "errors.log"
CSV_COLUMNS = ("utt_id",) + metrics.METRIC_NAMES


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_wpe_options(p, default_taps=10):
    p.add_argument("-K", "--taps", type=int, default=default_taps, help="LP filter order per channel")
    p.add_argument("--delay", type=int, default=3, help="prediction delay in frames")
    p.add_argument("--context", type=int, default=1, help="PSD context half-width in frames")
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--diag-load", type=float, default=1e-6)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vacewpe", description="WPE dereverberation with virtual channel expansion.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-rir", help="image-method RIRs to WAV")
    p.add_argument("--out", help="output directory")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", choices=sorted(room_sim.ROOM_BOUNDS), default="medium")
    p.add_argument("--room", type=float, nargs=3, metavar=("LX", "LY", "LZ"))
    p.add_argument("--absorption", type=float)
    p.add_argument("--source", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--mics", type=float, nargs="+", help="flat list of x y z triples")
    p.add_argument("--n-mics", type=int, default=1)
    p.add_argument("--mic-spacing", type=float, default=0.2)
    p.add_argument("--order", type=int, default=10, help="reflection order (-1: unlimited)")
    p.add_argument("--duration", type=float, help="RIR length in seconds")
    p.add_argument("--fs", type=int, default=16000)
    p.add_argument("--fractional", action="store_true", help="fractional-delay image placement")

    p = sub.add_parser("synth-speech", help="write deterministic speech-like or noise WAVs")
    p.add_argument("--out")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--kind", choices=("speech", "white", "pink", "babble"), default="speech")
    p.add_argument("--fs", type=int, default=16000)

    p = sub.add_parser("mix", help="speech + RIR (+ noise) mixtures with early/late references")
    p.add_argument("--speech-dir")
    p.add_argument("--rir-dir")
    p.add_argument("--noise-dir")
    p.add_argument("--out")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr-range", type=int, nargs=2, default=[5, 15])
    p.add_argument("--crop", type=float, nargs=2, metavar=("MIN_S", "MAX_S"))
    p.add_argument("--noisy-target", action="store_true")
    p.add_argument("--peak-norm", type=float, default=0.5)
    p.add_argument("--encoding", choices=ENCODINGS, default="float32")

    p = sub.add_parser("dereverb", help="iterative or single-pass WPE")
    p.add_argument("--input", help="WAV file or directory")
    p.add_argument("--pattern", default="*.wav", help="file glob used when the input is a directory")
    p.add_argument("--out", help="output directory")
    _add_wpe_options(p)
    p.add_argument("--psd", default="iterative", help="iterative | file:<lps path, may use {stem}>")
    p.add_argument("--psd-combine", default="average", help="average | ref:<k>")
    p.add_argument("--encoding", choices=ENCODINGS, default="float32")

    p = sub.add_parser("vace-dereverb", help="virtual-channel-expanded WPE")
    p.add_argument("--input", help="WAV file or directory (first channel used)")
    p.add_argument("--pattern", default="*.wav", help="file glob used when the input is a directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--gen", default="copy:1.0",
                   help="copy:<g> | late:<wav>[:g] | delay:<frames>[:g] | file:<wav>; "
                        "paths may use {stem} and {utt}")
    p.add_argument("--psd-mode", choices=vace.PSD_MODES, default="simplified")
    p.add_argument("--psd-file", help="per-channel LPS estimates for a single pass (may use {stem})")
    _add_wpe_options(p)
    p.add_argument("--encoding", choices=ENCODINGS, default="float32")

    p = sub.add_parser("evaluate", help="CD / LLR / FWSegSNR / segSRR to CSV")
    p.add_argument("--ref", help="reference WAV or directory")
    p.add_argument("--deg", help="processed WAV or directory")
    p.add_argument("--pattern", default="*.wav", help="file glob used when the input is a directory")
    p.add_argument("--out", help="CSV path")

    p = sub.add_parser("export-lps", help="log-power spectra in the LPS interchange format")
    p.add_argument("--input", help="WAV file or directory")
    p.add_argument("--pattern", default="*.wav", help="file glob used when the input is a directory")
    p.add_argument("--out", help="output directory")

    for action in sub.choices.values():
        action.add_argument("--config", help="INI file with a section for this subcommand")
    return parser


REQUIRED = {
    "simulate-rir": ("out",),
    "synth-speech": ("out",),
    "mix": ("speech_dir", "rir_dir", "out"),
    "dereverb": ("input", "out"),
    "vace-dereverb": ("input", "out"),
    "evaluate": ("ref", "deg", "out"),
    "export-lps": ("input", "out"),
}


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _convert(action, raw: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
    conv = action.type or str
    if action.nargs in ("+", "*") or isinstance(action.nargs, int):
        items = raw.strip().strip("[]").replace(",", " ").split()
        if isinstance(action.nargs, int) and len(items) != action.nargs:
            raise UsageError(f"{action.dest}: expected {action.nargs} values, got {len(items)}")
        return [conv(v) for v in items]
    return conv(raw.strip())


def load_config(parser, command, path):
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise UsageError(f"cannot read config file {path}")
    if not cp.has_section(command):
        raise UsageError(f"{path}: no [{command}] section")
    sp = _subparser(parser, command)
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    values = {}
    for key, raw in cp.items(command):
        dest = key.replace("-", "_")
        if dest not in actions:
            raise UsageError(f"{path}: unknown key {key!r} in [{command}]")
        try:
            values[dest] = _convert(actions[dest], raw)
        except (ValueError, KeyError) as exc:
            raise UsageError(f"{path}: bad value for {key!r}: {raw!r}") from exc
        if actions[dest].choices is not None and values[dest] not in actions[dest].choices:
            raise UsageError(f"{path}: {key} must be one of {sorted(actions[dest].choices)}")
    return values


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return " ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(args, path):
    cp = configparser.ConfigParser()
    cp.optionxform = str
    section = {}
    for key, value in sorted(vars(args).items()):
        if key in ("command", "config", "verbose") or value is None:
            continue
        section[key.replace("_", "-")] = _format_value(value)
    cp[args.command] = section
    buf = io.StringIO()
    cp.write(buf)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config:
        values = load_config(parser, args.command, args.config)
        _subparser(parser, args.command).set_defaults(**values)
        args = parser.parse_args(argv)
    missing = [k for k in REQUIRED[args.command] if getattr(args, k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return args


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _wav_inputs(path, pattern="*.wav"):
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob(pattern))
        if not files:
            raise UsageError(f"no files matching {pattern!r} in {path}")
        return files
    if not path.exists():
        raise UsageError(f"input {path} does not exist")
    return [path]


def utt_id(path) -> str:
    stem = Path(path).stem
    return stem[:-len("_observed")] if stem.endswith("_observed") else stem


def _expand(template, path):
    return template.format(stem=Path(path).stem, utt=utt_id(path)) if template else template


def _stft_config(fs):
    return StftConfig.from_ms(64.0, 16.0, fs)


def _wpe_config(args):
    return WpeConfig(taps=args.taps, delay=args.delay, context=args.context,
                     iterations=args.iterations, diag_load=args.diag_load)


class FailureLog:
    def __init__(self, out_dir):
        self.path = Path(out_dir) / ERROR_LOG
        self.entries = []

    def record(self, name, exc):
        log.error("%s: %s", name, exc)
        self.entries.append(f"{name}\t{type(exc).__name__}: {exc}")

    def close(self) -> int:
        if self.entries:
            self.path.write_text("\n".join(self.entries) + "\n")
            return 1
        if self.path.exists():
            self.path.unlink()
        return 0


def parse_generator(text: str, wav_path=None):
    kind, _, rest = text.partition(":")
    if kind == "copy":
        return vace.ScaledCopy(float(rest) if rest else 1.0)
    if kind in ("late", "delay"):
        head, gain = rest, 1.0
        if ":" in rest:
            maybe_head, _, maybe_gain = rest.rpartition(":")
            try:
                gain = float(maybe_gain)
                head = maybe_head
            except ValueError:
                pass
        if kind == "delay":
            return vace.FrameDelay(int(head), gain)
        late = read_wav(_expand(head, wav_path) if wav_path else head)
        return vace.LateOracle(late, gain)
    if kind == "file":
        return vace.ExternalSignal(_expand(rest, wav_path) if wav_path else rest)
    raise UsageError(f"unknown generator {text!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate_rir(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    explicit = args.room is not None
    if explicit and (args.absorption is None or args.source is None or args.mics is None):
        raise UsageError("--room requires --absorption, --source and --mics")
    if args.mics is not None and len(args.mics) % 3:
        raise UsageError("--mics takes x y z triples")
    rows = []
    failures = FailureLog(out)
    for i in range(args.count):
        seed = args.seed + i
        name = f"rir_{i:04d}.wav"
        try:
            if explicit:
                spec = room_sim.RoomSpec(
                    tuple(args.room), args.absorption, tuple(args.source),
                    tuple(map(tuple, np.reshape(args.mics, (-1, 3)))),
                    reflection_order=args.order, rir_duration=args.duration or 1.0,
                    sample_rate=args.fs, fractional_delay=args.fractional)
            else:
                base = room_sim.random_room_spec(seed, args.size, args.n_mics, args.mic_spacing,
                                                 reflection_order=args.order, sample_rate=args.fs)
                spec = room_sim.RoomSpec(base.dimensions, base.absorption, base.source_pos,
                                         base.mic_positions, reflection_order=args.order,
                                         rir_duration=args.duration or base.rir_duration,
                                         sample_rate=args.fs, fractional_delay=args.fractional)
            rir = room_sim.simulate_rir(spec)
            write_wav(Waveform(rir.taps, rir.sample_rate), out / name)
            rows.append([name, seed, *(f"{v:.4f}" for v in spec.dimensions), f"{spec.absorption:.4f}",
                         f"{spec.distances[0]:.4f}", int(rir.main_peak_index[0])])
        except Exception as exc:  # noqa: BLE001 - per-file failures are logged and counted
            failures.record(name, exc)
    with open(out / "rirs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "seed", "lx", "ly", "lz", "absorption", "distance", "main_peak"])
        w.writerows(rows)
    dump_config(args, out / EFFECTIVE_CONFIG)
    return failures.close()


def cmd_synth_speech(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        seed = args.seed + i
        if args.kind == "speech":
            wave = room_sim.speech_like(args.duration, args.fs, seed)
        else:
            wave = room_sim.noise_like(args.kind, args.duration, args.fs, seed)
            wave = Waveform(wave.samples * (0.25 / np.max(np.abs(wave.samples))), args.fs)
        write_wav(wave, out / f"{args.kind}_{i:04d}.wav")
    dump_config(args, out / EFFECTIVE_CONFIG)
    return 0


def cmd_mix(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    speech_files = _wav_inputs(args.speech_dir)
    rir_files = _wav_inputs(args.rir_dir)
    noise_files = _wav_inputs(args.noise_dir) if args.noise_dir else None
    speech = [read_wav(f) for f in speech_files]
    rirs = []
    for f in rir_files:
        w = read_wav(f)
        rirs.append(room_sim.Rir(w.samples, w.sample_rate))
    noises = [read_wav(f) for f in noise_files] if noise_files else None
    lo, hi = args.snr_range
    if lo > hi:
        raise UsageError("--snr-range: lower bound exceeds upper bound")
    cfg = room_sim.DatagenConfig(speech, rirs, noises, (lo, hi),
                                 tuple(args.crop) if args.crop else None,
                                 args.noisy_target, args.peak_norm)
    failures = FailureLog(out)
    rows = []
    for i in range(args.count):
        seed = args.seed + i
        utt = f"{i:04d}"
        try:
            ex = room_sim.generate_example(cfg, seed)
            write_wav(ex.observed, out / f"{utt}_observed.wav", args.encoding)
            write_wav(ex.early_ref, out / f"{utt}_early.wav", args.encoding)
            write_wav(ex.late_ref, out / f"{utt}_late.wav", args.encoding)
            rows.append([utt, seed, speech_files[ex.speech_index].name, rir_files[ex.rir_index].name,
                         noise_files[ex.noise_index].name if ex.noise_index is not None else "",
                         "" if ex.snr_db is None else ex.snr_db])
        except Exception as exc:  # noqa: BLE001
            failures.record(utt, exc)
    with open(out / "mixtures.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["utt_id", "seed", "speech", "rir", "noise", "snr_db"])
        w.writerows(rows)
    dump_config(args, out / EFFECTIVE_CONFIG)
    return failures.close()


def cmd_dereverb(args) -> int:
    cfg = _wpe_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    psd.parse_psd_option(args.psd.replace("{stem}", "x").replace("{utt}", "x"), args.psd_combine)
    failures = FailureLog(out)
    for path in _wav_inputs(args.input, args.pattern):
        try:
            wave = read_wav(path)
            X = stft(wave, _stft_config(wave.sample_rate))
            source = psd.parse_psd_option(_expand(args.psd, path), args.psd_combine)
            if isinstance(source.inner, psd.Iterative):
                channels = [source.channel] if isinstance(source, psd.RefChannel) else None
                if channels and not 0 <= channels[0] < wave.num_channels:
                    raise ValueError(f"reference channel {channels[0]} out of range")
                Z, _ = wpe_iterative(X, cfg, psd_channels=channels)
            else:
                lam = psd.provide_psd(source, X, psd_floor=cfg.psd_floor)
                Z, _ = wpe_with_psd(X, lam, cfg)
            write_wav(istft(Z), out / path.name, args.encoding)
        except Exception as exc:  # noqa: BLE001
            failures.record(path.name, exc)
    dump_config(args, out / EFFECTIVE_CONFIG)
    return failures.close()


def cmd_vace_dereverb(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wcfg = _wpe_config(args)
    failures = FailureLog(out)
    for path in _wav_inputs(args.input, args.pattern):
        try:
            wave = read_wav(path).channel(0)
            cfg = vace.VaceConfig(wcfg, args.psd_mode, _stft_config(wave.sample_rate))
            gen = parse_generator(args.gen, path)
            estimates = None
            if args.psd_file:
                estimates = np.exp(psd.read_lps(_expand(args.psd_file, path)).lps)
            y = vace.vace_wpe(wave, gen, cfg, psd_estimates=estimates)
            write_wav(y, out / path.name, args.encoding)
        except Exception as exc:  # noqa: BLE001
            failures.record(path.name, exc)
    dump_config(args, out / EFFECTIVE_CONFIG)
    return failures.close()


def _reference_for(deg_path, ref):
    ref = Path(ref)
    if not ref.is_dir():
        return ref
    for candidate in (ref / f"{utt_id(deg_path)}_early.wav", ref / deg_path.name):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no reference for {deg_path.name} in {ref}")


def cmd_evaluate(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    failures = FailureLog(out.parent)
    rows, reports = [], []
    for path in _wav_inputs(args.deg, args.pattern):
        try:
            ref = read_wav(_reference_for(path, args.ref))
            deg = read_wav(path)
            if ref.sample_rate != deg.sample_rate:
                raise ValueError("sample rate mismatch")
            report = metrics.evaluate(ref.channel(0), deg.channel(0))
            reports.append(report)
            rows.append([utt_id(path)] + [f"{v:.6f}" for v in report.as_row()])
        except Exception as exc:  # noqa: BLE001
            failures.record(path.name, exc)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(rows)
        if reports:
            w.writerow(["MEAN"] + [f"{v:.6f}" for v in metrics.corpus_mean(reports).as_row()])
    dump_config(args, out.parent / EFFECTIVE_CONFIG)
    return failures.close()


def cmd_export_lps(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = FailureLog(out)
    for path in _wav_inputs(args.input, args.pattern):
        try:
            wave = read_wav(path)
            psd.export_lps(stft(wave, _stft_config(wave.sample_rate)), out / f"{path.stem}.lps")
        except Exception as exc:  # noqa: BLE001
            failures.record(path.name, exc)
    dump_config(args, out / EFFECTIVE_CONFIG)
    return failures.close()


COMMANDS = {
    "simulate-rir": cmd_simulate_rir,
    "synth-speech": cmd_synth_speech,
    "mix": cmd_mix,
    "dereverb": cmd_dereverb,
    "vace-dereverb": cmd_vace_dereverb,
    "evaluate": cmd_evaluate,
    "export-lps": cmd_export_lps,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"vacewpe: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("dereverb", "vace-dereverb"):
            _wpe_config(args)
        return COMMANDS[args.command](args)
    except (UsageError, ValueError) as exc:
        print(f"vacewpe: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
