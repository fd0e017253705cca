"""Single command-line entry point exposing the pipeline as subcommands:
generate, train, calibrate, serve, infer-online, evaluate, analyze-erp,
analyze-saliency, selftest.

Randomness flows from one --seed flag through named sub-streams. A
`--config` file of key=value lines supplies defaults that explicit flags
override. Logs go to stderr as `level ts component message`.
"""

from __future__ import annotations

import argparse
import logging
import sys

from pathlib import Path

import numpy as np

from eegtd import __version__
from eegtd.core import (
    FormatError,
    load_recording,
    load_schedule,
    save_recording,
    save_schedule,
)
from eegtd.dataset import DatasetConfig, build_dataset, build_eval_dataset
from eegtd.metrics import (
    DEFAULT_MATCH_TOLERANCE,
    FBetaForm,
    MetricConfig,
    f_beta,
    macro_f_beta,
    match_detections,
    precision_recall,
    read_detections_csv,
    write_detections_csv,
)
from eegtd.model import (
    NetConfig,
    TrainConfig,
    calibrate,
    init_model,
    load_model,
    save_model,
    train,
    write_loss_trace,
)
from eegtd.seeding import child_seed
from eegtd.synth import SynthConfig, make_schedule, profile_by_name, render_eeg

log = logging.getLogger("eegtd.cli")

CLASS_LABELS = ("NonTarget", "TrueTarget", "ErrorTarget")


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level.upper()),
        format="%(levelname)s %(asctime)s %(name)s %(message)s",
        datefmt="%Y-%m-%dT%H:%M:%S",
    )


def _load_config_file(path: str) -> dict[str, str]:
    values = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config_defaults(parser: argparse.ArgumentParser, args: list[str]) -> list[str]:
    """Pull --config out of args and install its values as parser defaults."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    found, _ = probe.parse_known_args(args)
    if not found.config:
        return args
    values = _load_config_file(found.config)
    known = {
        action.dest for action in parser._actions  # noqa: SLF001 - argparse has no public api
    }
    for sub_action in parser._subparsers._group_actions if parser._subparsers else []:
        for sub in sub_action.choices.values():
            known |= {action.dest for action in sub._actions}
            unknown = set(values) - known
            sub.set_defaults(**{k: v for k, v in values.items() if k in known})
    unknown = set(values) - known
    if unknown:
        raise FormatError(f"unknown config keys: {sorted(unknown)}")
    parser.set_defaults(**{k: v for k, v in values.items() if k in known})
    return args


def _synth_config(args, profile_name: str, seed: int) -> SynthConfig:
    confound = args.confound_amp
    if confound is None:
        confound = 12.0 if profile_name.startswith("video2") else 0.0
    return SynthConfig(
        background_sigma=float(args.background_sigma),
        erp_amp_true=float(args.erp_amp_true),
        erp_amp_error=float(args.erp_amp_error),
        confound_amp=float(confound),
        seed=seed,
    )


def cmd_generate(args) -> int:
    profile = profile_by_name(
        args.profile,
        None if args.events_per_class is None else int(args.events_per_class),
    )
    seed = int(args.seed)
    schedule = make_schedule(profile, child_seed(seed, "schedule"))
    synth_cfg = _synth_config(args, profile.name, child_seed(seed, "eeg"))
    recording = render_eeg(schedule, synth_cfg)
    eegr = Path(f"{args.out_prefix}.eegr")
    csv_path = Path(f"{args.out_prefix}.schedule.csv")
    save_recording(recording, eegr)
    save_schedule(schedule, csv_path)
    log.info("wrote %s and %s", eegr, csv_path)
    print(f"{eegr} {csv_path}")
    return 0


def _dataset_config(args) -> DatasetConfig:
    return DatasetConfig(
        window_len=int(args.window_len),
        stride=int(args.stride),
        nontarget_per_event=int(args.nontarget_per_event),
    )


def cmd_train(args) -> int:
    recording = load_recording(args.recording)
    schedule = load_schedule(args.schedule)
    seed = int(args.seed)
    cfg = _dataset_config(args)
    epochs = build_dataset(recording, schedule, cfg, child_seed(seed, "dataset"))
    net = NetConfig(n_channels=recording.n_channels, window_len=cfg.window_len)
    model = init_model(net, child_seed(seed, "init"))
    train_cfg = TrainConfig(
        batch_size=int(args.batch_size),
        learning_rate=float(args.learning_rate),
        weight_decay=float(args.weight_decay),
        epochs=int(args.epochs),
        seed=child_seed(seed, "train"),
    )
    trained, trace = train(model, epochs, train_cfg)
    with open(args.out_model, "wb") as fh:
        save_model(trained, fh)
    if args.loss_trace:
        with open(args.loss_trace, "w", newline="") as fh:
            write_loss_trace(trace, fh)
    log.info("trained %d epochs, final mean loss %.6f", len(trace), trace[-1])
    print(f"{args.out_model} final_loss={trace[-1]!r}")
    return 0


def cmd_calibrate(args) -> int:
    with open(args.model, "rb") as fh:
        model = load_model(fh)
    recording = load_recording(args.recording)
    schedule = load_schedule(args.schedule)
    seed = int(args.seed)
    cfg = _dataset_config(args)
    epochs = build_dataset(recording, schedule, cfg, child_seed(seed, "calibration"))
    train_cfg = TrainConfig(
        batch_size=int(args.batch_size),
        learning_rate=float(args.learning_rate),
        weight_decay=float(args.weight_decay),
        seed=child_seed(seed, "calibrate"),
    )
    tuned = calibrate(
        model, epochs, train_cfg,
        lr_scale=float(args.lr_scale), epochs=int(args.calibration_epochs),
    )
    with open(args.out_model, "wb") as fh:
        save_model(tuned, fh)
    print(args.out_model)
    return 0


def cmd_serve(args) -> int:
    from eegtd.stream import ReplayServer

    recording = load_recording(args.recording)
    schedule = load_schedule(args.schedule)
    server = ReplayServer(
        recording, schedule,
        host=args.host, port=int(args.port),
        chunk_ms=float(args.chunk_ms), speed=float(args.speed),
    )
    with server:
        print(f"serving on {server.host}:{server.port}", flush=True)
        try:
            summary = server.serve_once()
        except KeyboardInterrupt:
            log.info("interrupted; shutting down")
            return 0
    log.info(
        "session complete: %d blocks, %d frames, %.2fs",
        summary.blocks_sent, summary.frames_sent, summary.wall_seconds,
    )
    return 0


def cmd_infer_online(args) -> int:
    from eegtd.stream import OnlineConfig, stream_online_inference

    with open(args.model, "rb") as fh:
        model = load_model(fh)
    cfg = OnlineConfig(
        infer_stride=int(args.stride),
        trigger_threshold=float(args.threshold),
        consecutive_required=int(args.consecutive),
        refractory=int(args.refractory),
    )
    try:
        detections, summary = stream_online_inference(args.connect, model, cfg)
    except KeyboardInterrupt:
        log.info("interrupted; shutting down")
        return 0
    for det in detections:
        print(f"detection time={det.time} class={int(det.class_id)} "
              f"confidence={det.confidence:.4f}")
    print(f"received {summary.total_frames} frames in {summary.wall_seconds:.2f}s, "
          f"{len(detections)} detections")
    if args.emit:
        with open(args.emit, "w", newline="") as fh:
            write_detections_csv(detections, fh)
        log.info("wrote %s", args.emit)
    return 0


def cmd_evaluate(args) -> int:
    with open(args.detections, "r", encoding="utf-8") as fh:
        detections = read_detections_csv(fh)
    schedule = load_schedule(args.schedule)
    form = FBetaForm.LITERAL if args.fbeta_form == "literal" else FBetaForm.RECALL_WEIGHTED
    cfg = MetricConfig(beta=float(args.beta), form=form)
    cm, _ = match_detections(detections, schedule, tolerance=int(args.tolerance))
    for c in range(3):
        precision, recall = precision_recall(cm, c)
        print(
            f"class {CLASS_LABELS[c]} precision={precision:.6f} "
            f"recall={recall:.6f} f_beta={f_beta(precision, recall, cfg):.6f}"
        )
    print(f"macro_f_beta {macro_f_beta(cm, cfg):.6f}")
    return 0


def cmd_analyze_erp(args) -> int:
    from eegtd.analysis import grand_average_erp, write_erp_csv

    recording = load_recording(args.recording)
    schedule = load_schedule(args.schedule)
    channels = [c.strip() for c in args.channels.split(",") if c.strip()]
    result = grand_average_erp(
        recording, schedule, channels,
        horizon_s=float(args.horizon_s), baseline_s=float(args.baseline_s),
        seed=child_seed(int(args.seed), "erp-baseline"),
    )
    with open(args.out, "w", newline="") as fh:
        write_erp_csv(result, fh)
    for note in result.notes:
        log.info("%s", note)
    for name, n in sorted(result.n_trials.items()):
        skipped = result.n_skipped.get(name, 0)
        print(f"{name}: {n} trials averaged, {skipped} skipped")
    print(args.out)
    return 0


def cmd_analyze_saliency(args) -> int:
    from eegtd.analysis import gradient_saliency, occlusion_saliency, write_saliency_csv
    from eegtd.montage import write_layout_csv

    with open(args.model, "rb") as fh:
        model = load_model(fh)
    recording = load_recording(args.recording)
    schedule = load_schedule(args.schedule)
    cfg = _dataset_config(args)
    epochs = build_eval_dataset(
        recording, schedule, cfg, child_seed(int(args.seed), "saliency-eval")
    )
    form = FBetaForm.LITERAL if args.fbeta_form == "literal" else FBetaForm.RECALL_WEIGHTED
    metric = MetricConfig(beta=float(args.beta), form=form)
    occ = occlusion_saliency(model, epochs, metric)
    grad = gradient_saliency(model, epochs)
    with open(args.out, "w", newline="") as fh:
        write_saliency_csv(recording.channel_names, occ.importance, grad, fh)
    if args.layout_out:
        with open(args.layout_out, "w", newline="") as fh:
            write_layout_csv(fh, recording.channel_names)
    print(f"baseline_macro_f={occ.baseline_score!r}")
    print(args.out)
    return 0


def _selftest_metrics() -> bool:
    from eegtd.metrics import ConfusionMatrix

    rng = np.random.default_rng(1234)
    for _ in range(1000):
        counts = rng.integers(0, 40, size=(3, 3))
        cm = ConfusionMatrix(counts)
        for form in (FBetaForm.RECALL_WEIGHTED, FBetaForm.LITERAL):
            cfg = MetricConfig(beta=2.0, form=form)
            got = macro_f_beta(cm, cfg)
            scores = []
            for c in range(3):
                tp = counts[c, c]
                fn = counts[c, :].sum() - tp
                fp = counts[:, c].sum() - tp
                r = tp / (tp + fn) if tp + fn else 0.0
                p = tp / (tp + fp) if tp + fp else 0.0
                den = 4 * p + r if form == FBetaForm.RECALL_WEIGHTED else 4 * r + p
                scores.append(5 * p * r / den if den else 0.0)
            if abs(got - sum(scores) / 3) >= 1e-9:
                return False
    hand = f_beta(1.0, 0.5, MetricConfig(beta=2.0))
    hand_lit = f_beta(1.0, 0.5, MetricConfig(beta=2.0, form=FBetaForm.LITERAL))
    return abs(hand - 0.555556) < 1e-6 and abs(hand_lit - 0.833333) < 1e-6


def _selftest_gradients() -> bool:
    from eegtd.model import backward, forward, loss, standardize

    cfg = NetConfig(
        n_channels=3, window_len=20, temporal_filters=2, deep_filters=(2,),
        kernel_len=3, pool_len=2, dropout_rate=0.0, dense_hidden=4,
    )
    model = init_model(cfg, seed=11)
    rng = np.random.default_rng(42)
    x = standardize(rng.standard_normal((3, 20)))
    h = 1e-4
    for label in (0, 1, 2):
        grads, _ = backward(model, x, label)
        for stage_name in ("stage_a", "stage_b"):
            stage = getattr(model, stage_name)
            for name, arr in stage.params.items():
                flat = arr.ravel()
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h
                    lp = loss(forward(model, x), label)
                    flat[i] = orig - h
                    lm = loss(forward(model, x), label)
                    flat[i] = orig
                    fd = (lp - lm) / (2 * h)
                    an = grads[stage_name][name].ravel()[i]
                    if abs(an - fd) / (abs(an) + 1e-8) >= 1e-4:
                        return False
    return True


def _selftest_protocol() -> bool:
    from eegtd.stream import (
        DataMessage,
        EspStreamReader,
        StartMessage,
        StopMessage,
        encode_message,
    )

    frames = np.arange(12, dtype=np.float32).reshape(4, 3)
    messages = [
        StartMessage(250.0, 3, ("a", "b", "c")),
        DataMessage(0, frames, [(2, 1)]),
        DataMessage(1, frames + 1),
        StopMessage(8),
    ]
    blob = b"".join(encode_message(m) for m in messages)
    pos = [0]

    def read(n):
        chunk = blob[pos[0] : pos[0] + n]
        pos[0] += len(chunk)
        return chunk

    reader = EspStreamReader(read)
    back = [reader.next_message() for _ in range(4)]
    return back == messages and reader.next_message() is None


def run_selftest(args) -> int:
    checks = [
        ("metric-oracle", _selftest_metrics),
        ("gradient-check", _selftest_gradients),
        ("protocol-round-trip", _selftest_protocol),
    ]
    failures = 0
    for name, check in checks:
        ok = check()
        print(f"selftest {name} {'PASS' if ok else 'FAIL'}")
        failures += 0 if ok else 1
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegtd",
        description="EEG video-target detection pipeline: synthesis, training, "
        "streaming inference, evaluation, analysis.",
    )
    parser.add_argument("--version", action="version", version=f"eegtd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value file of flag defaults")
        p.add_argument("--seed", default=7, help="master seed for all sub-streams")
        p.add_argument("--log-level", default="info",
                       choices=["debug", "info", "warning", "error"])

    def add_dataset_flags(p):
        p.add_argument("--window-len", default=250, type=int)
        p.add_argument("--stride", default=25, type=int)
        p.add_argument("--nontarget-per-event", default=14, type=int)

    p = sub.add_parser("generate", help="emit a synthetic EEGR recording plus schedule CSV")
    add_common(p)
    p.add_argument("--profile", required=True, choices=["video1", "video2n", "video2ai"])
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--events-per-class", default=None)
    p.add_argument("--background-sigma", default=10.0)
    p.add_argument("--erp-amp-true", default=8.0)
    p.add_argument("--erp-amp-error", default=5.0)
    p.add_argument("--confound-amp", default=None,
                   help="rotation burst amplitude; default 0 (video1) / 12 (video2*)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the hierarchical model on a recording")
    add_common(p)
    p.add_argument("--recording", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--loss-trace", help="write per-epoch mean loss CSV here")
    p.add_argument("--epochs", default=100)
    p.add_argument("--batch-size", default=128)
    p.add_argument("--learning-rate", default=0.001)
    p.add_argument("--weight-decay", default=0.0001)
    add_dataset_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="fine-tune a pretrained model on calibration data")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--recording", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--calibration-epochs", default=10)
    p.add_argument("--lr-scale", default=0.1)
    p.add_argument("--batch-size", default=128)
    p.add_argument("--learning-rate", default=0.001)
    p.add_argument("--weight-decay", default=0.0001)
    add_dataset_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("serve", help="replay a recording over the wire protocol")
    add_common(p)
    p.add_argument("--recording", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--port", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--speed", default=1.0, type=float,
                   help="replay speed multiplier; inf disables pacing")
    p.add_argument("--chunk-ms", default=40.0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("infer-online", help="stream from a server and emit detections")
    add_common(p)
    p.add_argument("--connect", required=True, help="host:port of the replay server")
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", default=0.7)
    p.add_argument("--consecutive", default=3)
    p.add_argument("--refractory", default=250)
    p.add_argument("--stride", default=25)
    p.add_argument("--emit", help="write detections CSV here")
    p.set_defaults(func=cmd_infer_online)

    p = sub.add_parser("evaluate", help="score detections against a schedule")
    add_common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--fbeta-form", default="recall", choices=["recall", "literal"])
    p.add_argument("--beta", default=2.0)
    p.add_argument("--tolerance", default=DEFAULT_MATCH_TOLERANCE)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze-erp", help="grand-average evoked waveforms to CSV")
    add_common(p)
    p.add_argument("--recording", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--channels", default="Cz,C3,C4")
    p.add_argument("--horizon-s", default=3.0)
    p.add_argument("--baseline-s", default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze_erp)

    p = sub.add_parser("analyze-saliency", help="per-channel occlusion + gradient importance")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--recording", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layout-out", help="also write the 2-D montage layout CSV")
    p.add_argument("--fbeta-form", default="recall", choices=["recall", "literal"])
    p.add_argument("--beta", default=2.0)
    add_dataset_flags(p)
    p.set_defaults(func=cmd_analyze_saliency)

    p = sub.add_parser("selftest", help="metric oracle, gradient check, protocol round trip")
    add_common(p)
    p.set_defaults(func=run_selftest)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    try:
        argv = _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        _setup_logging(args.log_level)
        return args.func(args)
    except (FormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
