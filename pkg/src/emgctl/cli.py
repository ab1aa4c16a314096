"""emgctl command line: session tooling (cues, synth, replay), training and
evaluation, live decoding, the robot simulator, and the gateway service.
"""
from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .analysis import (mean_rms_heatmap, pairwise_matrix,
                       realtime_accuracy_harness, snr_from_session)
from .bundle import (ModelBundle, bundle_load, bundle_save, evaluate_bundle,
                     train_bundle, _window_rms_streamed)
from .classifier import TrainConfig
from .cues import (label_windows, preset_schedule, schedule_read,
                   schedule_write)
from .decoder import GestureDecoder
from .gestures import ALL_GESTURES, GESTURE_NAMES
from .recording import recording_read, recording_write
from .robot import RobotConfig
from .stats import kruskal_wallis, wilcoxon_signed_rank
from .streaming import (RecordingWindowSource, ReplayServer, StreamWindowSource)
from .synth import SynthConfig, synth_generate


def _parse_addr(addr: str, default_port: int) -> tuple[str, int]:
    if ":" in addr:
        host, port = addr.rsplit(":", 1)
        return host or "127.0.0.1", int(port)
    return addr, default_port


def _write_report(report: dict, path: str | None) -> None:
    text = json.dumps(report, indent=2)
    if path:
        Path(path).write_text(text + "\n")
        click.echo(f"report written to {path}")
    else:
        click.echo(text)


@click.group()
@click.version_option(__version__)
def main():
    """High-density EMG gesture decoding and teleoperation toolkit."""


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--preset", type=click.Choice(["initial", "recalibration", "feedback"]),
              default="initial", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def cues(seed, preset, out):
    """Generate a cue schedule sidecar."""
    schedule = preset_schedule(preset, seed=seed)
    schedule_write(schedule, out)
    click.echo(f"{schedule.n_cues} cues ({preset}, seed {seed}) -> {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON overrides for the synthetic generator.")
@click.option("--cues", "cues_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
def synth(config_path, cues_path, out, seed):
    """Render a cue schedule to a synthetic EMG recording."""
    overrides = {}
    if config_path:
        overrides = json.loads(Path(config_path).read_text())
    if seed is not None:
        overrides["seed"] = seed
    config = SynthConfig(**overrides)
    schedule = schedule_read(cues_path)
    recording = synth_generate(config, schedule)
    recording_write(recording, out)
    click.echo(f"{recording.channel_count} ch x {recording.n_samples} samples "
               f"({recording.duration_s:.1f}s) -> {out}")


@main.command()
@click.option("--rec", "rec_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--listen", default="127.0.0.1:8850", show_default=True)
@click.option("--speed", type=float, default=1.0, show_default=True,
              help="Speed multiplier; 0 streams as fast as possible.")
@click.option("--loop", is_flag=True)
def replay(rec_path, listen, speed, loop):
    """Serve a recording over the TCP stream protocol."""
    recording = recording_read(rec_path)
    host, port = _parse_addr(listen, 8850)
    server = ReplayServer(recording, host=host, port=port, speed=speed, loop=loop)
    host, port = server.address
    click.echo(f"replaying {rec_path} on {host}:{port} at {speed}x (ctrl-c to stop)")
    try:
        server.start()
        server._thread.join()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()


@main.command()
@click.option("--recording", "rec_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--cues", "cues_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--epochs", type=int, default=200, show_default=True)
@click.option("--k", type=int, default=30, show_default=True,
              help="PCA components.")
@click.option("--hidden", default="512,512", show_default=True)
def train(rec_path, cues_path, out, seed, epochs, k, hidden):
    """Train a personalized gesture model bundle from a labeled recording."""
    recording = recording_read(rec_path)
    schedule = schedule_read(cues_path)
    hidden_sizes = tuple(int(h) for h in hidden.split(",") if h)
    config = TrainConfig(epochs=epochs, seed=seed, hidden=hidden_sizes)
    result = train_bundle(recording, schedule, config, k=k)
    bundle_save(result.bundle, out)
    cm = result.test_confusion
    click.echo(f"trained on {len(result.dataset)} windows; "
               f"test accuracy {cm.accuracy:.4f}; bundle -> {out}")


@main.group(invoke_without_command=True)
@click.option("--bundle", "bundle_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--recording", "rec_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--cues", "cues_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "report_path", type=click.Path(dir_okay=False))
@click.pass_context
def eval(ctx, bundle_path, rec_path, cues_path, report_path):
    """Evaluation suite; without a subcommand, evaluates a model bundle on a
    labeled recording and emits the confusion matrix."""
    if ctx.invoked_subcommand is not None:
        return
    if not (bundle_path and rec_path and cues_path):
        raise click.UsageError("model evaluation needs --bundle, --recording and --cues")
    bundle = bundle_load(bundle_path)
    recording = recording_read(rec_path)
    schedule = schedule_read(cues_path)
    cm = evaluate_bundle(bundle, recording, schedule)
    report = {"bundle": bundle_path, "recording": rec_path,
              "confusion_matrix": cm.to_dict(),
              "labels": list(GESTURE_NAMES)}
    _write_report(report, report_path)


@eval.command()
@click.option("--recording", "rec_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--cues", "cues_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--report", "report_path", type=click.Path(dir_okay=False))
def snr(rec_path, cues_path, report_path):
    """Session SNR: pooled MVC (Fingers Closed) vs Rest hold tails."""
    recording = recording_read(rec_path)
    schedule = schedule_read(cues_path)
    value = snr_from_session(recording, schedule)
    _write_report({"snr": value, "recording": rec_path}, report_path)


def _session_rms(bundle_path, rec_path, cues_path):
    recording = recording_read(rec_path)
    schedule = schedule_read(cues_path)
    if bundle_path:
        bundle = bundle_load(bundle_path)
        mask, spec = bundle.pipeline.mask, bundle.pipeline.filter_spec
        window = bundle.window_samples
    else:
        from .pipeline import ChannelMask, design_highpass
        mask = ChannelMask.all_accepted(recording.channel_count)
        spec = design_highpass(4, 120.0, recording.sample_rate_hz)
        window = 1000
    dataset = label_windows(recording, schedule, window)
    rms = _window_rms_streamed(recording, mask, spec, dataset)
    return rms, dataset.labels, mask


@eval.command()
@click.option("--recording", "rec_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--cues", "cues_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--bundle", "bundle_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", default="8x8", show_default=True)
@click.option("--csv", "csv_prefix", type=click.Path(), required=True,
              help="Prefix for per-gesture heatmap CSVs.")
@click.option("--report", "report_path", type=click.Path(dir_okay=False))
def heatmaps(rec_path, cues_path, bundle_path, grid, csv_prefix, report_path):
    """Per-gesture mean RMS heatmaps as column-labeled CSVs."""
    rows, cols = (int(x) for x in grid.split("x"))
    rms, labels, mask = _session_rms(bundle_path, rec_path, cues_path)
    files = []
    for gesture in ALL_GESTURES:
        hm = mean_rms_heatmap(rms, labels, gesture, grid_rows=rows, grid_cols=cols,
                              accepted_indices=mask.accepted_indices)
        path = f"{csv_prefix}_{gesture.name.lower()}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row"] + [f"col{c}" for c in range(cols)])
            for r in range(rows):
                writer.writerow([r] + [f"{v:.9e}" for v in hm.values[r]])
        files.append(path)
    _write_report({"heatmaps": files, "grid": grid}, report_path)


@eval.command()
@click.option("--recording-a", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--cues-a", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--recording-b", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--cues-b", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--metric", type=click.Choice(["euclidean", "cosine"]), default="euclidean",
              show_default=True)
@click.option("--bundle", "bundle_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False))
@click.option("--report", "report_path", type=click.Path(dir_okay=False))
def matrix(recording_a, cues_a, recording_b, cues_b, metric, bundle_path,
           csv_path, report_path):
    """20x20 distance/similarity matrix between two sessions."""
    rms_a, labels_a, _ = _session_rms(bundle_path, recording_a, cues_a)
    rms_b, labels_b, _ = _session_rms(bundle_path, recording_b, cues_b)
    mat = pairwise_matrix(rms_a, labels_a, rms_b, labels_b, metric=metric)
    names = [f"{GESTURE_NAMES[g]}|{tag}" for g, tag in mat.row_labels]
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + names)
            for name, row in zip(names, mat.values):
                writer.writerow([name] + [f"{v:.9e}" for v in row])
    _write_report({"metric": metric, "rows": names,
                   "values": [[float(v) for v in row] for row in mat.values],
                   "csv": csv_path}, report_path)


@eval.command("rt-accuracy")
@click.option("--bundle", "bundle_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--recording", "rec_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--cues", "cues_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--source", "source_desc", help="tcp:host:port for a live stream.")
@click.option("--speed", type=float, default=4.0, show_default=True)
@click.option("--report", "report_path", type=click.Path(dir_okay=False))
def rt_accuracy(bundle_path, rec_path, cues_path, source_desc, speed, report_path):
    """Real-time per-cue accuracy harness against a replayed or live stream."""
    bundle = bundle_load(bundle_path)
    schedule = schedule_read(cues_path)
    if source_desc:
        host, port = _parse_addr(source_desc.removeprefix("tcp:"), 8850)
        source = StreamWindowSource(host, port, window_samples=bundle.window_samples)
    elif rec_path:
        source = RecordingWindowSource(recording_read(rec_path),
                                       window_samples=bundle.window_samples, speed=speed)
    else:
        raise click.UsageError("need --recording or --source")
    try:
        result = realtime_accuracy_harness(bundle, schedule, source)
    finally:
        source.close()
    _write_report(result.to_dict(), report_path)


@eval.command()
@click.option("--pairs", "pairs_path", type=click.Path(exists=True, dir_okay=False),
              help="CSV with before,after columns -> Wilcoxon signed-rank.")
@click.option("--groups", "groups_path", type=click.Path(exists=True, dir_okay=False),
              help="CSV with one column per group -> Kruskal-Wallis.")
@click.option("--tail", type=click.Choice(["one", "two"]), default="one", show_default=True)
@click.option("--report", "report_path", type=click.Path(dir_okay=False))
def stats(pairs_path, groups_path, tail, report_path):
    """Wilcoxon signed-rank / Kruskal-Wallis tests over CSV data."""
    report = {}
    if pairs_path:
        rows = np.loadtxt(pairs_path, delimiter=",", skiprows=1, ndmin=2)
        report["wilcoxon"] = wilcoxon_signed_rank(rows[:, :2], tail=tail).to_dict()
    if groups_path:
        with open(groups_path) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            columns = [[] for _ in header]
            for row in reader:
                for i, cell in enumerate(row):
                    if cell.strip():
                        columns[i].append(float(cell))
        report["kruskal_wallis"] = kruskal_wallis(columns).to_dict()
    if not report:
        raise click.UsageError("need --pairs and/or --groups")
    _write_report(report, report_path)


@main.command("pipeline-info")
@click.argument("bundle_path", type=click.Path(exists=True, dir_okay=False))
def pipeline_info(bundle_path):
    """Print a bundle's channel mask, filter design, K, explained variance."""
    bundle = bundle_load(bundle_path)
    pipe = bundle.pipeline
    spec = pipe.filter_spec
    rejected = [int(i) for i in np.flatnonzero(~pipe.mask.accepted)]
    info = {
        "channels": pipe.mask.channel_count,
        "accepted_channels": pipe.mask.M,
        "rejected_channels": rejected,
        "filter": {"order": spec.order, "cutoff_hz": spec.cutoff_hz,
                   "sample_rate_hz": spec.sample_rate_hz,
                   "sections": spec.n_sections},
        "window_samples": bundle.window_samples,
        "pca_components": pipe.K,
        "explained_variance_ratio": [round(float(v), 6)
                                     for v in pipe.basis.explained_variance_ratio()],
        "explained_variance_total": float(pipe.basis.explained_variance_ratio().sum()),
    }
    if bundle.history is not None:
        info["best_epoch"] = bundle.history.best_epoch
        info["best_val_loss"] = bundle.history.best_val_loss
    click.echo(json.dumps(info, indent=2))


@main.command()
@click.option("--bundle", "bundle_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--source", "source_desc", required=True,
              help="recording path, rec:path[:loop][:speed=X], tcp:host:port, "
                   "or synth:preset=<p>,seed=<s>")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--speed", type=float, default=4.0, show_default=True,
              help="Replay speed for file sources.")
@click.option("--max-ticks", type=int, default=0, help="0 = until the stream ends.")
def decode(bundle_path, source_desc, out_path, speed, max_ticks):
    """Decode a source at 6 Hz ticks and write a JSONL event stream."""
    bundle = bundle_load(bundle_path)
    n = bundle.window_samples
    if source_desc.startswith("tcp:") or source_desc.startswith("rec:"):
        from .gateway import make_source
        source = make_source(source_desc, n)
    elif source_desc.startswith("synth:"):
        params = dict(kv.split("=") for kv in source_desc[6:].split(",") if "=" in kv)
        schedule = preset_schedule(params.get("preset", "feedback"),
                                   seed=int(params.get("seed", 0)))
        recording = synth_generate(SynthConfig(seed=int(params.get("seed", 0))), schedule)
        source = RecordingWindowSource(recording, window_samples=n, speed=speed)
    else:
        source = RecordingWindowSource(recording_read(source_desc),
                                       window_samples=n, speed=speed)

    decoder = GestureDecoder(bundle)
    rate = source.sample_rate_hz
    written = 0
    with open(out_path, "w") as fh:
        tick = 1
        while max_ticks <= 0 or written < max_ticks:
            t = tick / decoder.tick_rate_hz
            if not source.wait_for_time(t, timeout=30.0):
                break
            window = source.window_ending_at(max(int(np.ceil(t * rate)), n)) \
                or source.latest_window()
            if window is None:
                tick += 1
                continue
            result = decoder.decode_step(window.samples, window.start_sample)
            fh.write(json.dumps({
                "tick": result.decoded.tick_index,
                "t": round(t, 6),
                "decoded": GESTURE_NAMES[result.decoded.label],
                "decoded_id": int(result.decoded.label),
                "consecutive": result.decoded.consecutive_count,
                "confidence": [round(float(x), 6) for x in result.p_prime],
                "mode": result.mode.value,
            }) + "\n")
            written += 1
            tick += 1
    source.close()
    click.echo(f"{written} decode ticks -> {out_path}")


@main.command()
@click.option("--listen", default=f"127.0.0.1:8855", show_default=True)
@click.option("--publish", help="host:port to publish state snapshots to.")
@click.option("--record", "record_path", type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--headless", is_flag=True, help="No periodic state printout.")
def simulate(listen, publish, record_path, config_path, headless):
    """Run the mobile-manipulator simulator on a UDP command port."""
    from .simservice import SimulatorService
    host, port = _parse_addr(listen, 8855)
    config = RobotConfig.load(config_path) if config_path else None
    service = SimulatorService(host, port, config=config,
                               publish=_parse_addr(publish, 8861) if publish else None,
                               record_path=record_path)
    click.echo(f"simulator listening on {host}:{service.port}")
    try:
        if headless:
            service.run()
        else:
            service.start()
            import time as _time
            while True:
                _time.sleep(2.0)
                snap = service.sim.snapshot()
                click.echo(f"tick {snap['tick']} mode {snap['mode']} "
                           f"base ({snap['base']['x']:.3f}, {snap['base']['y']:.3f})")
    except KeyboardInterrupt:
        pass
    finally:
        service.stop()


@main.command()
@click.option("--bundle", "bundle_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--source", "source_desc")
@click.option("--sim", "sim_desc", default="inproc", show_default=True,
              help="inproc or udp:host:port")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8860, show_default=True)
@click.option("--tick-rate", type=float, default=6.0, show_default=True)
@click.option("--console", "console_dir", type=click.Path(exists=True, file_okay=False),
              help="Static directory with the operator console build.")
@click.option("--autostart", is_flag=True,
              help="Load bundle/source and enter Decoding immediately.")
def serve(bundle_path, source_desc, sim_desc, host, port, tick_rate, console_dir,
          autostart):
    """Run the gateway: WebSocket events on /ws, state on /state."""
    import uvicorn

    from .gateway import GatewaySession, InprocSimLink, UdpSimLink, create_app

    if sim_desc == "inproc":
        sim_link = InprocSimLink()
    elif sim_desc.startswith("udp:"):
        sim_host, sim_port = _parse_addr(sim_desc[4:], 8855)
        sim_link = UdpSimLink(sim_host, sim_port)
        click.echo(f"publishing robot state expected on udp port {sim_link.state_port} "
                   f"(pass --publish 127.0.0.1:{sim_link.state_port} to emgctl simulate)")
    else:
        raise click.UsageError("--sim must be 'inproc' or 'udp:host:port'")

    session = GatewaySession(sim_link=sim_link, tick_rate_hz=tick_rate)
    if bundle_path:
        session.handle_command({"cmd": "load_bundle", "path": bundle_path})
    if source_desc:
        session.handle_command({"cmd": "set_source", "source": source_desc})
    app = create_app(session, console_dir=console_dir)

    if autostart:
        @app.on_event("startup")
        async def _autostart():
            session.handle_command({"cmd": "start_session"})

    click.echo(f"gateway on http://{host}:{port} (ws at /ws)")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
