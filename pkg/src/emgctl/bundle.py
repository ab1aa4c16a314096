"""Versioned model bundle: everything inference needs in one file.

A bundle holds the channel mask, filter design, normalizer, PCA basis,
network parameters, label table, and training history. Training a bundle
from a recording + cue schedule fits the whole preprocessing chain on the
64% training split only, then trains the classifier on the projected
features.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import classifier as clf
from .classifier import (ConfusionMatrix, MlpModel, SplitIndices, TrainConfig,
                         TrainingHistory, evaluate, stratified_split)
from .cues import CueSchedule, LabeledDataset, label_windows
from .gestures import GESTURE_NAMES, NUM_GESTURES
from .pipeline import (ChannelMask, FilterSpec, FittedPipeline, Normalizer,
                       PcaBasis, StreamingFilter, design_highpass,
                       fit_normalizer, fit_pca, normalize, reject_channels,
                       DEFAULT_CUTOFF_HZ, DEFAULT_FILTER_ORDER,
                       DEFAULT_IMPEDANCE_THRESHOLD_OHM, DEFAULT_PCA_COMPONENTS,
                       DEFAULT_WINDOW_SAMPLES)
from .recording import Recording

BUNDLE_FORMAT = "emgctl-bundle"
BUNDLE_VERSION = 1


@dataclass
class ModelBundle:
    pipeline: FittedPipeline
    model: MlpModel
    label_names: tuple[str, ...]
    sample_rate_hz: float
    history: TrainingHistory | None = None

    @property
    def window_samples(self) -> int:
        return self.pipeline.window_samples

    def classify_window(self, filtered_window: np.ndarray) -> np.ndarray:
        """Filtered (N, M) window -> 10 class probabilities."""
        feats = self.pipeline.features_from_filtered(filtered_window)
        return clf.softmax(self.model.forward(feats))


def _window_rms_streamed(recording: Recording, mask: ChannelMask, spec: FilterSpec,
                         dataset: LabeledDataset,
                         block_samples: int = 400_000) -> np.ndarray:
    """Per-window RMS of the causally filtered recording, computed in blocks
    so the full filtered signal never has to be materialized."""
    idx = mask.accepted_indices
    n = recording.n_samples
    window_n = dataset.window_samples
    filt = StreamingFilter(spec, len(idx))
    rms = np.empty((len(dataset), len(idx)))
    starts = dataset.window_starts
    order = np.argsort(starts, kind="stable")
    wi = 0
    tail = np.zeros((0, len(idx)))
    tail_start = 0
    for b0 in range(0, n, block_samples):
        b1 = min(b0 + block_samples, n)
        filtered = filt.process(recording.samples[idx, b0:b1].T)
        buf = np.concatenate([tail, filtered], axis=0)
        buf_start = tail_start
        while wi < len(order) and starts[order[wi]] + window_n <= b1:
            s = starts[order[wi]] - buf_start
            if s < 0:
                raise ValueError("window starts before the buffered region")
            w = buf[s:s + window_n]
            rms[order[wi]] = np.sqrt(np.mean(np.square(w), axis=0))
            wi += 1
        keep = min(window_n - 1, buf.shape[0])
        tail = buf[buf.shape[0] - keep:]
        tail_start = b1 - keep
    if wi != len(order):
        raise ValueError("recording ended before the last labeled window")
    return rms


@dataclass
class TrainResult:
    bundle: ModelBundle
    dataset: LabeledDataset
    features: np.ndarray
    labels: np.ndarray
    split: SplitIndices
    test_confusion: ConfusionMatrix


def train_bundle(recording: Recording, schedule: CueSchedule,
                 config: TrainConfig = TrainConfig(),
                 impedance_threshold_ohm: float = DEFAULT_IMPEDANCE_THRESHOLD_OHM,
                 filter_order: int = DEFAULT_FILTER_ORDER,
                 cutoff_hz: float = DEFAULT_CUTOFF_HZ,
                 window_samples: int = DEFAULT_WINDOW_SAMPLES,
                 k: int = DEFAULT_PCA_COMPONENTS) -> TrainResult:
    """Fit mask -> filter -> normalizer -> PCA on the training split, train the
    classifier, and report test performance on the held-out 20%."""
    if recording.impedances_ohm is not None:
        mask = reject_channels(recording.impedances_ohm, impedance_threshold_ohm)
    else:
        mask = ChannelMask.all_accepted(recording.channel_count)
    if k > mask.M:
        raise ValueError(f"K={k} exceeds the {mask.M} accepted channels")
    spec = design_highpass(filter_order, cutoff_hz, recording.sample_rate_hz)
    dataset = label_windows(recording, schedule, window_samples)

    rms = _window_rms_streamed(recording, mask, spec, dataset)
    labels = dataset.labels
    split = stratified_split(labels, config.split, config.seed)

    normalizer = fit_normalizer(rms[split.train])
    z = normalize(normalizer, rms)
    basis = fit_pca(z[split.train].T, k)
    features = z @ basis.components

    model, history = clf.train(features, labels, config, split=split)
    fitted = FittedPipeline(mask=mask, filter_spec=spec, normalizer=normalizer,
                            basis=basis, window_samples=window_samples)
    bundle = ModelBundle(pipeline=fitted, model=model, label_names=GESTURE_NAMES,
                         sample_rate_hz=recording.sample_rate_hz, history=history)
    confusion = evaluate(model, features[split.test], labels[split.test])
    return TrainResult(bundle=bundle, dataset=dataset, features=features,
                       labels=labels, split=split, test_confusion=confusion)


def recalibrate(recording: Recording, schedule: CueSchedule,
                config: TrainConfig = TrainConfig(), **kwargs) -> TrainResult:
    """Train a brand-new bundle on the new session only: the channel mask,
    normalizer, PCA basis, and network are all refit from scratch."""
    dataset = label_windows(recording, schedule, kwargs.get("window_samples",
                                                            DEFAULT_WINDOW_SAMPLES))
    if len(dataset) == 0:
        raise ValueError("recalibration dataset is empty")
    return train_bundle(recording, schedule, config, **kwargs)


def evaluate_bundle(bundle: ModelBundle, recording: Recording, schedule: CueSchedule,
                    indices: np.ndarray | None = None) -> ConfusionMatrix:
    """Run a recording's labeled windows through the bundle's own pipeline and
    tally the confusion matrix (optionally over a subset of windows)."""
    dataset = label_windows(recording, schedule, bundle.window_samples)
    rms = _window_rms_streamed(recording, bundle.pipeline.mask,
                               bundle.pipeline.filter_spec, dataset)
    feats = bundle.pipeline.features_from_rms(rms)
    labels = dataset.labels
    if indices is not None:
        feats, labels = feats[indices], labels[indices]
    return evaluate(bundle.model, feats, labels)


def bundle_save(bundle: ModelBundle, path) -> None:
    hist = bundle.history
    meta = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "sample_rate_hz": bundle.sample_rate_hz,
        "window_samples": bundle.window_samples,
        "filter_order": bundle.pipeline.filter_spec.order,
        "cutoff_hz": bundle.pipeline.filter_spec.cutoff_hz,
        "label_names": list(bundle.label_names),
        "dropout_rate": bundle.model.dropout_rate,
        "rng_seed": bundle.model.rng_seed,
        "n_layers": len(bundle.model.weights),
        "history": None if hist is None else {
            "train_loss": hist.train_loss,
            "val_loss": hist.val_loss,
            "best_epoch": hist.best_epoch,
            "best_val_loss": hist.best_val_loss,
        },
    }
    arrays = {
        "mask_accepted": bundle.pipeline.mask.accepted,
        "filter_sos": bundle.pipeline.filter_spec.sections,
        "norm_mu": bundle.pipeline.normalizer.mu,
        "norm_sigma": bundle.pipeline.normalizer.sigma,
        "pca_components": bundle.pipeline.basis.components,
        "pca_singular_values": bundle.pipeline.basis.singular_values,
    }
    for i, (w, b) in enumerate(zip(bundle.model.weights, bundle.model.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def bundle_load(path) -> ModelBundle:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != BUNDLE_FORMAT:
            raise ValueError(f"not a model bundle: {path}")
        if meta.get("version") != BUNDLE_VERSION:
            raise ValueError(f"unsupported bundle version {meta.get('version')}")
        mask = ChannelMask(data["mask_accepted"])
        spec = FilterSpec(order=int(meta["filter_order"]),
                          cutoff_hz=float(meta["cutoff_hz"]),
                          sample_rate_hz=float(meta["sample_rate_hz"]),
                          sections=data["filter_sos"])
        normalizer = Normalizer(mu=data["norm_mu"], sigma=data["norm_sigma"])
        basis = PcaBasis(components=data["pca_components"],
                         singular_values=data["pca_singular_values"])
        weights = [data[f"w{i}"] for i in range(meta["n_layers"])]
        biases = [data[f"b{i}"] for i in range(meta["n_layers"])]
        model = MlpModel(weights=weights, biases=biases,
                         dropout_rate=float(meta["dropout_rate"]),
                         rng_seed=int(meta["rng_seed"]))
        history = None
        if meta.get("history"):
            h = meta["history"]
            history = TrainingHistory(train_loss=h["train_loss"], val_loss=h["val_loss"],
                                      best_epoch=h["best_epoch"],
                                      best_val_loss=h["best_val_loss"])
        fitted = FittedPipeline(mask=mask, filter_spec=spec, normalizer=normalizer,
                                basis=basis, window_samples=int(meta["window_samples"]))
        return ModelBundle(pipeline=fitted, model=model,
                           label_names=tuple(meta["label_names"]),
                           sample_rate_hz=float(meta["sample_rate_hz"]),
                           history=history)
