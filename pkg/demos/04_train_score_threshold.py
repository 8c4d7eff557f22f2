"""Normal-only training, anomaly scores, and the FPR-bounded threshold.

Generates a small synthetic machine-sound dataset, trains the TCN
variational model on the normal partition only, then scores the held-out
normals and all anomalies and picks the threshold that tolerates a 10%
false positive rate.
"""

import tempfile
from pathlib import Path

import numpy as np

from aad import (
    FeatureConfig,
    NORMAL,
    SynthConfig,
    TrainConfig,
    dataset_features,
    decide,
    score_dataset,
    select_threshold,
    split_index,
    synth_generate,
    train,
)
from aad.models import build, default_spec

with tempfile.TemporaryDirectory() as tmp:
    index = synth_generate(Path(tmp), SynthConfig(
        n_normal=60, n_anomaly=20, duration_s=2.0, sample_rate=16000, seed=5))
    train_index, test_index = split_index(index, test_normal_fraction=0.2, seed=5)
    print(f"dataset: {len(index)} clips; training on "
          f"{len(train_index)} normals, testing on {len(test_index)}")

    cfg = FeatureConfig(n_fft=1024, hop=512, n_mels=64, context_frames=5)
    train_clips = dataset_features(train_index, cfg)
    test_clips = dataset_features(test_index, cfg)

    model = build(default_spec("tcn_cvae", n_mels=64, seed=5))
    model, log = train(model, train_clips,
                       TrainConfig(epochs=8, batch_size=64, seed=5))
    losses = log.train_losses()
    print(f"trained {model.spec.kind} ({model.param_count()} params): "
          f"loss {losses[0]:.1f} -> {losses[-1]:.1f} over {len(losses)} epochs")

    records = score_dataset(model, test_clips)
    normal_scores = [r.score for r in records if r.label == NORMAL]
    tau = select_threshold(normal_scores, max_fpr=0.10)
    print(f"threshold at 10% max FPR: tau = {tau:.2f}")

    hits = misses = false_alarms = 0
    for r in records:
        verdict = decide(r.score, tau)
        if r.label == "anomaly":
            hits += verdict == "anomaly"
            misses += verdict == "normal"
        else:
            false_alarms += verdict == "anomaly"
    print(f"detected {hits}/{hits + misses} anomalies with "
          f"{false_alarms}/{len(normal_scores)} false alarms")
    lo = min(normal_scores)
    hi = max(r.score for r in records if r.label == "anomaly")
    print(f"score range: normals start at {lo:.2f}, anomalies reach {hi:.2f}")
