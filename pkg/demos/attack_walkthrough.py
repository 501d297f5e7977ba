"""
Fooling a small modulation classifier
=====================================

Train a classifier on four schemes with short frames, then compare
per-frame PGD, a single universal perturbation and per-class universal
perturbations against noise controls of the same energy.  Finally the
universal perturbation is sent without knowing where the frame starts.
Takes under a minute on one core: ``python demos/attack_walkthrough.py``.
"""

import numpy as np

from rfadv.attacks import AttackConfig, apply, control_gwn, control_shuffle, craft_cuaa, craft_uaa, pgd_vectors
from rfadv.data import generate_dataset
from rfadv.experiments import class_keyed, complex_noise, psr_db
from rfadv.modem import ModScheme
from rfadv.neural import TrainConfig, accuracy, build_model, predict, train

L = 256
names = ["bpsk", "qpsk", "16qam", "64qam"]
schemes = [ModScheme.from_name(n) for n in names]
train_ds = generate_dataset(schemes, 150, frame_len=L, seed=3)
test_ds = generate_dataset(schemes, 50, frame_len=L, seed=3, first_frame=150)

# %%
# Training uses random SNR (0 to 30 dB) and phase for every frame.
model = build_model(len(names), L, channels=(16, 16, 16), hidden=32, seed=0).astype(np.float32)
model, history = train(model, train_ds.frames, train_ds.labels, TrainConfig(epochs=15, seed=1))
clean = accuracy(model, test_ds.frames, test_ds.labels)
print(f"held-out clean accuracy {clean:.3f} after {len(history)} epochs")

# %%
# Each attack gets the same l2 budget.  Frames have unit power, so the
# budget reads as a perturbation-to-signal ratio.
eps = 3.0
cfg = AttackConfig(eps, seed=5, craft_size=256, val_size=64, min_class_count=32)
x, y = test_ds.frames, test_ds.labels
print(f"\nbudget eps={eps} ({psr_db(eps, L):.1f} dB relative to the signal)")

r_pgd = pgd_vectors(model, x, y, cfg)
uaa = craft_uaa(model, train_ds, cfg)
cuaa = craft_cuaa(model, train_ds, cfg)
rng = np.random.default_rng(9)
v = uaa.universal
results = {
    "clean": x,
    "pgd (one vector per frame)": x + r_pgd,
    "cuaa (one vector per class)": x + class_keyed(cuaa, y),
    "uaa (one vector for all)": x + v,
    "gaussian noise, same norm": x + np.stack([control_gwn(v, rng) for _ in range(len(x))]),
    "uaa samples shuffled": x + control_shuffle(v, rng),
}
for label, frames in results.items():
    print(f"  {label:<30s} accuracy {accuracy(model, frames, y):.3f}")

# %%
# Channel noise after the perturbation.  PAN compares the perturbation's
# per-sample deviation with the noise deviation.  This classifier averages
# its features over the frame, so noise averages out faster than a fixed
# in-band perturbation does; compare each column with the baseline.
sigma_a = eps / np.sqrt(L)
print("\n  PAN dB   baseline    pgd    cuaa    uaa")
for pan in (10, 0, -10):
    sigma = sigma_a * 10 ** (-pan / 20)
    row = [accuracy(model, f + complex_noise(f.shape, sigma, rng), y)
           for f in (x, x + r_pgd, x + class_keyed(cuaa, y), x + v)]
    print(f"  {pan:6d} " + "".join(f"{a:8.3f}" for a in row))

# %%
# A jammer rarely knows the frame timing.  Apply the universal vector with
# a random circular delay and phase per frame and compare fooling rates.
base = predict(model, x)
sync = np.mean(predict(model, apply(x, uaa)) != base)
shifts = rng.integers(0, L, len(x))
phases = rng.uniform(-np.pi, np.pi, len(x))
unsync = np.mean(predict(model, apply(x, uaa, None, shifts, phases)) != base)
print(f"\nfooling rate synchronized {sync:.3f}, random delay and phase {unsync:.3f}")
