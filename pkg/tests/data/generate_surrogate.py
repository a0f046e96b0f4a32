"""Generate the BasicMotionsLike surrogate corpus.

The genuine UEA BasicMotions recordings cannot be redistributed from this
environment, so the accuracy-gate tests that need a 40/40, M=6, T=100,
4-class wearable-sensor problem run against this generated stand-in with
the same dimensions: three accelerometer-like and three gyroscope-like
channels per sample, classes standing / walking / running / badminton
with per-sample phase, frequency, amplitude and orientation jitter.

Run from the repository root to regenerate (output is committed):

    python3 tests/data/generate_surrogate.py
"""

from pathlib import Path

import numpy as np

T = 100
PER_CLASS = 10
CLASSES = ["standing", "walking", "running", "badminton"]


def _gait(rng, t, freq, amp, noise):
    """Periodic six-channel locomotion pattern with a second harmonic and
    quarter-phase gyro lag."""
    phase = rng.uniform(0, 2 * np.pi)
    f = freq * (1 + 0.1 * rng.uniform(-1, 1))
    a = amp * (1 + 0.2 * rng.uniform(-1, 1))
    ticks = np.arange(t)
    base = 2 * np.pi * f * ticks + phase
    out = np.empty((t, 6))
    out[:, 0] = a * np.sin(base)
    out[:, 1] = 0.5 * a * np.sin(base + np.pi / 2)
    out[:, 2] = 1.0 + 0.4 * a * np.abs(np.sin(base)) + 0.2 * a * np.sin(2 * base)
    out[:, 3] = 0.8 * a * np.sin(base + np.pi / 4)
    out[:, 4] = 0.6 * a * np.sin(base + 3 * np.pi / 4)
    out[:, 5] = 0.3 * a * np.sin(2 * base + phase)
    return out + noise * rng.standard_normal((t, 6))


def _standing(rng, t):
    drift = np.cumsum(0.01 * rng.standard_normal((t, 6)), axis=0)
    out = drift + 0.05 * rng.standard_normal((t, 6))
    out[:, 2] += 1.0  # gravity
    return out


def _badminton(rng, t):
    out = _gait(rng, t, freq=0.045, amp=0.4, noise=0.2)
    for _ in range(int(rng.integers(3, 7))):
        center = rng.uniform(8, t - 8)
        width = rng.uniform(2.5, 5.0)
        strength = rng.uniform(3.0, 5.0)
        swing_phase = rng.uniform(0, 2 * np.pi)
        ticks = np.arange(t)
        envelope = np.exp(-0.5 * ((ticks - center) / width) ** 2)
        burst = strength * envelope * np.sin(2 * np.pi * 0.25 * (ticks - center)
                                             + swing_phase)
        out[:, 0] += burst
        out[:, 3] += 0.9 * burst
        out[:, 4] += 0.6 * envelope * np.cos(2 * np.pi * 0.25 * (ticks - center)
                                             + swing_phase)
    return out


def make_sample(rng, cls):
    if cls == "standing":
        raw = _standing(rng, T)
    elif cls == "walking":
        raw = _gait(rng, T, freq=0.05, amp=1.0, noise=0.15)
    elif cls == "running":
        raw = _gait(rng, T, freq=0.1, amp=2.2, noise=0.25)
    else:
        raw = _badminton(rng, T)
    # mild per-sample sensor-orientation mixing within each triad
    mix = np.eye(3) + 0.05 * rng.standard_normal((3, 3))
    raw[:, :3] = raw[:, :3] @ mix.T
    raw[:, 3:] = raw[:, 3:] @ mix.T
    return raw


def make_split(seed):
    rng = np.random.default_rng(seed)
    samples, labels = [], []
    for i in range(PER_CLASS * len(CLASSES)):
        cls = CLASSES[i % len(CLASSES)]
        samples.append(make_sample(rng, cls))
        labels.append(cls)
    return np.round(np.stack(samples), 6), labels


def main():
    import sys
    sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))
    from smate.data import MtsDataset, serialize_ts

    out_dir = Path(__file__).parent / "uea" / "BasicMotionsLike"
    out_dir.mkdir(parents=True, exist_ok=True)
    for split, seed in (("TRAIN", 7), ("TEST", 8)):
        values, labels = make_split(seed)
        ds = MtsDataset("BasicMotionsLike", values, labels, CLASSES)
        (out_dir / f"BasicMotionsLike_{split}.ts").write_text(serialize_ts(ds))
        print(f"wrote {split}: {values.shape}")


if __name__ == "__main__":
    main()
