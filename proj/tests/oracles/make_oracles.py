"""Regenerates tests/data/oracles.json from numpy / scikit-image reference implementations."""
import json
import pathlib

import numpy as np
from skimage.exposure import match_histograms
from skimage.metrics import structural_similarity

rng = np.random.default_rng(20240611)
out = {}


def linear_betas(T, b0, b1):
    return np.linspace(b0, b1, T)


def cosine_betas(T, s=0.008):
    f = lambda t: np.cos((t / T + s) / (1 + s) * np.pi / 2) ** 2
    i = np.arange(T, dtype=float)
    return np.clip(1 - f(i + 1) / f(i), 1e-8, 0.999)


def ddim_update(z, eps, noise, ab, ab_prev, s):
    sigma = s * np.sqrt((1 - ab_prev) / (1 - ab)) * np.sqrt(1 - ab / ab_prev)
    x0 = (z - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
    return np.sqrt(ab_prev) * x0 + np.sqrt(1 - ab_prev - sigma**2) * eps + sigma * noise, x0


schedules = []
for curve, T, b0, b1 in [("linear", 50, 0.002, 0.3), ("linear", 20, 0.0001, 0.02), ("cosine", 30, 0.0, 0.0)]:
    betas = linear_betas(T, b0, b1) if curve == "linear" else cosine_betas(T)
    abar = np.cumprod(1 - betas)
    z = rng.normal(size=8)
    eps = rng.normal(size=8)
    noise = rng.normal(size=8)
    steps = []
    for s in (0.0, 0.7):
        for t in (T, T // 2, 1):
            ab = abar[t - 1]
            ab_prev = 1.0 if t == 1 else abar[t - 2]
            nxt, x0 = ddim_update(z, eps, noise, ab, ab_prev, s)
            steps.append({"stochasticity": s, "t": t, "next": nxt.tolist(), "clean": x0.tolist()})
    # eps = 0 rollout: z_0 = z_T * prod(sqrt(abar_{t-1} / abar_t)) = z_T / sqrt(abar_T)
    steps_rollout = (z / np.sqrt(abar[-1])).tolist()
    schedules.append({"curve": curve, "T": T, "beta_start": b0, "beta_end": b1, "alpha_bar": abar.tolist(),
                      "z": z.tolist(), "eps": eps.tolist(), "noise": noise.tolist(), "steps": steps,
                      "zero_eps_rollout": steps_rollout})
out["schedules"] = schedules

ssim_cases = []
for h, w, frames in [(16, 16, 1), (24, 20, 2), (11, 13, 1)]:
    x = rng.uniform(size=(frames, 3, h, w))
    y = np.clip(x + rng.normal(scale=0.15, size=x.shape), 0, 1)
    vals = [structural_similarity(x[f], y[f], channel_axis=0, gaussian_weights=True, sigma=1.5,
                                  use_sample_covariance=False, data_range=1.0) for f in range(frames)]
    ssim_cases.append({"shape": [frames, 3, h, w], "x": x.ravel().tolist(), "y": y.ravel().tolist(),
                       "ssim": float(np.mean(vals))})
out["ssim"] = ssim_cases

hist_cases = []
for n_src, n_ref, levels in [(64, 50, 9), (100, 100, 256), (37, 80, 5)]:
    src = np.round(rng.uniform(size=n_src) * (levels - 1)) / (levels - 1)
    ref = rng.beta(2.0, 5.0, size=n_ref)
    hist_cases.append({"source": src.tolist(), "reference": ref.tolist(),
                       "matched": match_histograms(src, ref).tolist()})
out["histogram"] = hist_cases


def pyramid_distance(x, y):
    weights = [0.4, 0.3, 0.2, 0.1]
    a, b = x.copy(), y.copy()
    total = 0.0
    for level, wgt in enumerate(weights):
        if level:
            h, w = a.shape[-2] // 2, a.shape[-1] // 2
            a = a[..., : 2 * h, : 2 * w].reshape(*a.shape[:-2], h, 2, w, 2).mean(axis=(-1, -3))
            b = b[..., : 2 * h, : 2 * w].reshape(*b.shape[:-2], h, 2, w, 2).mean(axis=(-1, -3))
        total += wgt * np.abs(a - b).mean()
    return total


x = rng.uniform(size=(2, 3, 16, 16))
y = rng.uniform(size=(2, 3, 16, 16))
out["perceptual"] = {"shape": [2, 3, 16, 16], "x": x.ravel().tolist(), "y": y.ravel().tolist(),
                     "distance": float(pyramid_distance(x, y))}

path = pathlib.Path(__file__).resolve().parents[1] / "data" / "oracles.json"
path.write_text(json.dumps(out, indent=1) + "\n")
print("wrote", path)
