"""Learning (sigma, tau) for plug-and-play inpainting.

Ninety percent of the pixels are masked.  The stand-in denoiser is
wavelet group soft-thresholding; only the threshold and the step size
are trained.
"""

# %%
import numpy as np

from retune.bilevel import TrainConfig, PnPModel, evaluate
from retune.core import psnr
from retune.data import restoration_dataset
from retune.forward_models import adjoint, random_mask
from retune.pnp import WaveletThresholdDenoiser, learn_sigma_tau

shape = (32, 32, 3)
A = random_mask(shape, keep_prob=0.1, rng=np.random.default_rng(1))
train = restoration_dataset(24, 32, seed=0, A=A)
test = restoration_dataset(4, 32, seed=1, A=A)
D = WaveletThresholdDenoiser(shape, levels=3)
cfg = TrainConfig(K=10, T=10, threads=4)

# %%
baseline = np.mean([psnr(adjoint(A, o.data), c.data) for c, o in test.pairs])
sigma, tau, hist = learn_sigma_tau(cfg, train, A, D, sigma0=0.05, tau0=1.0)
_, trained = evaluate(cfg, test, np.log([sigma, tau]), PnPModel(A, D))
print(f"A^T y baseline {baseline:.2f} dB -> trained {trained:.2f} dB (sigma {sigma:.4f}, tau {tau:.4f})")
print(hist.to_csv().splitlines()[-1])
