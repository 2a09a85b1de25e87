"""Four (K, T) configurations on synthetic RGB denoising.

Trains each configuration for 24 outer steps and prints the final
training loss and test PSNR.  Deeper blocks with more restarts should
reach the lowest training loss.  Takes well under a minute.
"""

# %%
import numpy as np

from retune.bilevel import TrainConfig, WaveletDenoiseModel, evaluate, retune_train
from retune.core import HyperParams, psnr
from retune.data import denoising_dataset

train = denoising_dataset(24, 32, seed=0)
test = denoising_dataset(4, 32, seed=1)
noisy = np.mean([psnr(o.data, c.data) for c, o in test.pairs])
model = WaveletDenoiseModel(levels=3)
p0 = HyperParams.uniform(3, 3, lam=0.5)

# %%
print(f"noisy input PSNR {noisy:.2f} dB")
for K, T in ((1, 1), (1, 10), (10, 1), (10, 10)):
    cfg = TrainConfig(K=K, T=T, threads=4)
    lt, hist = retune_train(cfg, train, p0, model)
    loss, _ = evaluate(cfg, train, lt, model)
    _, tp = evaluate(cfg, test, lt, model)
    print(f"(K, T) = ({K:>2}, {T:>2}): train loss {loss:8.3f}   test PSNR {tp:6.2f} dB")
