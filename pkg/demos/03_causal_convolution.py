"""Dilated causal convolution: no output ever reads the future.

Shows the left-padded tap arithmetic on a tiny sequence, then measures
the receptive field of a dilated stack by gradient masking and compares
it with the closed-form history-coverage estimates.
"""

import numpy as np

from aad.models import empirical_receptive_field, receptive_field
from aad.tensor import Tensor, conv1d_causal

x = Tensor(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
w = Tensor(np.array([[[1.0, 1.0]]]))
print("x              =", x.data[0, 0].tolist())
print("conv d=1       =", conv1d_causal(x, w, dilation=1).data[0, 0].tolist())
print("conv d=2       =", conv1d_causal(x, w, dilation=2).data[0, 0].tolist())

# perturbing a future sample leaves all earlier outputs untouched
rng = np.random.default_rng(1)
signal = rng.normal(size=(1, 1, 12))
kernel = Tensor(rng.normal(size=(1, 1, 3)))
base = conv1d_causal(Tensor(signal), kernel, dilation=2).data
bumped = signal.copy()
bumped[0, 0, 8] += 100.0
out = conv1d_causal(Tensor(bumped), kernel, dilation=2).data
print("outputs before t=8 unchanged:",
      bool(np.array_equal(out[0, 0, :8], base[0, 0, :8])))

print()
print("history coverage of a plain dilated stack (dilations 1,2,...,2^(l-1)):")
print(f"{'layers':>7} {'kernel':>7} {'2^l(k-1)':>9} {'1+(k-1)(2^l-1)':>15} {'measured':>9}")
for layers, kernel_size in ((3, 2), (4, 3), (6, 3), (2, 1)):
    rf = receptive_field(layers, kernel_size)
    measured = empirical_receptive_field(layers, kernel_size)
    print(f"{layers:>7} {kernel_size:>7} {rf.estimate:>9} "
          f"{rf.exact:>15} {measured:>9}")
