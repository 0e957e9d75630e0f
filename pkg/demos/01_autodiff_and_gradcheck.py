# Reverse-mode autodiff on numpy arrays, checked against finite differences.
import numpy as np

from simscore import autodiff as ad
from simscore.model import end_to_end_gradcheck

# A tensor that requires grad records how it was produced.
x = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
loss = ad.mean(x * x)
loss.backward()
print("d mean(x^2) / dx =", x.grad)  # 2x / 3

# Gradients accumulate until cleared.
ad.tsum(x).backward()
print("after a second backward:", x.grad)
ad.zero_grads([x])

# Masked softmax puts exact zeros on padding.
scores = ad.Tensor([[2.0, 0.5, -1.0, 3.0]])
print("masked softmax:", ad.softmax(scores, mask=[[True, True, False, True]]).data)

# gradcheck compares the tape against central differences coordinate by coordinate.
w = ad.Tensor(np.random.default_rng(0).normal(size=(3, 2)), requires_grad=True)
b = ad.Tensor(np.zeros(2), requires_grad=True)
inp = np.random.default_rng(1).normal(size=(5, 3))
report = ad.gradcheck(lambda: ad.tsum(ad.tanh(ad.matmul(inp, w) + b)), [w, b])
print("tanh layer max relative error:", f"{report.max_error:.2e}")

# The same check through the whole scorer: encoder, Bi-LSTM, pooling, head, Pearson loss.
for seed in range(3):
    rep, bias_grad = end_to_end_gradcheck(seed, max_coords=4)
    print(f"seed {seed}: max rel err {rep.max_error:.2e}, output-bias grad {bias_grad:.1e}")
