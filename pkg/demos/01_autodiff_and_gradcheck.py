"""Tour of the tensor core: tape-based gradients and central-difference checks.

Run from the repository root:  python demos/01_autodiff_and_gradcheck.py
"""

import numpy as np

from harmlab import Graph, Tensor, grad_check
from harmlab import tensor as tc

# Every operation is a plain function over Tensors. Recording happens only
# inside a Graph context, and only for tensors that ask for gradients.
x = Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
w = Tensor(np.array([[2.0, 0.0], [1.0, 1.0]]), requires_grad=True)

with Graph() as graph:
    y = tc.matmul(w, x)          # [2x2] @ [2x2]
    z = tc.relu(y)               # kink at 0, subgradient 0 there
    loss = tc.mean_all(z)
    graph.backward(loss)

print("loss         :", loss.item())
print("dloss/dx     :\n", x.grad)
print("dloss/dw     :\n", w.grad)

# The same expression, verified against central differences. grad_check
# re-evaluates the function with nudged coordinates, so it must be pure.
def fn(ts):
    return tc.mean_all(tc.relu(tc.matmul(ts[1], ts[0])))

report = grad_check(fn, [Tensor(x.data.copy()), Tensor(w.data.copy())], name="relu_matmul")
print(report.line())

# The adaptive-moment optimizer drives every training loop in the package.
from harmlab import AdamState, adam_step

p = Tensor(np.zeros(3))
state = AdamState(lr=0.05, names=["p"])
for step in range(200):
    grad = 2.0 * (p.data - np.array([1.0, -2.0, 0.5]))  # d/dp ||p - target||^2
    adam_step([p], [grad], state)
print("adam converged to:", np.round(p.data, 4), "(target [1, -2, 0.5])")
