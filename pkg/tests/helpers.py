"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from mtmasker.autodiff import Tensor

FD_STEP = 1e-5
FD_RTOL = 1e-4


def finite_difference_grad(fn, x, h=FD_STEP):
    """Central-difference gradient of scalar fn(ndarray) at x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(x)
        flat[i] = orig - h
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * h)
    return grad


def check_gradients(build_loss, inputs, rtol=FD_RTOL, h=FD_STEP):
    """Compare backward() gradients against central differences.

    `inputs` is a dict name -> ndarray; `build_loss` receives a dict of
    leaf Tensors (requires_grad) and returns a scalar Tensor.
    """
    leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True)
              for k, v in inputs.items()}
    loss = build_loss(leaves)
    loss.backward()
    for name, leaf in leaves.items():
        assert leaf.grad is not None, f"no gradient reached input {name!r}"

        def scalar_fn(x, _name=name):
            probe = {k: Tensor(v.data.copy(), requires_grad=False)
                     for k, v in leaves.items()}
            probe[_name] = Tensor(x)
            return float(build_loss(probe).data)

        numeric = finite_difference_grad(scalar_fn, leaf.data.copy(), h=h)
        analytic = leaf.grad
        scale = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), 1.0)
        rel = np.abs(analytic - numeric) / scale
        assert rel.max() <= rtol, (
            f"gradient mismatch for {name!r}: max relative error {rel.max():.3g}")
