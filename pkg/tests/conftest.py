import numpy as np
import pytest
import torch


def central_fd(fn, inputs, h=1e-3):
    """Central finite-difference gradient of scalar ``fn(*inputs)`` w.r.t. each input (float64)."""
    grads = []
    with torch.no_grad():
        for x in inputs:
            g = torch.zeros_like(x)
            flat, gflat = x.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = fn(*inputs).item()
                flat[i] = orig - h
                down = fn(*inputs).item()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            grads.append(g)
    return grads


def autograd_grads(fn, inputs):
    leaves = [x.detach().clone().requires_grad_(True) for x in inputs]
    fn(*leaves).backward()
    return [x.grad for x in leaves]


def rel_err(a, b):
    a, b = torch.as_tensor(a, dtype=torch.float64), torch.as_tensor(b, dtype=torch.float64)
    den = max(a.norm().item(), b.norm().item(), 1e-12)
    return (a - b).norm().item() / den


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
