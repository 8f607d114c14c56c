import numpy as np
import pytest

from goldnet import autodiff as ad


def numeric_grad(build, params, index, h=1e-5):
    """Central finite difference of build(params)->scalar w.r.t. one real
    component (complex arrays are perturbed via their float view)."""
    def ev(delta):
        qs = [p.copy() for p in params]
        flat = qs[index[0]].view(float).ravel() if np.iscomplexobj(qs[index[0]]) \
            else qs[index[0]].ravel()
        flat[index[1]] += delta
        return float(build([ad.Tensor(q) for q in qs]).data)

    return (ev(h) - ev(-h)) / (2.0 * h)


def grad_check(build, params, rng, n_points=10, h=1e-5, rtol=1e-4):
    """Compare autodiff gradients of a scalar functional against central
    differences at randomly chosen components; returns worst relative error."""
    tensors = [ad.Tensor(p.copy()) for p in params]
    loss = build(tensors)
    ad.backward(loss)
    worst = 0.0
    for pi, (t, p) in enumerate(zip(tensors, params)):
        size = p.view(float).size if np.iscomplexobj(p) else p.size
        gflat = t.grad.view(float).ravel() if np.iscomplexobj(t.grad) \
            else t.grad.ravel()
        for ci in rng.choice(size, size=min(n_points, size), replace=False):
            num = numeric_grad(build, params, (pi, int(ci)), h)
            got = gflat[int(ci)]
            denom = max(1e-8, abs(num), abs(got))
            worst = max(worst, abs(num - got) / denom)
    assert worst < rtol, f"worst relative gradient error {worst}"
    return worst


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)
