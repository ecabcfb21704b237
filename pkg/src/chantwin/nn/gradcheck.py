"""Central finite-difference check of ``Model.backward``."""

import numpy as np

from .layers import ReLU

# below this magnitude entries are compared absolutely: central differences in
# float64 carry ~1e-10 roundoff noise at eps=1e-5, which swamps near-zero gradients
_FLOOR = 1e-3


def _relu_masks(model):
    return [layer._cache.copy() for layer in model.layers if isinstance(layer, ReLU)]


def _same_masks(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradcheck(model, x, eps=1e-5, mode="train", seed=0, max_per_tensor=None, check_input=False):
    """Worst relative disagreement between backprop and central differences.

    The scalar objective is ``sum(forward(x) * R)`` for a fixed random ``R``.
    Parameter entries whose perturbation flips any ReLU input across zero are
    left out of the comparison (the derivative does not exist there).

    Parameters
    ----------
    model : Model
    x : np.ndarray
        Input batch.
    eps : float
        Finite-difference step, in ``[1e-7, 1e-3]``.
    mode : {"train", "infer"}
    seed : int
        Seeds the projection ``R`` and the entry subsampling.
    max_per_tensor : int, optional
        Check at most this many randomly chosen entries per parameter array.
    check_input : bool
        Also compare the input gradient.

    Returns
    -------
    float
        Maximum of ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    saved = model.state()
    out = model.forward(x, mode)
    proj = rng.standard_normal(out.shape)
    grads, grad_in = model.backward(proj)
    base = _relu_masks(model)

    def objective():
        y = model.forward(x, mode)
        return float(np.sum(y * proj)), _relu_masks(model)

    worst = 0.0
    targets = [(grads[i][name], arr) for i, name, arr in model.parameters()]
    if check_input:
        targets.append((grad_in, x))
    for analytic, arr in targets:
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = rng.choice(flat.size, size=max_per_tensor, replace=False)
        ana = analytic.reshape(-1)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            fp, mp = objective()
            flat[j] = orig - eps
            fm, mm = objective()
            flat[j] = orig
            if not (_same_masks(base, mp) and _same_masks(base, mm)):
                continue
            num = (fp - fm) / (2.0 * eps)
            err = abs(num - ana[j]) / max(abs(num), abs(ana[j]), _FLOOR)
            worst = max(worst, err)
    model.load_state(saved)
    return worst
