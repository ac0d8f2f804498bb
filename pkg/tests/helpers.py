"""Shared oracles for the test-suite."""
import numpy as np

from pgap.tensor import Tape, Tensor

H = 1e-5


def numeric_grad(f, x: np.ndarray, h: float = H) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def analytic_grad(op, x: np.ndarray, weights: np.ndarray):
    """Gradient of sum(weights * op(x)) w.r.t. x, through the tape."""
    from pgap import tensor as T

    xt = Tensor(x.copy(), requires_grad=True)
    with Tape() as tape:
        y = op(xt)
        loss = T.total(T.linear(T.reshape(y, (1, -1)), Tensor(weights.reshape(-1, 1))))
    tape.backward(loss)
    return xt.grad


def check_op(op, x: np.ndarray, rng: np.random.Generator) -> float:
    """Relative error between tape and finite-difference gradients for a random projection."""
    w = rng.normal(size=op(Tensor(x)).data.size)
    num = numeric_grad(lambda v: float(np.sum(w * op(Tensor(v)).data.reshape(-1))), x)
    return rel_err(analytic_grad(op, x, w), num)


def tiny_model_config():
    from pgap.model import ModelConfig

    return ModelConfig(local_dim=4, descriptor_dim=6, pointnet_widths=[5], slc_hidden=[5, 4], num_segments=3)


def tuple_grad_error(seed: int, n_points: int = 12, n_neg: int = 2, alpha: float = 0.5) -> float:
    """Worst relative error over all parameters of the composed tuple loss on a toy model."""
    from pgap.model import init_params
    from pgap.training import LossConfig, tuple_loss

    rng = np.random.default_rng(seed)
    params = init_params(tiny_model_config(), seed)
    # zero biases plus a dead layer put pre-activations exactly on the ReLU kink;
    # random biases keep every instance at a differentiable point
    for name in params.names():
        if name.endswith("bias"):
            params[name].data = rng.uniform(-0.1, 0.1, params[name].shape)
    clouds = rng.normal(size=(2 + n_neg, n_points, 3))
    labels = list(rng.integers(1, 4, size=2 + n_neg))
    # margin large enough that the hinge is active, so the whole graph is exercised
    cfg = LossConfig(margin=5.0, alpha=alpha)
    params.zero_grad()
    with Tape() as tape:
        loss, _ = tuple_loss(clouds, labels, params, cfg)
    tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()

        def f(w, p=p):
            saved = p.data
            p.data = w
            out = tuple_loss(clouds, labels, params, cfg)[0].item()
            p.data = saved
            return out

        worst = max(worst, rel_err(analytic, numeric_grad(f, p.data.copy())))
    return worst


def brute_knn(M, q, k, allowed):
    """Full sort of every allowed row by (distance, index)."""
    rows = [(float(np.sqrt(sum((a - b) ** 2 for a, b in zip(M[i], q)))), i) for i in allowed]
    rows.sort()
    return [i for _, i in rows[:k]]


def brute_recall(desc, true_sets, window, k):
    """Recall@k recomputed query by query, with the incremental database."""
    hits = used = 0
    for q, truth in enumerate(true_sets):
        allowed = list(range(0, q - window + 1))
        if len(truth) == 0 or not allowed:
            continue
        used += 1
        hits += bool(set(brute_knn(desc, desc[q], k, allowed)) & set(int(t) for t in truth))
    return hits / max(used, 1)


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def multi_input_grad_error(fn, arrays, rng) -> float:
    """Worst relative error of tape gradients w.r.t. every input of ``fn``."""
    from pgap import tensor as T

    w = rng.normal(size=fn(*[Tensor(a) for a in arrays]).data.size)
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        y = fn(*tensors)
        loss = T.total(T.linear(T.reshape(y, (1, -1)), Tensor(w.reshape(-1, 1))))
    tape.backward(loss)
    worst = 0.0
    for i, a in enumerate(arrays):

        def f(v, i=i):
            args = [Tensor(v) if j == i else Tensor(b) for j, b in enumerate(arrays)]
            return float(np.sum(w * fn(*args).data.reshape(-1)))

        worst = max(worst, rel_err(tensors[i].grad, numeric_grad(f, a.copy())))
    return worst
