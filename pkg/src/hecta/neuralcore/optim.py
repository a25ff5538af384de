import numpy as np


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(grads, max_norm):
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class RMSprop:
    """Square-average scaled descent: ``v = a v + (1-a) g^2``,
    ``w -= lr g / (sqrt(v) + eps)``.

    The square-average accumulators live in ``self.state`` keyed like the
    parameters.
    """

    def __init__(self, alpha=0.99, eps=1e-5):
        self.alpha = alpha
        self.eps = eps
        self.state = {}

    def step(self, params, grads, lr):
        """Update ``params`` in place. Returns False (and leaves everything
        untouched) if any gradient is non-finite."""
        return rmsprop_step(params, grads, lr, self.state, self.alpha, self.eps)


def rmsprop_step(params, grads, lr, state, alpha=0.99, eps=1e-5):
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            return False
    for name, g in grads.items():
        v = state.get(name)
        if v is None:
            v = state[name] = np.zeros_like(g)
        v *= alpha
        v += (1.0 - alpha) * g * g
        params[name] -= lr * g / (np.sqrt(v) + eps)
    return True
