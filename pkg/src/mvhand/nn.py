"""Parameter store and the few layer helpers the networks are built from."""
import numpy as np

from . import diffcore as dc


class ParamStore:
    """Ordered name -> float64 array mapping with seeded initialisation.

    ``leaves()`` wraps every array in a fresh trainable node for one forward
    pass; gradients are read back from those nodes after ``backward``.
    """

    def __init__(self, seed=0):
        self.arrays = {}
        self._rng = np.random.default_rng(seed)

    def __contains__(self, name):
        return name in self.arrays

    def __getitem__(self, name):
        return self.arrays[name]

    def names(self):
        return list(self.arrays)

    def add_uniform(self, name, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        self.arrays[name] = self._rng.uniform(-bound, bound, size=shape)

    def add_const(self, name, value):
        self.arrays[name] = np.array(value, dtype=np.float64)

    def add_linear(self, name, n_in, n_out, bias=0.0):
        self.add_uniform(f"{name}.w", (n_in, n_out), n_in)
        self.add_const(f"{name}.b", np.full(n_out, bias, dtype=np.float64))

    def add_mlp(self, name, n_in, n_hidden, n_out, hidden_layers=1):
        widths = [n_in] + [n_hidden] * hidden_layers + [n_out]
        for i in range(len(widths) - 1):
            self.add_linear(f"{name}.{i}", widths[i], widths[i + 1])

    def leaves(self):
        return {k: dc.Node(v, name=k, requires_grad=True) for k, v in self.arrays.items()}

    def constants(self):
        return {k: dc.Node(v, op="const", name=k, requires_grad=False) for k, v in self.arrays.items()}

    def copy(self):
        out = ParamStore()
        out.arrays = {k: v.copy() for k, v in self.arrays.items()}
        return out

    def num_params(self):
        return int(sum(v.size for v in self.arrays.values()))


def linear(x, p, name):
    """x (..., n_in) @ w + b over the last axis."""
    w, b = p[f"{name}.w"], p[f"{name}.b"]
    lead = x.shape[:-1]
    flat = dc.reshape(x, (-1, x.shape[-1]))
    y = dc.matmul(flat, w)
    y = y + dc.broadcast_repeat(dc.reshape(b, (1, -1)), y.shape)
    return dc.reshape(y, lead + (w.shape[1],))


def mlp(x, p, name, slope=0.01):
    """Fully-connected layers ``name.0``, ``name.1``, ... with leaky-relus between them."""
    i = 0
    while f"{name}.{i + 1}.w" in p:
        x = dc.leaky_relu(linear(x, p, f"{name}.{i}"), slope)
        i += 1
    return linear(x, p, f"{name}.{i}")
