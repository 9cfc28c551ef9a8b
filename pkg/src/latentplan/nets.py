"""Dense layers and a gated recurrent cell on top of :mod:`latentplan.diffmath`."""

from __future__ import annotations

import numpy as np

from . import diffmath as dm

ACTIVATIONS = {"elu": dm.elu, "tanh": dm.tanh, None: None}


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense:
    def __init__(self, params: dm.ParameterSet, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, act: str | None = None):
        self.w = params.add(f"{name}/w", glorot(rng, d_in, d_out))
        self.b = params.add(f"{name}/b", np.zeros(d_out))
        self.act = ACTIVATIONS[act]
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x) -> dm.Tensor:
        y = dm.affine(x, self.w, self.b)
        return self.act(y) if self.act is not None else y


class MLP:
    """Stack of ``layers`` hidden elu layers followed by a linear head."""

    def __init__(self, params: dm.ParameterSet, name: str, d_in: int, hidden: int,
                 d_out: int, layers: int, rng: np.random.Generator):
        self.hidden = []
        d = d_in
        for i in range(layers):
            self.hidden.append(Dense(params, f"{name}/h{i}", d, hidden, rng, act="elu"))
            d = hidden
        self.head = Dense(params, f"{name}/out", d, d_out, rng)

    def __call__(self, x) -> dm.Tensor:
        for layer in self.hidden:
            x = layer(x)
        return self.head(x)


class GRUCell:
    """h' = (1 - z) * n + z * h with reset gate r applied to the candidate's recurrent term."""

    def __init__(self, params: dm.ParameterSet, name: str, d_in: int, d_hidden: int,
                 rng: np.random.Generator):
        self.gates = Dense(params, f"{name}/gates", d_in + d_hidden, 2 * d_hidden, rng)
        self.cand_x = Dense(params, f"{name}/cand_x", d_in, d_hidden, rng)
        self.cand_h = Dense(params, f"{name}/cand_h", d_hidden, d_hidden, rng)
        self.d_hidden = d_hidden

    def __call__(self, x, h) -> dm.Tensor:
        gates = dm.sigmoid(self.gates(dm.concat([x, h], axis=-1)))
        r = gates[:, : self.d_hidden]
        z = gates[:, self.d_hidden:]
        n = dm.tanh(self.cand_x(x) + r * self.cand_h(h))
        return (1.0 - z) * n + z * h
