"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(st: AdamState, params: list[np.ndarray], grads: list[np.ndarray | None]) -> list:
    """Update ``params`` in place and return them.

    Moment buffers are created lazily on the first call. A ``None`` gradient
    is treated as zero.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not st.m:
        st.m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        st.v = [np.zeros(p.shape, dtype=np.float64) for p in params]
    st.step += 1
    t = st.step
    c1 = 1.0 - st.beta1 ** t
    c2 = 1.0 - st.beta2 ** t
    for p, g, m, v in zip(params, grads, st.m, st.v):
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= st.beta1
        m += (1.0 - st.beta1) * g
        v *= st.beta2
        v += (1.0 - st.beta2) * np.square(g, dtype=np.float64)
        update = st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
        p -= update.astype(p.dtype)
    return params


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        adam_step(self.state, [p.data for p in self.params], [p.grad for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
