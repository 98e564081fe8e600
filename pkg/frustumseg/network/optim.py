from typing import Dict, List, Tuple

import numpy as np


class AMSGrad:
    """Adam with the running maximum of the second moment.

    Bias correction is applied to the first moment and to the maximum of the
    second-moment estimates, matching the common framework implementation.
    """

    def __init__(
        self,
        params: List[Tuple[str, np.ndarray, np.ndarray]],
        lr: float = 1e-4,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError(f"lr must be > 0, got {lr}")
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(p) for n, p, _ in params}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(p) for n, p, _ in params}
        self.v_max: Dict[str, np.ndarray] = {n: np.zeros_like(p) for n, p, _ in params}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, param, grad in self.params:
            m, v, v_max = self.m[name], self.v[name], self.v_max[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            np.maximum(v_max, v, out=v_max)
            denom = np.sqrt(v_max / c2) + self.eps
            param -= (self.lr * (m / c1) / denom).astype(param.dtype)
