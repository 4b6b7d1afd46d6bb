"""Adam optimizer with per-group learning rates and row-level state surgery.

Anchor growing/pruning resizes parameter tensors mid-training; ``remap_rows``
carries the first/second moments of surviving rows into the replacement
tensor and zero-initializes rows that are new.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["Adam"]


class Adam:
    def __init__(self, groups: list[dict], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-15):
        """``groups`` is a list of {"params": [Tensor], "lr": float, "name": str}."""
        self.groups = []
        for g in groups:
            self.groups.append({
                "params": list(g["params"]),
                "lr": float(g["lr"]),
                "name": g.get("name", ""),
            })
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state: dict[int, dict] = {}
        for g in self.groups:
            for p in g["params"]:
                self._init_state(p)

    def _init_state(self, p: Tensor) -> None:
        self.state[id(p)] = {
            "m": np.zeros_like(p.values),
            "v": np.zeros_like(p.values),
            "t": 0,
        }

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def step(self) -> None:
        for g in self.groups:
            lr = g["lr"]
            for p in g["params"]:
                if p.grad is None:
                    continue
                st = self.state[id(p)]
                st["t"] += 1
                st["m"] = self.beta1 * st["m"] + (1 - self.beta1) * p.grad
                st["v"] = self.beta2 * st["v"] + (1 - self.beta2) * (p.grad * p.grad)
                m_hat = st["m"] / (1 - self.beta1 ** st["t"])
                v_hat = st["v"] / (1 - self.beta2 ** st["t"])
                p.values -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def remap_rows(self, old: Tensor, new: Tensor, row_map: np.ndarray) -> None:
        """Transfer axis-0 moment rows from ``old`` to ``new``.

        ``row_map[i]`` gives the source row in ``old`` for row i of ``new``,
        or -1 for a freshly created row (zero moments).
        """
        st_old = self.state.pop(id(old), None)
        m = np.zeros_like(new.values)
        v = np.zeros_like(new.values)
        t = 0
        if st_old is not None:
            t = st_old["t"]
            keep = row_map >= 0
            m[keep] = st_old["m"][row_map[keep]]
            v[keep] = st_old["v"][row_map[keep]]
        self.state[id(new)] = {"m": m, "v": v, "t": t}
        for g in self.groups:
            g["params"] = [new if p is old else p for p in g["params"]]

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Flatten moments for checkpointing, keyed by group name and index."""
        out = {}
        for g in self.groups:
            for i, p in enumerate(g["params"]):
                st = self.state[id(p)]
                key = f"{g['name']}.{i}"
                out[f"{key}.m"] = st["m"]
                out[f"{key}.v"] = st["v"]
                out[f"{key}.t"] = np.asarray([st["t"]], dtype=np.int64)
        return out

    def load_state_tensors(self, blocks: dict[str, np.ndarray]) -> None:
        for g in self.groups:
            for i, p in enumerate(g["params"]):
                key = f"{g['name']}.{i}"
                if f"{key}.m" not in blocks:
                    continue
                st = self.state[id(p)]
                st["m"] = np.asarray(blocks[f"{key}.m"], dtype=np.float64).reshape(p.values.shape)
                st["v"] = np.asarray(blocks[f"{key}.v"], dtype=np.float64).reshape(p.values.shape)
                st["t"] = int(np.asarray(blocks[f"{key}.t"]).reshape(-1)[0])
