from typing import Optional, Sequence

import numpy as np


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, x)


class QNetwork:
    """Fully connected action-value network in float64

    Rectifier on hidden layers, identity on the output layer. Weights are
    stored (fan_in, fan_out) so a batch of row vectors goes through `x @ W + b`.
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        rng: Optional[np.random.Generator] = None,
        weights: Optional[list[np.ndarray]] = None,
        biases: Optional[list[np.ndarray]] = None,
    ):
        if len(layer_sizes) < 2 or any(size < 1 for size in layer_sizes):
            raise ValueError(f"invalid layer sizes {list(layer_sizes)}")

        self.layer_sizes = [int(size) for size in layer_sizes]

        if weights is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            # He initialization
            weights = [
                rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
                for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:])
            ]
        if biases is None:
            biases = [np.zeros(fan_out) for fan_out in self.layer_sizes[1:]]

        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]

        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise ValueError(f"layer {i} has shape {w.shape}/{b.shape}, expected {expected}")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_actions(self) -> int:
        return self.layer_sizes[-1]

    def _activations(self, x: np.ndarray) -> list[np.ndarray]:
        if x.shape[-1] != self.n_inputs:
            raise ValueError(f"state has dimension {x.shape[-1]}, network expects {self.n_inputs}")

        activations = [x]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = activations[-1] @ w + b
            activations.append(z if i == last else relu(z))
        return activations

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._activations(np.asarray(x, dtype=np.float64))[-1]

    def loss(self, states: np.ndarray, actions: np.ndarray, targets: np.ndarray) -> float:
        q = self.forward(states)
        errors = targets - q[np.arange(len(actions)), actions]
        return float(np.mean(errors**2))

    def gradients(
        self, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
    ) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
        """Mean squared TD error and its gradient for every weight and bias"""
        activations = self._activations(np.asarray(states, dtype=np.float64))
        q = activations[-1]
        batch = len(actions)
        rows = np.arange(batch)

        errors = targets - q[rows, actions]
        loss = float(np.mean(errors**2))

        # dL/dQ is nonzero only on the taken action
        delta = np.zeros_like(q)
        delta[rows, actions] = -2.0 * errors / batch

        grad_w: list[np.ndarray] = [None] * len(self.weights)
        grad_b: list[np.ndarray] = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            grad_w[i] = activations[i].T @ delta
            grad_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (activations[i] > 0)

        return loss, grad_w, grad_b

    def apply(self, grad_w: list[np.ndarray], grad_b: list[np.ndarray], lr: float) -> None:
        for w, b, gw, gb in zip(self.weights, self.biases, grad_w, grad_b):
            w -= lr * gw
            b -= lr * gb

    def copy(self) -> "QNetwork":
        return QNetwork(self.layer_sizes, weights=self.weights, biases=self.biases)

    def copy_from(self, other: "QNetwork") -> None:
        for w, b, ow, ob in zip(self.weights, self.biases, other.weights, other.biases):
            w[...] = ow
            b[...] = ob

    def same_parameters(self, other: "QNetwork") -> bool:
        return self.layer_sizes == other.layer_sizes and all(
            np.array_equal(a, b) for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )
