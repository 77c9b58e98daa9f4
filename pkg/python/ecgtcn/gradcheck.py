"""
Finite-difference verification of `backward`.

Central differences are taken in float64 on a copy of the network, with the
same dropout draws for every evaluation. A coordinate whose perturbation
flips any ReLU gate sits on a kink of the loss; it is skipped and the next
sampled coordinate takes its place.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import UsageError
from .layers import Array, cross_entropy
from .network import Network, backward, forward_trace

__all__ = ["GradCheckReport", "TensorCheck", "check_gradients"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TensorCheck:
    name: str
    checked: int
    skipped: int
    max_rel_error: float


@dataclass(frozen=True)
class GradCheckReport:
    tensors: list[TensorCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((t.max_rel_error for t in self.tensors), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return all(t.max_rel_error <= tol for t in self.tensors)

    def format(self) -> str:
        width = max((len(t.name) for t in self.tensors), default=4)
        lines = [f"{'tensor'.ljust(width)}  checked  skipped  max rel err"]
        for t in self.tensors:
            lines.append(
                f"{t.name.ljust(width)}  {t.checked:>7}  {t.skipped:>7}  {t.max_rel_error:.3e}"
            )
        return "\n".join(lines)


def _gates_equal(a: list[NDArray[np.bool_]], b: list[NDArray[np.bool_]]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(
    net: Network,
    batch: Array,
    labels: NDArray[np.integer],
    n_coords: int = 100,
    h: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare analytic gradients with central finite differences.

    Parameters
    ----------
    net : Network
        Network to check; it is copied, not modified.
    batch : ndarray
        ``(B, T)`` beats.
    labels : ndarray
        ``(B,)`` labels, 1-based.
    n_coords : int
        Coordinates checked per parameter tensor (fewer only when the tensor runs
        out of coordinates off a kink).
    h : float
        Perturbation step.
    seed : int
        Seeds both the coordinate sampling and the dropout draws.

    Returns
    -------
    GradCheckReport
        Per-tensor maximum of ``|g - fd| / max(|g|, |fd|, 1e-5)``.

    Examples
    --------
    >>> report = check_gradients(build_ecg_tcn(toy_cfg), x, y)
    >>> report.passed(1e-4)
    True
    """
    if n_coords < 1:
        raise UsageError(f"n_coords must be >= 1, got {n_coords}")
    work = net.astype("float64")
    batch = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels)
    dropout_seed = seed + 1

    def evaluate() -> tuple[float, list[NDArray[np.bool_]]]:
        trace = forward_trace(work, batch, "train", np.random.default_rng(dropout_seed))
        assert trace.logits is not None
        loss, _ = cross_entropy(trace.logits, labels - 1)
        return loss, trace.relu_gates()

    _, grads, base_trace = backward(work, batch, labels, np.random.default_rng(dropout_seed))
    base_gates = base_trace.relu_gates()
    rng = np.random.default_rng(seed)

    results: list[TensorCheck] = []
    for name, param in work.named_parameters().items():
        flat = param.reshape(-1)
        worst = 0.0
        checked = skipped = 0
        for i in rng.permutation(flat.size):
            if checked == n_coords:
                break
            orig = flat[i]
            flat[i] = orig + h
            loss_plus, gates_plus = evaluate()
            flat[i] = orig - h
            loss_minus, gates_minus = evaluate()
            flat[i] = orig
            if not (_gates_equal(gates_plus, base_gates) and _gates_equal(gates_minus, base_gates)):
                skipped += 1
                continue
            fd = (loss_plus - loss_minus) / (2 * h)
            g = float(grads[name].reshape(-1)[i])
            worst = max(worst, abs(g - fd) / max(abs(g), abs(fd), 1e-5))
            checked += 1
        check = TensorCheck(name, checked, skipped, worst)
        logger.debug(
            "%s: %d checked, %d skipped, max rel %.3e", name, check.checked, skipped, worst
        )
        results.append(check)
    return GradCheckReport(results)
