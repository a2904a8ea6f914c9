"""Scale-invariant SNR and the utterance-level permutation-invariant loss.

All metrics are differentiable through the tensor engine; numpy arrays are
wrapped on the way in. SI-SNR is clipped with a hard min at +30 dB and has
no lower clip.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from typing import Sequence, Union

import numpy as np

from . import tensor as T
from .errors import InvalidReferenceError, UsageError
from .tensor import Tensor

SI_SNR_CLIP_DB = 30.0
_LOG10 = float(np.log(10.0))

ArrayLike = Union[Tensor, np.ndarray, Sequence[float]]


def _as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def si_snr(est: ArrayLike, target: ArrayLike, eps: float = 1e-8) -> Tensor:
    """Scale-invariant SNR of ``est`` against ``target``, in dB.

    Both signals are mean-removed, the estimate is rescaled to the
    reference energy (making the metric invariant to estimate gain up to
    float rounding), and the estimate is projected onto the reference.
    ``eps`` regularizes every ratio so silent or orthogonal estimates yield
    finite values instead of diverging.
    """
    est = _as_tensor(est)
    target = _as_tensor(target)
    if est.shape != target.shape or est.ndim != 1 or est.size < 1:
        raise UsageError(
            f"si_snr needs equal-length 1-D signals, got {est.shape} vs {target.shape}"
        )
    if not np.any(target.data):
        raise InvalidReferenceError("si_snr reference signal is identically zero")

    est = est - est.mean()
    target = target - target.mean()
    target_sq = T.dot(target, target)
    # rescale to reference energy: keeps the metric invariant to estimate
    # gain to float rounding even though eps appears in the ratios below
    est = est * T.sqrt((target_sq + eps) / (T.dot(est, est) + eps))

    coef = T.dot(est, target) / (target_sq + eps)
    projection = target * coef
    residual = est - projection
    ratio = (T.dot(projection, projection) + eps) / (T.dot(residual, residual) + eps)
    db = T.log(ratio) * (10.0 / _LOG10)
    return T.clamp_max(db, SI_SNR_CLIP_DB)


def si_snr_improvement(est: ArrayLike, mixture: ArrayLike, target: ArrayLike,
                       eps: float = 1e-8) -> Tensor:
    """SI-SNR gain of the estimate over the unprocessed mixture, in dB."""
    return si_snr(est, target, eps) - si_snr(mixture, target, eps)


@dataclass
class PitResult:
    """Best-permutation assignment for one utterance."""

    loss: Tensor  # scalar, = -mean(si_snr under best_perm)
    best_perm: tuple[int, ...]  # target index assigned to each estimate
    per_source_si_snr: list[float]  # dB, under best_perm


def pit_loss(ests: Sequence[ArrayLike], targets: Sequence[ArrayLike],
             eps: float = 1e-8) -> PitResult:
    """Evaluate every estimate/target assignment and keep the best mean SI-SNR.

    Ties are broken by the lexicographically smallest permutation. The
    returned loss is differentiable through the chosen assignment.
    """
    if len(ests) != len(targets):
        raise UsageError(f"pit_loss got {len(ests)} estimates vs {len(targets)} targets")
    n = len(ests)
    if n < 1:
        raise UsageError("pit_loss needs at least one source")
    ests = [_as_tensor(e) for e in ests]
    targets = [_as_tensor(t) for t in targets]

    scores = [[si_snr(e, t, eps) for t in targets] for e in ests]
    values = np.array([[s.item() for s in row] for row in scores])

    best_perm: tuple[int, ...] = tuple(range(n))
    best_mean = -np.inf
    for perm in permutations(range(n)):
        mean = float(np.mean([values[i, perm[i]] for i in range(n)]))
        if mean > best_mean:
            best_mean = mean
            best_perm = perm

    chosen = [scores[i][best_perm[i]] for i in range(n)]
    total = chosen[0]
    for s in chosen[1:]:
        total = total + s
    loss = -(total * (1.0 / n))
    return PitResult(
        loss=loss,
        best_perm=best_perm,
        per_source_si_snr=[values[i, best_perm[i]] for i in range(n)],
    )
