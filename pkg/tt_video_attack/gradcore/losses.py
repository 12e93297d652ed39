import numpy as np

from tt_video_attack.errors import NumericFault, RejectedInputError


def _check_logits(logits: np.ndarray, labels: np.ndarray) -> None:
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise RejectedInputError(f"Cross-entropy needs (N, K >= 2) logits, got shape {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise RejectedInputError(f"Expected {logits.shape[0]} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise RejectedInputError(f"Labels must lie in [0, {logits.shape[1]})")
    if not np.all(np.isfinite(logits)):
        raise NumericFault("Non-finite logits reached the loss")


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """
    Per-sample softmax cross-entropy, -log softmax(logits)[y], with log-sum-exp stabilization.

    Arguments:
        logits {np.ndarray} -- (N, K) scores.
        labels {np.ndarray} -- (N,) integer class indices.

    Returns:
        np.ndarray -- (N,) non-negative losses.
    """
    labels = np.asarray(labels, dtype=np.int64)
    _check_logits(logits, labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return log_norm - shifted[np.arange(len(labels)), labels]


def softmax_cross_entropy_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of each sample's own loss with respect to its logits: softmax - onehot."""
    labels = np.asarray(labels, dtype=np.int64)
    _check_logits(logits, labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    probs[np.arange(len(labels)), labels] -= 1.0
    return probs
