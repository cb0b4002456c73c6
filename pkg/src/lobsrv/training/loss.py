"""Right-censored negative log-likelihood of Weibull predictions."""

from __future__ import annotations

import numpy as np

from lobsrv.model.weibull import tensor_log_terms
from lobsrv.tensor import Tensor


class NonFiniteLoss(FloatingPointError):
    pass


def rcll_loss(log_lam: Tensor, log_k: Tensor, durations, deltas) -> Tensor:
    """Per-sample mean of ``-[delta log f(T) + (1 - delta) log S(T)]``."""
    d = np.asarray(deltas, dtype=np.float64)
    log_f, log_s = tensor_log_terms(durations, log_lam, log_k)
    loss = -(log_f * d + log_s * (1.0 - d)).mean()
    if not np.isfinite(loss.data):
        bad = ~np.isfinite(log_f.data) | ~np.isfinite(log_s.data)
        raise NonFiniteLoss(
            f"non-finite RCLL on a batch of {len(d)}: {int(bad.sum())} bad samples, "
            f"log_lambda range [{np.min(log_lam.data):.3g}, {np.max(log_lam.data):.3g}], "
            f"log_k range [{np.min(log_k.data):.3g}, {np.max(log_k.data):.3g}]"
        )
    return loss
