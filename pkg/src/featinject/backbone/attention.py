from __future__ import annotations

import torch


def self_attention(q, k, v, override_A=None):
    """Return ``(A @ v, A)`` with ``A = softmax(q @ k^T)`` over the last axis.

    Leading axes (batch, heads) broadcast. Any scaling of the logits is the
    caller's business and must already be folded into ``q``. When
    ``override_A`` is given it is used verbatim and returned as ``A``.
    """
    q, k, v = (torch.as_tensor(a) for a in (q, k, v))
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key width mismatch: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value token mismatch: {k.shape[-2]} vs {v.shape[-2]}")
    if override_A is None:
        A = torch.softmax(q @ k.transpose(-2, -1), dim=-1)
    else:
        A = torch.as_tensor(override_A, dtype=v.dtype)
        if A.shape[-2] != q.shape[-2] or A.shape[-1] != k.shape[-2]:
            raise ValueError(
                f"override_A shape {tuple(A.shape)} incompatible with "
                f"{q.shape[-2]} queries / {k.shape[-2]} keys"
            )
    return A @ v, A
