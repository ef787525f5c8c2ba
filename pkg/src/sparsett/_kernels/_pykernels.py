"""Pure numpy implementations of the row-selection kernels.

All functions take 2-D C-contiguous arrays; callers flatten leading axes.
"""

import numpy as np

BACKEND = "numpy"


def topk_indices(m: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the ``k`` largest entries per row, descending.

    Ties go to the smaller column index; -inf entries sort last.
    """
    k = min(k, m.shape[1])
    order = np.argsort(-m, axis=1, kind="stable")
    return np.ascontiguousarray(order[:, :k], dtype=np.int64)


def scatter_rows(values: np.ndarray, indices: np.ndarray, width: int, check: bool = True) -> np.ndarray:
    if check:
        if indices.size and (indices.min() < 0 or indices.max() >= width):
            raise IndexError(f"scatter index out of range [0, {width})")
        srt = np.sort(indices, axis=1)
        if srt.shape[1] > 1 and (srt[:, 1:] == srt[:, :-1]).any():
            raise IndexError("duplicate scatter index within a row")
    out = np.zeros((values.shape[0], width), dtype=values.dtype)
    np.put_along_axis(out, indices, values, axis=1)
    return out


def gather_rows(m: np.ndarray, indices: np.ndarray) -> np.ndarray:
    return np.take_along_axis(m, indices, axis=1)
