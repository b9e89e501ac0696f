"""Small helpers for batched chain states."""

from dataclasses import replace

import numpy as np


def where_lanes(mask, new, old):
    """np.where with the mask broadcast over trailing array axes."""
    m = np.reshape(mask, np.shape(mask) + (1,) * (np.ndim(new) - np.ndim(mask)))
    return np.where(m, new, old)


def merge_cv(mask, new, old):
    """Lane-wise selection between two CvEval objects."""
    return replace(new,
                   value=where_lanes(mask, new.value, old.value),
                   grad=where_lanes(mask, new.grad, old.grad),
                   laplacian=where_lanes(mask, new.laplacian, old.laplacian),
                   _block=where_lanes(mask, new._block, old._block))

