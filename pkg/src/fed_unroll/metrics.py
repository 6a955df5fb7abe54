"""Recovery metrics in dB."""

from __future__ import annotations

import numpy as np

NMSE_FLOOR_DB = -300.0
PSNR_CEIL_DB = 300.0


def nmse_db(x_true, x_hat) -> float:
    """``10 log10(mean ||x - x_hat||^2 / mean ||x||^2)`` over a row-wise batch.

    Ratio of batch means, floored at -300 dB for exact recovery.
    """
    x_true = np.atleast_2d(np.asarray(x_true, dtype=float))
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=float))
    if x_true.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x_true.shape} vs {x_hat.shape}")
    power = float(np.mean(np.sum(x_true ** 2, axis=1)))
    if power == 0.0:
        raise ValueError("NMSE is undefined for an all-zero ground truth")
    err = float(np.mean(np.sum((x_true - x_hat) ** 2, axis=1)))
    if err == 0.0:
        return NMSE_FLOOR_DB
    return max(10.0 * np.log10(err / power), NMSE_FLOOR_DB)


def psnr(image_true, image_hat, peak: float = 1.0) -> float:
    image_true = np.asarray(image_true, dtype=float)
    image_hat = np.asarray(image_hat, dtype=float)
    if image_true.shape != image_hat.shape:
        raise ValueError(f"shape mismatch {image_true.shape} vs {image_hat.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((image_true - image_hat) ** 2))
    if mse == 0.0:
        return PSNR_CEIL_DB
    return min(10.0 * np.log10(peak ** 2 / mse), PSNR_CEIL_DB)
