"""Node-wise CFD error measures and Bland-Altman agreement."""

from __future__ import annotations

import math

import numpy as np

from ..errors import FieldLengthMismatch, LengthMismatch, TooFewSamples, ZeroRange
from ..fields import NodeFields

ERROR_CHANNELS = ("pressure", "velocity_x", "velocity_y", "velocity_z", "velocity_magnitude")


def _channels(f: NodeFields) -> np.ndarray:
    return np.column_stack([f.pressure, f.velocity, f.speed])


def node_errors(pred: NodeFields, truth: NodeFields, skip_constant: bool = False) -> dict:
    """Normalized absolute error per node and channel, its subject mean and RMSE.

    NAE is ``|pred - truth| / (max truth - min truth)`` in percent, per
    channel, over the channels pressure, vx, vy, vz and speed. A constant
    truth channel raises :class:`ZeroRange`; with ``skip_constant`` its NAE
    is reported as NaN instead.
    """
    if len(pred) != len(truth):
        raise FieldLengthMismatch(f"{len(pred)} predicted vs {len(truth)} true nodes")
    if pred.space != "raw" or truth.space != "raw":
        raise ValueError("node errors are computed on raw fields")
    p = _channels(pred)
    t = _channels(truth)
    rng = t.max(axis=0) - t.min(axis=0)
    zero = rng == 0
    if np.any(zero) and not skip_constant:
        names = [ERROR_CHANNELS[i] for i in np.flatnonzero(zero)]
        raise ZeroRange(f"constant truth channel(s): {', '.join(names)}")
    err = np.abs(p - t)
    with np.errstate(divide="ignore", invalid="ignore"):
        nae = np.where(zero, np.nan, 100.0 * err / np.where(zero, 1.0, rng))
    return {
        "channels": ERROR_CHANNELS,
        "nae": nae,
        "mnae_s": nae.mean(axis=0),
        "rmse": np.sqrt(np.mean((p - t) ** 2, axis=0)),
        "range": rng,
    }


def population_node_errors(nae_arrays) -> np.ndarray:
    """Per-node mean NAE across subjects (MNAE_n), shape (N, channels)."""
    arrays = [np.asarray(a, dtype=np.float64) for a in nae_arrays]
    if not arrays:
        raise LengthMismatch("no subjects")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise LengthMismatch("subjects differ in node or channel count")
    return np.mean(np.stack(arrays), axis=0)


def bland_altman(pred, truth) -> dict:
    """Bias and 95% limits of agreement (sample standard deviation)."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if len(pred) != len(truth):
        raise LengthMismatch("pred and truth differ in length")
    if len(pred) < 2:
        raise TooFewSamples("Bland-Altman needs at least two pairs")
    d = pred - truth
    if np.all(d == d[0]):
        bias, sd = float(d[0]), 0.0
    else:
        bias = math.fsum(d) / len(d)
        sd = math.sqrt(math.fsum((d - bias) ** 2) / (len(d) - 1))
    return {"bias": bias, "loa_low": bias - 1.96 * sd, "loa_high": bias + 1.96 * sd}
