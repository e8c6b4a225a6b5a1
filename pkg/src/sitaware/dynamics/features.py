"""State preprocessing, situation vectors, and model features/targets.

Raw states use the 12-d layout ``[position(3), roll/pitch/yaw(3),
linear velocity(3), angular velocity(3)]``.  Processed states drop position
and replace each angle with its (sin, cos) pair.  Model targets are the
processed-state delta followed by the position delta in the body frame, so
the model never sees absolute position.
"""

from __future__ import annotations

import numpy as np

from ..errors import InputError

RAW_DIM = 12
PROCESSED_DIM = 12
TARGET_DIM = PROCESSED_DIM + 3


def _raw(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != RAW_DIM:
        raise InputError(f"raw state must have {RAW_DIM} entries, got shape {raw.shape}")
    return raw


def preprocess_state(raw) -> np.ndarray:
    """Processed 12-d state; batches along leading axes are supported."""
    raw = _raw(raw)
    ang = raw[..., 3:6]
    trig = np.stack((np.sin(ang), np.cos(ang)), axis=-1).reshape(*ang.shape[:-1], 6)
    return np.concatenate((trig, raw[..., 6:12]), axis=-1)


def situation_vector(prev_raw, prev_action, raw) -> np.ndarray:
    """``[processed(s_prev); a_prev; processed(s)]``."""
    a = np.atleast_1d(np.asarray(prev_action, dtype=np.float64))
    return np.concatenate((preprocess_state(prev_raw), a, preprocess_state(raw)), axis=-1)


def situation_dim(action_dim: int) -> int:
    return 2 * PROCESSED_DIM + action_dim


def rotation_zyx(angles) -> np.ndarray:
    """Body-to-world rotation ``Rz(yaw) Ry(pitch) Rx(roll)``; batched."""
    angles = np.asarray(angles, dtype=np.float64)
    r, p, y = angles[..., 0], angles[..., 1], angles[..., 2]
    cr, sr, cp, sp, cy, sy = np.cos(r), np.sin(r), np.cos(p), np.sin(p), np.cos(y), np.sin(y)
    R = np.empty(angles.shape[:-1] + (3, 3))
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    return R


def model_features(raw, symbol, action, use_symbol: bool = True) -> np.ndarray:
    """``[processed(s); theta; a]`` or, for the stripped twin, ``[processed(s); a]``."""
    proc = preprocess_state(raw)
    a = np.asarray(action, dtype=np.float64)
    a = np.broadcast_to(a, proc.shape[:-1] + a.shape[-1:]) if a.ndim else a.reshape(1)
    parts = [proc]
    if use_symbol:
        th = np.broadcast_to(np.asarray(symbol, dtype=np.float64), proc.shape[:-1])[..., None]
        parts.append(th)
    parts.append(a)
    return np.concatenate(parts, axis=-1)


def transition_target(raw, next_raw) -> np.ndarray:
    """Processed-state delta plus body-frame position delta (15-d)."""
    raw, next_raw = _raw(raw), _raw(next_raw)
    dproc = preprocess_state(next_raw) - preprocess_state(raw)
    dpos = next_raw[..., 0:3] - raw[..., 0:3]
    R = rotation_zyx(raw[..., 3:6])
    body = np.einsum("...ji,...j->...i", R, dpos)
    return np.concatenate((dproc, body), axis=-1)


def apply_target(raw, target) -> np.ndarray:
    """Inverse of ``transition_target``: next raw state from a predicted delta."""
    raw = _raw(raw)
    target = np.asarray(target, dtype=np.float64)
    proc = preprocess_state(raw) + target[..., :PROCESSED_DIM]
    R = rotation_zyx(raw[..., 3:6])
    pos = raw[..., 0:3] + np.einsum("...ij,...j->...i", R, target[..., PROCESSED_DIM:])
    trig = proc[..., :6].reshape(*proc.shape[:-1], 3, 2)
    ang = np.arctan2(trig[..., 0], trig[..., 1])
    return np.concatenate((pos, ang, proc[..., 6:12]), axis=-1)
