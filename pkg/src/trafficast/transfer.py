"""Checkpoint persistence and the two-phase freeze/unfreeze transfer procedure.

Checkpoint file layout (fixed little-endian, so files are portable bit-exact):

    magic  b"TLTP"
    u32    format_version (currently 1)
    u32 + utf-8   spec descriptor "arch,window,hidden,input_dim,output_dim"
    u32    parameter count
    per parameter, in manifest order:
        u32 + utf-8 name, u32 rank, rank * u32 dims, f64 values (row-major)
    f64    scaler lo, f64 scaler hi
    u32 + utf-8   metadata JSON
    u32    CRC32 of all preceding bytes
"""

import json
import struct
import zlib
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import (CheckpointFormatError, CheckpointIntegrityError,
                     CheckpointVersionError, ConfigError, ManifestError)
from .models import ModelSpec, init_model, param_manifest
from .pipeline import MinMaxScaler
from .training import TrainConfig, train

MAGIC = b"TLTP"
FORMAT_VERSION = 1
DEFAULT_FREEZE_EPOCHS = 10
PHASE1_LR = 1e-3
PHASE2_LR = 1e-4


@dataclass
class Checkpoint:
    """Everything a target run needs: spec, weights, scaler and provenance."""

    format_version: int
    spec: ModelSpec
    params: dict          # name -> np.ndarray, manifest order
    scaler: MinMaxScaler
    meta: dict

    def manifest_names(self):
        return [name for name, _, _ in param_manifest(self.spec)]


@dataclass(frozen=True)
class ReusePolicy:
    """Partition of the parameter manifest into reused and reinitialized names."""

    reused: frozenset
    reinitialized: frozenset

    def validate_for(self, spec):
        manifest = {name for name, _, _ in param_manifest(spec)}
        if self.reused & self.reinitialized:
            raise ConfigError(
                f"policy overlaps: {sorted(self.reused & self.reinitialized)}")
        if (self.reused | self.reinitialized) != manifest:
            missing = manifest - (self.reused | self.reinitialized)
            extra = (self.reused | self.reinitialized) - manifest
            raise ConfigError(
                f"policy does not cover the manifest exactly "
                f"(missing {sorted(missing)}, unknown {sorted(extra)})")

    @classmethod
    def default(cls, spec):
        """Reuse every recurrent/encoder/decoder weight; reinitialize the output head."""
        head = {"W_out", "b_out"}
        manifest = {name for name, _, _ in param_manifest(spec)}
        return cls(reused=frozenset(manifest - head), reinitialized=frozenset(head))

    @classmethod
    def reuse_all(cls, spec):
        manifest = {name for name, _, _ in param_manifest(spec)}
        return cls(reused=frozenset(manifest), reinitialized=frozenset())

    @classmethod
    def reinit_all(cls, spec):
        manifest = {name for name, _, _ in param_manifest(spec)}
        return cls(reused=frozenset(), reinitialized=frozenset(manifest))


def _pack_str(text):
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def checkpoint_bytes(model, scaler, meta):
    """Serialize without writing; useful for tests and in-memory round trips."""
    spec = model.spec
    meta = dict(meta)
    meta.setdefault("task", "single-step-forecast")
    meta.setdefault("created", datetime.now(timezone.utc).isoformat())
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), _pack_str(spec.descriptor())]
    manifest = param_manifest(spec)
    parts.append(struct.pack("<I", len(manifest)))
    for name, shape, _ in manifest:
        value = model.params[name].value.data
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    parts.append(struct.pack("<dd", scaler.lo_, scaler.hi_))
    parts.append(_pack_str(json.dumps(meta, sort_keys=True)))
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def save_checkpoint(model, scaler, meta, path):
    """Write a checkpoint; load_checkpoint reproduces every parameter bitwise."""
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, scaler, meta))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointIntegrityError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def f64(self):
        return struct.unpack("<d", self.take(8))[0]

    def string(self):
        return self.take(self.u32()).decode("utf-8")


def parse_checkpoint(data):
    """Decode checkpoint bytes, verifying magic, CRC and the spec manifest."""
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(
            f"bad magic bytes {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    if len(data) < len(MAGIC) + 8:
        raise CheckpointIntegrityError("truncated checkpoint: no room for header")
    payload, stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    actual = zlib.crc32(payload)
    if actual != stored:
        raise CheckpointIntegrityError(
            f"CRC mismatch: stored {stored:#010x}, computed {actual:#010x}")
    r = _Reader(payload)
    r.take(len(MAGIC))
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"unsupported format version {version}, expected {FORMAT_VERSION}")
    spec = ModelSpec.from_descriptor(r.string())
    n_params = r.u32()
    params = {}
    for _ in range(n_params):
        name = r.string()
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        raw = r.take(8 * count)
        params[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    scaler = MinMaxScaler.from_bounds(r.f64(), r.f64())
    meta = json.loads(r.string())
    if r.pos != len(payload):
        raise CheckpointIntegrityError(
            f"{len(payload) - r.pos} trailing bytes after metadata")

    manifest = param_manifest(spec)
    expected = [(name, shape) for name, shape, _ in manifest]
    actual_manifest = [(name, value.shape) for name, value in params.items()]
    if expected != actual_manifest:
        raise ManifestError(
            f"checkpoint parameters do not match manifest of {spec.descriptor()}: "
            f"expected {expected}, got {actual_manifest}")
    return Checkpoint(format_version=version, spec=spec, params=params,
                      scaler=scaler, meta=meta)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_checkpoint(data)


def checkpoint_from_model(model, scaler, meta):
    """In-memory Checkpoint with copied parameter values."""
    return parse_checkpoint(checkpoint_bytes(model, scaler, meta))


def model_from_checkpoint(ckpt):
    """ModelState carrying the checkpoint weights verbatim (for inference)."""
    from .autodiff import Parameter, ParamSet
    from .models import ModelState
    params = ParamSet([Parameter(name, values) for name, values in ckpt.params.items()])
    return ModelState(spec=ckpt.spec, params=params)


def check_spec_matches(ckpt, spec):
    if ckpt.spec != spec:
        raise ManifestError(
            f"checkpoint spec {ckpt.spec.descriptor()} does not match "
            f"expected {spec.descriptor()}")


def init_from_checkpoint(ckpt, policy, seed):
    """Model whose reused names are copied bitwise (and frozen) and whose
    reinitialized names are freshly drawn with `seed` (and trainable).

    With a reinitialize-everything policy this is exactly init_model(spec, seed).
    """
    policy.validate_for(ckpt.spec)
    model = init_model(ckpt.spec, seed)
    for name in ckpt.manifest_names():
        if name in policy.reused:
            param = model.params[name]
            param.assign(ckpt.params[name])
            param.frozen = True
    return model


def transfer_schedule(epochs, reused_names, freeze_epochs=DEFAULT_FREEZE_EPOCHS,
                      lr_phase1=PHASE1_LR, lr_phase2=PHASE2_LR,
                      batch_size=16, seed=0, clip_norm=None):
    """TrainConfig for the two-phase protocol: freeze reused names at the
    higher rate for the first `freeze_epochs`, then thaw everything at the
    lower rate for the remainder."""
    if epochs <= freeze_epochs:
        raise ConfigError(
            f"epochs={epochs} cannot fit the schedule: phase 1 alone "
            f"needs {freeze_epochs} epochs")
    kwargs = {} if clip_norm is None else {"clip_norm": clip_norm}
    return TrainConfig(
        epochs=epochs,
        batch_size=batch_size,
        seed=seed,
        lr_schedule=[((0, freeze_epochs), lr_phase1),
                     ((freeze_epochs, epochs), lr_phase2)],
        freeze_policy=[((0, freeze_epochs), frozenset(reused_names)),
                       ((freeze_epochs, epochs), frozenset())],
        **kwargs)


def transfer_fit(target_train, ckpt, epochs, seed, policy=None,
                 batch_size=16, freeze_epochs=DEFAULT_FREEZE_EPOCHS,
                 lr_phase1=PHASE1_LR, lr_phase2=PHASE2_LR,
                 clip_norm=None, epoch_callback=None):
    """Fine-tune a checkpoint on a scaled target training set.

    The target data must be scaled with the target's own scaler, not the
    checkpoint's. Returns (model, history); immediately after phase 1 every
    reused parameter is still bitwise equal to the checkpoint.
    """
    policy = policy or ReusePolicy.default(ckpt.spec)
    cfg = transfer_schedule(epochs, policy.reused, freeze_epochs=freeze_epochs,
                            lr_phase1=lr_phase1, lr_phase2=lr_phase2,
                            batch_size=batch_size, seed=seed, clip_norm=clip_norm)
    model = init_from_checkpoint(ckpt, policy, seed)
    history = train(model, target_train, cfg, epoch_callback=epoch_callback)
    return model, history
