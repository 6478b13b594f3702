"""Binary persistence for parameters and episode datasets.

One container format for everything: magic "TSCI", a format version, a
sequence of named float32 arrays, and a trailing CRC-32 of all preceding
bytes. Integers and booleans ride along as float32 (exact below 2^24, which
covers action indices and flags). Writes are atomic (temp file + rename) and
loads verify magic, version, framing, and checksum.

Layout per array: name length (u32 LE), UTF-8 name, rank (u32), dims
(u32 each), then the row-major float32 little-endian payload.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib

import numpy as np

from . import autodiff as ad
from .agent import Episode, PolicyNetwork
from .causal import CausalDiscoveryNetwork
from .errors import CheckpointError

MAGIC = b"TSCI"
FORMAT_VERSION = 1


def _pack_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name, arr in arrays.items():
        # asarray with order="C" keeps 0-d shapes; ascontiguousarray would
        # promote them to rank 1 and break the round trip
        data = np.asarray(arr, dtype="<f4", order="C")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _atomic_write(path: str, blob: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tsci-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_arrays(arrays: dict[str, np.ndarray], path: str,
                meta: dict | None = None) -> None:
    """Write named arrays; optional metadata goes to a JSON sidecar."""
    _atomic_write(path, _pack_arrays(arrays))
    if meta is not None:
        blob = json.dumps(meta, indent=2, sort_keys=True) + "\n"
        _atomic_write(path + ".meta.json", blob.encode("utf-8"))


def load_arrays(path: str) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise CheckpointError(f"cannot read {path}: {err}") from err
    if len(blob) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    body, crc_bytes = blob[:-4], blob[-4:]
    (crc_stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise CheckpointError(f"{path}: CRC mismatch, file is corrupt")
    (version,) = struct.unpack_from("<I", body, 4)
    if version > FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} newer than supported {FORMAT_VERSION}")
    arrays: dict[str, np.ndarray] = {}
    off = 8
    end = len(body)
    while off < end:
        if off + 4 > end:
            raise CheckpointError(f"{path}: truncated array header")
        (name_len,) = struct.unpack_from("<I", body, off)
        off += 4
        if off + name_len + 4 > end:
            raise CheckpointError(f"{path}: truncated array name")
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", body, off)
        off += 4
        if off + 4 * rank > end:
            raise CheckpointError(f"{path}: truncated dims for {name!r}")
        shape = struct.unpack_from(f"<{rank}I", body, off)
        off += 4 * rank
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        nbytes = 4 * count
        if off + nbytes > end:
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=off)
        arrays[name] = arr.reshape(shape).copy()
        off += nbytes
    return arrays


def load_meta(path: str) -> dict | None:
    side = path + ".meta.json"
    if not os.path.exists(side):
        return None
    with open(side, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# parameter stores and networks


def save_checkpoint(store: ad.ParamStore, path: str, meta: dict | None = None) -> None:
    save_arrays(store.state_arrays(), path, meta=meta)


def load_into_store(store: ad.ParamStore, arrays: dict[str, np.ndarray],
                    path: str = "<arrays>") -> None:
    for name, t in store.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        arr = arrays[name]
        if tuple(arr.shape) != tuple(t.data.shape):
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {arr.shape}, expected {t.data.shape}")
        t.data = arr.astype(np.float32)


STRUCTURE_CODES = {"recurrent": 0.0, "feedforward": 1.0}


def save_agent(net: PolicyNetwork, path: str, meta: dict | None = None) -> None:
    arrays = dict(net.params.state_arrays())
    arrays["_meta.shape"] = np.array(
        [net.m, net.n_actions, STRUCTURE_CODES[net.structure]], dtype=np.float32)
    save_arrays(arrays, path, meta=meta)


def load_agent(path: str) -> PolicyNetwork:
    arrays = load_arrays(path)
    if "_meta.shape" not in arrays:
        raise CheckpointError(f"{path}: not an agent checkpoint (no _meta.shape)")
    m, n_actions, code = (float(x) for x in arrays.pop("_meta.shape"))
    structure = {v: k for k, v in STRUCTURE_CODES.items()}[code]
    net = PolicyNetwork(int(m), int(n_actions), structure, seed=0)
    load_into_store(net.params, arrays, path)
    return net


def save_explainer(net: CausalDiscoveryNetwork, path: str, meta: dict | None = None) -> None:
    save_checkpoint(net.params, path, meta=meta)


def load_explainer(path: str, agent: PolicyNetwork) -> CausalDiscoveryNetwork:
    net = CausalDiscoveryNetwork(agent, seed=0)
    load_into_store(net.params, load_arrays(path), path)
    return net


# ---------------------------------------------------------------------------
# episode datasets (same container; one stacked array per field)


def save_episodes(episodes: list[Episode], path: str, meta: dict | None = None) -> None:
    if not episodes:
        raise CheckpointError("refusing to save an empty episode dataset")
    t_len = episodes[0].horizon
    for ep in episodes:
        if ep.horizon != t_len:
            raise CheckpointError("episodes in a dataset must share the horizon")
    arrays = {
        "ep.states": np.stack([ep.states for ep in episodes]),
        "ep.dists": np.stack([ep.dists for ep in episodes]),
        "ep.actions": np.stack([ep.actions for ep in episodes]).astype(np.float32),
        "ep.values": np.stack([ep.values for ep in episodes]),
        "ep.rewards": np.stack([ep.rewards for ep in episodes]),
        "ep.hiddens": np.stack([ep.hiddens for ep in episodes]),
        "ep.dones": np.stack([ep.dones for ep in episodes]).astype(np.float32),
        "ep.bootstrap": np.array([ep.bootstrap_value for ep in episodes], dtype=np.float32),
    }
    save_arrays(arrays, path, meta=meta)


def load_episodes(path: str) -> list[Episode]:
    arrays = load_arrays(path)
    needed = {"ep.states", "ep.dists", "ep.actions", "ep.values", "ep.rewards",
              "ep.hiddens", "ep.dones", "ep.bootstrap"}
    missing = needed - set(arrays)
    if missing:
        raise CheckpointError(f"{path}: not an episode dataset, missing {sorted(missing)}")
    n = arrays["ep.states"].shape[0]
    return [Episode(states=arrays["ep.states"][i],
                    dists=arrays["ep.dists"][i],
                    actions=arrays["ep.actions"][i].astype(np.int64),
                    values=arrays["ep.values"][i],
                    rewards=arrays["ep.rewards"][i],
                    hiddens=arrays["ep.hiddens"][i],
                    dones=arrays["ep.dones"][i] != 0.0,
                    bootstrap_value=float(arrays["ep.bootstrap"][i]))
            for i in range(n)]
