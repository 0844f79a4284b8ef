"""Frozen schema embeddings: one vector per domain, intent, slot and value.

Each schema element is rendered as an input sequence (name paired with
description; bare name for values), encoded, and the [CLS] output kept as
the element's embedding. The resulting vectors are constants: they carry
requires_grad=False and never enter the parameter store, so no gradient
can reach them during training. Element ids follow
`<service>/<kind>/<name>[/<value>]` with kinds domain|intent|slot|value;
the same scheme is used by the portable embedding file format (JSON
manifest plus a little-endian float32 blob).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .data import Schema
from .encoder import EncoderConfig, encode
from .errors import ConfigError, DataError
from .nn import ParameterStore
from .text import InputSequence, Vocab, build_sequence

log = logging.getLogger(__name__)

KIND_DOMAIN, KIND_INTENT, KIND_SLOT, KIND_VALUE = "domain", "intent", "slot", "value"

PORTABLE_FORMAT_VERSION = 1


def _render(name: str) -> str:
    """Snake_case identifiers read as natural text for the tokenizer."""
    return name.replace("_", " ")


def element_ids(schema: Schema) -> list[str]:
    """Stable ordering: domain, intents, slots, then per-slot values."""
    ids = [f"{schema.service_name}/{KIND_DOMAIN}/{schema.service_name}"]
    ids += [f"{schema.service_name}/{KIND_INTENT}/{i.name}" for i in schema.intents]
    ids += [f"{schema.service_name}/{KIND_SLOT}/{s.name}" for s in schema.slots]
    for slot in schema.slots:
        ids += [f"{schema.service_name}/{KIND_VALUE}/{slot.name}/{v}"
                for v in slot.possible_values]
    return ids


def schema_sequences(
    schema: Schema, vocab: Vocab, max_len: int = 128
) -> list[tuple[str, InputSequence]]:
    """One (element id, input sequence) pair per schema element.

    Domains, intents and slots pair their name with their description;
    values are single-sentence (name only).
    """
    out: list[tuple[str, InputSequence]] = []
    service = schema.service_name
    out.append((
        f"{service}/{KIND_DOMAIN}/{service}",
        build_sequence(vocab, _render(service), schema.description, max_len),
    ))
    for intent in schema.intents:
        out.append((
            f"{service}/{KIND_INTENT}/{intent.name}",
            build_sequence(vocab, _render(intent.name), intent.description, max_len),
        ))
    for slot in schema.slots:
        out.append((
            f"{service}/{KIND_SLOT}/{slot.name}",
            build_sequence(vocab, _render(slot.name), slot.description, max_len),
        ))
    for slot in schema.slots:
        for value in slot.possible_values:
            out.append((
                f"{service}/{KIND_VALUE}/{slot.name}/{value}",
                build_sequence(vocab, _render(value), None, max_len),
            ))
    return out


@dataclass(frozen=True)
class SchemaEmbeddings:
    """Frozen embedding bundle for one service.

    The matrices follow the schema's element order; categorical and
    non-categorical slots are distinguished by index partitions over the
    shared slot matrix.
    """

    service: str
    width: int
    domain: Tensor
    intent_matrix: Tensor  # [J, width]
    intent_names: tuple[str, ...]
    slot_matrix: Tensor  # [K, width]
    slot_names: tuple[str, ...]
    categorical_indices: tuple[int, ...]
    noncategorical_indices: tuple[int, ...]
    value_matrices: dict[str, Tensor]  # categorical slot -> [n_values, width]
    value_names: dict[str, tuple[str, ...]]
    element_index: dict[str, int]

    def fingerprint(self) -> str:
        """Digest of every embedding byte; stable iff the vectors are."""
        h = hashlib.sha256()
        h.update(self.domain.data.tobytes())
        h.update(self.intent_matrix.data.tobytes())
        h.update(self.slot_matrix.data.tobytes())
        for name in self.value_names:
            h.update(self.value_matrices[name].data.tobytes())
        return h.hexdigest()


def _bundle(schema: Schema, vectors: dict[str, np.ndarray], width: int) -> SchemaEmbeddings:
    service = schema.service_name

    def frozen(arr) -> Tensor:
        return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=False)

    intent_names = tuple(i.name for i in schema.intents)
    slot_names = tuple(s.name for s in schema.slots)
    domain = vectors[f"{service}/{KIND_DOMAIN}/{service}"]
    intents = [vectors[f"{service}/{KIND_INTENT}/{n}"] for n in intent_names]
    slots = [vectors[f"{service}/{KIND_SLOT}/{n}"] for n in slot_names]
    value_matrices: dict[str, Tensor] = {}
    value_names: dict[str, tuple[str, ...]] = {}
    for slot in schema.categorical_slots:
        rows = [vectors[f"{service}/{KIND_VALUE}/{slot.name}/{v}"]
                for v in slot.possible_values]
        value_matrices[slot.name] = frozen(np.stack(rows))
        value_names[slot.name] = slot.possible_values

    return SchemaEmbeddings(
        service=service,
        width=width,
        domain=frozen(domain),
        intent_matrix=frozen(np.stack(intents) if intents else np.zeros((0, width))),
        intent_names=intent_names,
        slot_matrix=frozen(np.stack(slots) if slots else np.zeros((0, width))),
        slot_names=slot_names,
        categorical_indices=tuple(
            i for i, s in enumerate(schema.slots) if s.is_categorical
        ),
        noncategorical_indices=tuple(
            i for i, s in enumerate(schema.slots) if not s.is_categorical
        ),
        value_matrices=value_matrices,
        value_names=value_names,
        element_index={eid: i for i, eid in enumerate(element_ids(schema))},
    )


def _cache_key(schema: Schema, params: ParameterStore, cfg: EncoderConfig, prefix: str) -> str:
    from .data import schema_to_json

    h = hashlib.sha256()
    h.update(json.dumps(schema_to_json(schema), sort_keys=True).encode())
    h.update(repr(cfg).encode())
    for name in sorted(params.names()):
        if name.startswith(prefix + "."):
            h.update(name.encode())
            h.update(params[name].data.tobytes())
    return h.hexdigest()


def embed_schema(
    schema: Schema,
    vocab: Vocab,
    params: ParameterStore,
    cfg: EncoderConfig,
    prefix: str = "encoder",
    cache_dir: str | Path | None = None,
) -> SchemaEmbeddings:
    """Encode every schema element; results are frozen (gradient-free).

    When a cache directory is given (or SCHEMA_DST_CACHE is set), vectors
    are memoized on disk keyed by the schema content and the encoder
    weights, so unchanged encoders never re-encode a schema.
    """
    cache_dir = cache_dir or os.environ.get("SCHEMA_DST_CACHE")
    cache_path = None
    if cache_dir:
        cache_path = Path(cache_dir) / f"{_cache_key(schema, params, cfg, prefix)}.npz"
        if cache_path.exists():
            blob = np.load(cache_path, allow_pickle=False)
            vectors = {eid: vec for eid, vec in zip(blob["ids"].tolist(), blob["matrix"])}
            return _bundle(schema, vectors, cfg.hidden_dim)

    vectors: dict[str, np.ndarray] = {}
    for eid, seq in schema_sequences(schema, vocab, cfg.max_len):
        encoded = encode(seq, params, cfg, prefix=prefix)
        vectors[eid] = encoded.u.data.copy()

    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        ids = list(vectors)
        tmp = cache_path.with_suffix(".tmp.npz")
        np.savez(tmp, ids=np.array(ids), matrix=np.stack([vectors[i] for i in ids]))
        os.replace(tmp, cache_path)  # atomic publish, last writer wins

    return _bundle(schema, vectors, cfg.hidden_dim)


# ---------------------------------------------------------------------------
# portable embedding files (manifest + float32 blob)


def save_portable_embeddings(
    ids: list[str], vectors: np.ndarray, manifest_path: str | Path
) -> None:
    """Write the manifest JSON and its sidecar blob next to each other."""
    manifest_path = Path(manifest_path)
    if vectors.ndim != 2 or len(ids) != vectors.shape[0]:
        raise ConfigError("ids and vector rows must correspond one-to-one")
    blob_name = manifest_path.name + ".blob"
    manifest = {
        "version": PORTABLE_FORMAT_VERSION,
        "width": int(vectors.shape[1]),
        "blob": blob_name,
        "elements": [{"id": eid, "offset": i} for i, eid in enumerate(ids)],
    }
    blob = np.ascontiguousarray(vectors, dtype="<f4").tobytes()
    (manifest_path.parent / blob_name).write_bytes(blob)
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


def read_portable_embeddings(manifest_path: str | Path) -> tuple[dict[str, np.ndarray], int]:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ConfigError(f"embedding manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("version") != PORTABLE_FORMAT_VERSION:
        raise DataError(f"unsupported embedding format version {manifest.get('version')!r}")
    width = int(manifest["width"])
    blob_path = manifest_path.parent / manifest["blob"]
    raw = np.frombuffer(blob_path.read_bytes(), dtype="<f4")
    if raw.size % width != 0:
        raise DataError(f"blob size {raw.size} is not a multiple of width {width}")
    matrix = raw.reshape(-1, width)
    vectors: dict[str, np.ndarray] = {}
    for element in manifest["elements"]:
        offset = int(element["offset"])
        if not 0 <= offset < matrix.shape[0]:
            raise DataError(f"element {element['id']!r} offset {offset} outside blob")
        vectors[str(element["id"])] = matrix[offset]
    return vectors, width


def load_external_embeddings(
    manifest_path: str | Path,
    schema: Schema,
    expected_width: int | None = None,
) -> SchemaEmbeddings:
    """Build SchemaEmbeddings from a portable embedding file.

    The file must cover every element of the schema; unknown extra ids are
    tolerated with a warning. A width different from expected_width is a
    configuration error (the caller decides whether a projection exists).
    """
    vectors, width = read_portable_embeddings(manifest_path)
    if expected_width is not None and width != expected_width:
        raise ConfigError(
            f"embedding width {width} does not match the configured width {expected_width}"
        )
    needed = element_ids(schema)
    missing = [eid for eid in needed if eid not in vectors]
    if missing:
        raise DataError(f"embedding file missing {len(missing)} element(s): {missing[:5]}")
    extra = sorted(set(vectors) - set(needed))
    if extra:
        log.warning("embedding file has %d unknown element id(s), ignoring (e.g. %s)",
                    len(extra), extra[0])
    chosen = {eid: np.asarray(vectors[eid], dtype=np.float64) for eid in needed}
    return _bundle(schema, chosen, width)
