"""Little-endian binary layouts for projections, tables, layer weights and tensors.

    proj.bin  "EGVP" u32 version, u32 |V|, u32 canonical_count, |V| x u32
    *.egtb    "EGTB" u32 version, u32 table_count,
              per table {u64 M, u32 d_sub, u32 order, u32 head, u32 layer},
              then every table's rows as row-major f32
    *.eglw    "EGLW" u32 version, u32 d, d_mem, branches, width, dilation,
              then W_V, W_K, rms_gain_h, rms_gain_k, conv_kernel, conv_bias,
              rms_gain_conv as f32
    *.egts    u32 rank, rank x u32 dims, f32 data (no magic)
"""

from __future__ import annotations

import struct

import numpy as np

VERSION = 1


class FormatError(ValueError):
    pass


def _check_magic(buf: bytes, magic: bytes, what: str) -> None:
    if buf[:4] != magic:
        raise FormatError(f"not a {what} file (magic {buf[:4]!r})")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported {what} version {version}")


def write_projection(path, proj) -> None:
    table = np.asarray(proj.table, dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(b"EGVP" + struct.pack("<III", VERSION, table.size, proj.canonical_count))
        fh.write(table.tobytes())


def read_projection(path):
    from .vocab import VocabProjection

    buf = open(path, "rb").read()
    _check_magic(buf, b"EGVP", "projection")
    _, size, count = struct.unpack_from("<III", buf, 4)
    table = np.frombuffer(buf, dtype="<u4", count=size, offset=16).astype(np.uint32)
    if size and int(table.max()) >= count - 1:
        raise FormatError("projection entry maps onto the sentinel or beyond")
    _, first = np.unique(table, return_index=True)
    return VocabProjection(table=table, canonical_count=int(count),
                           representatives=first.astype(np.int64))


def write_tables(path, tables) -> None:
    """`tables` is a sequence of EmbeddingTable (any layer mix)."""
    with open(path, "wb") as fh:
        fh.write(b"EGTB" + struct.pack("<II", VERSION, len(tables)))
        for t in tables:
            rows = t.rows
            fh.write(struct.pack("<QIIII", rows.shape[0], rows.shape[1],
                                 t.table_id.order, t.table_id.head, t.table_id.layer))
        for t in tables:
            fh.write(np.ascontiguousarray(t.rows, dtype="<f4").tobytes())


def read_tables(path, dtype=np.float32):
    from .store.tables import EmbeddingTable, TableId

    buf = open(path, "rb").read()
    _check_magic(buf, b"EGTB", "table")
    (count,) = struct.unpack_from("<I", buf, 8)
    off = 12
    headers = []
    for _ in range(count):
        headers.append(struct.unpack_from("<QIIII", buf, off))
        off += struct.calcsize("<QIIII")
    tables = []
    for m, d_sub, order, head, layer in headers:
        rows = np.frombuffer(buf, dtype="<f4", count=m * d_sub, offset=off).reshape(m, d_sub)
        off += rows.nbytes
        tables.append(EmbeddingTable(TableId(order, head, layer), rows.astype(dtype)))
    if off != len(buf):
        raise FormatError(f"table file has {len(buf) - off} trailing bytes")
    return tables


def write_weights(path, w) -> None:
    with open(path, "wb") as fh:
        fh.write(b"EGLW" + struct.pack("<IIIIII", VERSION, w.d, w.d_mem, w.branches,
                                       w.width, w.dilation))
        for arr in w.tensors():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_weights(path, dtype=np.float64):
    from .layer import EngramLayerWeights

    buf = open(path, "rb").read()
    _check_magic(buf, b"EGLW", "layer weights")
    d, d_mem, branches, width, dilation = struct.unpack_from("<IIIII", buf, 8)
    shapes = EngramLayerWeights.tensor_shapes(d, d_mem, branches, width)
    off = 28
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(shape).astype(dtype))
        off += 4 * n
    if off != len(buf):
        raise FormatError(f"weights file has {len(buf) - off} trailing bytes")
    return EngramLayerWeights.from_tensors(arrays, dilation=dilation)


def write_tensor(path, arr) -> None:
    arr = np.asarray(arr)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor(path, dtype=np.float64) -> np.ndarray:
    buf = open(path, "rb").read()
    (rank,) = struct.unpack_from("<I", buf, 0)
    dims = struct.unpack_from(f"<{rank}I", buf, 4)
    off = 4 + 4 * rank
    n = int(np.prod(dims)) if rank else 1
    if len(buf) - off != 4 * n:
        raise FormatError(f"tensor payload is {len(buf) - off} bytes, expected {4 * n}")
    return np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims).astype(dtype)
