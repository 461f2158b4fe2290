"""Tokenizer compression: collapse textually equivalent tokens to canonical IDs."""

from __future__ import annotations

import base64
import json
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

_WS_RUN = re.compile(r"\s+")


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class VocabEntry:
    token_id: int
    surface: bytes
    is_special: bool = False


@dataclass(frozen=True)
class NormalizeOptions:
    """Switches for the normalization chain.

    The chain always runs NFKC first and whitespace collapse last; these flags
    toggle the optional folds in between.
    """

    casefold: bool = True
    strip_marks: bool = True


DEFAULT_OPTIONS = NormalizeOptions()


def normalize_surface(surface: bytes, options: NormalizeOptions = DEFAULT_OPTIONS) -> bytes:
    try:
        text = surface.decode("utf-8")
    except UnicodeDecodeError:
        return surface
    if not text:
        return surface

    text = unicodedata.normalize("NFKC", text)
    if options.casefold:
        text = text.casefold()
    if options.strip_marks:
        decomposed = unicodedata.normalize("NFD", text)
        text = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
        text = unicodedata.normalize("NFC", text)

    collapsed = _WS_RUN.sub(" ", text)
    stripped = collapsed.strip(" ")
    if not stripped:
        # whitespace-only tokens all share the single-space form
        return b" " if collapsed else b""
    return stripped.encode("utf-8")


@dataclass
class VocabProjection:
    table: np.ndarray
    canonical_count: int
    representatives: np.ndarray = field(repr=False)

    @property
    def sentinel_id(self) -> int:
        return self.canonical_count - 1

    @property
    def vocab_size(self) -> int:
        return int(self.table.shape[0])

    @property
    def group_count(self) -> int:
        return self.canonical_count - 1

    @property
    def compression_ratio(self) -> float:
        return 1.0 - self.group_count / self.vocab_size

    def __call__(self, token_ids) -> np.ndarray:
        return project(self, token_ids)

    def groups(self) -> list[list[int]]:
        """Raw token IDs per canonical ID (sentinel excluded)."""
        order = np.argsort(self.table, kind="stable")
        bounds = np.searchsorted(self.table[order], np.arange(self.group_count + 1))
        return [order[bounds[c]:bounds[c + 1]].tolist() for c in range(self.group_count)]


def build_projection(vocab: Iterable[VocabEntry],
                     options: NormalizeOptions = DEFAULT_OPTIONS) -> VocabProjection:
    entries = sorted(vocab, key=lambda e: e.token_id)
    if not entries:
        raise VocabError("empty vocabulary")
    seen: set[int] = set()
    for e in entries:
        if e.token_id < 0:
            raise VocabError(f"negative token id {e.token_id}")
        if e.token_id in seen:
            raise VocabError(f"duplicate token id {e.token_id}")
        seen.add(e.token_id)

    size = entries[-1].token_id + 1
    table = np.full(size, -1, dtype=np.int64)
    key_to_id: dict[tuple, int] = {}
    reps: list[int] = []
    for e in entries:
        if e.is_special:
            key = ("special", e.token_id)
        else:
            key = ("text", normalize_surface(e.surface, options))
        cid = key_to_id.get(key)
        if cid is None:
            cid = len(reps)
            key_to_id[key] = cid
            reps.append(e.token_id)
        table[e.token_id] = cid

    # ids missing from a sparse vocab each get their own canonical slot
    for tid in np.flatnonzero(table < 0):
        table[tid] = len(reps)
        reps.append(int(tid))

    return VocabProjection(
        table=table.astype(np.uint32),
        canonical_count=len(reps) + 1,
        representatives=np.asarray(reps, dtype=np.int64),
    )


def project(p: VocabProjection, token_ids):
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= p.vocab_size):
        raise IndexError(f"token id out of range for vocabulary of size {p.vocab_size}")
    out = p.table[ids].astype(np.int64)
    return int(out) if out.ndim == 0 else out


def load_vocab_jsonl(path) -> list[VocabEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                entries.append(VocabEntry(
                    token_id=int(rec["id"]),
                    surface=base64.b64decode(rec["surface_base64"]),
                    is_special=bool(rec.get("special", False)),
                ))
            except (KeyError, ValueError, TypeError) as exc:
                raise VocabError(f"{path}:{lineno}: bad vocab record ({exc})") from exc
    return entries


def write_vocab_jsonl(path, entries: Iterable[VocabEntry]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps({
                "id": e.token_id,
                "surface_base64": base64.b64encode(e.surface).decode("ascii"),
                "special": e.is_special,
            }) + "\n")


def projection_report(p: VocabProjection, vocab: list[VocabEntry], top: int = 5) -> dict:
    """Summary in the style of a merge table: largest groups first."""
    by_id = {e.token_id: e for e in vocab}
    groups = sorted(p.groups(), key=lambda g: (-len(g), g[0]))
    top_groups = []
    for g in groups[:top]:
        rep = by_id.get(g[0])
        top_groups.append({
            "merge_count": len(g),
            "normalized": normalize_surface(rep.surface).decode("utf-8", "replace") if rep else None,
            "members": [by_id[t].surface.decode("utf-8", "replace") for t in g[:12] if t in by_id],
        })
    return {
        "vocab_size": p.vocab_size,
        "canonical_count": p.canonical_count,
        "group_count": p.group_count,
        "sentinel_id": p.sentinel_id,
        "compression_ratio": p.compression_ratio,
        "top_groups": top_groups,
    }


def data_path(name: str) -> Path:
    return Path(__file__).parent / "data" / name
