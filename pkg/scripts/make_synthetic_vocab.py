"""Generate the bundled 1k-token synthetic vocabulary and its expected merge groups.

Groups are written down by hand from how the variants were constructed (case,
leading space, accents, width and ligature forms, whitespace runs), never by
calling the normalizer, so the bundled groups are an independent oracle.

    python3 scripts/make_synthetic_vocab.py src/engram/data
"""

import json
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from engram.vocab import VocabEntry, write_vocab_jsonl  # noqa: E402

SIZE = 1000
SEED = 20240117

WHITESPACE = ["\t", "\n", "\r", " ", "  ", "\n\n", "   ", " \n", "\t\t", "\r\n", " \t ",
              "\u00a0", "\u3000", "\u2003", "\n \n", "    "]

# canonical letter -> precomposed accented forms (all decompose to letter + marks)
ACCENTED = {
    "a": "áäãąàåâāăǎ",
    "o": "óöôõőòōŏǒ",
    "e": "éèęěêëēėĕ",
    "i": "íìîīïĩįĭǐ",
    "u": "úùûüũūůűų",
    "n": "ñńňņ",
    "c": "çćčĉċ",
    "y": "ýÿŷ",
    "s": "śšşŝ",
    "z": "źżž",
}

WORDS = {
    "the": ["the", "The", "THE", " the", " The", " THE", "\tthe"],
    "cafe": ["cafe", "café", "Café", "CAFÉ", " café", " cafe", "café"],
    "naive": ["naive", "naïve", "Naïve", " naive", " naïve"],
    "resume": ["resume", "résumé", "Résumé", " resume", " résumé"],
    "fi": ["fi", "Fi", " fi", "ﬁ", " ﬁ"],
    "ff": ["ff", "FF", "ﬀ"],
    "ab": ["ab", "AB", "ａｂ", "ＡＢ", " ab"],
    "12": ["12", "１２", " 12"],
    "new york": ["new york", "New York", "new  york", "new\tyork", " New\nYork"],
    "x2": ["x2", "X2", "x²", "X²"],
}

SPECIAL = ["<s>", "</s>", "<pad>", "<unk>", "<|endoftext|>", " ", "a"]
BINARY = [b"\xff", b"\xfe", b"\x80\x81", b"\xc3", b"\xe2\x82", b"\xf0\x9f\x98"]


def groups_by_construction():
    """(surface bytes, group key, special) for every designed token."""
    rows = []
    for s in WHITESPACE:
        rows.append((s.encode(), "ws", False))
    for letter, accents in ACCENTED.items():
        forms = [letter, letter.upper(), " " + letter, " " + letter.upper()]
        forms += list(accents) + [" " + ch for ch in accents[:3]] + [ch.upper() for ch in accents[:2]]
        rows += [(f.encode(), "letter:" + letter, False) for f in forms]
    for key, forms in WORDS.items():
        rows += [(f.encode(), "word:" + key, False) for f in forms]
    rows += [(s.encode(), f"special:{i}", True) for i, s in enumerate(SPECIAL)]
    rows += [(b, f"bytes:{b.hex()}", False) for b in BINARY]
    return rows


def filler(n, taken, rng):
    """Distinct plain lowercase strings; none can coincide with a designed group."""
    alphabet = "bdfghjklmpqrtvw"
    out = set()
    while len(out) < n:
        s = "".join(rng.choice(alphabet) for _ in range(rng.randint(4, 8)))
        if s not in taken:
            out.add(s)
    return sorted(out)


def main(outdir):
    rng = random.Random(SEED)
    rows = groups_by_construction()
    for s in filler(SIZE - len(rows), {r[1] for r in rows}, rng):
        rows.append((s.encode(), "plain:" + s, False))
    order = list(range(len(rows)))
    rng.shuffle(order)
    entries, members = [], {}
    for token_id, i in enumerate(order):
        surface, key, special = rows[i]
        entries.append(VocabEntry(token_id, surface, special))
        members.setdefault(key, []).append(token_id)

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_vocab_jsonl(outdir / "synthetic_vocab.jsonl", entries)
    groups = sorted((sorted(g) for g in members.values()), key=lambda g: g[0])
    doc = {
        "vocab_size": len(entries),
        "group_count": len(groups),
        "compression_ratio": 1 - len(groups) / len(entries),
        "groups": groups,
        "labels": {k: sorted(v) for k, v in members.items() if len(v) > 1},
    }
    (outdir / "synthetic_groups.json").write_text(json.dumps(doc, indent=1) + "\n")
    print(f"{len(entries)} tokens, {len(groups)} groups, ratio {doc['compression_ratio']:.4f}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/engram/data")
