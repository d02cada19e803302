"""Deterministic seed splitting.

Every module seed is ``derive_seed(root, *labels)``: the first 8 bytes of
``sha256("root/label1/label2/...")`` read as a little-endian integer and
reduced to 63 bits. Labels are stringified, so ``("run", 2)`` and
``("run", "2")`` give the same seed.
"""

from __future__ import annotations

import hashlib


def derive_seed(root: int, *labels) -> int:
    key = "/".join([str(int(root)), *(str(x) for x in labels)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)
