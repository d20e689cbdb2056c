"""Seed derivation, deterministic formatting and atomic file output.

Every random draw in the package flows from one root seed through
``derive_rng(root, tag, index)``.  The derivation is
``SeedSequence([root, sha256(tag)[:8], index])``, so independent tasks
(experiments, trials, parallel workers) get independent streams while a
rerun with the same root reproduces every stream bit-exactly.
"""

import hashlib
import json
import os
import tempfile

import numpy as np

_MASK64 = (1 << 64) - 1


def tag_entropy(tag: str) -> int:
    """Stable 64-bit entropy word for a task tag (platform independent)."""
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "big")


def derive_seed_sequence(root: int, tag: str, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(root) & _MASK64, tag_entropy(tag), int(index)])


def derive_rng(root: int, tag: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(root, tag, index))


def fmt_float(x) -> str:
    """Shortest round-trip decimal form of a double (repr of Python float)."""
    return repr(float(x))


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_csv(path, header, rows) -> None:
    """CSV with a header row, '.' decimal separator, shortest round-trip floats.

    ``rows`` yields sequences whose entries are str/int/float; floats are
    rendered with :func:`fmt_float` so reruns are byte-identical.
    """
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (float, np.floating)):
                cells.append(fmt_float(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def atomic_write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
