import hashlib
from typing import Iterable


def stable_hash64(*parts: object) -> int:
    """64-bit unsigned hash that does not depend on PYTHONHASHSEED"""
    digest = hashlib.blake2b(digest_size=8)

    for part in parts:
        digest.update(str(part).encode())
        digest.update(b"\x1f")

    return int.from_bytes(digest.digest(), "big")


def derive_seed(root: int, label: str) -> int:
    # Labelled sub-seed, one independent stream per component
    return stable_hash64(root, label) % (2**63)


def stable_digest64(rows: Iterable[Iterable[object]]) -> str:
    """Hex 64-bit digest over an ordered stream of records"""
    digest = hashlib.blake2b(digest_size=8)

    for row in rows:
        digest.update("\x1f".join(str(value) for value in row).encode())
        digest.update(b"\x1e")

    return digest.hexdigest()
