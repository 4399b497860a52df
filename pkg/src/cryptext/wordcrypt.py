"""Deterministic per-word AES-256-CBC encryption.

Every token is encrypted on its own with a fixed key and a fixed IV derived
from that key, so equal words always map to equal ciphertokens.  This makes
the encryption a bijection on the vocabulary, which is what lets models be
trained on the ciphertext.  It is deterministic encryption and leaks word
frequencies; anyone able to run frequency analysis on the ciphertokens can
attack it.  Use it only where the model returns labels, never text.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import List, Optional, Sequence

from cryptography.hazmat.primitives import padding
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .textprep import TokenizedDoc

BLOCK = 16
_IV_LABEL = b"cryptext-iv-v1"


class IntegrityError(ValueError):
    """Ciphertext failed to decrypt: bad hex, misaligned length or bad padding."""


@dataclass(frozen=True)
class CipherContext:
    key: bytes
    iv: bytes
    passphrase_hint: Optional[str] = None

    def __post_init__(self):
        if len(self.key) != 32:
            raise ValueError("AES-256 key must be 32 bytes")
        if len(self.iv) != BLOCK:
            raise ValueError("IV must be 16 bytes")

    def __repr__(self):
        return f"CipherContext(key=<{len(self.key)} bytes>, hint={self.passphrase_hint!r})"

    @classmethod
    def from_key(cls, key: bytes, hint: Optional[str] = None) -> "CipherContext":
        return cls(key, derive_iv(key), hint)


def derive_iv(key: bytes) -> bytes:
    return hashlib.sha256(key + _IV_LABEL).digest()[:BLOCK]


def derive_context(passphrase: str, hint: Optional[str] = None) -> CipherContext:
    """key = SHA-256(passphrase); no salt or stretching."""
    if not passphrase:
        raise ValueError("passphrase must be non-empty")
    key = hashlib.sha256(passphrase.encode("utf-8")).digest()
    return CipherContext.from_key(key, hint)


def aes_cbc_encrypt_raw(key: bytes, iv: bytes, data: bytes) -> bytes:
    """Unpadded AES-CBC over block-aligned ``data``."""
    enc = Cipher(algorithms.AES(key), modes.CBC(iv)).encryptor()
    return enc.update(data) + enc.finalize()


def aes_cbc_decrypt_raw(key: bytes, iv: bytes, data: bytes) -> bytes:
    dec = Cipher(algorithms.AES(key), modes.CBC(iv)).decryptor()
    return dec.update(data) + dec.finalize()


def ciphertoken_length(token: str) -> int:
    """Hex length of the ciphertoken for ``token``."""
    return 2 * BLOCK * (len(token.encode("utf-8")) // BLOCK + 1)


def encrypt_token(ctx: CipherContext, token: str) -> str:
    if not token or any(c.isspace() for c in token):
        raise ValueError(f"token must be non-empty without whitespace: {token!r}")
    padder = padding.PKCS7(BLOCK * 8).padder()
    padded = padder.update(token.encode("utf-8")) + padder.finalize()
    return aes_cbc_encrypt_raw(ctx.key, ctx.iv, padded).hex()


def decrypt_token(ctx: CipherContext, ct: str) -> str:
    try:
        raw = bytes.fromhex(ct)
    except ValueError:
        raise IntegrityError(f"not a hex string: {ct[:40]!r}") from None
    if not raw or len(raw) % BLOCK:
        raise IntegrityError(f"ciphertext length {len(raw)} is not a positive multiple of {BLOCK}")
    padded = aes_cbc_decrypt_raw(ctx.key, ctx.iv, raw)
    unpadder = padding.PKCS7(BLOCK * 8).unpadder()
    try:
        data = unpadder.update(padded) + unpadder.finalize()
        return data.decode("utf-8")
    except ValueError:
        # wrong key or corrupted ciphertext
        raise IntegrityError("bad padding or invalid UTF-8 after decryption") from None


class TokenCipher:
    """Memoising wrapper; real corpora repeat the same words millions of times."""

    def __init__(self, ctx: CipherContext):
        self.ctx = ctx
        self._enc = {}
        self._dec = {}

    def encrypt(self, token: str) -> str:
        ct = self._enc.get(token)
        if ct is None:
            ct = self._enc[token] = encrypt_token(self.ctx, token)
        return ct

    def decrypt(self, ct: str) -> str:
        tok = self._dec.get(ct)
        if tok is None:
            tok = self._dec[ct] = decrypt_token(self.ctx, ct)
        return tok


def encrypt_corpus(ctx: CipherContext, docs: Sequence[TokenizedDoc]) -> List[TokenizedDoc]:
    cipher = TokenCipher(ctx)
    return [
        TokenizedDoc(d.doc_id, d.label_id, tuple(cipher.encrypt(t) for t in d.tokens))
        for d in docs
    ]


def decrypt_corpus(ctx: CipherContext, docs: Sequence[TokenizedDoc]) -> List[TokenizedDoc]:
    cipher = TokenCipher(ctx)
    return [
        TokenizedDoc(d.doc_id, d.label_id, tuple(cipher.decrypt(t) for t in d.tokens))
        for d in docs
    ]


def verify_round_trip(ctx: CipherContext, plain, encrypted) -> float:
    """Fraction of documents whose decrypted tokens equal the plaintext tokens."""
    if len(plain) != len(encrypted):
        raise ValueError("document counts differ")
    if not plain:
        return 1.0
    decrypted = decrypt_corpus(ctx, encrypted)
    ok = sum(p.doc_id == d.doc_id and p.tokens == d.tokens for p, d in zip(plain, decrypted))
    return ok / len(plain)
