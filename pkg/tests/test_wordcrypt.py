import hashlib
import random

import pytest

from cryptext.textprep import TokenizedDoc
from cryptext.wordcrypt import (CipherContext, IntegrityError, TokenCipher, aes_cbc_decrypt_raw,
                                aes_cbc_encrypt_raw, ciphertoken_length, decrypt_corpus, decrypt_token,
                                derive_context, derive_iv, encrypt_corpus, encrypt_token, verify_round_trip)

# NIST SP 800-38A, F.2.5 CBC-AES256.Encrypt
NIST_KEY = bytes.fromhex("603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9810a30914dff4")
NIST_IV = bytes.fromhex("000102030405060708090a0b0c0d0e0f")
NIST_PT = bytes.fromhex("6bc1bee22e409f96e93d7e117393172aae2d8a571e03ac9c9eb76fac45af8e51"
                        "30c81c46a35ce411e5fbc1191a0a52eff69f2445df4f9b17ad2b417be66c3710")
NIST_CT = bytes.fromhex("f58c4c04d6e5f1ba779eabfb5f7bfbd69cfc4e967edb808d679f777bc6702c7d"
                        "39f23369a9d9bacfa530e26304231461b2eb05e2c39be9fcda6c19078c6a9d1b")

# computed beforehand with `openssl enc -aes-256-cbc` (PKCS7 on) under the NIST key/iv
FROZEN_PKCS7 = {
    "apple": "f8673d5d5c8777c20852c5b56696abdc",
    "abcdefghijklmnop": "4101859a6f3039f560031c073d61c2d500ddfcc612c3a88f5cfd075af5958157",
    "çà-naïve": "42f2d8610d37453b079e1b8a58fb0c66",
}
# sha256sum of the literal strings, and the resulting context under our iv derivation
SHA_K = "8254c329a92850f6d539dd376f4816ee2764517da5e0235514af433164480d7a"
SHA_K2 = "015f7e6bc5aeaf483724089e9252cc13b50951a6b69412522765cff4d780306e"
IV_K = "ce746cbe410b8668d70ac42007230e91"
APPLE_K = "66e9d420deba156a2a31591325835a14"

NIST_CTX = CipherContext(NIST_KEY, NIST_IV)


def test_raw_cbc_matches_nist():
    assert aes_cbc_encrypt_raw(NIST_KEY, NIST_IV, NIST_PT) == NIST_CT
    assert aes_cbc_decrypt_raw(NIST_KEY, NIST_IV, NIST_CT) == NIST_PT


@pytest.mark.parametrize("token, expected", sorted(FROZEN_PKCS7.items()))
def test_known_answer_tokens(token, expected):
    assert encrypt_token(NIST_CTX, token) == expected
    assert decrypt_token(NIST_CTX, expected) == token


def test_derive_context():
    a, b = derive_context("k"), derive_context("k")
    assert a == b
    assert a.key.hex() == SHA_K
    assert derive_context("k2").key.hex() == SHA_K2
    assert len(a.key) == 32 and len(a.iv) == 16
    assert a.iv.hex() == IV_K == derive_iv(a.key).hex()
    assert encrypt_token(a, "apple") == APPLE_K


def test_context_repr_hides_key():
    ctx = derive_context("k", hint="test key")
    assert SHA_K not in repr(ctx) and "test key" in repr(ctx)


def test_context_validation():
    with pytest.raises(ValueError):
        CipherContext(b"short", NIST_IV)
    with pytest.raises(ValueError):
        CipherContext(NIST_KEY, b"short")
    with pytest.raises(ValueError):
        derive_context("")


@pytest.mark.parametrize("n_bytes", range(1, 49))
def test_length_law(n_bytes):
    token = "x" * n_bytes
    ct = encrypt_token(NIST_CTX, token)
    assert len(ct) == ciphertoken_length(token) == 32 * (n_bytes // 16 + 1)
    assert ct == ct.lower()
    int(ct, 16)


def test_apple_and_full_block_lengths():
    assert len(encrypt_token(NIST_CTX, "apple")) == 32
    assert len(encrypt_token(NIST_CTX, "a" * 16)) == 64


@pytest.mark.parametrize("bad", ["", "two words", "tab\there"])
def test_encrypt_rejects_invalid_tokens(bad):
    with pytest.raises(ValueError):
        encrypt_token(NIST_CTX, bad)


def _random_token(rng):
    chars = []
    for _ in range(rng.randint(1, 20)):
        while True:
            cp = rng.randint(0x21, 0x2FFFF)
            if 0xD800 <= cp <= 0xDFFF:
                continue
            c = chr(cp)
            if not c.isspace():
                break
        chars.append(c)
    return "".join(chars)


def test_unicode_round_trip_1000():
    rng = random.Random(1234)
    ctx = derive_context("unicode")
    tokens = [_random_token(rng) for _ in range(1000)]
    for tok in tokens:
        ct = encrypt_token(ctx, tok)
        assert len(ct) == ciphertoken_length(tok)
        assert decrypt_token(ctx, ct) == tok


@pytest.mark.parametrize("bad", ["zz", "abc", "", "00" * 15, "00" * 17])
def test_malformed_ciphertext(bad):
    with pytest.raises(IntegrityError):
        decrypt_token(NIST_CTX, bad)


def test_wrong_key_over_fixture_vocabulary(fixture_tokens):
    good, bad = derive_context("k"), derive_context("k2")
    vocab = sorted({t for doc in fixture_tokens[0] + fixture_tokens[1] for t in doc.tokens})
    errors = 0
    for tok in vocab:
        try:
            out = decrypt_token(bad, encrypt_token(good, tok))
        except IntegrityError:
            errors += 1
        else:
            assert out != tok
    # a random final block has valid PKCS7 padding with probability about 1/256
    assert errors / len(vocab) >= 0.97


def test_corpus_encryption_structure(ctx):
    docs = [TokenizedDoc("d0", 0, ("a", "b", "a")), TokenizedDoc("d1", 1, ())]
    enc = encrypt_corpus(ctx, docs)
    ea, eb = encrypt_token(ctx, "a"), encrypt_token(ctx, "b")
    assert enc[0] == TokenizedDoc("d0", 0, (ea, eb, ea))
    assert enc[1] == TokenizedDoc("d1", 1, ())
    assert decrypt_corpus(ctx, enc) == docs


def test_fixture_vocabulary_is_preserved(ctx, fixture_tokens):
    train, test = fixture_tokens
    enc = encrypt_corpus(ctx, train + test)
    plain_vocab = {t for d in train + test for t in d.tokens}
    enc_vocab = {t for d in enc for t in d.tokens}
    assert len(plain_vocab) == len(enc_vocab)
    assert not plain_vocab & enc_vocab
    assert verify_round_trip(ctx, train + test, enc) == 1.0


def test_verify_round_trip_detects_damage(ctx, fixture_tokens):
    train, _ = fixture_tokens
    enc = encrypt_corpus(ctx, train)
    d = enc[0]
    enc[0] = TokenizedDoc(d.doc_id, d.label_id, d.tokens[1:])
    assert verify_round_trip(ctx, train, enc) == pytest.approx((len(train) - 1) / len(train))
    with pytest.raises(ValueError):
        verify_round_trip(ctx, train, enc[:-1])


def test_token_cipher_memoises(ctx):
    c = TokenCipher(ctx)
    assert c.encrypt("space") is c.encrypt("space")
    assert c.decrypt(c.encrypt("space")) == "space"


def test_key_is_plain_sha256():
    assert derive_context("pass phrase").key == hashlib.sha256(b"pass phrase").digest()
