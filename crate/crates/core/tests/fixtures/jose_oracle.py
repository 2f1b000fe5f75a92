#!/usr/bin/env python3
"""Independent JOSE oracle used to freeze the expected vectors in jws_vectors.json.

Uses only the Python stdlib (hmac/hashlib) for HS256 and the `cryptography`
package for RS256, so it shares no code with the Rust implementation.
Run from this directory: python3 jose_oracle.py > jws_vectors.json
"""
import base64
import hashlib
import hmac
import json

from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding


def b64(b):
    return base64.urlsafe_b64encode(b).rstrip(b"=").decode()


def ub64(s):
    return base64.urlsafe_b64decode(s + "=" * (-len(s) % 4))


def compact(obj):
    return json.dumps(obj, separators=(",", ":")).encode()


out = {}

# RFC 7515 Appendix A.1: header and payload octets as published (CRLF included).
a1_header = bytes([123, 34, 116, 121, 112, 34, 58, 34, 74, 87, 84, 34, 44, 13, 10, 32, 34, 97,
                   108, 103, 34, 58, 34, 72, 83, 50, 53, 54, 34, 125])
a1_payload = bytes([123, 34, 105, 115, 115, 34, 58, 34, 106, 111, 101, 34, 44, 13, 10, 32, 34,
                    101, 120, 112, 34, 58, 49, 51, 48, 48, 56, 49, 57, 51, 56, 48, 44, 13, 10,
                    32, 34, 104, 116, 116, 112, 58, 47, 47, 101, 120, 97, 109, 112, 108, 101,
                    46, 99, 111, 109, 47, 105, 115, 95, 114, 111, 111, 116, 34, 58, 116, 114,
                    117, 101, 125])
a1_key = "AyM1SysPpbyDfgZld3umj1qzKObwVMkoqQ-EstJQLr_T-1qS0gZH75aKtMN3Yj0iPS4hcgUuTwjAzZr1Z9CAow"
si = b64(a1_header) + "." + b64(a1_payload)
out["rfc7515_a1"] = {
    "signing_input": si,
    "key_b64url": a1_key,
    "signature": b64(hmac.new(ub64(a1_key), si.encode(), hashlib.sha256).digest()),
}

hs_key = b"0123456789abcdef0123456789abcdef"
fig4 = {
    "iss": "https://Domain_A/idp",
    "aud": "https://Domain_B/idp",
    "iat": 1532683271,
    "exp": 1532682999,
    "sdata": {"subject": "user1", "email": "sample@sample.com"},
}
si = b64(compact({"alg": "HS256", "typ": "JWT"})) + "." + b64(compact(fig4))
out["hs256_fig4"] = {
    "key_utf8": hs_key.decode(),
    "claims": fig4,
    "token": si + "." + b64(hmac.new(hs_key, si.encode(), hashlib.sha256).digest()),
}

pk = serialization.load_pem_private_key(open("test_rs256.pem", "rb").read(), None)
claims = {"iss": "https://Domain_A/idp", "sub": "user1"}
si = b64(compact({"alg": "RS256", "typ": "JWT", "kid": "test-1"})) + "." + b64(compact(claims))
sig = pk.sign(si.encode(), padding.PKCS1v15(), hashes.SHA256())
pub = pk.public_key().public_numbers()


def ib(i):
    return b64(i.to_bytes((i.bit_length() + 7) // 8, "big"))


out["rs256"] = {
    "kid": "test-1",
    "claims": claims,
    "token": si + "." + b64(sig),
    "jwk": {"kty": "RSA", "n": ib(pub.n), "e": ib(pub.e)},
}

print(json.dumps(out, indent=2))
