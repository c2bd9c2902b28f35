/*
 * Copyright 2026 The sgxpart Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "sgxpart/crypto.h"

#include <openssl/core_names.h>
#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/params.h>

#include <algorithm>
#include <memory>

#include "sgxpart/error.h"

namespace sgxpart::crypto {
namespace {

struct PkeyDeleter {
  void operator()(EVP_PKEY* key) const { EVP_PKEY_free(key); }
};
struct PkeyCtxDeleter {
  void operator()(EVP_PKEY_CTX* ctx) const { EVP_PKEY_CTX_free(ctx); }
};
struct MacCtxDeleter {
  void operator()(EVP_MAC_CTX* ctx) const { EVP_MAC_CTX_free(ctx); }
};
using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDeleter>;

PkeyPtr LoadPrivate(const Key32& private_key) {
  PkeyPtr key(EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr,
                                           private_key.data(),
                                           private_key.size()));
  if (!key) throw Error(ErrorCode::kInvalidArgument, "bad X25519 private key");
  return key;
}

Bytes Keystream(const Key32& key, ByteView nonce, std::size_t n) {
  Bytes stream;
  stream.reserve(n + 32);
  std::uint32_t block = 0;
  while (stream.size() < n) {
    Bytes input(nonce.begin(), nonce.end());
    AppendU32(input, block++);
    Digest d = HmacSha256(key, input);
    stream.insert(stream.end(), d.begin(), d.end());
  }
  stream.resize(n);
  return stream;
}

Bytes TagInput(ByteView aad, ByteView nonce, ByteView ciphertext) {
  Bytes input;
  AppendU64(input, aad.size());
  Append(input, aad);
  AppendU64(input, nonce.size());
  Append(input, nonce);
  Append(input, ciphertext);
  return input;
}

}  // namespace

Digest Sha256(ByteView data) {
  // Fetched once; the one-shot helpers re-fetch the algorithm on every call.
  static EVP_MD* const md = EVP_MD_fetch(nullptr, "SHA256", nullptr);
  Digest out;
  unsigned int len = 0;
  if (md == nullptr ||
      !EVP_Digest(data.data(), data.size(), out.data(), &len, md, nullptr)) {
    throw Error(ErrorCode::kInvalidArgument, "SHA-256 unavailable");
  }
  return out;
}

Digest HmacSha256(ByteView key, ByteView data) {
  // A context with the digest already bound, duplicated per call.
  static EVP_MAC_CTX* const prototype = [] {
    EVP_MAC* mac = EVP_MAC_fetch(nullptr, "HMAC", nullptr);
    EVP_MAC_CTX* ctx = mac ? EVP_MAC_CTX_new(mac) : nullptr;
    EVP_MAC_free(mac);
    char digest[] = "SHA256";
    OSSL_PARAM params[] = {
        OSSL_PARAM_construct_utf8_string(OSSL_MAC_PARAM_DIGEST, digest, 0),
        OSSL_PARAM_construct_end()};
    if (ctx != nullptr && !EVP_MAC_CTX_set_params(ctx, params)) {
      EVP_MAC_CTX_free(ctx);
      ctx = nullptr;
    }
    return ctx;
  }();
  std::unique_ptr<EVP_MAC_CTX, MacCtxDeleter> ctx(
      prototype ? EVP_MAC_CTX_dup(prototype) : nullptr);
  static const std::uint8_t kEmptyKey = 0;
  Digest out;
  std::size_t len = 0;
  if (!ctx ||
      !EVP_MAC_init(ctx.get(), key.empty() ? &kEmptyKey : key.data(), key.size(),
                    nullptr) ||
      !EVP_MAC_update(ctx.get(), data.data(), data.size()) ||
      !EVP_MAC_final(ctx.get(), out.data(), &len, out.size())) {
    throw Error(ErrorCode::kInvalidArgument, "HMAC-SHA-256 unavailable");
  }
  return out;
}

Key32 DeriveKey(ByteView key, std::string_view label, ByteView context) {
  Bytes input(label.begin(), label.end());
  input.push_back(0);
  Append(input, context);
  return HmacSha256(key, input);
}

Bytes AeadSeal(const Key32& key, ByteView nonce, ByteView aad,
               ByteView plaintext) {
  Key32 enc = DeriveKey(key, "aead-enc");
  Key32 mac = DeriveKey(key, "aead-mac");
  Bytes out = Keystream(enc, nonce, plaintext.size());
  for (std::size_t i = 0; i < plaintext.size(); ++i) out[i] ^= plaintext[i];
  Digest tag = HmacSha256(mac, TagInput(aad, nonce, out));
  out.insert(out.end(), tag.begin(), tag.begin() + kTagSize);
  return out;
}

std::optional<Bytes> AeadOpen(const Key32& key, ByteView nonce, ByteView aad,
                              ByteView sealed) {
  if (sealed.size() < kTagSize) return std::nullopt;
  ByteView ciphertext = sealed.first(sealed.size() - kTagSize);
  ByteView tag = sealed.last(kTagSize);
  Key32 enc = DeriveKey(key, "aead-enc");
  Key32 mac = DeriveKey(key, "aead-mac");
  Digest expected = HmacSha256(mac, TagInput(aad, nonce, ciphertext));
  if (!ConstantTimeEqual(ByteView(expected).first(kTagSize), tag)) {
    return std::nullopt;
  }
  Bytes out = Keystream(enc, nonce, ciphertext.size());
  for (std::size_t i = 0; i < ciphertext.size(); ++i) out[i] ^= ciphertext[i];
  return out;
}

Key32 X25519PublicKey(const Key32& private_key) {
  PkeyPtr key = LoadPrivate(private_key);
  Key32 pub;
  std::size_t len = pub.size();
  if (EVP_PKEY_get_raw_public_key(key.get(), pub.data(), &len) != 1) {
    throw Error(ErrorCode::kInvalidArgument, "cannot derive X25519 public key");
  }
  return pub;
}

Key32 X25519Shared(const Key32& private_key, const Key32& peer_public) {
  PkeyPtr key = LoadPrivate(private_key);
  PkeyPtr peer(EVP_PKEY_new_raw_public_key(EVP_PKEY_X25519, nullptr,
                                           peer_public.data(),
                                           peer_public.size()));
  if (!peer) throw Error(ErrorCode::kInvalidArgument, "bad X25519 public key");
  PkeyCtxPtr ctx(EVP_PKEY_CTX_new(key.get(), nullptr));
  Key32 shared;
  std::size_t len = shared.size();
  if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1 ||
      EVP_PKEY_derive_set_peer(ctx.get(), peer.get()) != 1 ||
      EVP_PKEY_derive(ctx.get(), shared.data(), &len) != 1 ||
      len != shared.size()) {
    throw Error(ErrorCode::kInvalidArgument, "X25519 derivation failed");
  }
  return shared;
}

bool ConstantTimeEqual(ByteView a, ByteView b) {
  return a.size() == b.size() && CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

}  // namespace sgxpart::crypto
