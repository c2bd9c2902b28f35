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

#ifndef SGXPART_CRYPTO_H_
#define SGXPART_CRYPTO_H_

#include <optional>
#include <string_view>

#include "sgxpart/bytes.h"

// Primitives used by the simulator. Hashing, HMAC and X25519 come from
// OpenSSL; the authenticated cipher is a simulated construction (HMAC keystream
// plus truncated HMAC tag), which is all the isolation experiments need.
namespace sgxpart::crypto {

inline constexpr std::size_t kTagSize = 16;

Digest Sha256(ByteView data);
Digest HmacSha256(ByteView key, ByteView data);

// HMAC(key, label || 0x00 || context).
Key32 DeriveKey(ByteView key, std::string_view label, ByteView context = {});

// Returns ciphertext || 16-byte tag. The nonce must never repeat under a key.
Bytes AeadSeal(const Key32& key, ByteView nonce, ByteView aad,
               ByteView plaintext);
// nullopt when the tag does not verify.
std::optional<Bytes> AeadOpen(const Key32& key, ByteView nonce, ByteView aad,
                              ByteView sealed);

Key32 X25519PublicKey(const Key32& private_key);
// Throws Error(kInvalidArgument) if the peer key yields an all-zero secret.
Key32 X25519Shared(const Key32& private_key, const Key32& peer_public);

bool ConstantTimeEqual(ByteView a, ByteView b);

}  // namespace sgxpart::crypto

#endif  // SGXPART_CRYPTO_H_
