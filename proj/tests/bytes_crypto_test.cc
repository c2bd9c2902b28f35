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

#include <gtest/gtest.h>

#include "sgxpart/bytes.h"
#include "sgxpart/crypto.h"
#include "sgxpart/error.h"

namespace sgxpart {
namespace {

Key32 KeyFromHex(const char* hex) {
  Bytes b = FromHex(hex);
  Key32 k{};
  std::copy(b.begin(), b.end(), k.begin());
  return k;
}

TEST(Bytes, HexRoundTrip) {
  Bytes b{0x00, 0x7f, 0xff, 0x10};
  EXPECT_EQ(ToHex(b), "007fff10");
  EXPECT_EQ(FromHex("007FFF10"), b);
  EXPECT_TRUE(FromHex("").empty());
}

TEST(Bytes, FromHexRejectsMalformed) {
  for (const char* bad : {"0", "zz", "0g", "abc"}) {
    try {
      FromHex(bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kParseError);
    }
  }
}

TEST(Bytes, BigEndianEncoding) {
  Bytes out;
  AppendU64(out, 0x0102030405060708ULL);
  AppendU32(out, 0xA0B0C0D0u);
  EXPECT_EQ(ToHex(out), "0102030405060708a0b0c0d0");
  EXPECT_EQ(ReadU64(out), 0x0102030405060708ULL);
}

TEST(Bytes, FindAllReportsOverlappingMatches) {
  Bytes hay = ToBytes("aaaba");
  EXPECT_EQ(FindAll(hay, ToBytes("aa")), (std::vector<std::size_t>{0, 1}));
  EXPECT_TRUE(Contains(hay, ToBytes("ba")));
  EXPECT_FALSE(Contains(hay, ToBytes("bb")));
  EXPECT_TRUE(FindAll(hay, Bytes{}).empty());
}

TEST(Rng, DeterministicPerSeedAndStream) {
  Rng a(7, 1), b(7, 1), c(7, 2), d(8, 1);
  Bytes x = a.NextBytes(64);
  EXPECT_EQ(x, b.NextBytes(64));
  EXPECT_NE(x, c.NextBytes(64));
  EXPECT_NE(x, d.NextBytes(64));
}

TEST(Crypto, Sha256KnownAnswer) {
  EXPECT_EQ(ToHex(crypto::Sha256(ToBytes("abc"))),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Crypto, HmacKnownAnswer) {
  EXPECT_EQ(ToHex(crypto::HmacSha256(ToBytes("Jefe"), ToBytes("what do ya want for nothing?"))),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843");
}

TEST(Crypto, X25519KnownAnswer) {
  Key32 alice = KeyFromHex("77076d0a7318a57d3c16c17251b26645df4c2f87ebc0992ab177fba51db92c2a");
  Key32 bob = KeyFromHex("5dab087e624a8a4b79e17f8b83800ee66f3bb1292618b6fd1c2f8b27ff88e0eb");
  Key32 alice_pub = crypto::X25519PublicKey(alice);
  Key32 bob_pub = crypto::X25519PublicKey(bob);
  EXPECT_EQ(ToHex(alice_pub), "8520f0098930a754748b7ddcb43ef75a0dbf3a0d26381af4eba4a98eaa9b4e6a");
  EXPECT_EQ(ToHex(bob_pub), "de9edb7d7b7dc1b4d35b61c2ece435373f8343c85b78674dadfc7e146f882b4f");
  const char* shared = "4a5d9d5ba4ce2de1728e3bf480350f25e07e21c947d19e3376f09b3c1e161742";
  EXPECT_EQ(ToHex(crypto::X25519Shared(alice, bob_pub)), shared);
  EXPECT_EQ(ToHex(crypto::X25519Shared(bob, alice_pub)), shared);
}

Key32 CountingKey() {
  Key32 k{};
  for (int i = 0; i < 32; ++i) k[i] = static_cast<std::uint8_t>(i + 1);
  return k;
}

// Frozen values from an independent implementation of the same construction.
TEST(Crypto, DeriveKeyFrozen) {
  EXPECT_EQ(ToHex(crypto::DeriveKey(CountingKey(), "test", ToBytes("ctx"))),
            "4e4d05d8977f9e5b884383eba50fe4ca254929f1970eb569621d274105f064a6");
}

TEST(Crypto, AeadSealFrozen) {
  Bytes sealed = crypto::AeadSeal(CountingKey(), ToBytes("nonce-0001"), ToBytes("hdr"),
                                  ToBytes("attack at dawn, bring snacks and 0x7F bytes!"));
  EXPECT_EQ(ToHex(sealed),
            "e8e565f6b3f2b20072c942af6e8b5aec041071bdee8c78c33a4db2800c2b1e38a124ef402c6330eb6d"
            "cb60201ae5acb8e643cba03a26edc034aa72f4");
}

TEST(Crypto, AeadRoundTripAndTamper) {
  Key32 key = CountingKey();
  Bytes nonce = ToBytes("n"), aad = ToBytes("a"), pt = ToBytes("payload bytes");
  Bytes sealed = crypto::AeadSeal(key, nonce, aad, pt);
  ASSERT_EQ(sealed.size(), pt.size() + crypto::kTagSize);
  EXPECT_EQ(crypto::AeadOpen(key, nonce, aad, sealed), pt);
  for (std::size_t i = 0; i < sealed.size(); ++i) {
    Bytes bad = sealed;
    bad[i] ^= 0x01;
    EXPECT_FALSE(crypto::AeadOpen(key, nonce, aad, bad)) << "byte " << i;
  }
  EXPECT_FALSE(crypto::AeadOpen(key, ToBytes("m"), aad, sealed));
  EXPECT_FALSE(crypto::AeadOpen(key, nonce, ToBytes("b"), sealed));
  EXPECT_FALSE(crypto::AeadOpen(key, nonce, aad, Bytes(5, 0)));
}

TEST(Crypto, ConstantTimeEqual) {
  EXPECT_TRUE(crypto::ConstantTimeEqual(ToBytes("abc"), ToBytes("abc")));
  EXPECT_FALSE(crypto::ConstantTimeEqual(ToBytes("abc"), ToBytes("abd")));
  EXPECT_FALSE(crypto::ConstantTimeEqual(ToBytes("abc"), ToBytes("ab")));
}

}  // namespace
}  // namespace sgxpart
