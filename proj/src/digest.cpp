#include "avbr/digest.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <array>
#include <fstream>

#include "avbr/errors.hpp"

namespace avbr {

static std::string to_hex(const unsigned char* buf, size_t n) {
    static const char* digits = "0123456789abcdef";
    std::string out(n * 2, '0');
    for (size_t i = 0; i < n; ++i) {
        out[2 * i] = digits[buf[i] >> 4];
        out[2 * i + 1] = digits[buf[i] & 0xF];
    }
    return out;
}

std::string sha256_hex(const void* data, size_t len) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int md_len = 0;
    if (EVP_Digest(data, len, md.data(), &md_len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256: digest computation failed");
    }
    return to_hex(md.data(), md_len);
}

std::string sha256_hex(std::string_view s) { return sha256_hex(s.data(), s.size()); }

uint32_t crc32_bytes(const void* data, size_t len) {
    return static_cast<uint32_t>(
        ::crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(len)));
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("sha256: cannot open " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), buf.size());
        EVP_DigestUpdate(ctx, buf.data(), static_cast<size_t>(in.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int md_len = 0;
    EVP_DigestFinal_ex(ctx, md.data(), &md_len);
    EVP_MD_CTX_free(ctx);
    return to_hex(md.data(), md_len);
}

}  // namespace avbr
