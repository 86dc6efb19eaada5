#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cartseg/common.hpp"

namespace cartseg::npy {

// Minimal NumPy .npy v1.0 support, C-order and little-endian only.
// Covers the dtypes this project writes: <f4, <f8, |u1, <i8.

template <typename T> struct dtype_descr;
template <> struct dtype_descr<float> { static constexpr const char* value = "<f4"; };
template <> struct dtype_descr<double> { static constexpr const char* value = "<f8"; };
template <> struct dtype_descr<std::uint8_t> { static constexpr const char* value = "|u1"; };
template <> struct dtype_descr<std::int64_t> { static constexpr const char* value = "<i8"; };

template <typename T>
void save(const std::filesystem::path& path, const std::vector<T>& data,
    const std::vector<std::int64_t>& shape)
{
    std::int64_t n = 1;
    for (auto s : shape)
        n *= s;
    if (n != static_cast<std::int64_t>(data.size()))
        throw DataError("npy shape does not match data size for " + path.string());

    std::string dict = "{'descr': '";
    dict += dtype_descr<T>::value;
    dict += "', 'fortran_order': False, 'shape': (";
    for (std::size_t i = 0; i < shape.size(); ++i)
        dict += std::to_string(shape[i]) + (shape.size() == 1 ? "," : (i + 1 < shape.size() ? ", " : ""));
    dict += "), }";
    // pad with spaces so that magic(6)+version(2)+len(2)+dict is 64-aligned
    std::size_t header_len = 10 + dict.size() + 1;
    std::size_t padded = (header_len + 63) / 64 * 64;
    dict.append(padded - header_len, ' ');
    dict += '\n';

    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw DataError("cannot open for writing: " + path.string());
    const char magic[8] = { '\x93', 'N', 'U', 'M', 'P', 'Y', '\x01', '\x00' };
    f.write(magic, 8);
    const auto len = static_cast<std::uint16_t>(dict.size());
    f.write(reinterpret_cast<const char*>(&len), 2);
    f.write(dict.data(), static_cast<std::streamsize>(dict.size()));
    f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
    if (!f)
        throw DataError("write failed: " + path.string());
}

template <typename T>
std::vector<T> load(const std::filesystem::path& path, std::vector<std::int64_t>& shape)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw DataError("cannot open: " + path.string());
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "\x93NUMPY", 6) != 0)
        throw DataError("not a .npy file: " + path.string());
    std::uint16_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 2);
    std::string dict(len, '\0');
    f.read(dict.data(), len);
    if (!f)
        throw DataError("truncated .npy header: " + path.string());

    if (dict.find(dtype_descr<T>::value) == std::string::npos)
        throw DataError("unexpected dtype in " + path.string() + " (want " + dtype_descr<T>::value + ")");
    if (dict.find("'fortran_order': False") == std::string::npos)
        throw DataError("fortran-order .npy unsupported: " + path.string());

    const auto open = dict.find('(');
    const auto close = dict.find(')', open);
    if (open == std::string::npos || close == std::string::npos)
        throw DataError("malformed .npy shape: " + path.string());
    shape.clear();
    std::string inner = dict.substr(open + 1, close - open - 1);
    std::size_t pos = 0;
    while (pos < inner.size()) {
        while (pos < inner.size() && (inner[pos] == ' ' || inner[pos] == ','))
            ++pos;
        if (pos >= inner.size())
            break;
        shape.push_back(std::stoll(inner.substr(pos)));
        while (pos < inner.size() && inner[pos] != ',')
            ++pos;
    }
    std::int64_t n = 1;
    for (auto s : shape)
        n *= s;
    std::vector<T> data(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
    if (!f)
        throw DataError("truncated .npy data: " + path.string());
    return data;
}

} // namespace cartseg::npy
