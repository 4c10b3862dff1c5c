// Copyright 2026 The astec-xmc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// XAST tensor container. Layout (all integers little-endian):
//
//     "XAST" | u32 version
//     repeated until EOF:
//         u32 name_len | name bytes | u8 dtype | u32 ndim | u64 dims[ndim] | payload (row-major)

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "astec/error.hpp"
#include "astec/linalg.hpp"

namespace astec::xast {

inline constexpr std::uint32_t kVersion = 1;

enum class DType : std::uint8_t { F64 = 0, F32 = 1, U32 = 2, I64 = 3, U8 = 4 };

inline std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::F64: return 8;
        case DType::F32: return 4;
        case DType::U32: return 4;
        case DType::I64: return 8;
        case DType::U8: return 1;
    }
    throw Error(ErrorCode::FormatError, "unknown dtype tag");
}

struct Tensor {
    DType dtype = DType::F64;
    std::vector<std::uint64_t> shape;
    std::vector<std::uint8_t> payload;  // little-endian element bytes

    [[nodiscard]] std::uint64_t numel() const {
        std::uint64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get_le(const std::uint8_t* p) {
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}

template <typename T>
void write_raw(std::ostream& out, T value) {
    std::vector<std::uint8_t> buf;
    put_le(buf, value);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

template <typename T>
bool read_raw(std::istream& in, T& value) {
    std::uint8_t buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
    value = get_le<T>(buf);
    return true;
}

template <typename T>
constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, double>) return DType::F64;
    else if constexpr (std::is_same_v<T, float>) return DType::F32;
    else if constexpr (std::is_same_v<T, std::uint32_t>) return DType::U32;
    else if constexpr (std::is_same_v<T, std::int64_t>) return DType::I64;
    else if constexpr (std::is_same_v<T, std::uint8_t>) return DType::U8;
}

}  // namespace detail

/// Named tensors in insertion order.
class Container {
  public:
    template <typename T>
    void put(const std::string& name, std::span<const T> values, std::vector<std::uint64_t> shape) {
        Tensor t;
        t.dtype = detail::dtype_of<T>();
        t.shape = std::move(shape);
        if (t.numel() != values.size()) throw Error(ErrorCode::ShapeMismatch, "tensor '" + name + "' shape vs payload");
        t.payload.reserve(values.size() * sizeof(T));
        for (const T& v : values) detail::put_le(t.payload, v);
        set(name, std::move(t));
    }

    template <typename T>
    void put_vector(const std::string& name, const std::vector<T>& values) {
        put<T>(name, std::span<const T>(values), {values.size()});
    }

    void put_matrix(const std::string& name, const DenseMatrix& m) {
        put<double>(name, m.data(), {m.rows(), m.cols()});
    }

    void put_scalar(const std::string& name, double v) { put<double>(name, std::span<const double>(&v, 1), {}); }

    template <typename T>
    [[nodiscard]] std::vector<T> get(const std::string& name) const {
        const Tensor& t = at(name);
        if (t.dtype != detail::dtype_of<T>()) throw Error(ErrorCode::FormatError, "tensor '" + name + "' has another dtype");
        std::vector<T> out(t.numel());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::get_le<T>(t.payload.data() + i * sizeof(T));
        return out;
    }

    [[nodiscard]] DenseMatrix get_matrix(const std::string& name) const {
        const Tensor& t = at(name);
        if (t.shape.size() != 2) throw Error(ErrorCode::FormatError, "tensor '" + name + "' is not a matrix");
        DenseMatrix m(t.shape[0], t.shape[1]);
        auto v = get<double>(name);
        std::copy(v.begin(), v.end(), m.data().begin());
        return m;
    }

    [[nodiscard]] double get_scalar(const std::string& name) const { return get<double>(name).at(0); }

    [[nodiscard]] bool has(const std::string& name) const { return index_.count(name) > 0; }

    [[nodiscard]] const Tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error(ErrorCode::FormatError, "missing tensor '" + name + "'");
        return tensors_[it->second].second;
    }

    [[nodiscard]] const std::vector<std::pair<std::string, Tensor>>& tensors() const noexcept { return tensors_; }

    void set(const std::string& name, Tensor t) {
        auto it = index_.find(name);
        if (it != index_.end()) {
            tensors_[it->second].second = std::move(t);
        } else {
            index_[name] = tensors_.size();
            tensors_.emplace_back(name, std::move(t));
        }
    }

    void write(std::ostream& out) const {
        out.write("XAST", 4);
        detail::write_raw<std::uint32_t>(out, kVersion);
        for (const auto& [name, t] : tensors_) {
            detail::write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            detail::write_raw<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
            detail::write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
            for (auto d : t.shape) detail::write_raw<std::uint64_t>(out, d);
            out.write(reinterpret_cast<const char*>(t.payload.data()), static_cast<std::streamsize>(t.payload.size()));
        }
    }

    static Container read(std::istream& in) {
        char magic[4];
        if (!in.read(magic, 4) || std::memcmp(magic, "XAST", 4) != 0) throw Error(ErrorCode::FormatError, "bad XAST magic");
        std::uint32_t version = 0;
        if (!detail::read_raw(in, version) || version != kVersion)
            throw Error(ErrorCode::FormatError, "unsupported XAST version " + std::to_string(version));
        Container c;
        std::uint32_t name_len = 0;
        while (detail::read_raw(in, name_len)) {
            std::string name(name_len, '\0');
            std::uint8_t tag = 0;
            std::uint32_t ndim = 0;
            if (!in.read(name.data(), name_len) || !detail::read_raw(in, tag) || !detail::read_raw(in, ndim))
                throw Error(ErrorCode::FormatError, "truncated tensor header");
            Tensor t;
            t.dtype = static_cast<DType>(tag);
            t.shape.resize(ndim);
            for (auto& d : t.shape)
                if (!detail::read_raw(in, d)) throw Error(ErrorCode::FormatError, "truncated shape");
            t.payload.resize(t.numel() * dtype_size(t.dtype));
            if (!in.read(reinterpret_cast<char*>(t.payload.data()), static_cast<std::streamsize>(t.payload.size())))
                throw Error(ErrorCode::FormatError, "truncated payload for '" + name + "'");
            c.set(name, std::move(t));
        }
        return c;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
        write(out);
    }

    static Container load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
        return read(in);
    }

  private:
    std::vector<std::pair<std::string, Tensor>> tensors_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace astec::xast
