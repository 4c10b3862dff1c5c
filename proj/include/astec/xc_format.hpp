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

// Readers and writers for the Extreme Classification Repository text format
//
//     N V L
//     l1,l2,...,lk f1:v1 f2:v2 ...
//
// and for the scored-row variant used by shortlists and predictions
//
//     N L
//     l1:s1 l2:s2 ...

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "astec/error.hpp"
#include "astec/types.hpp"

namespace astec {

struct ParseResult {
    Dataset dataset;
    std::size_t duplicate_labels = 0;  // dropped repeats within a label list
};

namespace detail {

inline std::string_view trim_cr(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
    return s;
}

template <typename T>
bool parse_number(std::string_view tok, T& out) {
    if (tok.empty()) return false;
    if (tok.front() == '+') tok.remove_prefix(1);
    const char* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, out);
    return ec == std::errc() && ptr == end;
}

/// Split on runs of spaces/tabs.
inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace detail

/// Parse an XC-format stream. Feature pairs are sorted by id; explicit zeros are dropped.
inline ParseResult parse_xc(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::MalformedHeader, "empty input");
    const auto header = detail::split_ws(detail::trim_cr(line));
    std::size_t n = 0, v = 0, l = 0;
    if (header.size() != 3 || !detail::parse_number(header[0], n) || !detail::parse_number(header[1], v) ||
        !detail::parse_number(header[2], l) || n == 0 || v == 0 || l == 0)
        throw Error(ErrorCode::MalformedHeader, "expected 'N V L' with positive integers, got '" + line + "'");

    ParseResult result;
    Dataset& d = result.dataset;
    d.num_points = n;
    d.num_features = v;
    d.num_labels = l;
    d.features.reserve(n);
    d.labels.reserve(n);

    std::size_t lineno = 0;
    while (d.features.size() < n) {
        if (!std::getline(in, line))
            throw Error(ErrorCode::MalformedHeader,
                        "header declares " + std::to_string(n) + " points, file has " + std::to_string(d.features.size()));
        ++lineno;
        std::string_view s = detail::trim_cr(line);

        // label list is the text before the first space; empty when the line starts with one
        std::string_view label_part, feature_part;
        const auto sp = s.find_first_of(" \t");
        if (sp == std::string_view::npos) {
            label_part = s.find(':') == std::string_view::npos ? s : std::string_view{};
            feature_part = label_part.empty() ? s : std::string_view{};
        } else {
            label_part = s.substr(0, sp);
            feature_part = s.substr(sp + 1);
        }

        std::vector<LabelId> labels;
        std::size_t pos = 0;
        while (pos < label_part.size()) {
            auto comma = label_part.find(',', pos);
            if (comma == std::string_view::npos) comma = label_part.size();
            const auto tok = label_part.substr(pos, comma - pos);
            std::uint64_t id = 0;
            if (!detail::parse_number(tok, id))
                throw Error(ErrorCode::MalformedHeader, "bad label token '" + std::string(tok) + "'", lineno);
            if (id >= l) throw Error(ErrorCode::IndexOutOfRange, "label id " + std::to_string(id), lineno, id);
            labels.push_back(static_cast<LabelId>(id));
            pos = comma + 1;
        }
        std::sort(labels.begin(), labels.end());
        const auto before = labels.size();
        labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
        result.duplicate_labels += before - labels.size();

        std::vector<std::pair<std::uint32_t, double>> pairs;
        for (auto tok : detail::split_ws(feature_part)) {
            const auto colon = tok.find(':');
            std::uint64_t id = 0;
            double val = 0.0;
            if (colon == std::string_view::npos || !detail::parse_number(tok.substr(0, colon), id))
                throw Error(ErrorCode::MalformedHeader, "bad feature token '" + std::string(tok) + "'", lineno);
            if (id >= v) throw Error(ErrorCode::IndexOutOfRange, "feature id " + std::to_string(id), lineno, id);
            const auto vtok = tok.substr(colon + 1);
            if (!detail::parse_number(vtok, val)) {
                // from_chars rejects "nan"/"inf" spellings in some forms; classify them here
                std::string lower(vtok);
                std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
                if (lower.find("nan") != std::string::npos || lower.find("inf") != std::string::npos)
                    throw Error(ErrorCode::NonFiniteValue, "feature " + std::to_string(id), lineno, id);
                throw Error(ErrorCode::MalformedHeader, "bad feature value '" + std::string(vtok) + "'", lineno);
            }
            if (!std::isfinite(val)) throw Error(ErrorCode::NonFiniteValue, "feature " + std::to_string(id), lineno, id);
            pairs.emplace_back(static_cast<std::uint32_t>(id), val);
        }
        std::sort(pairs.begin(), pairs.end(), [](auto& a, auto& b) { return a.first < b.first; });
        SparseVector x;
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            if (k > 0 && pairs[k].first == pairs[k - 1].first)
                throw Error(ErrorCode::DuplicateFeature, "feature " + std::to_string(pairs[k].first), lineno, pairs[k].first);
            if (pairs[k].second == 0.0) continue;
            x.indices.push_back(pairs[k].first);
            x.values.push_back(pairs[k].second);
        }
        d.features.push_back(std::move(x));
        d.labels.push_back(std::move(labels));
    }
    while (std::getline(in, line)) {
        if (!detail::split_ws(detail::trim_cr(line)).empty())
            throw Error(ErrorCode::MalformedHeader, "trailing data after " + std::to_string(n) + " points", lineno + 1);
    }
    return result;
}

inline ParseResult parse_xc_string(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse_xc(in);
}

inline ParseResult read_xc_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    return parse_xc(in);
}

inline void write_xc(const Dataset& d, std::ostream& out) {
    out << d.num_points << ' ' << d.num_features << ' ' << d.num_labels << '\n';
    for (std::size_t i = 0; i < d.num_points; ++i) {
        const auto& ls = d.labels[i];
        for (std::size_t k = 0; k < ls.size(); ++k) {
            if (k) out << ',';
            out << ls[k];
        }
        const auto& x = d.features[i];
        for (std::size_t k = 0; k < x.nnz(); ++k) out << ' ' << x.indices[k] << ':' << detail::format_double(x.values[k]);
        out << '\n';
    }
}

inline std::string to_xc_string(const Dataset& d) {
    std::ostringstream out;
    write_xc(d, out);
    return out.str();
}

inline void write_xc_file(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    write_xc(d, out);
}

/// Re-weight features as ln(1+tf) * (ln((N+1)/(df+1)) + 1), then l2-normalize each row.
/// The stored values are taken as raw term frequencies.
inline void recompute_tfidf(Dataset& d) {
    std::vector<std::size_t> df(d.num_features, 0);
    for (const auto& x : d.features)
        for (auto t : x.indices) ++df[t];
    const double n = static_cast<double>(d.num_points);
    for (auto& x : d.features) {
        double norm = 0.0;
        for (std::size_t k = 0; k < x.nnz(); ++k) {
            const double idf = std::log((n + 1.0) / (static_cast<double>(df[x.indices[k]]) + 1.0)) + 1.0;
            x.values[k] = std::log1p(x.values[k]) * idf;
            norm += x.values[k] * x.values[k];
        }
        norm = std::sqrt(norm);
        if (norm > 0)
            for (auto& v : x.values) v /= norm;
    }
}

/// Rows of (label, score) pairs sharing a label space of size `num_labels`.
struct ScoredRows {
    std::size_t num_labels = 0;
    std::vector<std::vector<ScoredLabel>> rows;
};

inline ScoredRows parse_scored_rows(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::MalformedHeader, "empty input");
    const auto header = detail::split_ws(detail::trim_cr(line));
    std::size_t n = 0, l = 0;
    if (header.size() != 2 || !detail::parse_number(header[0], n) || !detail::parse_number(header[1], l))
        throw Error(ErrorCode::MalformedHeader, "expected 'N L', got '" + line + "'");
    ScoredRows out;
    out.num_labels = l;
    out.rows.reserve(n);
    std::size_t lineno = 0;
    while (out.rows.size() < n) {
        if (!std::getline(in, line))
            throw Error(ErrorCode::MalformedHeader, "header declares " + std::to_string(n) + " rows");
        ++lineno;
        std::vector<ScoredLabel> row;
        for (auto tok : detail::split_ws(detail::trim_cr(line))) {
            const auto colon = tok.find(':');
            std::uint64_t id = 0;
            double s = 0.0;
            if (colon == std::string_view::npos || !detail::parse_number(tok.substr(0, colon), id) ||
                !detail::parse_number(tok.substr(colon + 1), s))
                throw Error(ErrorCode::MalformedHeader, "bad entry '" + std::string(tok) + "'", lineno);
            if (id >= l) throw Error(ErrorCode::IndexOutOfRange, "label id " + std::to_string(id), lineno, id);
            if (!std::isfinite(s)) throw Error(ErrorCode::NonFiniteValue, "score", lineno, id);
            row.push_back({static_cast<LabelId>(id), s});
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

inline ScoredRows read_scored_rows_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    return parse_scored_rows(in);
}

inline void write_scored_rows(const ScoredRows& rows, std::ostream& out) {
    out << rows.rows.size() << ' ' << rows.num_labels << '\n';
    for (const auto& row : rows.rows) {
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (k) out << ' ';
            out << row[k].label << ':' << detail::format_double(row[k].score);
        }
        out << '\n';
    }
}

inline void write_scored_rows_file(const ScoredRows& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
    write_scored_rows(rows, out);
}

/// Counts in the header line of a text file ("N V L" or "N L").
inline std::vector<std::size_t> peek_header(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::string line;
    std::getline(in, line);
    std::vector<std::size_t> out;
    for (auto tok : detail::split_ws(detail::trim_cr(line))) {
        std::size_t v = 0;
        if (!detail::parse_number(tok, v)) throw Error(ErrorCode::MalformedHeader, "bad header in " + path);
        out.push_back(v);
    }
    return out;
}

}  // namespace astec
