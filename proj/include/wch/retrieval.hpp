#pragma once

// Inference-side retrieval engine: bit-packed code storage, Hamming-distance
// ranking, and the precision/recall evaluation toolkit.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wch/common.hpp"
#include "wch/tensor.hpp"

namespace wch {

// A set of binary codes packed 8 bits per byte, LSB first within each byte;
// bit = 1 encodes the code value +1. Trailing pad bits of each row are zero.
struct CodeSet {
    int64_t count = 0;
    int64_t code_length = 0;       // bits per code
    std::vector<uint8_t> packed;   // count * bytes_per_code()
    std::vector<int64_t> ids;      // unique item identifiers

    int64_t bytes_per_code() const { return (code_length + 7) / 8; }
    const uint8_t* row(int64_t i) const {
        return packed.data() + i * bytes_per_code();
    }
    uint8_t* row(int64_t i) { return packed.data() + i * bytes_per_code(); }
};

// Packs a bs x l matrix of exact +-1 values; ids default to 0..bs-1.
template <typename S>
CodeSet pack(const Tensor<S>& codes) {
    if (codes.rank() != 2)
        throw DimensionError("pack: expected rank-2 codes, got " +
                             shape_str(codes.shape()));
    CodeSet out;
    out.count = codes.dim(0);
    out.code_length = codes.dim(1);
    out.packed.assign(
        static_cast<size_t>(out.count * out.bytes_per_code()), 0);
    out.ids.resize(static_cast<size_t>(out.count));
    for (int64_t i = 0; i < out.count; ++i) {
        out.ids[i] = i;
        uint8_t* dst = out.row(i);
        for (int64_t j = 0; j < out.code_length; ++j) {
            const S v = codes.values()[i * out.code_length + j];
            if (v == S(1))
                dst[j / 8] |= static_cast<uint8_t>(1u << (j % 8));
            else if (v != S(-1))
                throw EncodingError(
                    "pack: code entries must be exactly +-1, found " +
                    std::to_string(static_cast<double>(v)) + " at row " +
                    std::to_string(i) + " bit " + std::to_string(j));
        }
    }
    return out;
}

template <typename S>
Tensor<S> unpack(const CodeSet& set) {
    auto out = Tensor<S>::zeros({set.count, set.code_length});
    for (int64_t i = 0; i < set.count; ++i) {
        const uint8_t* src = set.row(i);
        for (int64_t j = 0; j < set.code_length; ++j)
            out.values()[i * set.code_length + j] =
                (src[j / 8] >> (j % 8)) & 1u ? S(1) : S(-1);
    }
    return out;
}

// Hamming distance between two packed rows of the same bit length. Pad bits
// are zero in both rows, so a plain byte-wise XOR popcount is exact.
inline int64_t hamming(const uint8_t* a, const uint8_t* b, int64_t bits) {
    const int64_t bytes = (bits + 7) / 8;
    int64_t dist = 0;
    int64_t i = 0;
    for (; i + 8 <= bytes; i += 8) {
        uint64_t wa, wb;
        std::memcpy(&wa, a + i, 8);
        std::memcpy(&wb, b + i, 8);
        dist += std::popcount(wa ^ wb);
    }
    for (; i < bytes; ++i)
        dist += std::popcount(static_cast<unsigned>(a[i] ^ b[i]));
    return dist;
}

inline int64_t hamming(const CodeSet& a, int64_t i, const CodeSet& b,
                       int64_t j) {
    if (a.code_length != b.code_length)
        throw DimensionError("hamming: code lengths disagree: " +
                             std::to_string(a.code_length) + " vs " +
                             std::to_string(b.code_length));
    return hamming(a.row(i), b.row(j), a.code_length);
}

// One query's ranking: database ids in ascending distance order, ties broken
// by ascending id, together with the distances themselves.
struct RankedList {
    std::vector<int64_t> ids;
    std::vector<int64_t> distances;
};

inline std::vector<RankedList> rank(const CodeSet& queries,
                                    const CodeSet& database, int64_t k) {
    if (queries.code_length != database.code_length)
        throw DimensionError("rank: code lengths disagree: " +
                             std::to_string(queries.code_length) + " vs " +
                             std::to_string(database.code_length));
    if (k < 1 || k > database.count)
        throw ParameterError("rank: k must lie in [1, database size], got " +
                             std::to_string(k));
    std::vector<RankedList> out(static_cast<size_t>(queries.count));
    std::vector<std::pair<int64_t, int64_t>> scored(
        static_cast<size_t>(database.count));
    for (int64_t q = 0; q < queries.count; ++q) {
        const uint8_t* qrow = queries.row(q);
        for (int64_t d = 0; d < database.count; ++d)
            scored[d] = {hamming(qrow, database.row(d), queries.code_length),
                         database.ids[d]};
        std::partial_sort(scored.begin(), scored.begin() + k, scored.end());
        RankedList& r = out[q];
        r.ids.resize(static_cast<size_t>(k));
        r.distances.resize(static_cast<size_t>(k));
        for (int64_t i = 0; i < k; ++i) {
            r.distances[i] = scored[i].first;
            r.ids[i] = scored[i].second;
        }
    }
    return out;
}

// Builds full-depth 0/1 relevance lists from rankings and a predicate
// rel(query_index, database_id) -> bool.
template <typename RelevantFn>
std::vector<std::vector<uint8_t>> relevance_lists(
    const std::vector<RankedList>& ranked, RelevantFn&& rel) {
    std::vector<std::vector<uint8_t>> out(ranked.size());
    for (size_t q = 0; q < ranked.size(); ++q) {
        out[q].resize(ranked[q].ids.size());
        for (size_t r = 0; r < ranked[q].ids.size(); ++r)
            out[q][r] = rel(static_cast<int64_t>(q), ranked[q].ids[r]) ? 1 : 0;
    }
    return out;
}

struct Metrics {
    double map = 0.0;                      // full-depth mean average precision
    std::map<int64_t, double> map_at_k;    // truncated mAP per requested K
    std::map<int64_t, double> p_at_k;      // precision at K
    std::vector<std::pair<double, double>> pr_curve;  // (recall, precision)
    int64_t excluded_queries = 0;          // queries with no relevant item
};

namespace detail {

// AP truncated at K with denominator min(K, total relevant in the list).
inline double ap_at(const std::vector<uint8_t>& rel, int64_t k,
                    int64_t total_relevant) {
    const int64_t depth = static_cast<int64_t>(rel.size());
    const int64_t cutoff = std::min(k, depth);
    int64_t hits = 0;
    double sum = 0.0;
    for (int64_t r = 1; r <= cutoff; ++r)
        if (rel[r - 1]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r);
        }
    return sum / static_cast<double>(std::min(k, total_relevant));
}

}  // namespace detail

// Evaluates full-depth relevance lists (one per query, aligned with the
// ranking order). Queries with zero relevant items anywhere are excluded
// from mAP and the PR curve and counted in `excluded_queries`.
inline Metrics evaluate(const std::vector<std::vector<uint8_t>>& relevance,
                        const std::vector<int64_t>& ks) {
    if (relevance.empty())
        throw ParameterError("evaluate: no queries given");
    const int64_t depth = static_cast<int64_t>(relevance.front().size());
    for (const auto& r : relevance)
        if (static_cast<int64_t>(r.size()) != depth)
            throw DimensionError(
                "evaluate: relevance lists have differing depths");
    for (int64_t k : ks)
        if (k < 1 || k > depth)
            throw ParameterError("evaluate: K = " + std::to_string(k) +
                                 " outside [1, depth = " +
                                 std::to_string(depth) + "]");

    Metrics m;
    std::vector<int64_t> totals(relevance.size(), 0);
    int64_t scored = 0;
    for (size_t q = 0; q < relevance.size(); ++q) {
        for (uint8_t v : relevance[q]) totals[q] += v != 0;
        if (totals[q] == 0)
            ++m.excluded_queries;
        else
            ++scored;
    }
    if (scored > 0) {
        for (size_t q = 0; q < relevance.size(); ++q) {
            if (totals[q] == 0) continue;
            m.map += detail::ap_at(relevance[q], depth, totals[q]);
        }
        m.map /= static_cast<double>(scored);
        for (int64_t k : ks) {
            double sum = 0.0;
            for (size_t q = 0; q < relevance.size(); ++q) {
                if (totals[q] == 0) continue;
                sum += detail::ap_at(relevance[q], k, totals[q]);
            }
            m.map_at_k[k] = sum / static_cast<double>(scored);
        }
    } else {
        for (int64_t k : ks) m.map_at_k[k] = 0.0;
    }
    // P@K averages over all queries (a zero-relevant query scores 0).
    for (int64_t k : ks) {
        double sum = 0.0;
        for (const auto& rel : relevance) {
            int64_t hits = 0;
            for (int64_t r = 0; r < k; ++r) hits += rel[r] != 0;
            sum += static_cast<double>(hits) / static_cast<double>(k);
        }
        m.p_at_k[k] = sum / static_cast<double>(relevance.size());
    }
    // Macro-averaged PR curve: at every rank r, average per-query precision
    // and recall over the queries that have at least one relevant item.
    if (scored > 0) {
        m.pr_curve.reserve(static_cast<size_t>(depth));
        std::vector<int64_t> hits(relevance.size(), 0);
        for (int64_t r = 1; r <= depth; ++r) {
            double prec = 0.0, rec = 0.0;
            for (size_t q = 0; q < relevance.size(); ++q) {
                if (totals[q] == 0) continue;
                hits[q] += relevance[q][r - 1] != 0;
                prec += static_cast<double>(hits[q]) / static_cast<double>(r);
                rec += static_cast<double>(hits[q]) /
                       static_cast<double>(totals[q]);
            }
            m.pr_curve.emplace_back(rec / static_cast<double>(scored),
                                    prec / static_cast<double>(scored));
        }
    }
    return m;
}

// Seeded random +-1 codes for the chance-level retrieval baseline.
inline CodeSet random_codes(int64_t count, int64_t code_length,
                            uint64_t seed) {
    if (count < 1 || code_length < 1)
        throw ParameterError("random_codes: count and length must be >= 1");
    auto rng = make_rng(seed_mix(seed, 0xC0DE'BA5Eull));
    auto t = Tensor<double>::zeros({count, code_length});
    for (auto& v : t.values()) v = rng_below(rng, 2) ? 1.0 : -1.0;
    return pack(t);
}

// --------------------------- code file format ------------------------------
// magic "WCHC", u8 version = 1, u64 count, u16 code_length, packed rows.

inline void save_codes(const std::string& path, const CodeSet& set) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_codes: cannot open " + path);
    f.write("WCHC", 4);
    const uint8_t version = 1;
    f.write(reinterpret_cast<const char*>(&version), 1);
    const uint64_t count = static_cast<uint64_t>(set.count);
    f.write(reinterpret_cast<const char*>(&count), 8);
    const uint16_t bits = static_cast<uint16_t>(set.code_length);
    f.write(reinterpret_cast<const char*>(&bits), 2);
    f.write(reinterpret_cast<const char*>(set.packed.data()),
            static_cast<std::streamsize>(set.packed.size()));
    if (!f) throw IoError("save_codes: write failed for " + path);
}

inline CodeSet load_codes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_codes: cannot open " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::string(magic, 4) != "WCHC")
        throw FormatError("load_codes: expected magic WCHC in " + path);
    uint8_t version = 0;
    if (!f.read(reinterpret_cast<char*>(&version), 1) || version != 1)
        throw FormatError("load_codes: unsupported version in " + path);
    uint64_t count = 0;
    uint16_t bits = 0;
    if (!f.read(reinterpret_cast<char*>(&count), 8) ||
        !f.read(reinterpret_cast<char*>(&bits), 2) || bits == 0)
        throw FormatError("load_codes: truncated header in " + path);
    CodeSet set;
    set.count = static_cast<int64_t>(count);
    set.code_length = static_cast<int64_t>(bits);
    set.packed.resize(
        static_cast<size_t>(set.count * set.bytes_per_code()));
    if (!f.read(reinterpret_cast<char*>(set.packed.data()),
                static_cast<std::streamsize>(set.packed.size())))
        throw FormatError("load_codes: truncated payload in " + path);
    f.peek();
    if (!f.eof())
        throw FormatError("load_codes: trailing bytes in " + path);
    set.ids.resize(static_cast<size_t>(set.count));
    for (int64_t i = 0; i < set.count; ++i) set.ids[i] = i;
    // enforce the zero-pad invariant
    const int64_t pad = set.bytes_per_code() * 8 - set.code_length;
    if (pad > 0) {
        const uint8_t mask =
            static_cast<uint8_t>(0xFFu << (set.code_length % 8));
        for (int64_t i = 0; i < set.count; ++i)
            if (set.row(i)[set.bytes_per_code() - 1] & mask)
                throw FormatError("load_codes: nonzero pad bits in row " +
                                  std::to_string(i) + " of " + path);
    }
    return set;
}

}  // namespace wch
