#include "dipair/cache.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dipair/errors.hpp"
#include "dipair/kernels.hpp"

namespace dipair {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'E', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 1 + 4 + 4;

const char* side_name(Side s) { return s == Side::Left ? "left" : "right"; }

}  // namespace

EmbeddingStore EmbeddingStore::create(const std::string& path, Side side, int rows, int dim) {
    if (rows < 1 || dim < 1) throw ConfigError("store needs positive rows and dim");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot create " + path);
    os.write(kMagic, 4);
    const std::uint32_t version = kVersion;
    os.write(reinterpret_cast<const char*>(&version), 4);
    const std::uint8_t side_tag = side == Side::Left ? 0 : 1;
    os.write(reinterpret_cast<const char*>(&side_tag), 1);
    const std::uint32_t rows32 = rows, dim32 = dim;
    os.write(reinterpret_cast<const char*>(&rows32), 4);
    os.write(reinterpret_cast<const char*>(&dim32), 4);
    if (!os) throw FormatError("write failed on " + path);
    EmbeddingStore store;
    store.path_ = path;
    store.side_ = side;
    store.rows_ = rows;
    store.dim_ = dim;
    return store;
}

EmbeddingStore EmbeddingStore::open(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(path + " is not an embedding store");
    std::uint32_t version = 0;
    is.read(reinterpret_cast<char*>(&version), 4);
    if (version != kVersion) throw FormatError("unsupported store version");
    std::uint8_t side_tag = 2;
    is.read(reinterpret_cast<char*>(&side_tag), 1);
    if (side_tag > 1) throw FormatError("bad side tag in " + path);
    std::uint32_t rows = 0, dim = 0;
    is.read(reinterpret_cast<char*>(&rows), 4);
    is.read(reinterpret_cast<char*>(&dim), 4);
    if (!is || rows == 0 || dim == 0) throw FormatError("bad header in " + path);

    EmbeddingStore store;
    store.path_ = path;
    store.side_ = side_tag == 0 ? Side::Left : Side::Right;
    store.rows_ = static_cast<int>(rows);
    store.dim_ = static_cast<int>(dim);

    // Rebuild the index by scanning appended records.
    const std::uint64_t block = store.block_bytes();
    std::uint64_t offset = kHeaderBytes;
    is.seekg(0, std::ios::end);
    const std::uint64_t file_size = static_cast<std::uint64_t>(is.tellg());
    while (offset < file_size) {
        if (offset + 8 + block > file_size)
            throw FormatError(path + " ends mid-record (corrupt store)");
        is.seekg(static_cast<std::streamoff>(offset));
        std::int64_t id = 0;
        is.read(reinterpret_cast<char*>(&id), 8);
        if (!is) throw FormatError(path + " ends mid-record (corrupt store)");
        store.index_[id] = offset + 8;
        offset += 8 + block;
    }
    return store;
}

void EmbeddingStore::append(std::int64_t id, const std::vector<float>& block) {
    if (block.size() != static_cast<std::size_t>(rows_) * dim_)
        throw ContractError("block size does not match store shape");
    if (index_.count(id)) throw ContractError("id " + std::to_string(id) + " already stored");
    std::ofstream os(path_, std::ios::binary | std::ios::app);
    if (!os) throw FormatError("cannot append to " + path_);
    const std::uint64_t offset = static_cast<std::uint64_t>(os.tellp());
    os.write(reinterpret_cast<const char*>(&id), 8);
    os.write(reinterpret_cast<const char*>(block.data()),
             static_cast<std::streamsize>(block.size() * sizeof(float)));
    if (!os) throw FormatError("write failed on " + path_);
    index_[id] = offset + 8;
}

std::vector<float> EmbeddingStore::fetch(std::int64_t id) const {
    auto it = index_.find(id);
    if (it == index_.end())
        throw LookupError("id " + std::to_string(id) + " not in " + side_name(side_) + " store");
    ++fetches_;
    std::ifstream is(path_, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path_);
    is.seekg(static_cast<std::streamoff>(it->second));
    std::vector<float> block(static_cast<std::size_t>(rows_) * dim_);
    is.read(reinterpret_cast<char*>(block.data()),
            static_cast<std::streamsize>(block.size() * sizeof(float)));
    if (!is) throw FormatError("corrupt block for id " + std::to_string(id) + " in " + path_);
    return block;
}

EmbeddingStore build_store(const DiPairModel& model,
                           const std::vector<std::pair<std::int64_t, TokenSequence>>& texts,
                           Side side, const std::string& path, int batch) {
    const auto& cfg = model.config();
    const int rows = side == Side::Left ? cfg.left_truncate : cfg.right_truncate;
    EmbeddingStore store = EmbeddingStore::create(path, side, rows, cfg.head_width());

    std::unordered_map<std::int64_t, std::uint64_t> seen;  // id -> token hash
    auto token_hash = [](const TokenSequence& t) {
        std::uint64_t h = 1469598103934665603ull;
        for (auto id : t.token_ids) {
            h ^= static_cast<std::uint64_t>(id) + 0x9e3779b97f4a7c15ull;
            h *= 1099511628211ull;
        }
        return h;
    };

    NoGradGuard ng;
    std::vector<std::pair<std::int64_t, TokenSequence>> pending;
    auto flush = [&]() {
        if (pending.empty()) return;
        std::vector<TokenSequence> seqs;
        seqs.reserve(pending.size());
        for (auto& [id, seq] : pending) seqs.push_back(seq);
        EmbeddedSequence enc = model.encode_side(seqs, side);
        Tensor blocks = model.truncate_project(enc, rows, side);
        const std::size_t per = static_cast<std::size_t>(rows) * store.dim();
        for (std::size_t i = 0; i < pending.size(); ++i) {
            std::vector<float> block(blocks.data().begin() + i * per,
                                     blocks.data().begin() + (i + 1) * per);
            store.append(pending[i].first, block);
        }
        pending.clear();
    };

    for (const auto& [id, seq] : texts) {
        const std::uint64_t h = token_hash(seq);
        auto it = seen.find(id);
        if (it != seen.end()) {
            if (it->second != h)
                throw ContractError("conflicting texts for id " + std::to_string(id));
            continue;  // idempotent per id
        }
        seen[id] = h;
        pending.emplace_back(id, seq);
        if (static_cast<int>(pending.size()) == batch) flush();
    }
    flush();
    return store;
}

namespace {

Tensor blocks_tensor(const EmbeddingStore& store, const std::vector<std::int64_t>& ids,
                     std::unordered_map<std::int64_t, std::vector<float>>& memo) {
    const std::int64_t rows = store.rows(), dim = store.dim();
    std::vector<float> data;
    data.reserve(ids.size() * rows * dim);
    for (auto id : ids) {
        auto it = memo.find(id);
        if (it == memo.end()) it = memo.emplace(id, store.fetch(id)).first;
        data.insert(data.end(), it->second.begin(), it->second.end());
    }
    return Tensor({static_cast<std::int64_t>(ids.size()), rows, dim}, std::move(data));
}

}  // namespace

std::vector<float> score_cached_batch(
    const DiPairModel& model, const EmbeddingStore& left_store, const EmbeddingStore& right_store,
    const std::vector<std::pair<std::int64_t, std::int64_t>>& pairs) {
    NoGradGuard ng;
    std::vector<std::int64_t> lids, rids;
    lids.reserve(pairs.size());
    rids.reserve(pairs.size());
    for (const auto& [l, r] : pairs) {
        lids.push_back(l);
        rids.push_back(r);
    }
    std::unordered_map<std::int64_t, std::vector<float>> lmemo, rmemo;
    Tensor left = blocks_tensor(left_store, lids, lmemo);
    Tensor right = blocks_tensor(right_store, rids, rmemo);
    return model.score_from_blocks(left, right).data();
}

float score_cached(const DiPairModel& model, const EmbeddingStore& left_store,
                   const EmbeddingStore& right_store, std::int64_t left_id,
                   std::int64_t right_id) {
    return score_cached_batch(model, left_store, right_store, {{left_id, right_id}})[0];
}

// ---- cost model ----

std::uint64_t transformer_layer_macs(std::int64_t s, std::int64_t h, std::int64_t i) {
    return static_cast<std::uint64_t>(4 * s * h * h) + static_cast<std::uint64_t>(2 * s * s * h) +
           static_cast<std::uint64_t>(2 * s * h * i);
}

FlopReport flop_estimate(const FlopInputs& in) {
    FlopReport r;
    const auto& st = in.student;
    const std::int64_t left_len = in.left_len > 0 ? in.left_len : st.left_max_length;
    const std::int64_t right_len = in.right_len > 0 ? in.right_len : st.right_max_length;

    r.teacher_encoder = static_cast<std::uint64_t>(in.teacher_layers) *
                        transformer_layer_macs(in.teacher_seq_len, in.teacher_hidden,
                                               in.teacher_intermediate);
    r.teacher_classifier = static_cast<std::uint64_t>(in.teacher_hidden);
    r.teacher_total = r.teacher_encoder + r.teacher_classifier;

    r.student_encoder =
        static_cast<std::uint64_t>(st.encoder_layers) *
        (transformer_layer_macs(left_len, st.encoder_hidden, st.encoder_intermediate) +
         transformer_layer_macs(right_len, st.encoder_hidden, st.encoder_intermediate));
    if (st.projection_dim > 0)
        r.student_projection = static_cast<std::uint64_t>(st.merged_length()) *
                               st.encoder_hidden * st.projection_dim;

    const std::int64_t w = st.head_width();
    switch (st.head_kind) {
        case HeadKind::Transformer:
            r.student_head = static_cast<std::uint64_t>(st.head_layers) *
                                 transformer_layer_macs(st.merged_length(), w,
                                                        st.head_intermediate) +
                             static_cast<std::uint64_t>(w);
            break;
        case HeadKind::Ffnn: {
            std::uint64_t macs = 0;
            std::int64_t in_dim = static_cast<std::int64_t>(st.merged_length()) * w;
            for (int d : st.ffnn_dims) {
                macs += static_cast<std::uint64_t>(in_dim) * d;
                in_dim = d;
            }
            macs += static_cast<std::uint64_t>(in_dim);
            r.student_head = macs;
            break;
        }
        case HeadKind::Cosine:
            // Dot products only; no GEMM work by the MAC convention.
            r.student_head = 0;
            break;
    }
    r.student_pair_total = r.student_head;
    r.student_end_to_end = r.student_encoder + r.student_projection + r.student_head;
    r.speedup = r.student_pair_total == 0
                    ? 0.0
                    : static_cast<double>(r.teacher_total) /
                          static_cast<double>(r.student_pair_total);
    return r;
}

std::string FlopReport::to_json_string() const {
    nlohmann::json j{{"teacher_encoder_macs", teacher_encoder},
                     {"teacher_classifier_macs", teacher_classifier},
                     {"teacher_total_macs", teacher_total},
                     {"student_encoder_macs", student_encoder},
                     {"student_projection_macs", student_projection},
                     {"student_head_macs", student_head},
                     {"student_pair_total_macs", student_pair_total},
                     {"student_end_to_end_macs", student_end_to_end},
                     {"speedup", speedup}};
    return j.dump(2);
}

std::uint64_t instrumented_cross_macs(const CrossAttentionModel& model,
                                      const std::vector<PairExample>& pairs) {
    NoGradGuard ng;
    std::vector<TokenSequence> joined;
    joined.reserve(pairs.size());
    for (const auto& ex : pairs) joined.push_back(model.join_pair(ex.left, ex.right));
    kernels::reset_mac_count();
    model.score_batch(joined);
    return kernels::mac_count() / pairs.size();
}

std::uint64_t instrumented_cached_macs(
    const DiPairModel& model, const EmbeddingStore& left_store, const EmbeddingStore& right_store,
    const std::vector<std::pair<std::int64_t, std::int64_t>>& pairs) {
    score_cached_batch(model, left_store, right_store, pairs);  // warm paths
    kernels::reset_mac_count();
    score_cached_batch(model, left_store, right_store, pairs);
    return kernels::mac_count() / pairs.size();
}

std::uint64_t instrumented_end_to_end_macs(const DiPairModel& model,
                                           const std::vector<PairExample>& pairs) {
    NoGradGuard ng;
    const auto& cfg = model.config();
    std::vector<TokenSequence> lefts, rights;
    for (const auto& ex : pairs) {
        auto [l, r] = to_token_sequences(ex, cfg.left_max_length - 1, cfg.right_max_length - 1);
        lefts.push_back(std::move(l));
        rights.push_back(std::move(r));
    }
    kernels::reset_mac_count();
    model.score_batch(lefts, rights);
    return kernels::mac_count() / pairs.size();
}

// ---- latency ----

namespace {

PathTiming summarize(std::vector<double> per_pair_us) {
    std::sort(per_pair_us.begin(), per_pair_us.end());
    PathTiming t;
    const std::size_t n = per_pair_us.size();
    t.median_us_per_pair = n % 2 ? per_pair_us[n / 2]
                                 : 0.5 * (per_pair_us[n / 2 - 1] + per_pair_us[n / 2]);
    t.p95_us_per_pair = per_pair_us[std::min(n - 1, static_cast<std::size_t>(0.95 * n))];
    return t;
}

template <typename Fn>
PathTiming time_path(int repetitions, std::size_t pairs, Fn&& fn) {
    for (int i = 0; i < 3; ++i) fn();  // warmup, excluded
    std::vector<double> us(repetitions);
    for (int i = 0; i < repetitions; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        us[i] = std::chrono::duration<double, std::micro>(t1 - t0).count() /
                static_cast<double>(pairs);
    }
    return summarize(std::move(us));
}

}  // namespace

LatencyReport benchmark_latency(const CrossAttentionModel& cross, const DiPairModel& student,
                                const std::vector<PairExample>& pairs, int repetitions,
                                const std::string& store_dir, int batch_size) {
    if (repetitions < 1) throw ContractError("repetition count must be >= 1");
    if (pairs.empty()) throw ContractError("empty latency workload");
    const int saved_threads = kernels::threads();
    kernels::set_threads(1);  // isolate algorithmic speedup
    NoGradGuard ng;

    const auto& cfg = student.config();
    std::vector<TokenSequence> lefts, rights, joined;
    std::vector<std::pair<std::int64_t, TokenSequence>> left_texts, right_texts;
    std::vector<std::pair<std::int64_t, std::int64_t>> id_pairs;
    for (const auto& ex : pairs) {
        auto [l, r] = to_token_sequences(ex, cfg.left_max_length - 1, cfg.right_max_length - 1);
        left_texts.emplace_back(ex.id, l);
        right_texts.emplace_back(ex.id, r);
        id_pairs.emplace_back(ex.id, ex.id);
        lefts.push_back(std::move(l));
        rights.push_back(std::move(r));
        joined.push_back(cross.join_pair(ex.left, ex.right));
    }

    EmbeddingStore left_store =
        build_store(student, left_texts, Side::Left, store_dir + "/bench_left.dpec");
    EmbeddingStore right_store =
        build_store(student, right_texts, Side::Right, store_dir + "/bench_right.dpec");

    auto batched = [&](auto&& per_batch) {
        for (std::size_t b = 0; b < pairs.size(); b += batch_size) {
            const std::size_t e = std::min(pairs.size(), b + static_cast<std::size_t>(batch_size));
            per_batch(b, e);
        }
    };

    LatencyReport report;
    report.repetitions = repetitions;
    report.batch_size = batch_size;
    report.cross_attention = time_path(repetitions, pairs.size(), [&]() {
        batched([&](std::size_t b, std::size_t e) {
            cross.score_batch({joined.begin() + b, joined.begin() + e});
        });
    });
    report.dipair_end_to_end = time_path(repetitions, pairs.size(), [&]() {
        batched([&](std::size_t b, std::size_t e) {
            student.score_batch({lefts.begin() + b, lefts.begin() + e},
                                {rights.begin() + b, rights.begin() + e});
        });
    });
    report.dipair_cached = time_path(repetitions, pairs.size(), [&]() {
        batched([&](std::size_t b, std::size_t e) {
            score_cached_batch(student, left_store, right_store,
                               {id_pairs.begin() + b, id_pairs.begin() + e});
        });
    });
    report.measured_speedup =
        report.cross_attention.median_us_per_pair / report.dipair_cached.median_us_per_pair;
    kernels::set_threads(saved_threads);
    return report;
}

std::string LatencyReport::to_json_string() const {
    nlohmann::json j{
        {"cross_attention",
         {{"median_us_per_pair", cross_attention.median_us_per_pair},
          {"p95_us_per_pair", cross_attention.p95_us_per_pair}}},
        {"dipair_end_to_end",
         {{"median_us_per_pair", dipair_end_to_end.median_us_per_pair},
          {"p95_us_per_pair", dipair_end_to_end.p95_us_per_pair}}},
        {"dipair_cached",
         {{"median_us_per_pair", dipair_cached.median_us_per_pair},
          {"p95_us_per_pair", dipair_cached.p95_us_per_pair}}},
        {"measured_speedup", measured_speedup},
        {"repetitions", repetitions},
        {"batch_size", batch_size}};
    return j.dump(2);
}

}  // namespace dipair
