#include "dipair/data.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "dipair/errors.hpp"
#include "dipair/rng.hpp"

namespace dipair {

using nlohmann::json;

int attribute_count(int vocab_size) {
    return std::clamp(vocab_size / 8, 8, 64);
}

bool is_attribute(std::int32_t id, int vocab_size) {
    return id >= tokens::kFirstContent && id < tokens::kFirstContent + attribute_count(vocab_size);
}

namespace {

struct Facet {
    std::int32_t attribute;
    std::vector<std::int32_t> values;
};

// Parses a facet run sequence: an attribute token opens a facet, value
// tokens attach to the open facet. Values before any attribute are ignored.
std::vector<Facet> parse_facets(const std::vector<std::int32_t>& ids, int vocab_size) {
    std::vector<Facet> facets;
    for (auto id : ids) {
        if (id < tokens::kFirstContent) continue;
        if (is_attribute(id, vocab_size)) {
            facets.push_back(Facet{id, {}});
        } else if (!facets.empty()) {
            facets.back().values.push_back(id);
        }
    }
    return facets;
}

}  // namespace

float facet_label(const std::vector<std::int32_t>& left, const std::vector<std::int32_t>& right,
                  int vocab_size) {
    const auto queries = parse_facets(left, vocab_size);
    if (queries.empty()) return 0.f;
    const auto doc = parse_facets(right, vocab_size);
    std::unordered_set<std::int32_t> all_values;
    for (const auto& f : doc)
        for (auto v : f.values) all_values.insert(v);

    float total = 0.f;
    for (const auto& q : queries) {
        const Facet* match = nullptr;
        for (const auto& f : doc)
            if (f.attribute == q.attribute) match = &f;
        bool full = match != nullptr;
        if (match) {
            for (auto v : q.values)
                if (std::find(match->values.begin(), match->values.end(), v) ==
                    match->values.end())
                    full = false;
        }
        if (full && match) {
            total += 1.f;
        } else {
            bool value_elsewhere = false;
            for (auto v : q.values)
                if (all_values.count(v)) value_elsewhere = true;
            total += value_elsewhere ? 0.2f : 0.f;
        }
    }
    return total / static_cast<float>(queries.size());
}

namespace {

enum class Bucket { Match, Confusion, None };

struct SplitStats {
    std::int64_t match = 0, confusion = 0, none = 0;
    std::int64_t total() const { return match + confusion + none; }
};

class FacetGenerator {
public:
    FacetGenerator(std::uint64_t seed, const GeneratorConfig& cfg) : rng_(seed), cfg_(cfg) {
        if (cfg_.vocab_size < 64) throw ConfigError("facet task needs vocab_size >= 64");
        if (cfg_.sizes.train <= 0 || cfg_.sizes.valid <= 0 || cfg_.sizes.test <= 0 ||
            cfg_.sizes.distill <= 0)
            throw ConfigError("all split sizes must be positive");
        if (cfg_.sizes.distill < 20 * cfg_.sizes.train)
            throw ConfigError("distillation split must be >= 20x train size");
        if (cfg_.min_facets < 2) throw ConfigError("need at least 2 facets per right text");
        if (cfg_.max_left < 4) throw ConfigError("max_left must fit a two-token query pair");
        attr_lo_ = tokens::kFirstContent;
        attr_hi_ = attr_lo_ + attribute_count(cfg_.vocab_size);  // exclusive
        value_lo_ = attr_hi_;
        value_hi_ = cfg_.vocab_size;
    }

    std::vector<PairExample> make_split(std::int64_t count, bool with_labels, SplitStats& stats) {
        std::vector<PairExample> out;
        out.reserve(count);
        for (std::int64_t i = 0; i < count; ++i) {
            PairExample ex = make_example();
            ex.id = next_id_++;
            stats.match += ex.label >= 0.5f;
            stats.confusion += ex.label > 0.f && ex.label < 0.5f;
            stats.none += ex.label == 0.f;
            if (!with_labels) ex.label = -1.f;
            out.push_back(std::move(ex));
        }
        return out;
    }

private:
    std::int32_t random_attr() {
        return static_cast<std::int32_t>(rng_.uniform_int(attr_lo_, attr_hi_ - 1));
    }
    std::int32_t random_value() {
        return static_cast<std::int32_t>(rng_.uniform_int(value_lo_, value_hi_ - 1));
    }

    PairExample make_example() {
        PairExample ex;
        // Right text: distinct attributes, globally distinct values.
        const int facet_count =
            static_cast<int>(rng_.uniform_int(cfg_.min_facets, cfg_.max_facets));
        std::vector<Facet> facets;
        std::unordered_set<std::int32_t> used_attrs, used_values;
        while (static_cast<int>(facets.size()) < facet_count) {
            std::int32_t a = random_attr();
            if (used_attrs.count(a)) continue;
            used_attrs.insert(a);
            Facet f{a, {}};
            const int nvals = static_cast<int>(rng_.uniform_int(cfg_.min_values, cfg_.max_values));
            while (static_cast<int>(f.values.size()) < nvals) {
                std::int32_t v = random_value();
                if (used_values.count(v)) continue;
                used_values.insert(v);
                f.values.push_back(v);
            }
            facets.push_back(std::move(f));
        }
        for (const auto& f : facets) {
            ex.right.push_back(f.attribute);
            ex.right.insert(ex.right.end(), f.values.begin(), f.values.end());
        }
        if (static_cast<int>(ex.right.size()) > cfg_.max_right)
            throw ConfigError("facet parameters overflow max_right");

        const double roll = rng_.uniform(0.f, 1.f);
        const Bucket bucket = roll < cfg_.p_match            ? Bucket::Match
                              : roll < cfg_.p_match + cfg_.p_confusion ? Bucket::Confusion
                                                                       : Bucket::None;
        const int queries =
            rng_.uniform(0.f, 1.f) < cfg_.p_two_query && facets.size() >= 2 ? 2 : 1;
        // Per-query token budget keeps the left text within max_left, so a
        // query is never cut in a way that would change its label.
        const int budget = cfg_.max_left / queries;
        std::vector<std::int32_t> query_ids;
        std::unordered_set<std::size_t> used_facets;
        for (int q = 0; q < queries; ++q) {
            switch (bucket) {
                case Bucket::Match: {
                    // Copy a facet verbatim (attribute + value subset).
                    std::size_t fi;
                    do {
                        fi = static_cast<std::size_t>(
                            rng_.uniform_int(0, static_cast<std::int64_t>(facets.size()) - 1));
                    } while (used_facets.count(fi));
                    used_facets.insert(fi);
                    const auto& f = facets[fi];
                    query_ids.push_back(f.attribute);
                    const std::int64_t most =
                        std::min<std::int64_t>(static_cast<std::int64_t>(f.values.size()),
                                               budget - 1);
                    const int take = static_cast<int>(rng_.uniform_int(1, most));
                    for (int k = 0; k < take; ++k) query_ids.push_back(f.values[k]);
                    break;
                }
                case Bucket::Confusion: {
                    // Attribute of one facet, value of another: every left
                    // token occurs in the right text, label is still 0.2.
                    std::size_t fa, fv;
                    do {
                        fa = static_cast<std::size_t>(
                            rng_.uniform_int(0, static_cast<std::int64_t>(facets.size()) - 1));
                        fv = static_cast<std::size_t>(
                            rng_.uniform_int(0, static_cast<std::int64_t>(facets.size()) - 1));
                    } while (fa == fv || used_facets.count(fa));
                    used_facets.insert(fa);
                    query_ids.push_back(facets[fa].attribute);
                    query_ids.push_back(
                        facets[fv].values[static_cast<std::size_t>(rng_.uniform_int(
                            0, static_cast<std::int64_t>(facets[fv].values.size()) - 1))]);
                    break;
                }
                case Bucket::None: {
                    std::int32_t a;
                    do {
                        a = random_attr();
                    } while (used_attrs.count(a));
                    std::int32_t v;
                    do {
                        v = random_value();
                    } while (used_values.count(v));
                    query_ids.push_back(a);
                    query_ids.push_back(v);
                    break;
                }
            }
        }
        ex.left = std::move(query_ids);
        ex.label = facet_label(ex.left, ex.right, cfg_.vocab_size);
        return ex;
    }

    Rng rng_;
    GeneratorConfig cfg_;
    std::int32_t attr_lo_, attr_hi_, value_lo_, value_hi_;
    std::int64_t next_id_ = 0;
};

void check_balance(const SplitStats& s, const char* split) {
    const auto total = s.total();
    if (s.match * 10 < total || s.confusion * 10 < total || s.none * 10 < total)
        throw ContractError(std::string("label level below 10% in ") + split + " split");
    // Value-only confusions among negatives.
    const auto negatives = s.confusion + s.none;
    if (negatives == 0 || s.confusion * 20 < negatives)
        throw ContractError(std::string("confusion pairs below 5% of negatives in ") + split);
}

}  // namespace

DatasetBundle generate(std::uint64_t seed, const GeneratorConfig& cfg) {
    FacetGenerator gen(seed, cfg);
    DatasetBundle bundle;
    SplitStats train_s, valid_s, test_s, distill_s;
    bundle.train = gen.make_split(cfg.sizes.train, true, train_s);
    bundle.valid = gen.make_split(cfg.sizes.valid, true, valid_s);
    bundle.test = gen.make_split(cfg.sizes.test, true, test_s);
    bundle.distill = gen.make_split(cfg.sizes.distill, false, distill_s);
    check_balance(train_s, "train");
    check_balance(valid_s, "valid");
    check_balance(test_s, "test");
    check_balance(distill_s, "distill");
    return bundle;
}

TokenSequence to_token_sequence(const std::vector<std::int32_t>& ids, int max_raw_len) {
    const std::size_t keep = std::min<std::size_t>(ids.size(), static_cast<std::size_t>(max_raw_len));
    TokenSequence seq;
    const int padded = max_raw_len + 1;  // CLS slot
    seq.token_ids.reserve(padded);
    seq.token_ids.push_back(tokens::kCls);
    seq.token_ids.insert(seq.token_ids.end(), ids.begin(), ids.begin() + keep);
    seq.token_ids.resize(padded, tokens::kPad);
    seq.segment_ids.assign(padded, 0);
    seq.attention_mask.assign(padded, 0);
    for (std::size_t i = 0; i <= keep; ++i) seq.attention_mask[i] = 1;
    return seq;
}

std::pair<TokenSequence, TokenSequence> to_token_sequences(const PairExample& ex, int max_left,
                                                           int max_right) {
    return {to_token_sequence(ex.left, max_left), to_token_sequence(ex.right, max_right)};
}

std::vector<std::int32_t> strip_special(const TokenSequence& seq) {
    std::vector<std::int32_t> out;
    for (std::size_t i = 1; i < seq.token_ids.size(); ++i)
        if (seq.attention_mask[i]) out.push_back(seq.token_ids[i]);
    return out;
}

void write_dataset(const std::vector<PairExample>& examples, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    for (const auto& ex : examples) {
        json j{{"id", ex.id}, {"left", ex.left}, {"right", ex.right}};
        if (ex.has_label()) j["label"] = ex.label;
        os << j.dump() << "\n";
    }
    for (const auto& ex : examples) {
        if (!ex.has_soft_label()) continue;
        os << json{{"id", ex.id}, {"soft_label", ex.soft_label}}.dump() << "\n";
    }
    if (!os) throw FormatError("write failed on " + path);
}

void append_annotations(const std::vector<PairExample>& examples, const std::string& path) {
    std::ofstream os(path, std::ios::app);
    if (!os) throw FormatError("cannot open " + path + " for append");
    for (const auto& ex : examples) {
        if (!ex.has_soft_label()) continue;
        os << json{{"id", ex.id}, {"soft_label", ex.soft_label}}.dump() << "\n";
    }
}

std::vector<PairExample> load_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path);
    std::vector<PairExample> out;
    std::unordered_map<std::int64_t, std::size_t> by_id;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (j.contains("left")) {
            PairExample ex;
            ex.id = j.at("id");
            ex.left = j.at("left").get<std::vector<std::int32_t>>();
            ex.right = j.at("right").get<std::vector<std::int32_t>>();
            ex.label = j.value("label", -1.f);
            ex.soft_label = j.value("soft_label", -1.f);
            by_id[ex.id] = out.size();
            out.push_back(std::move(ex));
        } else if (j.contains("soft_label")) {
            const std::int64_t id = j.at("id");
            auto it = by_id.find(id);
            if (it == by_id.end())
                throw FormatError(path + ":" + std::to_string(line_no) +
                                  ": annotation for unknown id " + std::to_string(id));
            out[it->second].soft_label = j.at("soft_label");
        } else {
            throw FormatError(path + ":" + std::to_string(line_no) + ": unrecognized record");
        }
    }
    return out;
}

std::string to_json_string(const GeneratorConfig& c) {
    json j{{"train", c.sizes.train},
           {"valid", c.sizes.valid},
           {"test", c.sizes.test},
           {"distill", c.sizes.distill},
           {"vocab_size", c.vocab_size},
           {"max_left", c.max_left},
           {"max_right", c.max_right},
           {"min_facets", c.min_facets},
           {"max_facets", c.max_facets},
           {"min_values", c.min_values},
           {"max_values", c.max_values},
           {"p_match", c.p_match},
           {"p_confusion", c.p_confusion},
           {"p_two_query", c.p_two_query}};
    return j.dump(2);
}

GeneratorConfig generator_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    GeneratorConfig c;
    c.sizes.train = j.value("train", c.sizes.train);
    c.sizes.valid = j.value("valid", c.sizes.valid);
    c.sizes.test = j.value("test", c.sizes.test);
    c.sizes.distill = j.value("distill", c.sizes.distill);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_left = j.value("max_left", c.max_left);
    c.max_right = j.value("max_right", c.max_right);
    c.min_facets = j.value("min_facets", c.min_facets);
    c.max_facets = j.value("max_facets", c.max_facets);
    c.min_values = j.value("min_values", c.min_values);
    c.max_values = j.value("max_values", c.max_values);
    c.p_match = j.value("p_match", c.p_match);
    c.p_confusion = j.value("p_confusion", c.p_confusion);
    c.p_two_query = j.value("p_two_query", c.p_two_query);
    return c;
}

}  // namespace dipair
