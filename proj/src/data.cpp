#include "raise/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "raise/errors.hpp"
#include "raise/rng.hpp"

namespace ranking {

namespace {

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double parse_real(const std::string& tok, const std::string& where) {
    double v = 0.0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || p != last || !std::isfinite(v))
        throw ParseError(where + ": bad real value '" + tok + "'");
    return v;
}

int64_t parse_int(const std::string& tok, const std::string& where) {
    int64_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
        throw ParseError(where + ": bad integer '" + tok + "'");
    return v;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

}  // namespace

uint64_t parse_entity_id(const std::string& token) {
    if (token.empty()) throw ParseError("empty entity id");
    size_t i = 0;
    while (i < token.size() &&
           (std::isalpha(static_cast<unsigned char>(token[i])) || token[i] == '_')) {
        ++i;
    }
    if (i == token.size())
        throw ParseError("entity id '" + token + "' has no numeric suffix");
    uint64_t v = 0;
    auto [p, ec] = std::from_chars(token.data() + i, token.data() + token.size(), v);
    if (ec != std::errc() || p != token.data() + token.size())
        throw ParseError("entity id '" + token + "' is not prefix+digits");
    return v;
}

std::vector<Interaction> load_interactions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<Interaction> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::string where = path + ":" + std::to_string(lineno);
        const auto fields = split_tabs(line);
        if (fields.size() != 3 && fields.size() != 4)
            throw ParseError(where + ": expected 3 or 4 tab-separated fields, got " +
                             std::to_string(fields.size()));
        Interaction it;
        it.user_id = fields[0];
        it.item_id = fields[1];
        parse_entity_id(it.user_id);  // validate id shape early, with location
        parse_entity_id(it.item_id);
        it.rating = parse_real(fields[2], where);
        if (fields.size() == 4) it.timestamp = parse_int(fields[3], where);
        out.push_back(std::move(it));
    }
    return out;
}

uint32_t EntityRegistry::user_index(uint64_t num) const {
    auto it = user_by_num.find(num);
    if (it == user_by_num.end())
        throw DataError("unknown user id " + std::to_string(num));
    return it->second;
}

uint32_t EntityRegistry::item_index(uint64_t num) const {
    auto it = item_by_num.find(num);
    if (it == item_by_num.end())
        throw DataError("unknown item id " + std::to_string(num));
    return it->second;
}

bool ImplicitDataset::is_positive(uint32_t user, uint32_t item) const {
    const auto& v = positives[user];
    return std::binary_search(v.begin(), v.end(), item);
}

ImplicitDataset binarize(const std::vector<Interaction>& interactions) {
    if (interactions.empty())
        throw DataError("binarize: no interactions given");

    // Collect entities sorted by numeric id so dense indices are stable
    // regardless of file order; keep the first display string seen.
    std::map<uint64_t, std::string> users, items;
    for (const auto& it : interactions) {
        users.emplace(parse_entity_id(it.user_id), it.user_id);
        items.emplace(parse_entity_id(it.item_id), it.item_id);
    }

    ImplicitDataset ds;
    for (const auto& [num, name] : users) {
        ds.registry.user_by_num.emplace(num, ds.registry.user_count());
        ds.registry.users.push_back(name);
        ds.registry.user_nums.push_back(num);
    }
    for (const auto& [num, name] : items) {
        ds.registry.item_by_num.emplace(num, ds.registry.item_count());
        ds.registry.items.push_back(name);
        ds.registry.item_nums.push_back(num);
    }

    std::vector<std::set<uint32_t>> pos(ds.registry.user_count());
    for (const auto& it : interactions) {
        const uint32_t u = ds.registry.user_index(parse_entity_id(it.user_id));
        const uint32_t i = ds.registry.item_index(parse_entity_id(it.item_id));
        pos[u].insert(i);  // any rated pair is a positive; duplicates collapse
    }
    ds.positives.reserve(pos.size());
    for (auto& s : pos) ds.positives.emplace_back(s.begin(), s.end());
    return ds;
}

void split_users(ImplicitDataset& ds, double train_ratio, double val_ratio,
                 double test_ratio, uint64_t seed) {
    if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
        throw ConfigError("split ratios must sum to 1");
    const size_t n = ds.registry.user_count();
    std::vector<uint32_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = static_cast<uint32_t>(i);
    Rng rng(Rng::derive(seed, 0x5b11u));
    rng.shuffle(order);

    const size_t n_val = static_cast<size_t>(std::floor(static_cast<double>(n) * val_ratio));
    const size_t n_test = static_cast<size_t>(std::floor(static_cast<double>(n) * test_ratio));
    const size_t n_train = n - n_val - n_test;  // train absorbs rounding

    ds.split.assign(n, Split::train);
    for (size_t k = 0; k < n; ++k) {
        if (k < n_train)
            ds.split[order[k]] = Split::train;
        else if (k < n_train + n_val)
            ds.split[order[k]] = Split::val;
        else
            ds.split[order[k]] = Split::test;
    }
    ds.has_split = true;
}

ImplicitDataset filter_min_interactions(const ImplicitDataset& ds, size_t min_count) {
    if (min_count <= 1) return ds;
    ImplicitDataset out;
    out.registry.items = ds.registry.items;
    out.registry.item_nums = ds.registry.item_nums;
    out.registry.item_by_num = ds.registry.item_by_num;
    for (uint32_t u = 0; u < ds.registry.user_count(); ++u) {
        if (ds.positives[u].size() < min_count) continue;
        out.registry.user_by_num.emplace(ds.registry.user_nums[u], out.registry.user_count());
        out.registry.users.push_back(ds.registry.users[u]);
        out.registry.user_nums.push_back(ds.registry.user_nums[u]);
        out.positives.push_back(ds.positives[u]);
        if (ds.has_split) out.split.push_back(ds.split[u]);
    }
    out.has_split = ds.has_split;
    if (out.registry.user_count() == 0)
        throw DataError("min-interactions filter removed every user");
    return out;
}

// ---- reviews ----

const std::vector<std::vector<double>>* ReviewStore::find(EntityKind kind, uint64_t id) const {
    const auto& m = (kind == EntityKind::user) ? user_reviews : item_reviews;
    auto it = m.find(id);
    return it == m.end() ? nullptr : &it->second;
}

std::vector<ReviewRecord> load_review_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<ReviewRecord> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(where + ": invalid JSON (" + e.what() + ")");
        }
        if (!j.is_object() || !j.contains("kind") || !j.contains("id") || !j.contains("text"))
            throw ParseError(where + ": review object needs kind, id, text");
        ReviewRecord rec;
        const std::string kind = j["kind"].get<std::string>();
        if (kind == "user")
            rec.kind = EntityKind::user;
        else if (kind == "item")
            rec.kind = EntityKind::item;
        else
            throw ParseError(where + ": kind must be 'user' or 'item', got '" + kind + "'");
        if (j["id"].is_string())
            rec.id = parse_entity_id(j["id"].get<std::string>());
        else if (j["id"].is_number_unsigned() || (j["id"].is_number_integer() && j["id"].get<int64_t>() >= 0))
            rec.id = j["id"].get<uint64_t>();
        else
            throw ParseError(where + ": id must be a non-negative integer or id string");
        if (!j["text"].is_string())
            throw ParseError(where + ": text must be a string");
        rec.text = j["text"].get<std::string>();
        out.push_back(std::move(rec));
    }
    return out;
}

namespace {

// Deterministic pseudorandom unit vector for one word: uniform components
// normalized to unit length. Keyed by the word hash mixed with the seed.
std::vector<double> word_vector(const std::string& word, size_t dim, uint64_t seed) {
    Rng rng(Rng::derive(seed, fnv1a64(word)));
    std::vector<double> v(dim);
    double norm2 = 0.0;
    do {
        norm2 = 0.0;
        for (double& x : v) {
            x = rng.uniform(-1.0, 1.0);
            norm2 += x * x;
        }
    } while (norm2 < 1e-24);  // astronomically unlikely; keeps the math total
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    return v;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

}  // namespace

ReviewStore hash_embed_reviews(const std::vector<ReviewRecord>& records, size_t dim,
                               uint64_t seed, size_t max_user_reviews,
                               size_t max_item_reviews) {
    if (dim < 1) throw ConfigError("embedding dim must be >= 1");
    ReviewStore store;
    store.dim = dim;
    for (const auto& rec : records) {
        auto& lists = (rec.kind == EntityKind::user) ? store.user_reviews : store.item_reviews;
        const size_t cap = (rec.kind == EntityKind::user) ? max_user_reviews : max_item_reviews;
        auto& list = lists[rec.id];
        if (list.size() >= cap) continue;  // keep the earliest reviews
        std::vector<double> emb(dim, 0.0);
        for (const auto& word : tokenize(rec.text)) {
            const auto wv = word_vector(word, dim, seed);
            for (size_t k = 0; k < dim; ++k) emb[k] += wv[k];
        }
        list.push_back(std::move(emb));
    }
    return store;
}

// ---- RVE1 binary container ----

namespace {

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, double v) {
    const float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw FormatError(path + ": truncated " + what + " at byte offset " +
                              std::to_string(pos));
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    double f32(const char* what) {
        const uint32_t bits = u32(what);
        float f;
        std::memcpy(&f, &bits, 4);
        return static_cast<double>(f);
    }
    bool done() const { return pos == buf.size(); }
};

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + path);
}

}  // namespace

void save_review_embeddings(const ReviewStore& store, const std::string& path) {
    std::string out;
    out += "RVE1";
    put_u32(out, static_cast<uint32_t>(store.dim));
    const auto emit = [&](uint8_t kind,
                          const std::map<uint64_t, std::vector<std::vector<double>>>& m) {
        for (const auto& [id, reviews] : m) {
            out.push_back(static_cast<char>(kind));
            put_u64(out, id);
            put_u32(out, static_cast<uint32_t>(reviews.size()));
            for (const auto& r : reviews) {
                if (r.size() != store.dim)
                    throw FormatError("review vector length " + std::to_string(r.size()) +
                                      " does not match store dim " + std::to_string(store.dim));
                for (double v : r) put_f32(out, v);
            }
        }
    };
    emit(0, store.user_reviews);
    emit(1, store.item_reviews);
    write_file(path, out);
}

ReviewStore load_review_embeddings(const std::string& path) {
    const std::string buf = read_file(path);
    ByteReader r{buf, 0, path};
    r.need(4, "magic");
    if (buf.compare(0, 4, "RVE1") != 0)
        throw FormatError(path + ": bad magic, expected RVE1");
    r.pos = 4;
    ReviewStore store;
    store.dim = r.u32("header dim");
    if (store.dim == 0) throw FormatError(path + ": header dim is 0");
    while (!r.done()) {
        const uint8_t kind = r.u8("record kind");
        if (kind > 1) throw FormatError(path + ": bad record kind " + std::to_string(kind));
        const uint64_t id = r.u64("record id");
        const uint32_t count = r.u32("review count");
        std::vector<std::vector<double>> reviews;
        reviews.reserve(count);
        for (uint32_t k = 0; k < count; ++k) {
            std::vector<double> v(store.dim);
            for (size_t j = 0; j < store.dim; ++j) v[j] = r.f32("embedding value");
            for (double x : v)
                if (!std::isfinite(x))
                    throw FormatError(path + ": non-finite embedding value");
            reviews.push_back(std::move(v));
        }
        auto& m = (kind == 0) ? store.user_reviews : store.item_reviews;
        if (!m.emplace(id, std::move(reviews)).second)
            throw FormatError(path + ": duplicate record for entity " + std::to_string(id));
    }
    return store;
}

PaddedReviews pad_review_sequence(const ReviewStore& store, EntityKind kind,
                                  uint64_t id, size_t l) {
    const auto* reviews = store.find(kind, id);
    if (reviews == nullptr)
        throw DataError(std::string(kind == EntityKind::user ? "user " : "item ") +
                        std::to_string(id) + " has no record in the review store");
    PaddedReviews out;
    out.matrix = DenseMatrix(l, store.dim);
    out.mask.assign(l, 0);
    out.real_count = std::min(l, reviews->size());
    for (size_t k = 0; k < out.real_count; ++k) {
        out.mask[k] = 1;
        const auto& r = (*reviews)[k];
        std::copy(r.begin(), r.end(), out.matrix.row(k));
    }
    return out;
}

PaddedReviews pad_or_empty(const ReviewStore& store, EntityKind kind, uint64_t id,
                           size_t l, size_t dim) {
    if (store.find(kind, id) != nullptr) return pad_review_sequence(store, kind, id, l);
    PaddedReviews out;
    out.matrix = DenseMatrix(l, dim);
    out.mask.assign(l, 0);
    out.real_count = 0;
    return out;
}

DenseMatrix baseline_review_feature(const ReviewStore& store, uint64_t item_id) {
    const auto* reviews = store.find(EntityKind::item, item_id);
    if (reviews == nullptr)
        throw DataError("item " + std::to_string(item_id) + " has no record in the review store");
    DenseMatrix out(1, store.dim);
    for (const auto& r : *reviews)
        for (size_t k = 0; k < store.dim; ++k) out.at(0, k) += r[k];
    return out;
}

// ---- synthetic generator ----

namespace {

// One latent mixture over intents: a clearly dominant intent plus uniform
// low-level interest in the rest, normalized to sum 1.
std::vector<double> draw_mixture(Rng& rng, size_t intents, size_t* dominant_out) {
    const size_t dominant = static_cast<size_t>(rng.next_below(intents));
    std::vector<double> m(intents);
    double sum = 0.0;
    for (double& x : m) x = 0.05 + 0.05 * rng.next_double();
    m[dominant] = 1.0 + 0.5 * rng.next_double();
    for (double x : m) sum += x;
    for (double& x : m) x /= sum;
    if (dominant_out != nullptr) *dominant_out = dominant;
    return m;
}

struct SynthLatents {
    std::vector<std::vector<double>> user_mix, item_mix;
    std::vector<size_t> user_dom, item_dom;
};

SynthLatents synth_latents(const SynthSpec& spec) {
    SynthLatents lat;
    Rng rng(Rng::derive(spec.seed, 1));
    lat.user_mix.resize(spec.users);
    lat.user_dom.resize(spec.users);
    for (size_t u = 0; u < spec.users; ++u)
        lat.user_mix[u] = draw_mixture(rng, spec.intents, &lat.user_dom[u]);
    lat.item_mix.resize(spec.items);
    lat.item_dom.resize(spec.items);
    for (size_t i = 0; i < spec.items; ++i)
        lat.item_mix[i] = draw_mixture(rng, spec.intents, &lat.item_dom[i]);
    return lat;
}

double mix_dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

size_t sample_categorical(Rng& rng, const std::vector<double>& probs) {
    const double u = rng.next_double();
    double acc = 0.0;
    for (size_t k = 0; k < probs.size(); ++k) {
        acc += probs[k];
        if (u < acc) return k;
    }
    return probs.size() - 1;
}

}  // namespace

void gen_synthetic(const SynthSpec& spec, const std::string& interactions_path,
                   const std::string& reviews_path) {
    if (spec.users < 1 || spec.items < 1 || spec.intents < 1 || spec.reviews_per_entity < 1)
        throw ConfigError("synthetic generator counts must all be >= 1");
    if (spec.intents > spec.dim)
        throw ConfigError("synthetic intents (" + std::to_string(spec.intents) +
                          ") must not exceed dim (" + std::to_string(spec.dim) + ")");

    const SynthLatents lat = synth_latents(spec);

    // Calibrate the pair probability so positives per user land near target.
    double mean_dot = 0.0;
    for (size_t u = 0; u < spec.users; ++u)
        for (size_t i = 0; i < spec.items; ++i) mean_dot += mix_dot(lat.user_mix[u], lat.item_mix[i]);
    mean_dot /= static_cast<double>(spec.users) * static_cast<double>(spec.items);
    const double scale =
        spec.target_positives_per_user / (static_cast<double>(spec.items) * mean_dot);

    Rng pair_rng(Rng::derive(spec.seed, 2));
    Rng rating_rng(Rng::derive(spec.seed, 3));

    std::ostringstream tsv;
    tsv << "# user_id\titem_id\trating\n";
    std::vector<char> user_has_positive(spec.users, 0);
    for (size_t u = 0; u < spec.users; ++u) {
        for (size_t i = 0; i < spec.items; ++i) {
            // Draw for every pair so the stream never depends on outcomes.
            const double roll = pair_rng.next_double();
            const double p = std::min(0.9, scale * mix_dot(lat.user_mix[u], lat.item_mix[i]));
            if (roll < p) {
                const uint64_t rating = 1 + rating_rng.next_below(5);
                tsv << "u" << u << "\ti" << i << "\t" << rating << "\n";
                user_has_positive[u] = 1;
            }
        }
    }
    // Every user must keep at least one positive or it cannot be ranked.
    for (size_t u = 0; u < spec.users; ++u) {
        if (user_has_positive[u]) continue;
        size_t best = 0;
        double best_dot = -1.0;
        for (size_t i = 0; i < spec.items; ++i) {
            const double d = mix_dot(lat.user_mix[u], lat.item_mix[i]);
            if (d > best_dot) {
                best_dot = d;
                best = i;
            }
        }
        const uint64_t rating = 1 + rating_rng.next_below(5);
        tsv << "u" << u << "\ti" << best << "\t" << rating << "\n";
    }
    write_file(interactions_path, tsv.str());

    // Reviews: words drawn from the entity's intent mixture, one pool per
    // intent, so matching reviews share vocabulary exactly when intents agree.
    Rng review_rng(Rng::derive(spec.seed, 4));
    std::ostringstream jsonl;
    const auto emit_reviews = [&](const char* kind, size_t id, const std::vector<double>& mix) {
        for (size_t r = 0; r < spec.reviews_per_entity; ++r) {
            std::string text;
            for (size_t w = 0; w < spec.words_per_review; ++w) {
                const size_t intent = sample_categorical(review_rng, mix);
                const uint64_t word = review_rng.next_below(spec.words_per_intent);
                if (!text.empty()) text += ' ';
                text += "w" + std::to_string(intent) + "_" + std::to_string(word);
            }
            nlohmann::ordered_json j;
            j["kind"] = kind;
            j["id"] = id;
            j["text"] = text;
            jsonl << j.dump() << "\n";
        }
    };
    for (size_t u = 0; u < spec.users; ++u) emit_reviews("user", u, lat.user_mix[u]);
    for (size_t i = 0; i < spec.items; ++i) emit_reviews("item", i, lat.item_mix[i]);
    write_file(reviews_path, jsonl.str());
}

SynthRates measure_intent_rates(const SynthSpec& spec, const std::string& interactions_path) {
    const SynthLatents lat = synth_latents(spec);
    const auto interactions = load_interactions(interactions_path);
    std::set<std::pair<uint64_t, uint64_t>> pos;
    for (const auto& it : interactions)
        pos.emplace(parse_entity_id(it.user_id), parse_entity_id(it.item_id));

    uint64_t within_hits = 0, within_pairs = 0, cross_hits = 0, cross_pairs = 0;
    for (size_t u = 0; u < spec.users; ++u) {
        for (size_t i = 0; i < spec.items; ++i) {
            const bool hit = pos.count({u, i}) > 0;
            if (lat.user_dom[u] == lat.item_dom[i]) {
                ++within_pairs;
                within_hits += hit;
            } else {
                ++cross_pairs;
                cross_hits += hit;
            }
        }
    }
    SynthRates rates;
    if (within_pairs > 0) rates.within = static_cast<double>(within_hits) / static_cast<double>(within_pairs);
    if (cross_pairs > 0) rates.cross = static_cast<double>(cross_hits) / static_cast<double>(cross_pairs);
    return rates;
}

}  // namespace ranking
