#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "raise/matrix.hpp"

namespace ranking {

// ---- interactions ----

struct Interaction {
    std::string user_id;
    std::string item_id;
    double rating = 0.0;
    std::optional<int64_t> timestamp;
};

// Entity ids are an optional [A-Za-z_] prefix followed by decimal digits
// ("u12", "item_7", "42"); the numeric suffix is the entity's identity
// within its kind and is what binary files carry.
uint64_t parse_entity_id(const std::string& token);

// TSV: user_id<TAB>item_id<TAB>rating[<TAB>timestamp]; '#' lines and blank
// lines are skipped. Malformed lines raise ParseError naming the line.
std::vector<Interaction> load_interactions(const std::string& path);

struct EntityRegistry {
    // Dense index -> display string / numeric id, sorted by numeric id.
    std::vector<std::string> users, items;
    std::vector<uint64_t> user_nums, item_nums;
    std::unordered_map<uint64_t, uint32_t> user_by_num, item_by_num;

    uint32_t user_count() const { return static_cast<uint32_t>(users.size()); }
    uint32_t item_count() const { return static_cast<uint32_t>(items.size()); }
    uint32_t user_index(uint64_t num) const;  // DataError when unknown
    uint32_t item_index(uint64_t num) const;
};

enum class Split : uint8_t { train = 0, val = 1, test = 2 };

struct ImplicitDataset {
    EntityRegistry registry;
    // Per user, ascending item indices. Any rated pair is a positive;
    // absence means label 0 (no negatives are materialized).
    std::vector<std::vector<uint32_t>> positives;
    std::vector<Split> split;  // per user; filled by split_users
    bool has_split = false;

    bool is_positive(uint32_t user, uint32_t item) const;
};

ImplicitDataset binarize(const std::vector<Interaction>& interactions);

// Seeded shuffle then assignment; val and test take floor(n*ratio) users
// each and train keeps the remainder. Ratios must sum to 1 within 1e-9.
void split_users(ImplicitDataset& ds, double train_ratio, double val_ratio,
                 double test_ratio, uint64_t seed);

// Drops users with fewer than min_count positives and rebuilds the user
// side of the registry. Items are kept as-is. No-op for min_count <= 1.
ImplicitDataset filter_min_interactions(const ImplicitDataset& ds, size_t min_count);

// ---- reviews ----

enum class EntityKind : uint8_t { user = 0, item = 1 };

struct ReviewRecord {
    EntityKind kind = EntityKind::user;
    uint64_t id = 0;
    std::string text;
};

// JSONL, one object per line: {"kind": "user"|"item", "id": ..., "text": ...}.
std::vector<ReviewRecord> load_review_records(const std::string& path);

struct ReviewStore {
    size_t dim = 0;
    // Entity numeric id -> ordered review embeddings (each of length dim).
    // std::map keeps serialization order deterministic.
    std::map<uint64_t, std::vector<std::vector<double>>> user_reviews;
    std::map<uint64_t, std::vector<std::vector<double>>> item_reviews;

    const std::vector<std::vector<double>>* find(EntityKind kind, uint64_t id) const;
};

// Each word maps to a pseudorandom unit-norm vector keyed by (hash(word),
// seed); a review embeds as the sum of its word vectors. Tokenization is
// lowercase + whitespace. At most max_user/max_item reviews are kept per
// entity, earliest in corpus order first.
ReviewStore hash_embed_reviews(const std::vector<ReviewRecord>& records, size_t dim,
                               uint64_t seed, size_t max_user_reviews,
                               size_t max_item_reviews);

// RVE1 binary container (bit-exact, little-endian): magic "RVE1", u32 dim,
// then records of [u8 kind, u64 id, u32 review_count, count*dim float32].
void save_review_embeddings(const ReviewStore& store, const std::string& path);
ReviewStore load_review_embeddings(const std::string& path);

struct PaddedReviews {
    DenseMatrix matrix;         // l x d; padded rows are exactly zero
    std::vector<uint8_t> mask;  // 1 for real rows
    size_t real_count = 0;

    size_t length() const { return mask.size(); }
};

// First min(count, l) reviews; remaining rows zero. Unknown entity -> DataError.
PaddedReviews pad_review_sequence(const ReviewStore& store, EntityKind kind,
                                  uint64_t id, size_t l);
// Same, but an entity absent from the store yields an all-padding block.
PaddedReviews pad_or_empty(const ReviewStore& store, EntityKind kind, uint64_t id,
                           size_t l, size_t dim);

// Sum of an item's (unpadded) review embeddings, as 1 x d.
DenseMatrix baseline_review_feature(const ReviewStore& store, uint64_t item_id);

// ---- synthetic data ----

struct SynthSpec {
    size_t users = 100;
    size_t items = 200;
    size_t intents = 4;
    size_t reviews_per_entity = 5;
    size_t dim = 32;  // must be >= intents; recorded for downstream configs
    uint64_t seed = 42;
    // Interaction probability scales so positives per user average near this.
    double target_positives_per_user = 2.0;
    size_t words_per_review = 8;
    size_t words_per_intent = 30;
};

// Writes an interactions TSV and a reviews JSONL with planted intention
// structure: every user/item gets a latent mixture over intents, interaction
// probability is proportional to the mixture dot product, and review words
// are drawn from per-intent pools so co-attention has a recoverable signal.
void gen_synthetic(const SynthSpec& spec, const std::string& interactions_path,
                   const std::string& reviews_path);

// Measured diagnostic used by tests: mean interaction rate among pairs whose
// dominant intents agree vs differ.
struct SynthRates {
    double within = 0.0;
    double cross = 0.0;
};
SynthRates measure_intent_rates(const SynthSpec& spec, const std::string& interactions_path);

}  // namespace ranking
