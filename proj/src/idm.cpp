#include "raise/idm.hpp"

#include <cmath>

#include "raise/errors.hpp"
#include "raise/rng.hpp"

namespace ranking {

CoAttentionVariant parse_co_attention(const std::string& name) {
    if (name == "bilinear") return CoAttentionVariant::bilinear;
    if (name == "soft") return CoAttentionVariant::soft;
    if (name == "mlp") return CoAttentionVariant::mlp;
    throw ConfigError("unknown co-attention variant '" + name +
                      "' (expected bilinear, soft or mlp)");
}

AggregationMode parse_aggregation(const std::string& name) {
    if (name == "sum") return AggregationMode::sum;
    if (name == "mean") return AggregationMode::mean;
    throw ConfigError("unknown aggregation mode '" + name + "' (expected sum or mean)");
}

CoAttentionParams CoAttentionParams::init(CoAttentionVariant variant, size_t dim,
                                          size_t encoder_depth, uint64_t seed,
                                          const std::string& name_prefix) {
    CoAttentionParams p;
    p.variant = variant;
    p.dim = dim;
    switch (variant) {
        case CoAttentionVariant::bilinear:
            p.m = Parameter(name_prefix + ".m", glorot_init(dim, dim, Rng::derive(seed, 1)));
            [[fallthrough]];
        case CoAttentionVariant::soft:
            p.f_user = Mlp(name_prefix + ".f_user", dim, dim, dim, encoder_depth,
                           Rng::derive(seed, 2));
            p.f_item = Mlp(name_prefix + ".f_item", dim, dim, dim, encoder_depth,
                           Rng::derive(seed, 3));
            break;
        case CoAttentionVariant::mlp:
            // One hidden layer of width d with ReLU, scalar linear output.
            p.f_pair = Mlp(name_prefix + ".f_pair", 2 * dim, dim, 1, 2, Rng::derive(seed, 4));
            break;
    }
    return p;
}

void CoAttentionParams::collect_parameters(std::vector<Parameter*>& out) {
    switch (variant) {
        case CoAttentionVariant::bilinear:
            out.push_back(&m);
            [[fallthrough]];
        case CoAttentionVariant::soft:
            f_user.collect_parameters(out);
            f_item.collect_parameters(out);
            break;
        case CoAttentionVariant::mlp:
            f_pair.collect_parameters(out);
            break;
    }
}

namespace {

// Copy with masked rows forced to exact zeros; the PaddedReviews invariant
// already promises this, but refinement correctness must not depend on it.
DenseMatrix masked_rows(const PaddedReviews& r) {
    DenseMatrix out = r.matrix;
    for (size_t k = 0; k < r.mask.size(); ++k)
        if (!r.mask[k])
            for (size_t c = 0; c < out.cols; ++c) out.at(k, c) = 0.0;
    return out;
}

void apply_mask(DenseMatrix& c, const std::vector<uint8_t>& user_mask,
                const std::vector<uint8_t>& item_mask) {
    for (size_t k = 0; k < c.rows; ++k)
        for (size_t j = 0; j < c.cols; ++j)
            if (!user_mask[k] || !item_mask[j]) c.at(k, j) = 0.0;
}

void check_variant_params(const CoAttentionParams& p) {
    const bool has_m = p.m.value.rows == p.dim && p.m.value.cols == p.dim;
    const bool has_encoders = p.f_user.depth() > 0 && p.f_item.depth() > 0;
    const bool has_pair = p.f_pair.depth() > 0;
    switch (p.variant) {
        case CoAttentionVariant::bilinear:
            if (!has_m || !has_encoders)
                throw ConfigError("bilinear co-attention needs M and both encoders");
            break;
        case CoAttentionVariant::soft:
            if (!has_encoders)
                throw ConfigError("soft co-attention needs both encoders");
            break;
        case CoAttentionVariant::mlp:
            if (!has_pair)
                throw ConfigError("mlp co-attention needs the pair scorer");
            break;
    }
}

}  // namespace

MatchMatrix match_scores(const CoAttentionParams& params, const PaddedReviews& user,
                         const PaddedReviews& item, IdmCache* cache) {
    if (user.matrix.cols != params.dim || item.matrix.cols != params.dim)
        throw DimensionError("match_scores: review dim " + std::to_string(user.matrix.cols) +
                             "/" + std::to_string(item.matrix.cols) + " vs params dim " +
                             std::to_string(params.dim));
    check_variant_params(params);

    const size_t lu = user.length(), li = item.length();
    const DenseMatrix user_raw = masked_rows(user);
    const DenseMatrix item_raw = masked_rows(item);

    MatchMatrix match;
    match.user_mask = user.mask;
    match.item_mask = item.mask;

    IdmCache scratch;
    IdmCache& cc = cache != nullptr ? *cache : scratch;

    switch (params.variant) {
        case CoAttentionVariant::bilinear: {
            cc.user_encoded = params.f_user.forward(user_raw, &cc.f_user_cache);
            cc.item_encoded = params.f_item.forward(item_raw, &cc.f_item_cache);
            cc.user_mid = matmul(cc.user_encoded, params.m.value);
            match.c = matmul(cc.user_mid, transpose(cc.item_encoded));
            break;
        }
        case CoAttentionVariant::soft: {
            cc.user_encoded = params.f_user.forward(user_raw, &cc.f_user_cache);
            cc.item_encoded = params.f_item.forward(item_raw, &cc.f_item_cache);
            match.c = matmul(cc.user_encoded, transpose(cc.item_encoded));
            break;
        }
        case CoAttentionVariant::mlp: {
            // All (k, j) pairs as one batch of concatenated rows.
            cc.pair_inputs = DenseMatrix(lu * li, 2 * params.dim);
            for (size_t k = 0; k < lu; ++k)
                for (size_t j = 0; j < li; ++j) {
                    double* row = cc.pair_inputs.row(k * li + j);
                    for (size_t c = 0; c < params.dim; ++c) {
                        row[c] = user_raw.at(k, c);
                        row[params.dim + c] = item_raw.at(j, c);
                    }
                }
            DenseMatrix scores = params.f_pair.forward(cc.pair_inputs, &cc.f_pair_cache);
            match.c = DenseMatrix(lu, li, std::move(scores.values));
            break;
        }
    }
    apply_mask(match.c, match.user_mask, match.item_mask);

    if (cache != nullptr) {
        cache->match = match;
        cache->user_raw = user_raw;
        cache->item_raw = item_raw;
    }
    return match;
}

std::pair<DenseMatrix, DenseMatrix> refine(const MatchMatrix& match,
                                           const PaddedReviews& user,
                                           const PaddedReviews& item) {
    const size_t lu = match.c.rows, li = match.c.cols;
    if (user.length() != lu || item.length() != li)
        throw DimensionError("refine: match matrix " + match.c.shape_str() +
                             " does not fit review blocks");
    const double inv_item = item.real_count > 0 ? 1.0 / static_cast<double>(item.real_count) : 0.0;
    const double inv_user = user.real_count > 0 ? 1.0 / static_cast<double>(user.real_count) : 0.0;

    DenseMatrix user_refined(lu, user.matrix.cols);
    for (size_t k = 0; k < lu; ++k) {
        double row_sum = 0.0;
        for (size_t j = 0; j < li; ++j) row_sum += match.c.at(k, j);
        const double w = row_sum * inv_item;
        for (size_t c = 0; c < user.matrix.cols; ++c)
            user_refined.at(k, c) = w * (match.user_mask[k] ? user.matrix.at(k, c) : 0.0);
    }
    DenseMatrix item_refined(li, item.matrix.cols);
    for (size_t j = 0; j < li; ++j) {
        double col_sum = 0.0;
        for (size_t k = 0; k < lu; ++k) col_sum += match.c.at(k, j);
        const double w = col_sum * inv_user;
        for (size_t c = 0; c < item.matrix.cols; ++c)
            item_refined.at(j, c) = w * (match.item_mask[j] ? item.matrix.at(j, c) : 0.0);
    }
    return {std::move(user_refined), std::move(item_refined)};
}

std::pair<DenseMatrix, DenseMatrix> aggregate(const DenseMatrix& user_refined,
                                              const DenseMatrix& item_refined,
                                              size_t user_real, size_t item_real,
                                              AggregationMode mode) {
    DenseMatrix r_user = column_sums(user_refined);
    DenseMatrix r_item = column_sums(item_refined);
    if (mode == AggregationMode::mean) {
        const double su = user_real > 0 ? 1.0 / static_cast<double>(user_real) : 0.0;
        const double si = item_real > 0 ? 1.0 / static_cast<double>(item_real) : 0.0;
        r_user = scale(r_user, su);
        r_item = scale(r_item, si);
    }
    return {std::move(r_user), std::move(r_item)};
}

IdmOutput idm_forward(const CoAttentionParams& params, const PaddedReviews& user,
                      const PaddedReviews& item, AggregationMode mode, IdmCache* cache) {
    IdmCache scratch;
    IdmCache& cc = cache != nullptr ? *cache : scratch;
    MatchMatrix match = match_scores(params, user, item, &cc);
    cc.match = match;
    cc.mode = mode;
    cc.inv_item_count = item.real_count > 0 ? 1.0 / static_cast<double>(item.real_count) : 0.0;
    cc.inv_user_count = user.real_count > 0 ? 1.0 / static_cast<double>(user.real_count) : 0.0;

    auto [user_refined, item_refined] = refine(match, user, item);

    // Cache the per-row means the backward pass re-derives gradients from.
    cc.row_mean = DenseMatrix(match.c.rows, 1);
    for (size_t k = 0; k < match.c.rows; ++k) {
        double s = 0.0;
        for (size_t j = 0; j < match.c.cols; ++j) s += match.c.at(k, j);
        cc.row_mean.at(k, 0) = s * cc.inv_item_count;
    }
    cc.col_mean = DenseMatrix(1, match.c.cols);
    for (size_t j = 0; j < match.c.cols; ++j) {
        double s = 0.0;
        for (size_t k = 0; k < match.c.rows; ++k) s += match.c.at(k, j);
        cc.col_mean.at(0, j) = s * cc.inv_user_count;
    }

    auto [r_user, r_item] =
        aggregate(user_refined, item_refined, user.real_count, item.real_count, mode);

    IdmOutput out;
    out.r_user = std::move(r_user);
    out.r_item = std::move(r_item);
    out.match = std::move(match);
    return out;
}

void idm_backward(CoAttentionParams& params, const IdmCache& cache,
                  const DenseMatrix& d_r_user, const DenseMatrix& d_r_item) {
    const size_t lu = cache.match.c.rows, li = cache.match.c.cols;
    const size_t d = params.dim;
    if (d_r_user.rows != 1 || d_r_user.cols != d || d_r_item.rows != 1 || d_r_item.cols != d)
        throw DimensionError("idm_backward expects 1xd output gradients");

    // Aggregation scaling: sum -> 1, mean -> 1/real_count (and real_count=0
    // means the output was a constant zero, so nothing flows back).
    const double agg_u =
        cache.mode == AggregationMode::sum ? 1.0 : cache.inv_user_count;
    const double agg_i =
        cache.mode == AggregationMode::sum ? 1.0 : cache.inv_item_count;

    // d(loss)/dC via the row/column means.
    DenseMatrix dc(lu, li);
    for (size_t k = 0; k < lu; ++k) {
        if (!cache.match.user_mask[k]) continue;
        double drow_mean = 0.0;  // d(loss)/d(row_mean_k) = <agg_u * d_r_user, raw_k>
        for (size_t c = 0; c < d; ++c)
            drow_mean += agg_u * d_r_user.at(0, c) * cache.user_raw.at(k, c);
        const double v = drow_mean * cache.inv_item_count;
        for (size_t j = 0; j < li; ++j)
            if (cache.match.item_mask[j]) dc.at(k, j) += v;
    }
    for (size_t j = 0; j < li; ++j) {
        if (!cache.match.item_mask[j]) continue;
        double dcol_mean = 0.0;
        for (size_t c = 0; c < d; ++c)
            dcol_mean += agg_i * d_r_item.at(0, c) * cache.item_raw.at(j, c);
        const double v = dcol_mean * cache.inv_user_count;
        for (size_t k = 0; k < lu; ++k)
            if (cache.match.user_mask[k]) dc.at(k, j) += v;
    }

    switch (params.variant) {
        case CoAttentionVariant::bilinear: {
            // C = (U*M) * V^T with U, V the encoded blocks.
            DenseMatrix d_mid = matmul(dc, cache.item_encoded);              // d(U*M)
            DenseMatrix d_item_enc = matmul(transpose(dc), cache.user_mid);  // dV
            add_inplace(params.m.grad, matmul(transpose(cache.user_encoded), d_mid));
            DenseMatrix d_user_enc = matmul(d_mid, transpose(params.m.value));
            params.f_user.backward(cache.f_user_cache, d_user_enc);
            params.f_item.backward(cache.f_item_cache, d_item_enc);
            break;
        }
        case CoAttentionVariant::soft: {
            DenseMatrix d_user_enc = matmul(dc, cache.item_encoded);
            DenseMatrix d_item_enc = matmul(transpose(dc), cache.user_encoded);
            params.f_user.backward(cache.f_user_cache, d_user_enc);
            params.f_item.backward(cache.f_item_cache, d_item_enc);
            break;
        }
        case CoAttentionVariant::mlp: {
            DenseMatrix d_scores(lu * li, 1, std::move(dc.values));
            params.f_pair.backward(cache.f_pair_cache, d_scores);
            break;
        }
    }
}

}  // namespace ranking
