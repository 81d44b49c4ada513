#include "raise/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "raise/errors.hpp"
#include "raise/metrics.hpp"

namespace ranking {

namespace {

constexpr double kLogFloor = 1e-12;

DenseMatrix row_of(const DenseMatrix& m, size_t r) {
    DenseMatrix out(1, m.cols);
    std::memcpy(out.data(), m.row(r), m.cols * sizeof(double));
    return out;
}

DenseMatrix hconcat(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix out(1, a.cols + b.cols);
    std::memcpy(out.data(), a.data(), a.cols * sizeof(double));
    std::memcpy(out.data() + a.cols, b.data(), b.cols * sizeof(double));
    return out;
}

DenseMatrix slice_cols(const DenseMatrix& m, size_t from, size_t to) {
    DenseMatrix out(1, to - from);
    std::memcpy(out.data(), m.data() + from, (to - from) * sizeof(double));
    return out;
}

bool contains(const std::vector<size_t>& accepted, size_t v) {
    return std::find(accepted.begin(), accepted.end(), v) != accepted.end();
}

std::string joined(const std::vector<size_t>& values) {
    std::string out;
    for (size_t v : values) {
        if (!out.empty()) out += ",";
        out += std::to_string(v);
    }
    return out;
}

}  // namespace

// ---- configuration ----

Ablation parse_ablation(const std::string& name) {
    if (name == "full") return Ablation::full;
    if (name == "no_idm") return Ablation::no_idm;
    if (name == "no_dte") return Ablation::no_dte;
    if (name == "no_both") return Ablation::no_both;
    if (name == "no_user_reviews") return Ablation::no_user_reviews;
    if (name == "no_item_reviews") return Ablation::no_item_reviews;
    throw ConfigError("unknown ablation '" + name +
                      "' (expected full, no_idm, no_dte, no_both, no_user_reviews, "
                      "no_item_reviews)");
}

std::string ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_idm: return "no_idm";
        case Ablation::no_dte: return "no_dte";
        case Ablation::no_both: return "no_both";
        case Ablation::no_user_reviews: return "no_user_reviews";
        case Ablation::no_item_reviews: return "no_item_reviews";
    }
    return "full";
}

AblationFlags ablation_flags(Ablation a) {
    AblationFlags f;
    switch (a) {
        case Ablation::full: break;
        case Ablation::no_idm: f.drop_intention = true; break;
        case Ablation::no_dte: f.static_encoders = true; break;
        case Ablation::no_both:
            f.drop_intention = true;
            f.static_encoders = true;
            break;
        case Ablation::no_user_reviews: f.zero_user_reviews = true; break;
        case Ablation::no_item_reviews: f.zero_item_reviews = true; break;
    }
    return f;
}

AblationFlags merge_flags(const AblationFlags& x, const AblationFlags& y) {
    AblationFlags f;
    f.drop_intention = x.drop_intention || y.drop_intention;
    f.static_encoders = x.static_encoders || y.static_encoders;
    f.zero_user_reviews = x.zero_user_reviews || y.zero_user_reviews;
    f.zero_item_reviews = x.zero_item_reviews || y.zero_item_reviews;
    return f;
}

void RaiseConfig::validate() const {
    if (d == 0) throw ConfigError("d must be at least 1");
    if (n == 0) throw ConfigError("n must be at least 1");
    if (l_u == 0 || l_i == 0) throw ConfigError("l_u and l_i must be at least 1");
    const std::vector<size_t> t_grid = {1, 2, 4, 8, 10};
    if (!contains(t_grid, t))
        throw ConfigError("t=" + std::to_string(t) + " outside accepted grid {" +
                          joined(t_grid) + "}");
    const std::vector<size_t> b_grid = {1, 2, 3, 5, 8, 10};
    if (!contains(b_grid, b))
        throw ConfigError("b=" + std::to_string(b) + " outside accepted grid {" +
                          joined(b_grid) + "}");
    if (dropout != 0.0 && (dropout < 0.1 || dropout > 0.5))
        throw ConfigError("dropout=" + std::to_string(dropout) +
                          " outside {0} union [0.1,0.5]");
    if (lr < 0.0) throw ConfigError("lr must be non-negative");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (encoder_depth < 1 || encoder_depth > 4)
        throw ConfigError("encoder_depth=" + std::to_string(encoder_depth) +
                          " outside [1,4]");
}

// ---- parameters ----

RaiseParameters RaiseParameters::init(const RaiseConfig& cfg, GmfModel gmf) {
    return init(cfg, std::move(gmf), cfg.flags());
}

RaiseParameters RaiseParameters::init(const RaiseConfig& cfg, GmfModel gmf,
                                      AblationFlags flags) {
    cfg.validate();
    if (gmf.dim != cfg.d)
        throw ConfigError("base ranker dimension " + std::to_string(gmf.dim) +
                          " does not match configured d=" + std::to_string(cfg.d));
    RaiseParameters p;
    p.config = cfg;
    p.flags = flags;
    p.gmf = std::move(gmf);
    const size_t d = cfg.d;
    const size_t t_eff = flags.static_encoders ? 1 : cfg.t;
    const uint64_t seed = cfg.seed;

    p.idm = CoAttentionParams::init(cfg.co_attention, d, cfg.encoder_depth,
                                    Rng::derive(seed, 0x1D91), "idm");
    p.f_im = Mlp("f_im", 2 * d, d, d, cfg.encoder_depth, Rng::derive(seed, 0xF190));
    p.f_re = Mlp("f_re", 2 * d, d, d, cfg.encoder_depth, Rng::derive(seed, 0xF9E0));
    p.w_s = Parameter("w_s", glorot_init(2 * d, d, Rng::derive(seed, 0x0575)));
    p.positions = Parameter("positions", glorot_init(cfg.n, d, Rng::derive(seed, 0x9051)));
    p.gate = IntentionGate::init(d, t_eff, Rng::derive(seed, 0x6A7E), "gate");
    for (size_t k = 0; k < cfg.b; ++k) {
        const size_t bank_t = (cfg.shared_experts && k > 0) ? 0 : t_eff;
        p.blocks.push_back(EncoderBlock::init(d, bank_t, cfg.dropout,
                                              Rng::derive(seed, 0xB10C + k),
                                              "enc" + std::to_string(k)));
    }
    p.w_p = Parameter("w_p", glorot_init(d, 1, Rng::derive(seed, 0x0ED1)));
    p.b_p = Parameter("b_p", DenseMatrix(1, 1));
    return p;
}

std::vector<Parameter*> RaiseParameters::trainable() {
    std::vector<Parameter*> out;
    if (!flags.drop_intention) idm.collect_parameters(out);
    f_im.collect_parameters(out);
    if (!flags.drop_intention) f_re.collect_parameters(out);
    out.push_back(&w_s);
    out.push_back(&positions);
    gate.collect_parameters(out);
    for (EncoderBlock& block : blocks) block.collect_parameters(out);
    out.push_back(&w_p);
    out.push_back(&b_p);
    if (config.finetune_base) {
        out.push_back(&gmf.p);
        out.push_back(&gmf.q);
    }
    return out;
}

std::vector<Parameter*> RaiseParameters::all_parameters() {
    std::vector<Parameter*> out;
    out.push_back(&gmf.p);
    out.push_back(&gmf.q);
    out.push_back(&gmf.h);
    idm.collect_parameters(out);
    f_im.collect_parameters(out);
    f_re.collect_parameters(out);
    out.push_back(&w_s);
    out.push_back(&positions);
    gate.collect_parameters(out);
    for (EncoderBlock& block : blocks) block.collect_parameters(out);
    out.push_back(&w_p);
    out.push_back(&b_p);
    return out;
}

std::vector<const Parameter*> RaiseParameters::all_parameters() const {
    auto mutable_list = const_cast<RaiseParameters*>(this)->all_parameters();
    return {mutable_list.begin(), mutable_list.end()};
}

const ExpertBank& RaiseParameters::bank_for(size_t k) const {
    if (config.shared_experts && k > 0) return blocks[0].bank;
    return blocks[k].bank;
}

// ---- examples ----

ExamplePool build_examples(const ImplicitDataset& ds, const std::vector<RankedList>& lists,
                           const ReviewStore& reviews, const RaiseConfig& cfg) {
    if (reviews.dim != 0 && reviews.dim != cfg.d)
        throw DataError("review embedding dimension " + std::to_string(reviews.dim) +
                        " does not match configured d=" + std::to_string(cfg.d));
    const AblationFlags flags = cfg.flags();

    ExamplePool pool;
    pool.user_pads.resize(ds.registry.user_count());
    pool.item_pads.resize(ds.registry.item_count());
    std::vector<bool> user_done(pool.user_pads.size(), false);
    std::vector<bool> item_done(pool.item_pads.size(), false);

    for (const RankedList& list : lists) {
        if (list.user >= ds.registry.user_count())
            throw DataError("list for unknown user index " + std::to_string(list.user));
        const std::string& user_name = ds.registry.users[list.user];
        if (list.items.size() != cfg.n)
            throw DataError("list for user " + user_name + " has " +
                            std::to_string(list.items.size()) + " items, expected n=" +
                            std::to_string(cfg.n));
        if (!user_done[list.user]) {
            PaddedReviews pad = pad_or_empty(reviews, EntityKind::user,
                                             ds.registry.user_nums[list.user], cfg.l_u,
                                             cfg.d);
            if (flags.zero_user_reviews) pad.matrix.fill(0.0);
            pool.user_pads[list.user] = std::move(pad);
            user_done[list.user] = true;
        }
        for (uint32_t item : list.items) {
            if (item >= ds.registry.item_count())
                throw DataError("list for user " + user_name + " names unknown item index " +
                                std::to_string(item));
            if (item_done[item]) continue;
            PaddedReviews pad = pad_or_empty(reviews, EntityKind::item,
                                             ds.registry.item_nums[item], cfg.l_i, cfg.d);
            if (flags.zero_item_reviews) pad.matrix.fill(0.0);
            pool.item_pads[item] = std::move(pad);
            item_done[item] = true;
        }
    }

    for (const RankedList& list : lists) {
        ListBatchExample ex;
        ex.user = list.user;
        ex.list = list;
        ex.labels.resize(list.items.size());
        ex.item_reviews.reserve(list.items.size());
        for (size_t j = 0; j < list.items.size(); ++j) {
            ex.labels[j] = ds.is_positive(list.user, list.items[j]) ? 1.0 : 0.0;
            ex.item_reviews.push_back(&pool.item_pads[list.items[j]]);
        }
        ex.user_reviews = &pool.user_pads[list.user];
        pool.examples.push_back(std::move(ex));
    }
    return pool;
}

// ---- forward pass ----

DenseMatrix item_repr(const RaiseParameters& params, const DenseMatrix& p_u,
                      const DenseMatrix& q_i, const DenseMatrix& r_u,
                      const DenseMatrix& r_i, size_t position, ItemCache* cache) {
    const size_t d = params.config.d;
    if (position >= params.positions.value.rows)
        throw DimensionError("item_repr: position " + std::to_string(position) +
                             " outside the " + std::to_string(params.positions.value.rows) +
                             " learned slots");
    ItemCache local;
    ItemCache& c = cache ? *cache : local;

    c.pq_concat = hconcat(p_u, q_i);
    DenseMatrix s_im = params.f_im.forward(c.pq_concat, &c.f_im_cache);
    DenseMatrix s_re(1, d);
    if (!params.flags.drop_intention) {
        c.rr_concat = hconcat(r_u, r_i);
        s_re = params.f_re.forward(c.rr_concat, &c.f_re_cache);
    }
    c.imre_concat = hconcat(s_im, s_re);
    DenseMatrix out = matmul(c.imre_concat, params.w_s.value);
    for (size_t i = 0; i < d; ++i) out(0, i) += params.positions.value(position, i);
    return out;
}

DenseMatrix build_sequence(const RaiseParameters& params, const ListBatchExample& ex,
                           ForwardCache* cache) {
    const RaiseConfig& cfg = params.config;
    if (ex.list.items.size() != cfg.n)
        throw DataError("sequence needs exactly n=" + std::to_string(cfg.n) +
                        " items, got " + std::to_string(ex.list.items.size()));
    if (ex.item_reviews.size() != ex.list.items.size())
        throw DataError("example carries " + std::to_string(ex.item_reviews.size()) +
                        " item review blocks for " + std::to_string(ex.list.items.size()) +
                        " items");
    if (ex.user >= params.gmf.user_count())
        throw DataError("user index " + std::to_string(ex.user) +
                        " outside the base ranker's " +
                        std::to_string(params.gmf.user_count()) + " users");

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.p_u = row_of(params.gmf.p.value, ex.user);
    c.q_rows.clear();
    c.items.assign(cfg.n, ItemCache{});

    DenseMatrix s(cfg.n, cfg.d);
    const DenseMatrix zero_r(1, cfg.d);
    for (size_t j = 0; j < cfg.n; ++j) {
        const uint32_t item = ex.list.items[j];
        if (item >= params.gmf.item_count())
            throw DataError("item index " + std::to_string(item) +
                            " outside the base ranker's " +
                            std::to_string(params.gmf.item_count()) + " items");
        c.q_rows.push_back(row_of(params.gmf.q.value, item));
        ItemCache& ic = c.items[j];

        if (params.flags.drop_intention) {
            ic.r_user = zero_r;
            ic.r_item = zero_r;
        } else {
            if (!ex.user_reviews)
                throw DataError("example for user " + std::to_string(ex.user) +
                                " is missing its user review block");
            IdmOutput idm_out = idm_forward(params.idm, *ex.user_reviews,
                                            *ex.item_reviews[j], cfg.aggregation, &ic.idm);
            ic.r_user = std::move(idm_out.r_user);
            ic.r_item = std::move(idm_out.r_item);
        }

        DenseMatrix row = item_repr(params, c.p_u, c.q_rows[j], ic.r_user, ic.r_item, j,
                                    &ic);
        std::memcpy(s.row(j), row.data(), cfg.d * sizeof(double));
    }
    c.s = s;
    return s;
}

std::pair<DenseMatrix, DenseMatrix> list_context(const RaiseParameters& params,
                                                 const ForwardCache& cache) {
    const size_t n = params.config.n;
    const size_t d = params.config.d;
    DenseMatrix p_bar(1, d), q_bar(1, d);
    for (size_t j = 0; j < n; ++j) {
        for (size_t i = 0; i < d; ++i) {
            p_bar(0, i) += cache.p_u(0, i) + cache.items[j].r_user(0, i);
            q_bar(0, i) += cache.q_rows[j](0, i) + cache.items[j].r_item(0, i);
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (size_t i = 0; i < d; ++i) {
        p_bar(0, i) *= inv_n;
        q_bar(0, i) *= inv_n;
    }
    return {std::move(p_bar), std::move(q_bar)};
}

DenseMatrix raise_forward(const RaiseParameters& params, const ListBatchExample& ex,
                          bool training, Rng& rng, ForwardCache* cache) {
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;

    DenseMatrix s = build_sequence(params, ex, &c);
    auto [p_bar, q_bar] = list_context(params, c);
    c.p_bar = p_bar;
    c.q_bar = q_bar;
    c.a = intention_gate(params.gate, c.p_bar, c.q_bar, &c.gate);

    c.blocks.assign(params.blocks.size(), BlockCache{});
    DenseMatrix x = std::move(s);
    for (size_t k = 0; k < params.blocks.size(); ++k) {
        const ExpertBank* bank_override =
            (params.config.shared_experts && k > 0) ? &params.blocks[0].bank : nullptr;
        x = encoder_block_forward(x, c.a, params.blocks[k], training, rng, &c.blocks[k],
                                  bank_override);
    }
    c.f_final = x;

    DenseMatrix logits_col = matmul(c.f_final, params.w_p.value);  // n x 1
    DenseMatrix logits(1, params.config.n);
    for (size_t j = 0; j < params.config.n; ++j)
        logits(0, j) = logits_col(j, 0) + params.b_p.value(0, 0);
    c.logits = logits;
    c.scores = softmax_rows(logits);
    return c.scores;
}

DenseMatrix raise_forward(const RaiseParameters& params, const ListBatchExample& ex) {
    Rng inert(0);
    return raise_forward(params, ex, false, inert);
}

// ---- loss ----

NllResult nll_loss(const DenseMatrix& scores, const std::vector<double>& labels) {
    if (scores.rows != 1 || scores.cols != labels.size())
        throw DimensionError("nll_loss: scores " + scores.shape_str() + " vs " +
                             std::to_string(labels.size()) + " labels");
    NllResult result;
    for (size_t j = 0; j < labels.size(); ++j) {
        if (labels[j] == 0.0) continue;
        double sc = scores(0, j);
        if (sc < kLogFloor) {
            sc = kLogFloor;
            ++result.clamped;
        }
        result.loss -= labels[j] * std::log(sc);
    }
    return result;
}

void raise_backward(RaiseParameters& params, const ListBatchExample& ex,
                    const ForwardCache& cache, const std::vector<double>& labels) {
    const size_t n = params.config.n;
    const size_t d = params.config.d;

    // d(loss)/d(score): clamped positives carry no gradient through the log.
    DenseMatrix dscores(1, n);
    for (size_t j = 0; j < n; ++j) {
        if (labels[j] == 0.0) continue;
        const double sc = cache.scores(0, j);
        if (sc >= kLogFloor) dscores(0, j) = -labels[j] / sc;
    }
    DenseMatrix dlogits = softmax_rows_backward(cache.scores, dscores);  // 1 x n

    double dbias = 0.0;
    for (size_t j = 0; j < n; ++j) dbias += dlogits(0, j);
    params.b_p.grad(0, 0) += dbias;
    DenseMatrix dlogits_col = transpose(dlogits);  // n x 1
    add_inplace(params.w_p.grad, matmul(transpose(cache.f_final), dlogits_col));
    DenseMatrix dx = matmul(dlogits_col, transpose(params.w_p.value));  // n x d

    DenseMatrix da_total(1, params.gate.expert_count());
    for (size_t k = params.blocks.size(); k-- > 0;) {
        ExpertBank* bank_override =
            (params.config.shared_experts && k > 0) ? &params.blocks[0].bank : nullptr;
        auto [dx_next, da_k] =
            encoder_block_backward(params.blocks[k], cache.blocks[k], dx, bank_override);
        dx = std::move(dx_next);
        add_inplace(da_total, da_k);
    }
    auto [dp_bar, dq_bar] = intention_gate_backward(params.gate, cache.gate, da_total);

    const double inv_n = 1.0 / static_cast<double>(n);
    DenseMatrix dp_u = dp_bar;  // p_u enters all n context terms: n * (1/n) = 1
    for (size_t j = 0; j < n; ++j) {
        const ItemCache& ic = cache.items[j];
        DenseMatrix ds_j = row_of(dx, j);

        for (size_t i = 0; i < d; ++i) params.positions.grad(j, i) += ds_j(0, i);
        add_inplace(params.w_s.grad, matmul(transpose(ic.imre_concat), ds_j));
        DenseMatrix dimre = matmul(ds_j, transpose(params.w_s.value));  // 1 x 2d
        DenseMatrix d_s_im = slice_cols(dimre, 0, d);
        DenseMatrix d_s_re = slice_cols(dimre, d, 2 * d);

        DenseMatrix dpq = params.f_im.backward(ic.f_im_cache, d_s_im);  // 1 x 2d
        for (size_t i = 0; i < d; ++i) dp_u(0, i) += dpq(0, i);
        DenseMatrix dq_j = slice_cols(dpq, d, 2 * d);
        for (size_t i = 0; i < d; ++i) dq_j(0, i) += inv_n * dq_bar(0, i);

        if (!params.flags.drop_intention) {
            DenseMatrix drr = params.f_re.backward(ic.f_re_cache, d_s_re);  // 1 x 2d
            DenseMatrix dr_u = slice_cols(drr, 0, d);
            DenseMatrix dr_i = slice_cols(drr, d, 2 * d);
            for (size_t i = 0; i < d; ++i) {
                dr_u(0, i) += inv_n * dp_bar(0, i);
                dr_i(0, i) += inv_n * dq_bar(0, i);
            }
            idm_backward(params.idm, ic.idm, dr_u, dr_i);
        }

        if (params.config.finetune_base) {
            const uint32_t item = ex.list.items[j];
            for (size_t i = 0; i < d; ++i) params.gmf.q.grad(item, i) += dq_j(0, i);
        }
    }
    if (params.config.finetune_base) {
        for (size_t i = 0; i < d; ++i) params.gmf.p.grad(ex.user, i) += dp_u(0, i);
    }
}

// ---- inference ----

RankedList rerank_by_scores(const RankedList& list, const DenseMatrix& scores) {
    if (scores.rows != 1 || scores.cols != list.items.size())
        throw DimensionError("rerank: scores " + scores.shape_str() + " vs list of " +
                             std::to_string(list.items.size()));
    std::vector<size_t> order(list.items.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t lhs, size_t rhs) {
        if (scores(0, lhs) != scores(0, rhs)) return scores(0, lhs) > scores(0, rhs);
        return lhs < rhs;  // ties keep original list order
    });
    RankedList out;
    out.user = list.user;
    out.items.reserve(order.size());
    out.scores.reserve(order.size());
    for (size_t idx : order) {
        out.items.push_back(list.items[idx]);
        out.scores.push_back(scores(0, idx));
    }
    return out;
}

RankedList rerank(const RaiseParameters& params, const ListBatchExample& ex) {
    return rerank_by_scores(ex.list, raise_forward(params, ex));
}

// ---- explanations ----

Explanation explain(const RaiseParameters& params, const PaddedReviews& user,
                    const PaddedReviews& item, size_t top_m) {
    if (user.real_count == 0)
        throw DataError("explain: the user has no reviews to explain with");
    if (item.real_count == 0)
        throw DataError("explain: the item has no reviews to explain with");
    MatchMatrix match = match_scores(params.idm, user, item);

    Explanation out;
    for (size_t k = 0; k < match.c.rows; ++k) {
        if (!match.user_mask[k]) continue;
        for (size_t j = 0; j < match.c.cols; ++j) {
            if (!match.item_mask[j]) continue;
            out.pairs.push_back({k, j, match.c(k, j)});
        }
    }
    std::sort(out.pairs.begin(), out.pairs.end(),
              [](const ExplanationPair& lhs, const ExplanationPair& rhs) {
                  if (lhs.score != rhs.score) return lhs.score > rhs.score;
                  if (lhs.user_review != rhs.user_review)
                      return lhs.user_review < rhs.user_review;
                  return lhs.item_review < rhs.item_review;
              });
    if (out.pairs.size() > top_m) out.pairs.resize(top_m);
    return out;
}

// ---- training ----

namespace {

double mean_train_nll(const RaiseParameters& params,
                      const std::vector<const ListBatchExample*>& examples) {
    if (examples.empty()) return 0.0;
    double total = 0.0;
    for (const ListBatchExample* ex : examples)
        total += nll_loss(raise_forward(params, *ex), ex->labels).loss;
    return total / static_cast<double>(examples.size());
}

double validation_map5(const RaiseParameters& params,
                       const std::vector<const ListBatchExample*>& val_examples,
                       const ImplicitDataset& ds) {
    double sum = 0.0;
    size_t counted = 0;
    for (const ListBatchExample* ex : val_examples) {
        const auto& positives = ds.positives[ex->user];
        if (positives.empty()) continue;
        RankedList reranked = rerank(params, *ex);
        ItemSet relevant(positives.begin(), positives.end());
        sum += ap_at_k(reranked.items, relevant, 5);
        ++counted;
    }
    return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

}  // namespace

RaiseParameters train_reranker(const ImplicitDataset& ds, GmfModel gmf,
                               const std::vector<RankedList>& lists,
                               const ReviewStore& reviews, const RaiseConfig& cfg,
                               RaiseTrainStats* stats) {
    cfg.validate();
    ImplicitDataset working = ds;
    if (!working.has_split) split_users(working, 0.8, 0.1, 0.1, cfg.seed);

    ExamplePool pool = build_examples(working, lists, reviews, cfg);
    std::vector<const ListBatchExample*> example_by_user(working.registry.user_count(),
                                                         nullptr);
    for (const ListBatchExample& ex : pool.examples) example_by_user[ex.user] = &ex;

    std::vector<const ListBatchExample*> train_examples, val_examples;
    for (uint32_t u = 0; u < working.registry.user_count(); ++u) {
        if (working.split[u] == Split::train) {
            if (!example_by_user[u])
                throw DataError("training user " + working.registry.users[u] +
                                " has no initial list");
            train_examples.push_back(example_by_user[u]);
        } else if (working.split[u] == Split::val && example_by_user[u]) {
            val_examples.push_back(example_by_user[u]);
        }
    }
    if (train_examples.empty()) throw DataError("no training users with lists");

    RaiseParameters params = RaiseParameters::init(cfg, std::move(gmf));
    std::vector<Parameter*> trainables = params.trainable();
    AdamHyper hyper;
    hyper.lr = cfg.lr;

    RaiseTrainStats local_stats;
    RaiseTrainStats& st = stats ? *stats : local_stats;
    st.epoch0_nll = mean_train_nll(params, train_examples);

    bool have_val_signal = false;
    for (const ListBatchExample* ex : val_examples)
        if (!working.positives[ex->user].empty()) have_val_signal = true;

    RaiseParameters best = params;
    st.best_val_map5 = validation_map5(params, val_examples, working);
    st.best_epoch = 0;

    Rng order_rng(Rng::derive(cfg.seed, 0x0BDE));
    Rng dropout_rng(Rng::derive(cfg.seed, 0xD120));
    std::vector<size_t> order(train_examples.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        EpochStats es;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const size_t end = std::min(order.size(), start + cfg.batch_size);
            for (size_t i = start; i < end; ++i) {
                const ListBatchExample& ex = *train_examples[order[i]];
                ForwardCache cache;
                DenseMatrix scores = raise_forward(params, ex, true, dropout_rng, &cache);
                es.clamped += nll_loss(scores, ex.labels).clamped;
                raise_backward(params, ex, cache, ex.labels);
            }
            for (Parameter* p : trainables) adam_step(*p, hyper);
        }
        es.train_nll = mean_train_nll(params, train_examples);
        es.val_map5 = validation_map5(params, val_examples, working);
        st.total_clamped += es.clamped;
        st.epochs.push_back(es);

        // Without a validation signal every epoch counts as an improvement,
        // so the final parameters are returned.
        if (!have_val_signal || es.val_map5 > st.best_val_map5) {
            st.best_val_map5 = es.val_map5;
            st.best_epoch = epoch;
            best = params;
        }
    }
    return best;
}

}  // namespace ranking
