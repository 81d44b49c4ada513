#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "raise/data.hpp"
#include "raise/dte.hpp"
#include "raise/errors.hpp"
#include "raise/gmf.hpp"
#include "raise/idm.hpp"
#include "raise/model.hpp"
#include "raise/numerics.hpp"
#include "raise/rng.hpp"

using namespace ranking;

namespace {

DenseMatrix random_matrix(size_t rows, size_t cols, uint64_t seed, double lo = -1.0,
                          double hi = 1.0) {
    Rng rng(seed);
    DenseMatrix m(rows, cols);
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
    return m;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
    REQUIRE(a.rows == b.rows);
    REQUIRE(a.cols == b.cols);
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a.values[i] - b.values[i]));
    return worst;
}

double min_abs(const DenseMatrix& m) {
    double best = std::numeric_limits<double>::infinity();
    for (double v : m.values) best = std::min(best, std::abs(v));
    return best;
}

// Gradient comparison: pass if |a-n| <= 1e-4 * max(|a|,|n|) or |a-n| <= 1e-7.
void check_grad_close(const DenseMatrix& analytic, const DenseMatrix& numeric,
                      const std::string& label) {
    REQUIRE(analytic.rows == numeric.rows);
    REQUIRE(analytic.cols == numeric.cols);
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic.values[i];
        const double n = numeric.values[i];
        const double diff = std::abs(a - n);
        const double tol = 1e-4 * std::max(std::abs(a), std::abs(n));
        INFO(label << " entry " << i << ": analytic=" << a << " numeric=" << n);
        CHECK((diff <= tol || diff <= 1e-7));
    }
}

// y = x W + b computed with plain loops, independent of the matmul kernel.
DenseMatrix manual_linear(const DenseMatrix& x, const DenseMatrix& w,
                          const DenseMatrix& b) {
    DenseMatrix out(1, w.cols);
    for (size_t j = 0; j < w.cols; ++j) {
        double acc = b.size() ? b(0, j) : 0.0;
        for (size_t k = 0; k < w.rows; ++k) acc += x(0, k) * w(k, j);
        out(0, j) = acc;
    }
    return out;
}

DenseMatrix hcat(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix out(1, a.cols + b.cols);
    for (size_t i = 0; i < a.cols; ++i) out(0, i) = a(0, i);
    for (size_t i = 0; i < b.cols; ++i) out(0, a.cols + i) = b(0, i);
    return out;
}

DenseMatrix row_copy(const DenseMatrix& m, size_t r) {
    DenseMatrix out(1, m.cols);
    for (size_t i = 0; i < m.cols; ++i) out(0, i) = m(r, i);
    return out;
}

PaddedReviews make_pad(const std::vector<std::vector<double>>& rows, size_t l, size_t d) {
    PaddedReviews pad;
    pad.matrix = DenseMatrix(l, d);
    pad.mask.assign(l, 0);
    pad.real_count = std::min(rows.size(), l);
    for (size_t r = 0; r < pad.real_count; ++r) {
        pad.mask[r] = 1;
        for (size_t c = 0; c < d; ++c) pad.matrix(r, c) = rows[r][c];
    }
    return pad;
}

std::vector<std::vector<double>> random_rows(size_t count, size_t d, uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<double>> rows(count, std::vector<double>(d));
    for (auto& row : rows)
        for (double& v : row) v = rng.uniform(-1.0, 1.0);
    return rows;
}

RaiseConfig small_config() {
    RaiseConfig cfg;
    cfg.d = 4;
    cfg.n = 3;
    cfg.t = 2;
    cfg.b = 1;
    cfg.l_u = 2;
    cfg.l_i = 2;
    cfg.dropout = 0.0;
    cfg.encoder_depth = 1;
    return cfg;
}

// An example over `n` distinct items with per-item review pads. The returned
// pads vector owns the storage the example points into.
struct OwningExample {
    PaddedReviews user_pad;
    std::vector<PaddedReviews> item_pads;
    ListBatchExample ex;
};

OwningExample make_example(const RaiseConfig& cfg, uint32_t user,
                           const std::vector<uint32_t>& items, uint64_t seed) {
    OwningExample own;
    own.user_pad = make_pad(random_rows(cfg.l_u, cfg.d, seed), cfg.l_u, cfg.d);
    own.item_pads.reserve(items.size());
    for (size_t j = 0; j < items.size(); ++j)
        own.item_pads.push_back(
            make_pad(random_rows(cfg.l_i, cfg.d, seed + 17 * (j + 1)), cfg.l_i, cfg.d));
    own.ex.user = user;
    own.ex.list.user = user;
    own.ex.list.items = items;
    own.ex.labels.assign(items.size(), 0.0);
    own.ex.user_reviews = &own.user_pad;
    for (auto& pad : own.item_pads) own.ex.item_reviews.push_back(&pad);
    return own;
}

// ---- synthetic training fixture (files generated once) ----

struct TrainFixture {
    ImplicitDataset ds;
    ReviewStore reviews;
    GmfModel gmf;
    std::vector<RankedList> lists;
};

const TrainFixture& train_fixture() {
    static const TrainFixture fx = [] {
        SynthSpec spec;
        spec.users = 15;
        spec.items = 20;
        spec.intents = 2;
        spec.reviews_per_entity = 3;
        spec.dim = 8;
        spec.seed = 7;
        spec.target_positives_per_user = 3.0;

        const auto dir = std::filesystem::temp_directory_path() / "raise_model_tests";
        std::filesystem::create_directories(dir);
        const std::string inter = (dir / "interactions.tsv").string();
        const std::string rev = (dir / "reviews.jsonl").string();
        gen_synthetic(spec, inter, rev);

        TrainFixture f;
        f.ds = binarize(load_interactions(inter));
        f.reviews = hash_embed_reviews(load_review_records(rev), spec.dim, spec.seed, 3, 3);
        f.gmf = GmfModel::init(f.ds.registry.user_count(), f.ds.registry.item_count(),
                               spec.dim, 5);
        for (uint32_t u = 0; u < f.ds.registry.user_count(); ++u)
            f.lists.push_back(initial_list(f.gmf, u, 10));
        return f;
    }();
    REQUIRE(fx.ds.registry.item_count() >= 10);
    REQUIRE(fx.ds.registry.user_count() >= 12);
    return fx;
}

RaiseConfig train_config() {
    RaiseConfig cfg;
    cfg.d = 8;
    cfg.n = 10;
    cfg.t = 2;
    cfg.b = 1;
    cfg.l_u = 3;
    cfg.l_i = 3;
    cfg.dropout = 0.1;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// item representations
// ---------------------------------------------------------------------------

TEST_CASE("item representation matches a hand-composed oracle") {
    RaiseConfig cfg = small_config();
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 31));

    PaddedReviews user_pad = make_pad(random_rows(2, cfg.d, 301), cfg.l_u, cfg.d);
    PaddedReviews item_pad = make_pad(random_rows(1, cfg.d, 302), cfg.l_i, cfg.d);
    IdmOutput idm_out = idm_forward(params.idm, user_pad, item_pad, cfg.aggregation);

    DenseMatrix p = row_copy(params.gmf.p.value, 1);
    DenseMatrix q = row_copy(params.gmf.q.value, 2);
    DenseMatrix got = item_repr(params, p, q, idm_out.r_user, idm_out.r_item, 1);

    DenseMatrix s_im = manual_linear(hcat(p, q), params.f_im.layers[0].w.value,
                                     params.f_im.layers[0].b.value);
    DenseMatrix s_re = manual_linear(hcat(idm_out.r_user, idm_out.r_item),
                                     params.f_re.layers[0].w.value,
                                     params.f_re.layers[0].b.value);
    DenseMatrix expect = manual_linear(hcat(s_im, s_re), params.w_s.value,
                                       DenseMatrix(0, 0));
    for (size_t i = 0; i < cfg.d; ++i) expect(0, i) += params.positions.value(1, i);

    CHECK(max_abs_diff(got, expect) <= 1e-12);
}

TEST_CASE("dropping the intention module zeroes the review half and ignores r inputs") {
    RaiseConfig cfg = small_config();
    cfg.ablation = Ablation::no_idm;
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 31));

    DenseMatrix p = row_copy(params.gmf.p.value, 0);
    DenseMatrix q = row_copy(params.gmf.q.value, 1);
    DenseMatrix r_junk = random_matrix(1, cfg.d, 303);
    DenseMatrix zero(1, cfg.d);

    DenseMatrix with_junk = item_repr(params, p, q, r_junk, r_junk, 0);
    DenseMatrix with_zero = item_repr(params, p, q, zero, zero, 0);
    CHECK(max_abs_diff(with_junk, with_zero) == 0.0);

    DenseMatrix s_im = manual_linear(hcat(p, q), params.f_im.layers[0].w.value,
                                     params.f_im.layers[0].b.value);
    DenseMatrix expect = manual_linear(hcat(s_im, DenseMatrix(1, cfg.d)),
                                       params.w_s.value, DenseMatrix(0, 0));
    for (size_t i = 0; i < cfg.d; ++i) expect(0, i) += params.positions.value(0, i);
    CHECK(max_abs_diff(with_junk, expect) <= 1e-12);
}

TEST_CASE("a position beyond the learned slots is rejected") {
    RaiseConfig cfg = small_config();
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 31));
    DenseMatrix v(1, cfg.d);
    CHECK_THROWS_AS(item_repr(params, v, v, v, v, cfg.n), DimensionError);
}

TEST_CASE("entities without reviews reach the pair encoder as zeros") {
    RaiseConfig cfg = small_config();
    cfg.n = 1;
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 31));
    // Give the pair encoder a visible bias so the zero-input path is nonzero.
    for (size_t i = 0; i < cfg.d; ++i)
        params.f_re.layers[0].b.value(0, i) = 0.3 + 0.1 * static_cast<double>(i);

    OwningExample own = make_example(cfg, 0, {2}, 401);
    own.user_pad = make_pad({}, cfg.l_u, cfg.d);  // no real reviews on either side
    own.item_pads[0] = make_pad({}, cfg.l_i, cfg.d);

    ForwardCache cache;
    DenseMatrix s = build_sequence(params, own.ex, &cache);
    REQUIRE(cache.items[0].r_user.all_finite());
    CHECK(max_abs_diff(cache.items[0].r_user, DenseMatrix(1, cfg.d)) == 0.0);
    CHECK(max_abs_diff(cache.items[0].r_item, DenseMatrix(1, cfg.d)) == 0.0);

    DenseMatrix p = row_copy(params.gmf.p.value, 0);
    DenseMatrix q = row_copy(params.gmf.q.value, 2);
    DenseMatrix s_im = manual_linear(hcat(p, q), params.f_im.layers[0].w.value,
                                     params.f_im.layers[0].b.value);
    DenseMatrix s_re = params.f_re.layers[0].b.value;  // 0 * W + b
    DenseMatrix expect = manual_linear(hcat(s_im, s_re), params.w_s.value,
                                       DenseMatrix(0, 0));
    for (size_t i = 0; i < cfg.d; ++i) expect(0, i) += params.positions.value(0, i);
    CHECK(max_abs_diff(row_copy(s, 0), expect) <= 1e-12);
}

// ---------------------------------------------------------------------------
// sequence assembly and list context
// ---------------------------------------------------------------------------

TEST_CASE("sequence rows equal independent per-item representations") {
    RaiseConfig cfg = small_config();
    cfg.n = 2;
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 33));
    OwningExample own = make_example(cfg, 1, {2, 0}, 501);

    ForwardCache cache;
    DenseMatrix s = build_sequence(params, own.ex, &cache);
    DenseMatrix p = row_copy(params.gmf.p.value, 1);

    for (size_t j = 0; j < 2; ++j) {
        IdmOutput idm_out = idm_forward(params.idm, own.user_pad, own.item_pads[j],
                                        cfg.aggregation);
        DenseMatrix q = row_copy(params.gmf.q.value, own.ex.list.items[j]);
        DenseMatrix expect = item_repr(params, p, q, idm_out.r_user, idm_out.r_item, j);
        CHECK(max_abs_diff(row_copy(s, j), expect) == 0.0);
    }

    // Swapping the items moves content between rows while each slot keeps its
    // learned position vector.
    OwningExample swapped = make_example(cfg, 1, {0, 2}, 501);
    swapped.item_pads[0] = own.item_pads[1];
    swapped.item_pads[1] = own.item_pads[0];
    DenseMatrix s2 = build_sequence(params, swapped.ex);
    for (size_t i = 0; i < cfg.d; ++i) {
        const double pos_delta = params.positions.value(0, i) - params.positions.value(1, i);
        CHECK(std::abs((s2(0, i) - s(1, i)) - pos_delta) <= 1e-12);
    }

    DenseMatrix again = build_sequence(params, own.ex);
    CHECK(max_abs_diff(again, s) == 0.0);
}

TEST_CASE("a wrong-length list is rejected with the expected count") {
    RaiseConfig cfg = small_config();
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 33));
    OwningExample own = make_example(cfg, 0, {0, 1}, 502);  // n is 3
    CHECK_THROWS_AS(build_sequence(params, own.ex), DataError);
}

TEST_CASE("list context averages user, item and intention vectors") {
    RaiseConfig cfg = small_config();
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 35));
    OwningExample own = make_example(cfg, 0, {0, 1, 2}, 601);

    ForwardCache cache;
    build_sequence(params, own.ex, &cache);
    auto [p_bar, q_bar] = list_context(params, cache);

    for (size_t i = 0; i < cfg.d; ++i) {
        double pe = 0.0, qe = 0.0;
        for (size_t j = 0; j < 3; ++j) {
            pe += cache.p_u(0, i) + cache.items[j].r_user(0, i);
            qe += cache.q_rows[j](0, i) + cache.items[j].r_item(0, i);
        }
        CHECK(std::abs(p_bar(0, i) - pe / 3.0) <= 1e-12);
        CHECK(std::abs(q_bar(0, i) - qe / 3.0) <= 1e-12);
    }
}

TEST_CASE("without the intention module the user context is the raw user latent") {
    RaiseConfig cfg = small_config();
    cfg.n = 2;
    cfg.ablation = Ablation::no_idm;
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 35));
    OwningExample own = make_example(cfg, 1, {0, 2}, 602);

    ForwardCache cache;
    build_sequence(params, own.ex, &cache);
    auto [p_bar, q_bar] = list_context(params, cache);
    CHECK(max_abs_diff(p_bar, cache.p_u) <= 1e-15);
    for (size_t i = 0; i < cfg.d; ++i) {
        const double qe = (cache.q_rows[0](0, i) + cache.q_rows[1](0, i)) / 2.0;
        CHECK(std::abs(q_bar(0, i) - qe) <= 1e-15);
    }
}

// ---------------------------------------------------------------------------
// full forward pass
// ---------------------------------------------------------------------------

TEST_CASE("scores form a probability distribution over the list") {
    RaiseConfig cfg = small_config();
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 37));
    OwningExample own = make_example(cfg, 0, {2, 0, 1}, 701);

    DenseMatrix scores = raise_forward(params, own.ex);
    REQUIRE(scores.rows == 1);
    REQUIRE(scores.cols == cfg.n);
    double sum = 0.0;
    for (size_t j = 0; j < cfg.n; ++j) {
        CHECK(scores(0, j) > 0.0);
        sum += scores(0, j);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);

    DenseMatrix again = raise_forward(params, own.ex);
    CHECK(max_abs_diff(scores, again) == 0.0);
}

TEST_CASE("indistinguishable items with zeroed positions score uniformly") {
    RaiseConfig cfg = small_config();
    cfg.n = 4;
    GmfModel gmf = GmfModel::init(2, 4, cfg.d, 39);
    for (size_t r = 1; r < 4; ++r)
        for (size_t c = 0; c < cfg.d; ++c) gmf.q.value(r, c) = gmf.q.value(0, c);
    RaiseParameters params = RaiseParameters::init(cfg, std::move(gmf));
    params.positions.value.fill(0.0);

    OwningExample own = make_example(cfg, 1, {0, 1, 2, 3}, 702);
    for (size_t j = 1; j < 4; ++j) own.item_pads[j] = own.item_pads[0];

    DenseMatrix scores = raise_forward(params, own.ex);
    for (size_t j = 0; j < 4; ++j) CHECK(std::abs(scores(0, j) - 0.25) <= 1e-12);
}

TEST_CASE("forward pass equals its staged composition") {
    RaiseConfig cfg = small_config();
    cfg.b = 2;
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 41));
    OwningExample own = make_example(cfg, 1, {1, 2, 0}, 801);

    ForwardCache cache;
    Rng unused(0);
    DenseMatrix scores = raise_forward(params, own.ex, false, unused, &cache);

    ForwardCache staged;
    DenseMatrix s = build_sequence(params, own.ex, &staged);
    auto [p_bar, q_bar] = list_context(params, staged);
    DenseMatrix a = intention_gate(params.gate, p_bar, q_bar);
    Rng inert(0);
    DenseMatrix x = s;
    for (const EncoderBlock& block : params.blocks)
        x = encoder_block_forward(x, a, block, false, inert);
    DenseMatrix logits(1, cfg.n);
    for (size_t j = 0; j < cfg.n; ++j) {
        double acc = params.b_p.value(0, 0);
        for (size_t i = 0; i < cfg.d; ++i) acc += x(j, i) * params.w_p.value(i, 0);
        logits(0, j) = acc;
    }
    DenseMatrix expect = softmax_rows(logits);

    CHECK(max_abs_diff(scores, expect) <= 1e-12);
    CHECK(max_abs_diff(cache.a, a) == 0.0);
}

TEST_CASE("collapsed model equals a manually wired static encoder") {
    RaiseConfig cfg = small_config();
    cfg.t = 4;  // collapses to one expert below
    cfg.ablation = Ablation::no_both;
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 43));
    REQUIRE(params.gate.expert_count() == 1);
    REQUIRE(params.blocks[0].bank.t == 1);
    OwningExample own = make_example(cfg, 0, {2, 1, 0}, 901);

    DenseMatrix scores = raise_forward(params, own.ex);

    const EncoderBlock& blk = params.blocks[0];
    DenseMatrix s = build_sequence(params, own.ex);
    DenseMatrix attn = self_attention(s, blk.bank.wq[0].value, blk.bank.wk[0].value,
                                      blk.bank.wv[0].value);
    DenseMatrix x1 = layer_norm(add(s, attn), blk.ln1_gain, blk.ln1_bias);
    DenseMatrix hidden = relu(add_row_broadcast(matmul(x1, blk.ffn_w1.value),
                                                blk.ffn_b1.value));
    DenseMatrix ffn = add_row_broadcast(matmul(hidden, blk.ffn_w2.value),
                                        blk.ffn_b2.value);
    DenseMatrix f = layer_norm(add(x1, ffn), blk.ln2_gain, blk.ln2_bias);
    DenseMatrix logits(1, cfg.n);
    for (size_t j = 0; j < cfg.n; ++j) {
        double acc = params.b_p.value(0, 0);
        for (size_t i = 0; i < cfg.d; ++i) acc += f(j, i) * params.w_p.value(i, 0);
        logits(0, j) = acc;
    }
    CHECK(max_abs_diff(scores, softmax_rows(logits)) <= 1e-12);
}

TEST_CASE("zeroed positions make scoring equivariant to list order") {
    RaiseConfig cfg = small_config();
    cfg.n = 5;
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(3, 6, cfg.d, 45));

    const std::vector<uint32_t> items = {4, 1, 3, 0, 2};
    const std::vector<size_t> perm = {2, 0, 4, 1, 3};
    OwningExample a = make_example(cfg, 2, items, 1001);
    OwningExample b = make_example(cfg, 2, {}, 1001);
    b.ex.list.items.clear();
    b.ex.item_reviews.clear();
    b.item_pads.clear();
    for (size_t k = 0; k < perm.size(); ++k) {
        b.ex.list.items.push_back(items[perm[k]]);
        b.item_pads.push_back(a.item_pads[perm[k]]);
    }
    for (auto& pad : b.item_pads) b.ex.item_reviews.push_back(&pad);
    b.ex.labels.assign(5, 0.0);

    DenseMatrix with_pos_a = raise_forward(params, a.ex);
    DenseMatrix with_pos_b = raise_forward(params, b.ex);
    double worst_with_pos = 0.0;
    for (size_t k = 0; k < perm.size(); ++k)
        worst_with_pos = std::max(
            worst_with_pos, std::abs(with_pos_b(0, k) - with_pos_a(0, perm[k])));
    CHECK(worst_with_pos > 1e-9);  // positions deliberately break the symmetry

    params.positions.value.fill(0.0);
    DenseMatrix sa = raise_forward(params, a.ex);
    DenseMatrix sb = raise_forward(params, b.ex);
    for (size_t k = 0; k < perm.size(); ++k)
        CHECK(std::abs(sb(0, k) - sa(0, perm[k])) <= 1e-9);
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

TEST_CASE("list-wise negative log likelihood on hand values") {
    DenseMatrix certain(1, 1);
    certain(0, 0) = 1.0;
    NllResult r1 = nll_loss(certain, {1.0});
    CHECK(r1.loss == 0.0);
    CHECK(r1.clamped == 0);

    DenseMatrix three(1, 3);
    three(0, 0) = 0.5;
    three(0, 1) = 0.25;
    three(0, 2) = 0.25;
    NllResult r2 = nll_loss(three, {0.0, 0.0, 0.0});
    CHECK(r2.loss == 0.0);

    NllResult r3 = nll_loss(three, {1.0, 0.0, 1.0});
    CHECK(std::abs(r3.loss - (-(std::log(0.5) + std::log(0.25)))) <= 1e-15);
    CHECK(r3.clamped == 0);
}

TEST_CASE("vanishing positive scores hit the log floor and are counted") {
    DenseMatrix scores(1, 2);
    scores(0, 0) = 1e-15;
    scores(0, 1) = 1.0 - 1e-15;
    NllResult r = nll_loss(scores, {1.0, 0.0});
    CHECK(r.clamped == 1);
    CHECK(std::abs(r.loss - (-std::log(1e-12))) <= 1e-12);
    CHECK(std::isfinite(r.loss));
}

TEST_CASE("mismatched score and label sizes are rejected") {
    DenseMatrix scores(1, 3);
    CHECK_THROWS_AS(nll_loss(scores, {1.0, 0.0}), DimensionError);
}

// ---------------------------------------------------------------------------
// re-ranking
// ---------------------------------------------------------------------------

TEST_CASE("re-ranking matches a stable argsort oracle across many lists") {
    Rng rng(4242);
    for (int trial = 0; trial < 1000; ++trial) {
        const size_t n = 10;
        RankedList list;
        list.user = 3;
        std::vector<uint32_t> ids(30);
        std::iota(ids.begin(), ids.end(), 0u);
        rng.shuffle(ids);
        list.items.assign(ids.begin(), ids.begin() + n);
        DenseMatrix scores(1, n);
        for (size_t j = 0; j < n; ++j)
            scores(0, j) = 0.1 * static_cast<double>(1 + rng.next_below(4));

        RankedList got = rerank_by_scores(list, scores);

        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) {
            return scores(0, x) > scores(0, y);
        });
        REQUIRE(got.items.size() == n);
        for (size_t k = 0; k < n; ++k) {
            CHECK(got.items[k] == list.items[order[k]]);
            CHECK(got.scores[k] == scores(0, order[k]));
        }

        std::vector<uint32_t> sorted_in = list.items, sorted_out = got.items;
        std::sort(sorted_in.begin(), sorted_in.end());
        std::sort(sorted_out.begin(), sorted_out.end());
        CHECK(sorted_in == sorted_out);  // a permutation, nothing lost
    }
}

TEST_CASE("a constant scoring head keeps the incoming order") {
    RaiseConfig cfg = small_config();
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 47));
    params.w_p.value.fill(0.0);  // every slot gets the same logit
    OwningExample own = make_example(cfg, 1, {2, 0, 1}, 1101);
    RankedList out = rerank(params, own.ex);
    CHECK(out.items == own.ex.list.items);
}

// ---------------------------------------------------------------------------
// ablations
// ---------------------------------------------------------------------------

TEST_CASE("ablation names round-trip and reject junk") {
    for (Ablation a : {Ablation::full, Ablation::no_idm, Ablation::no_dte,
                       Ablation::no_both, Ablation::no_user_reviews,
                       Ablation::no_item_reviews})
        CHECK(parse_ablation(ablation_name(a)) == a);
    CHECK_THROWS_AS(parse_ablation("no_everything"), ConfigError);
}

TEST_CASE("removing both modules is exactly the union of the single removals") {
    const AblationFlags merged =
        merge_flags(ablation_flags(Ablation::no_idm), ablation_flags(Ablation::no_dte));
    CHECK(merged == ablation_flags(Ablation::no_both));
    CHECK(merge_flags(merged, merged) == merged);
    CHECK(merge_flags(ablation_flags(Ablation::no_dte),
                      ablation_flags(Ablation::no_idm)) == merged);

    RaiseConfig cfg = small_config();
    cfg.t = 4;
    RaiseConfig cfg_both = cfg;
    cfg_both.ablation = Ablation::no_both;
    RaiseParameters via_name =
        RaiseParameters::init(cfg_both, GmfModel::init(2, 3, cfg.d, 49));
    RaiseParameters via_merge =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 49), merged);

    auto a_params = via_name.all_parameters();
    auto b_params = via_merge.all_parameters();
    REQUIRE(a_params.size() == b_params.size());
    for (size_t i = 0; i < a_params.size(); ++i) {
        CHECK(a_params[i]->name == b_params[i]->name);
        REQUIRE(a_params[i]->value.same_shape(b_params[i]->value));
        CHECK(a_params[i]->value.values == b_params[i]->value.values);
    }

    OwningExample own = make_example(cfg, 0, {1, 0, 2}, 1201);
    CHECK(max_abs_diff(raise_forward(via_name, own.ex),
                       raise_forward(via_merge, own.ex)) == 0.0);
}

TEST_CASE("static-encoder ablation collapses the expert machinery to one expert") {
    RaiseConfig cfg = small_config();
    cfg.t = 4;
    cfg.ablation = Ablation::no_dte;
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 51));
    CHECK(params.gate.expert_count() == 1);
    CHECK(params.blocks[0].bank.t == 1);
    CHECK(cfg.effective_experts() == 1);

    OwningExample own = make_example(cfg, 0, {0, 1, 2}, 1301);
    DenseMatrix scores = raise_forward(params, own.ex);
    ForwardCache cache;
    Rng unused(0);
    raise_forward(params, own.ex, false, unused, &cache);
    REQUIRE(cache.a.cols == 1);
    CHECK(cache.a(0, 0) == 1.0);
    CHECK(std::abs(scores(0, 0) + scores(0, 1) + scores(0, 2) - 1.0) <= 1e-12);
}

TEST_CASE("trainable set respects ablations and the frozen base ranker") {
    RaiseConfig cfg = small_config();
    RaiseParameters full =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 53));
    auto names_of = [](std::vector<Parameter*> ps) {
        std::vector<std::string> names;
        for (Parameter* p : ps) names.push_back(p->name);
        return names;
    };
    std::vector<std::string> full_names = names_of(full.trainable());
    auto has_prefix = [&](const std::vector<std::string>& names, const std::string& pre) {
        return std::any_of(names.begin(), names.end(), [&](const std::string& n) {
            return n.rfind(pre, 0) == 0;
        });
    };
    CHECK(has_prefix(full_names, "idm"));
    CHECK(has_prefix(full_names, "f_re"));
    CHECK(has_prefix(full_names, "gate"));
    CHECK(!has_prefix(full_names, "gmf"));

    RaiseConfig cfg_no = cfg;
    cfg_no.ablation = Ablation::no_idm;
    RaiseParameters dropped =
        RaiseParameters::init(cfg_no, GmfModel::init(2, 3, cfg.d, 53));
    std::vector<std::string> dropped_names = names_of(dropped.trainable());
    CHECK(!has_prefix(dropped_names, "idm"));
    CHECK(!has_prefix(dropped_names, "f_re"));
    CHECK(has_prefix(dropped_names, "f_im"));

    RaiseConfig cfg_ft = cfg;
    cfg_ft.finetune_base = true;
    RaiseParameters tuned =
        RaiseParameters::init(cfg_ft, GmfModel::init(2, 3, cfg.d, 53));
    std::vector<std::string> tuned_names = names_of(tuned.trainable());
    CHECK(std::count(tuned_names.begin(), tuned_names.end(), "gmf.p") == 1);
    CHECK(std::count(tuned_names.begin(), tuned_names.end(), "gmf.q") == 1);
    CHECK(std::count(tuned_names.begin(), tuned_names.end(), "gmf.h") == 0);

    // The checkpoint view is complete and has no duplicate names.
    auto all = full.all_parameters();
    std::vector<std::string> all_names = names_of(all);
    std::vector<std::string> unique = all_names;
    std::sort(unique.begin(), unique.end());
    CHECK(std::adjacent_find(unique.begin(), unique.end()) == unique.end());
    for (const std::string& n : full_names)
        CHECK(std::count(all_names.begin(), all_names.end(), n) == 1);
}

TEST_CASE("a shared expert bank exists once and is reused by later blocks") {
    RaiseConfig cfg = small_config();
    cfg.b = 3;
    cfg.shared_experts = true;
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 55));
    CHECK(params.blocks[0].bank.t == cfg.t);
    CHECK(params.blocks[1].bank.empty());
    CHECK(params.blocks[2].bank.empty());
    CHECK(&params.bank_for(1) == &params.blocks[0].bank);
    CHECK(&params.bank_for(2) == &params.blocks[0].bank);

    auto all = params.all_parameters();
    size_t expert_tensors = 0;
    for (const Parameter* p : all)
        if (p->name.find(".experts.") != std::string::npos) ++expert_tensors;
    CHECK(expert_tensors == 3 * cfg.t);  // one bank only

    OwningExample own = make_example(cfg, 0, {0, 1, 2}, 1401);
    DenseMatrix scores = raise_forward(params, own.ex);
    CHECK(scores.all_finite());
}

// ---------------------------------------------------------------------------
// example pools
// ---------------------------------------------------------------------------

TEST_CASE("example pools label positives and key review blocks correctly") {
    const TrainFixture& fx = train_fixture();
    RaiseConfig cfg = train_config();
    ExamplePool pool = build_examples(fx.ds, fx.lists, fx.reviews, cfg);
    REQUIRE(pool.examples.size() == fx.lists.size());

    for (size_t e = 0; e < pool.examples.size(); ++e) {
        const ListBatchExample& ex = pool.examples[e];
        CHECK(ex.user == fx.lists[e].user);
        REQUIRE(ex.labels.size() == cfg.n);
        for (size_t j = 0; j < cfg.n; ++j) {
            const double want = fx.ds.is_positive(ex.user, ex.list.items[j]) ? 1.0 : 0.0;
            CHECK(ex.labels[j] == want);
        }
        REQUIRE(ex.user_reviews != nullptr);
        PaddedReviews direct = pad_or_empty(fx.reviews, EntityKind::user,
                                            fx.ds.registry.user_nums[ex.user], cfg.l_u,
                                            cfg.d);
        CHECK(ex.user_reviews->real_count == direct.real_count);
        CHECK(max_abs_diff(ex.user_reviews->matrix, direct.matrix) == 0.0);
    }

    const ListBatchExample& ex0 = pool.examples[0];
    PaddedReviews item_direct = pad_or_empty(fx.reviews, EntityKind::item,
                                             fx.ds.registry.item_nums[ex0.list.items[2]],
                                             cfg.l_i, cfg.d);
    CHECK(max_abs_diff(ex0.item_reviews[2]->matrix, item_direct.matrix) == 0.0);
}

TEST_CASE("review-stream ablations blank the content but keep the masks") {
    const TrainFixture& fx = train_fixture();
    RaiseConfig cfg = train_config();
    cfg.ablation = Ablation::no_user_reviews;
    ExamplePool pool = build_examples(fx.ds, fx.lists, fx.reviews, cfg);
    bool saw_real_user_rows = false;
    for (const PaddedReviews& pad : pool.user_pads) {
        CHECK(max_abs_diff(pad.matrix, DenseMatrix(pad.matrix.rows, pad.matrix.cols)) ==
              0.0);
        if (pad.real_count > 0) saw_real_user_rows = true;
    }
    CHECK(saw_real_user_rows);  // masks survive the blanking

    bool saw_item_content = false;
    for (const ListBatchExample& ex : pool.examples)
        for (const PaddedReviews* pad : ex.item_reviews)
            for (double v : pad->matrix.values)
                if (v != 0.0) saw_item_content = true;
    CHECK(saw_item_content);  // the other stream is untouched

    cfg.ablation = Ablation::no_item_reviews;
    ExamplePool pool2 = build_examples(fx.ds, fx.lists, fx.reviews, cfg);
    for (const ListBatchExample& ex : pool2.examples)
        for (const PaddedReviews* pad : ex.item_reviews)
            CHECK(max_abs_diff(pad->matrix,
                               DenseMatrix(pad->matrix.rows, pad->matrix.cols)) == 0.0);
}

TEST_CASE("example pools reject malformed lists and mismatched dimensions") {
    const TrainFixture& fx = train_fixture();
    RaiseConfig cfg = train_config();

    std::vector<RankedList> short_list = fx.lists;
    short_list[0].items.resize(5);
    short_list[0].scores.resize(5);
    try {
        build_examples(fx.ds, short_list, fx.reviews, cfg);
        FAIL("expected DataError for a short list");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(fx.ds.registry.users[short_list[0].user]) !=
              std::string::npos);
    }

    std::vector<RankedList> bad_item = fx.lists;
    bad_item[1].items[0] = fx.ds.registry.item_count();
    CHECK_THROWS_AS(build_examples(fx.ds, bad_item, fx.reviews, cfg), DataError);

    std::vector<RankedList> bad_user = fx.lists;
    bad_user[2].user = fx.ds.registry.user_count();
    CHECK_THROWS_AS(build_examples(fx.ds, bad_user, fx.reviews, cfg), DataError);

    RaiseConfig small_d = cfg;
    small_d.d = 4;  // review store carries d=8 embeddings
    CHECK_THROWS_AS(build_examples(fx.ds, fx.lists, fx.reviews, small_d), DataError);
}

// ---------------------------------------------------------------------------
// gradients
// ---------------------------------------------------------------------------

TEST_CASE("every trainable gradient matches central finite differences") {
    RaiseConfig cfg;
    cfg.d = 8;
    cfg.n = 6;
    cfg.t = 2;
    cfg.b = 2;
    cfg.l_u = 3;
    cfg.l_i = 3;
    cfg.dropout = 0.0;
    cfg.encoder_depth = 1;
    cfg.shared_experts = true;
    cfg.finetune_base = true;
    cfg.seed = 57;
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(3, 8, cfg.d, 59));

    // Push every ReLU input away from its kink so central differences hold.
    Rng nudge(61);
    for (size_t i = 0; i < cfg.d; ++i)
        params.gate.b_e.value(0, i) += nudge.uniform(0.05, 0.25);
    for (EncoderBlock& block : params.blocks)
        for (size_t i = 0; i < 4 * cfg.d; ++i)
            block.ffn_b1.value(0, i) += nudge.uniform(0.05, 0.25);

    OwningExample own = make_example(cfg, 1, {2, 0, 5, 7, 1, 4}, 1501);
    own.item_pads[3] = make_pad({}, cfg.l_i, cfg.d);  // one reviewless item
    own.ex.labels = {1.0, 0.0, 0.0, 1.0, 0.0, 0.0};

    auto loss = [&]() {
        return nll_loss(raise_forward(params, own.ex), own.ex.labels).loss;
    };

    ForwardCache cache;
    Rng inert(0);
    DenseMatrix scores = raise_forward(params, own.ex, false, inert, &cache);
    REQUIRE(min_abs(cache.gate.preact) > 1e-4);
    for (const BlockCache& bc : cache.blocks) REQUIRE(min_abs(bc.ffn_pre) > 1e-4);
    for (size_t j = 0; j < cfg.n; ++j) REQUIRE(scores(0, j) > 1e-9);

    for (Parameter* p : params.trainable()) p->zero_grad();
    raise_backward(params, own.ex, cache, own.ex.labels);

    for (Parameter* p : params.trainable()) {
        DenseMatrix numeric = finite_diff_grad(loss, *p, 1e-5);
        check_grad_close(p->grad, numeric, p->name);
    }
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

TEST_CASE("a zero learning rate leaves the parameters untouched") {
    const TrainFixture& fx = train_fixture();
    RaiseConfig cfg = train_config();
    cfg.lr = 0.0;
    RaiseTrainStats st;
    RaiseParameters out = train_reranker(fx.ds, fx.gmf, fx.lists, fx.reviews, cfg, &st);

    RaiseParameters ref = RaiseParameters::init(cfg, fx.gmf);
    auto got = out.all_parameters();
    auto want = ref.all_parameters();
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i]->name == want[i]->name);
        CHECK(got[i]->value.values == want[i]->value.values);
    }
    REQUIRE(st.epochs.size() == cfg.epochs);
    CHECK(st.epochs[0].train_nll == st.epoch0_nll);
    CHECK(st.epochs[1].train_nll == st.epoch0_nll);
}

TEST_CASE("training is reproducible under the same seed") {
    const TrainFixture& fx = train_fixture();
    RaiseConfig cfg = train_config();
    cfg.lr = 1e-3;
    RaiseTrainStats st1, st2;
    RaiseParameters a = train_reranker(fx.ds, fx.gmf, fx.lists, fx.reviews, cfg, &st1);
    RaiseParameters b = train_reranker(fx.ds, fx.gmf, fx.lists, fx.reviews, cfg, &st2);

    auto pa = a.all_parameters();
    auto pb = b.all_parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i)
        CHECK(pa[i]->value.values == pb[i]->value.values);
    REQUIRE(st1.epochs.size() == st2.epochs.size());
    CHECK(st1.epoch0_nll == st2.epoch0_nll);
    for (size_t e = 0; e < st1.epochs.size(); ++e) {
        CHECK(st1.epochs[e].train_nll == st2.epochs[e].train_nll);
        CHECK(st1.epochs[e].val_map5 == st2.epochs[e].val_map5);
    }
}

TEST_CASE("the training loss falls on an overfittable dataset") {
    const TrainFixture& fx = train_fixture();
    RaiseConfig cfg = train_config();
    cfg.lr = 3e-3;
    cfg.dropout = 0.0;
    cfg.epochs = 15;
    RaiseTrainStats st;
    train_reranker(fx.ds, fx.gmf, fx.lists, fx.reviews, cfg, &st);
    REQUIRE(st.epochs.size() == 15);
    CHECK(st.epochs.back().train_nll < st.epoch0_nll);
    CHECK(st.best_val_map5 >= 0.0);
    for (const EpochStats& es : st.epochs) CHECK(st.best_val_map5 >= es.val_map5);
}

TEST_CASE("a training user without an initial list is reported by name") {
    const TrainFixture& fx = train_fixture();
    ImplicitDataset ds = fx.ds;
    ds.has_split = true;
    ds.split.assign(ds.registry.user_count(), Split::train);

    std::vector<RankedList> missing;
    for (const RankedList& list : fx.lists)
        if (list.user != 3) missing.push_back(list);

    RaiseConfig cfg = train_config();
    cfg.epochs = 1;
    try {
        train_reranker(ds, fx.gmf, missing, fx.reviews, cfg);
        FAIL("expected DataError for the missing list");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(ds.registry.users[3]) != std::string::npos);
    }
}

TEST_CASE("a validation user without a list is skipped rather than fatal") {
    const TrainFixture& fx = train_fixture();
    ImplicitDataset ds = fx.ds;
    ds.has_split = true;
    ds.split.assign(ds.registry.user_count(), Split::train);
    ds.split[5] = Split::val;

    std::vector<RankedList> missing;
    for (const RankedList& list : fx.lists)
        if (list.user != 5) missing.push_back(list);

    RaiseConfig cfg = train_config();
    cfg.epochs = 1;
    RaiseTrainStats st;
    RaiseParameters out = train_reranker(ds, fx.gmf, missing, fx.reviews, cfg, &st);
    CHECK(st.epochs.size() == 1);
    CHECK(out.all_parameters().size() > 0);
}

// ---------------------------------------------------------------------------
// explanations
// ---------------------------------------------------------------------------

namespace {

// Parameters whose co-attention is an exact dot product: identity review
// encoders and an identity bilinear form.
RaiseParameters dot_product_idm_params() {
    RaiseConfig cfg = small_config();
    cfg.l_u = 4;
    cfg.l_i = 4;
    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(2, 3, cfg.d, 63));
    for (Mlp* enc : {&params.idm.f_user, &params.idm.f_item}) {
        enc->layers[0].w.value.fill(0.0);
        for (size_t i = 0; i < cfg.d; ++i) enc->layers[0].w.value(i, i) = 1.0;
        enc->layers[0].b.value.fill(0.0);
    }
    params.idm.m.value.fill(0.0);
    for (size_t i = 0; i < cfg.d; ++i) params.idm.m.value(i, i) = 1.0;
    return params;
}

}  // namespace

TEST_CASE("explanations surface the strongest review pair first") {
    RaiseParameters params = dot_product_idm_params();
    PaddedReviews user = make_pad(
        {{1, 0, 0, 0}, {0, 2, 0, 0}, {0, 0, 3, 0}}, 4, 4);
    PaddedReviews item = make_pad({{0, 0, 3, 0}, {1, 1, 0, 0}}, 4, 4);
    // Pairwise dot products: c = [[0,1],[0,2],[9,0]]; the planted (2,0) wins.

    Explanation top = explain(params, user, item, 3);
    REQUIRE(top.pairs.size() == 3);
    CHECK(top.pairs[0].user_review == 2);
    CHECK(top.pairs[0].item_review == 0);
    CHECK(top.pairs[0].score == doctest::Approx(9.0).epsilon(1e-12));
    CHECK(top.pairs[1].user_review == 1);
    CHECK(top.pairs[1].item_review == 1);
    CHECK(top.pairs[1].score == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(top.pairs[2].user_review == 0);
    CHECK(top.pairs[2].item_review == 1);
    CHECK(top.pairs[2].score == doctest::Approx(1.0).epsilon(1e-12));

    // Asking for more pairs than exist returns every real pair; padded slots
    // never appear even though the matrices have four rows.
    Explanation all = explain(params, user, item, 50);
    REQUIRE(all.pairs.size() == 6);
    for (const ExplanationPair& pair : all.pairs) {
        CHECK(pair.user_review < 3);
        CHECK(pair.item_review < 2);
    }
    // Zero-score ties are ordered by (user review, item review).
    CHECK(all.pairs[3].user_review == 0);
    CHECK(all.pairs[3].item_review == 0);
    CHECK(all.pairs[4].user_review == 1);
    CHECK(all.pairs[4].item_review == 0);
    CHECK(all.pairs[5].user_review == 2);
    CHECK(all.pairs[5].item_review == 1);
}

TEST_CASE("explanations need at least one review on each side") {
    RaiseParameters params = dot_product_idm_params();
    PaddedReviews some = make_pad({{1, 0, 0, 0}}, 4, 4);
    PaddedReviews none = make_pad({}, 4, 4);
    CHECK_THROWS_AS(explain(params, none, some, 3), DataError);
    CHECK_THROWS_AS(explain(params, some, none, 3), DataError);
}
