#include "raise/gmf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "raise/errors.hpp"
#include "raise/rng.hpp"

namespace ranking {

namespace {

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow; -log sigmoid(z) = softplus(-z).
double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

struct Sample {
    uint32_t user;
    uint32_t item;
    double label;
};

}  // namespace

GmfModel GmfModel::init(size_t users, size_t items, size_t d, uint64_t seed) {
    GmfModel m;
    m.dim = d;
    m.p = Parameter("gmf.p", glorot_init(users, d, Rng::derive(seed, 1)));
    m.q = Parameter("gmf.q", glorot_init(items, d, Rng::derive(seed, 2)));
    m.h = Parameter("gmf.h", glorot_init(1, d, Rng::derive(seed, 3)));
    return m;
}

double gmf_score(const DenseMatrix& p, const DenseMatrix& q, const DenseMatrix& h) {
    if (!p.same_shape(q) || !p.same_shape(h) || p.rows != 1)
        throw DimensionError("gmf_score wants three 1xd vectors, got " + p.shape_str() +
                             ", " + q.shape_str() + ", " + h.shape_str());
    double z = 0.0;
    for (size_t k = 0; k < p.cols; ++k) z += h.at(0, k) * p.at(0, k) * q.at(0, k);
    return sigmoid(z);
}

double GmfModel::score(uint32_t user, uint32_t item) const {
    if (user >= p.value.rows)
        throw DataError("gmf score: user index " + std::to_string(user) + " out of range");
    if (item >= q.value.rows)
        throw DataError("gmf score: item index " + std::to_string(item) + " out of range");
    const double* pu = p.value.row(user);
    const double* qi = q.value.row(item);
    const double* hw = h.value.row(0);
    double z = 0.0;
    for (size_t k = 0; k < dim; ++k) z += hw[k] * pu[k] * qi[k];
    return sigmoid(z);
}

GmfModel train_gmf(const ImplicitDataset& ds, size_t d, size_t epochs, double lr,
                   size_t neg_per_pos, uint64_t seed, GmfTrainStats* stats) {
    const size_t users = ds.registry.user_count();
    const size_t items = ds.registry.item_count();

    size_t total_pos = 0;
    for (const auto& v : ds.positives) total_pos += v.size();
    if (total_pos == 0) throw DataError("train_gmf: dataset has no positives");

    GmfModel model = GmfModel::init(users, items, d, Rng::derive(seed, 11));

    // Fixed sample set: all positives, each followed by its sampled negatives.
    std::vector<Sample> samples;
    samples.reserve(total_pos * (1 + neg_per_pos));
    Rng neg_rng(Rng::derive(seed, 12));
    for (uint32_t u = 0; u < users; ++u) {
        const bool all_positive = ds.positives[u].size() >= items;
        for (uint32_t i : ds.positives[u]) {
            samples.push_back({u, i, 1.0});
            if (all_positive) continue;  // no negatives exist for this user
            for (size_t k = 0; k < neg_per_pos; ++k) {
                uint32_t j;
                do {
                    j = static_cast<uint32_t>(neg_rng.next_below(items));
                } while (ds.is_positive(u, j));
                samples.push_back({u, j, 0.0});
            }
        }
    }

    AdamHyper hyper;
    hyper.lr = lr;
    Rng order_rng(Rng::derive(seed, 13));
    std::vector<size_t> order(samples.size());
    for (size_t k = 0; k < order.size(); ++k) order[k] = k;
    const size_t batch = 256;

    for (size_t epoch = 0; epoch < epochs; ++epoch) {
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        for (size_t start = 0; start < order.size(); start += batch) {
            const size_t stop = std::min(order.size(), start + batch);
            for (size_t k = start; k < stop; ++k) {
                const Sample& s = samples[order[k]];
                const double* pu = model.p.value.row(s.user);
                const double* qi = model.q.value.row(s.item);
                const double* hw = model.h.value.row(0);
                double z = 0.0;
                for (size_t c = 0; c < d; ++c) z += hw[c] * pu[c] * qi[c];
                loss_sum += s.label > 0.5 ? softplus(-z) : softplus(z);
                const double dz = sigmoid(z) - s.label;
                double* gp = model.p.grad.row(s.user);
                double* gq = model.q.grad.row(s.item);
                double* gh = model.h.grad.row(0);
                for (size_t c = 0; c < d; ++c) {
                    gh[c] += dz * pu[c] * qi[c];
                    gp[c] += dz * hw[c] * qi[c];
                    gq[c] += dz * hw[c] * pu[c];
                }
            }
            adam_step(model.p, hyper);
            adam_step(model.q, hyper);
            adam_step(model.h, hyper);
        }
        if (stats != nullptr)
            stats->epoch_loss.push_back(loss_sum / static_cast<double>(samples.size()));
    }
    return model;
}

RankedList initial_list(const GmfModel& model, uint32_t user, size_t n,
                        const std::unordered_set<uint32_t>* exclude) {
    if (user >= model.user_count())
        throw DataError("initial_list: user index " + std::to_string(user) + " out of range");
    const size_t items = model.item_count();
    std::vector<std::pair<double, uint32_t>> scored;
    scored.reserve(items);
    for (uint32_t i = 0; i < items; ++i) {
        if (exclude != nullptr && exclude->count(i) > 0) continue;
        scored.emplace_back(model.score(user, i), i);
    }
    if (n > scored.size())
        throw DataError("initial_list: n=" + std::to_string(n) + " exceeds the " +
                        std::to_string(scored.size()) + " eligible items");
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;  // score descending
        return a.second < b.second;                        // then item id ascending
    });
    RankedList list;
    list.user = user;
    list.items.reserve(n);
    list.scores.reserve(n);
    for (size_t k = 0; k < n; ++k) {
        list.scores.push_back(scored[k].first);
        list.items.push_back(scored[k].second);
    }
    return list;
}

void save_ranked_lists(const std::vector<RankedList>& lists, const EntityRegistry& registry,
                       const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    char buf[64];
    for (const auto& list : lists) {
        for (size_t k = 0; k < list.items.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", list.scores[k]);
            out << registry.users.at(list.user) << '\t' << registry.items.at(list.items[k])
                << '\t' << buf << '\n';
        }
    }
    if (!out) throw DataError("short write to " + path);
}

std::vector<RankedList> load_ranked_lists(const std::string& path,
                                          const EntityRegistry& registry) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<RankedList> lists;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::string where = path + ":" + std::to_string(lineno);
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos)
            throw ParseError(where + ": expected user<TAB>item<TAB>score");
        const uint32_t user = registry.user_index(parse_entity_id(line.substr(0, t1)));
        const uint32_t item = registry.item_index(parse_entity_id(line.substr(t1 + 1, t2 - t1 - 1)));
        const std::string score_tok = line.substr(t2 + 1);
        char* end = nullptr;
        const double score = std::strtod(score_tok.c_str(), &end);
        if (end == score_tok.c_str() || *end != '\0' || !std::isfinite(score))
            throw ParseError(where + ": bad score '" + score_tok + "'");
        if (lists.empty() || lists.back().user != user) {
            lists.push_back(RankedList{user, {}, {}});
        }
        RankedList& cur = lists.back();
        if (!cur.scores.empty() && score > cur.scores.back())
            throw FormatError(where + ": scores within a list must be non-increasing");
        if (std::find(cur.items.begin(), cur.items.end(), item) != cur.items.end())
            throw FormatError(where + ": duplicate item in one list");
        cur.items.push_back(item);
        cur.scores.push_back(score);
    }
    return lists;
}

}  // namespace ranking
