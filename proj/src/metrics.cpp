#include "raise/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "raise/errors.hpp"

namespace ranking {

namespace {

size_t cutoff_for(const std::vector<uint32_t>& ranked, size_t k) {
    return std::min(k, ranked.size());
}

}  // namespace

double precision_at_k(const std::vector<uint32_t>& ranked, const ItemSet& relevant,
                      size_t k) {
    if (k == 0) throw ConfigError("precision_at_k: k must be at least 1");
    const size_t cutoff = cutoff_for(ranked, k);
    if (cutoff == 0) return 0.0;
    size_t hits = 0;
    for (size_t j = 0; j < cutoff; ++j) hits += relevant.count(ranked[j]);
    return static_cast<double>(hits) / static_cast<double>(cutoff);
}

double ap_at_k(const std::vector<uint32_t>& ranked, const ItemSet& relevant, size_t k,
               ApDenominator denom) {
    if (k == 0) throw ConfigError("ap_at_k: k must be at least 1");
    const size_t cutoff = cutoff_for(ranked, k);
    size_t hits = 0;
    double sum = 0.0;
    for (size_t j = 0; j < cutoff; ++j) {
        if (relevant.count(ranked[j])) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(j + 1);
        }
    }
    const size_t denominator = denom == ApDenominator::MinKRelevant
                                   ? std::min(k, relevant.size())
                                   : hits;
    if (denominator == 0) return 0.0;
    return sum / static_cast<double>(denominator);
}

double ndcg_at_k(const std::vector<uint32_t>& ranked, const ItemSet& relevant, size_t k) {
    if (k == 0) throw ConfigError("ndcg_at_k: k must be at least 1");
    if (relevant.empty()) return 0.0;
    const size_t cutoff = cutoff_for(ranked, k);
    double dcg = 0.0;
    for (size_t j = 0; j < cutoff; ++j)
        if (relevant.count(ranked[j]))
            dcg += 1.0 / std::log2(static_cast<double>(j + 2));
    const size_t ideal_hits = std::min(k, relevant.size());
    double idcg = 0.0;
    for (size_t j = 0; j < ideal_hits; ++j)
        idcg += 1.0 / std::log2(static_cast<double>(j + 2));
    if (idcg == 0.0) return 0.0;
    return dcg / idcg;
}

MetricTable evaluate_lists(const std::string& method, const ListSource& source,
                           const std::vector<uint32_t>& users, const ImplicitDataset& ds,
                           const std::vector<size_t>& ks, ApDenominator denom) {
    struct Accum {
        double precision = 0.0, map = 0.0, ndcg = 0.0;
        size_t map_users = 0;
    };
    std::vector<Accum> acc(ks.size());

    for (uint32_t user : users) {
        if (user >= ds.positives.size())
            throw DataError("evaluate: unknown user index " + std::to_string(user));
        RankedList list = source(user);
        ItemSet relevant(ds.positives[user].begin(), ds.positives[user].end());
        for (size_t i = 0; i < ks.size(); ++i) {
            acc[i].precision += precision_at_k(list.items, relevant, ks[i]);
            acc[i].ndcg += ndcg_at_k(list.items, relevant, ks[i]);
            if (!relevant.empty()) {
                acc[i].map += ap_at_k(list.items, relevant, ks[i], denom);
                ++acc[i].map_users;
            }
        }
    }

    MetricTable table;
    const double user_count = static_cast<double>(users.size());
    for (size_t i = 0; i < ks.size(); ++i) {
        MetricRow row;
        row.method = method;
        row.k = ks[i];
        if (!users.empty()) {
            row.precision = acc[i].precision / user_count;
            row.ndcg = acc[i].ndcg / user_count;
        }
        if (acc[i].map_users > 0)
            row.map = acc[i].map / static_cast<double>(acc[i].map_users);
        table.rows.push_back(row);
    }
    return table;
}

std::string metric_table_tsv(const MetricTable& table) {
    std::string out = "method\tk\tprecision\tmap\tndcg\n";
    char line[256];
    for (const MetricRow& row : table.rows) {
        std::snprintf(line, sizeof(line), "%s\t%zu\t%.17g\t%.17g\t%.17g\n",
                      row.method.c_str(), row.k, row.precision, row.map, row.ndcg);
        out += line;
    }
    return out;
}

}  // namespace ranking
