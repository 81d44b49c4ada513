#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "raise/checkpoint.hpp"
#include "raise/cli.hpp"
#include "raise/data.hpp"
#include "raise/dte.hpp"
#include "raise/errors.hpp"
#include "raise/gmf.hpp"
#include "raise/metrics.hpp"
#include "raise/model.hpp"
#include "raise/numerics.hpp"

namespace ranking {

namespace {

std::string g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string g6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

bool file_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::exists(path, ec);
}

// Dependency gate: artifacts are only ever produced by one command, so a
// missing file points straight at the command that writes it.
void require_artifact(const std::string& path, const std::string& what,
                      const std::string& producer) {
    if (!file_exists(path))
        throw DataError("missing " + what + " " + path + "; run `raise " + producer +
                        "` first");
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out << content;
    if (!out) throw DataError("failed writing " + path);
}

// run.log is the one artifact allowed to differ between reruns: every
// timestamp the pipeline emits is confined here.
void log_line(const RunConfig& cfg, const std::string& message) {
    std::ofstream log(cfg.artifact("run.log"), std::ios::app);
    if (!log) return;
    const std::time_t now =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    log << "[" << stamp << "] " << message << "\n";
}

ImplicitDataset load_dataset(const RunConfig& cfg) {
    const std::string path = cfg.resolve(cfg.interactions);
    require_artifact(path, "interactions file", "gen-synth");
    return binarize(load_interactions(path));
}

ImplicitDataset load_split_dataset(const RunConfig& cfg) {
    ImplicitDataset ds = load_dataset(cfg);
    split_users(ds, 0.8, 0.1, 0.1, cfg.model.seed);
    return ds;
}

GmfModel load_base_checkpoint(const RunConfig& cfg, const ImplicitDataset& ds) {
    const std::string path = cfg.artifact("gmf.ckpt");
    require_artifact(path, "base-ranker checkpoint", "train-base");
    GmfModel gmf = load_gmf_checkpoint(path);
    if (gmf.user_count() != ds.registry.users.size() ||
        gmf.item_count() != ds.registry.items.size())
        throw DataError("checkpoint " + path + " covers " +
                        std::to_string(gmf.user_count()) + " users / " +
                        std::to_string(gmf.item_count()) + " items but " +
                        cfg.resolve(cfg.interactions) + " has " +
                        std::to_string(ds.registry.users.size()) + " / " +
                        std::to_string(ds.registry.items.size()) +
                        "; re-run `raise train-base`");
    if (gmf.dim != cfg.model.d)
        throw ConfigError("checkpoint " + path + " has d=" + std::to_string(gmf.dim) +
                          " but the configuration asks for d=" +
                          std::to_string(cfg.model.d));
    return gmf;
}

ReviewStore load_embeddings(const RunConfig& cfg) {
    const std::string path = cfg.artifact("reviews.rve1");
    require_artifact(path, "review embeddings", "embed-reviews");
    ReviewStore store = load_review_embeddings(path);
    if (store.dim != cfg.model.d)
        throw ConfigError("review embeddings " + path + " have dim=" +
                          std::to_string(store.dim) +
                          " but the configuration asks for d=" +
                          std::to_string(cfg.model.d) +
                          "; re-run `raise embed-reviews`");
    return store;
}

std::vector<RankedList> load_lists(const RunConfig& cfg, const std::string& name,
                                   const EntityRegistry& registry) {
    const std::string path = cfg.artifact(name);
    require_artifact(path, "ranked lists", "make-lists");
    return load_ranked_lists(path, registry);
}

std::vector<uint32_t> users_in_split(const ImplicitDataset& ds, Split which) {
    std::vector<uint32_t> out;
    for (uint32_t u = 0; u < ds.split.size(); ++u)
        if (ds.split[u] == which) out.push_back(u);
    return out;
}

// Evaluates one re-ranking method over the test users: every test user must
// have a stored list, and scores come from a freshly built example pool so
// the configured ablation's review-blanking applies.
MetricTable evaluate_reranker(const std::string& method, const RaiseParameters& params,
                              const ImplicitDataset& ds,
                              const std::vector<RankedList>& test_lists,
                              const ReviewStore& reviews,
                              const std::vector<uint32_t>& test_users,
                              const RunConfig& cfg) {
    ExamplePool pool = build_examples(ds, test_lists, reviews, params.config);
    std::unordered_map<uint32_t, const ListBatchExample*> by_user;
    for (const ListBatchExample& ex : pool.examples) by_user[ex.user] = &ex;
    for (uint32_t u : test_users)
        if (!by_user.count(u))
            throw DataError("no test list for user " + ds.registry.users[u] +
                            "; run `raise make-lists` first");
    ListSource source = [&](uint32_t u) { return rerank(params, *by_user.at(u)); };
    return evaluate_lists(method, source, test_users, ds, {5, 10, 20},
                          cfg.ap_denominator);
}

MetricTable evaluate_initial(const ImplicitDataset& ds,
                             const std::vector<RankedList>& test_lists,
                             const std::vector<uint32_t>& test_users,
                             const RunConfig& cfg) {
    std::unordered_map<uint32_t, const RankedList*> by_user;
    for (const RankedList& list : test_lists) by_user[list.user] = &list;
    for (uint32_t u : test_users)
        if (!by_user.count(u))
            throw DataError("no test list for user " + ds.registry.users[u] +
                            "; run `raise make-lists` first");
    ListSource source = [&](uint32_t u) { return *by_user.at(u); };
    return evaluate_lists("gmf_initial", source, test_users, ds, {5, 10, 20},
                          cfg.ap_denominator);
}

// ---- commands ----

int cmd_gen_synth(const RunConfig& cfg) {
    SynthSpec spec;
    spec.users = cfg.users;
    spec.items = cfg.items;
    spec.intents = cfg.intents;
    spec.reviews_per_entity = cfg.reviews_per_entity;
    spec.dim = cfg.model.d;
    spec.seed = cfg.model.seed;
    spec.target_positives_per_user = cfg.target_positives;
    const std::string interactions = cfg.resolve(cfg.interactions);
    const std::string reviews = cfg.resolve(cfg.reviews);
    gen_synthetic(spec, interactions, reviews);
    std::cout << "wrote " << interactions << " and " << reviews << " ("
              << cfg.users << " users, " << cfg.items << " items, " << cfg.intents
              << " intents)\n";
    log_line(cfg, "gen-synth: " + interactions + ", " + reviews);
    return 0;
}

int cmd_embed_reviews(const RunConfig& cfg) {
    const std::string reviews_path = cfg.resolve(cfg.reviews);
    require_artifact(reviews_path, "review file", "gen-synth");
    const std::vector<ReviewRecord> records = load_review_records(reviews_path);
    const ReviewStore store = hash_embed_reviews(records, cfg.model.d, cfg.model.seed,
                                                 cfg.model.l_u, cfg.model.l_i);
    const std::string out = cfg.artifact("reviews.rve1");
    save_review_embeddings(store, out);
    std::cout << "embedded " << records.size() << " reviews into " << out << " (dim "
              << store.dim << ", " << store.user_reviews.size() << " users, "
              << store.item_reviews.size() << " items)\n";
    log_line(cfg, "embed-reviews: " + out);
    return 0;
}

int cmd_train_base(const RunConfig& cfg) {
    const ImplicitDataset ds = load_dataset(cfg);
    GmfTrainStats stats;
    const GmfModel gmf = train_gmf(ds, cfg.model.d, cfg.gmf_epochs, cfg.gmf_lr,
                                   cfg.neg_per_pos, cfg.model.seed, &stats);
    for (size_t e = 0; e < stats.epoch_loss.size(); ++e)
        std::cout << "gmf epoch " << (e + 1) << "/" << stats.epoch_loss.size()
                  << " bce=" << g6(stats.epoch_loss[e]) << "\n";
    const std::string out = cfg.artifact("gmf.ckpt");
    save_gmf_checkpoint(gmf, out);
    std::cout << "wrote " << out << "\n";
    log_line(cfg, "train-base: " + out);
    return 0;
}

int cmd_make_lists(const RunConfig& cfg) {
    ImplicitDataset ds = load_split_dataset(cfg);
    const GmfModel gmf = load_base_checkpoint(cfg, ds);
    std::vector<RankedList> by_split[3];
    for (uint32_t u = 0; u < ds.registry.users.size(); ++u)
        by_split[static_cast<size_t>(ds.split[u])].push_back(
            initial_list(gmf, u, cfg.model.n));
    const char* names[3] = {"lists_train.tsv", "lists_val.tsv", "lists_test.tsv"};
    for (size_t s = 0; s < 3; ++s) {
        const std::string path = cfg.artifact(names[s]);
        save_ranked_lists(by_split[s], ds.registry, path);
        std::cout << "wrote " << path << " (" << by_split[s].size() << " users)\n";
    }
    log_line(cfg, "make-lists: n=" + std::to_string(cfg.model.n));
    return 0;
}

int cmd_train_rerank(const RunConfig& cfg) {
    ImplicitDataset ds = load_split_dataset(cfg);
    GmfModel gmf = load_base_checkpoint(cfg, ds);
    std::vector<RankedList> lists = load_lists(cfg, "lists_train.tsv", ds.registry);
    const std::vector<RankedList> val = load_lists(cfg, "lists_val.tsv", ds.registry);
    lists.insert(lists.end(), val.begin(), val.end());
    const ReviewStore reviews = load_embeddings(cfg);
    RaiseTrainStats stats;
    const RaiseParameters params =
        train_reranker(ds, std::move(gmf), lists, reviews, cfg.model, &stats);
    std::cout << "epoch 0 nll=" << g6(stats.epoch0_nll) << "\n";
    for (size_t e = 0; e < stats.epochs.size(); ++e)
        std::cout << "epoch " << (e + 1) << "/" << stats.epochs.size()
                  << " nll=" << g6(stats.epochs[e].train_nll)
                  << " val_map5=" << g6(stats.epochs[e].val_map5)
                  << " clamped=" << stats.epochs[e].clamped << "\n";
    std::cout << "best epoch " << stats.best_epoch << " (val MAP@5 "
              << g6(stats.best_val_map5) << ")\n";
    const std::string out = cfg.artifact("raise.ckpt");
    save_raise_checkpoint(params, out);
    std::cout << "wrote " << out << "\n";
    log_line(cfg, "train-rerank: " + out);
    return 0;
}

int cmd_evaluate(const RunConfig& cfg) {
    const std::string ckpt = cfg.artifact("raise.ckpt");
    require_artifact(ckpt, "re-ranker checkpoint", "train-rerank");
    ImplicitDataset ds = load_split_dataset(cfg);
    const std::vector<RankedList> test_lists =
        load_lists(cfg, "lists_test.tsv", ds.registry);
    const ReviewStore reviews = load_embeddings(cfg);
    const RaiseParameters params = load_raise_checkpoint(ckpt, cfg.model);
    const std::vector<uint32_t> test_users = users_in_split(ds, Split::test);

    MetricTable table = evaluate_initial(ds, test_lists, test_users, cfg);
    const MetricTable reranked =
        evaluate_reranker("raise", params, ds, test_lists, reviews, test_users, cfg);
    table.rows.insert(table.rows.end(), reranked.rows.begin(), reranked.rows.end());

    const std::string tsv = metric_table_tsv(table);
    write_text(cfg.artifact("metrics.tsv"), tsv);
    std::cout << tsv;
    std::cout << "wrote " << cfg.artifact("metrics.tsv") << " ("
              << test_users.size() << " test users)\n";
    log_line(cfg, "evaluate: metrics.tsv");
    return 0;
}

int cmd_ablate(const RunConfig& cfg) {
    ImplicitDataset ds = load_split_dataset(cfg);
    const GmfModel gmf = load_base_checkpoint(cfg, ds);
    std::vector<RankedList> lists = load_lists(cfg, "lists_train.tsv", ds.registry);
    const std::vector<RankedList> val = load_lists(cfg, "lists_val.tsv", ds.registry);
    lists.insert(lists.end(), val.begin(), val.end());
    const std::vector<RankedList> test_lists =
        load_lists(cfg, "lists_test.tsv", ds.registry);
    const ReviewStore reviews = load_embeddings(cfg);
    const std::vector<uint32_t> test_users = users_in_split(ds, Split::test);

    MetricTable table = evaluate_initial(ds, test_lists, test_users, cfg);
    for (const char* variant : {"full", "no_idm", "no_dte", "no_both"}) {
        RaiseConfig vcfg = cfg.model;
        vcfg.ablation = parse_ablation(variant);
        std::cout << "training variant " << variant << "...\n";
        const RaiseParameters params = train_reranker(ds, gmf, lists, reviews, vcfg);
        const MetricTable rows = evaluate_reranker(variant, params, ds, test_lists,
                                                   reviews, test_users, cfg);
        table.rows.insert(table.rows.end(), rows.rows.begin(), rows.rows.end());
    }

    const std::string tsv = metric_table_tsv(table);
    write_text(cfg.artifact("metrics.tsv"), tsv);
    std::cout << tsv;
    std::cout << "wrote " << cfg.artifact("metrics.tsv") << "\n";
    log_line(cfg, "ablate: metrics.tsv");
    return 0;
}

double bench_micros(const std::function<void()>& fn, size_t reps) {
    fn();  // warm up caches and allocators before timing
    const auto t0 = std::chrono::steady_clock::now();
    for (size_t r = 0; r < reps; ++r) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::micro>(t1 - t0).count() /
           static_cast<double>(reps);
}

int cmd_profile(const RunConfig& cfg) {
    const size_t n = cfg.model.n, d = cfg.model.d, t = cfg.model.t, h = cfg.heads;
    const CostBreakdown report = cost_report(n, d, t, h, cfg.model.b);
    const std::string tsv = cost_report_tsv(report);
    write_text(cfg.artifact("cost.tsv"), tsv);
    std::cout << tsv;
    std::cout << "wrote " << cfg.artifact("cost.tsv") << "\n";

    // Wall-clock comparison of the three mechanisms on the configured shape.
    // Timings go to stdout and the log only, never into cost.tsv, so the
    // artifact stays byte-identical across reruns.
    const DenseMatrix s = glorot_init(n, d, 0xBE7C);
    const DenseMatrix wq = glorot_init(d, d, 0xBE7C + 1);
    const DenseMatrix wk = glorot_init(d, d, 0xBE7C + 2);
    const DenseMatrix wv = glorot_init(d, d, 0xBE7C + 3);
    const StaticAttentionParams mha = StaticAttentionParams::init(d, h, 0xBE7C + 4);
    const ExpertBank bank = ExpertBank::init(t, d, 0xBE7C + 5);
    DenseMatrix a(1, t);
    for (size_t j = 0; j < t; ++j) a(0, j) = 1.0 / static_cast<double>(t);

    const size_t reps = 50;
    const double us_static = bench_micros([&] { self_attention(s, wq, wk, wv); }, reps);
    const double us_multi = bench_micros([&] { multi_head(s, mha); }, reps);
    const double us_dynamic =
        bench_micros([&] { dynamic_self_attention(s, a, bank); }, reps);
    std::ostringstream bench;
    bench << "mechanism\tmicroseconds_per_call\n"
          << "static\t" << g6(us_static) << "\n"
          << "multihead\t" << g6(us_multi) << "\n"
          << "dynamic\t" << g6(us_dynamic) << "\n";
    std::cout << bench.str();
    log_line(cfg, "profile: n=" + std::to_string(n) + " d=" + std::to_string(d) +
                      " t=" + std::to_string(t) + " h=" + std::to_string(h) +
                      " static=" + g6(us_static) + "us multihead=" + g6(us_multi) +
                      "us dynamic=" + g6(us_dynamic) + "us");
    return 0;
}

int cmd_explain(const RunConfig& cfg) {
    if (cfg.user.empty() || cfg.item.empty())
        throw ConfigError("explain needs --user and --item");
    const std::string ckpt = cfg.artifact("raise.ckpt");
    require_artifact(ckpt, "re-ranker checkpoint", "train-rerank");
    const ReviewStore reviews = load_embeddings(cfg);
    const uint64_t user_id = parse_entity_id(cfg.user);
    const uint64_t item_id = parse_entity_id(cfg.item);
    const PaddedReviews user_pad =
        pad_review_sequence(reviews, EntityKind::user, user_id, cfg.model.l_u);
    const PaddedReviews item_pad =
        pad_review_sequence(reviews, EntityKind::item, item_id, cfg.model.l_i);
    const RaiseParameters params = load_raise_checkpoint(ckpt, cfg.model);
    const Explanation result = explain(params, user_pad, item_pad, cfg.top_m);

    std::ostringstream out;
    out << "user\titem\tk\tj\tscore\n";
    for (const ExplanationPair& pair : result.pairs)
        out << cfg.user << "\t" << cfg.item << "\t" << pair.user_review << "\t"
            << pair.item_review << "\t" << g17(pair.score) << "\n";
    const std::string tsv = out.str();
    write_text(cfg.artifact("explain.tsv"), tsv);
    std::cout << tsv;
    std::cout << "wrote " << cfg.artifact("explain.tsv") << " (" << result.pairs.size()
              << " pairs)\n";
    log_line(cfg, "explain: user=" + cfg.user + " item=" + cfg.item);
    return 0;
}

}  // namespace

std::string cli_usage() {
    return
        "usage: raise <command> [--config FILE] [--key value]...\n"
        "\n"
        "commands:\n"
        "  gen-synth      write a synthetic interaction/review corpus\n"
        "  embed-reviews  hash-embed review texts -> reviews.rve1\n"
        "  train-base     train the factorization base ranker -> gmf.ckpt\n"
        "  make-lists     split users, write per-split initial top-n lists\n"
        "  train-rerank   train the intention-aware re-ranker -> raise.ckpt\n"
        "  evaluate       score initial vs re-ranked test lists -> metrics.tsv\n"
        "  ablate         train and score {full,no_idm,no_dte,no_both} -> metrics.tsv\n"
        "  profile        write the attention cost table -> cost.tsv, time mechanisms\n"
        "  explain        rank review pairs for --user/--item -> explain.tsv\n"
        "\n"
        "configuration (flags use --key value; config files use key=value lines):\n"
        "  model:       d n t b l l_u l_i lr batch_size dropout epochs seed\n"
        "               co_attention aggregation ablation encoder_depth\n"
        "               shared_experts finetune_base\n"
        "  data:        workdir interactions reviews users items intents\n"
        "               reviews_per_entity target_positives\n"
        "  base ranker: gmf_epochs gmf_lr neg_per_pos\n"
        "  evaluation:  ap_denominator heads\n"
        "  explain:     user item top_m\n"
        "\n"
        "environment: RAISE_SEED overrides the configured seed\n";
}

int run_command(const std::string& command, const RunConfig& cfg) {
    if (!cfg.workdir.empty() && cfg.workdir != ".") {
        std::error_code ec;
        std::filesystem::create_directories(cfg.workdir, ec);
        if (ec)
            throw DataError("cannot create workdir " + cfg.workdir + ": " +
                            ec.message());
    }
    if (command == "gen-synth") return cmd_gen_synth(cfg);
    if (command == "embed-reviews") return cmd_embed_reviews(cfg);
    if (command == "train-base") return cmd_train_base(cfg);
    if (command == "make-lists") return cmd_make_lists(cfg);
    if (command == "train-rerank") return cmd_train_rerank(cfg);
    if (command == "evaluate") return cmd_evaluate(cfg);
    if (command == "ablate") return cmd_ablate(cfg);
    if (command == "profile") return cmd_profile(cfg);
    if (command == "explain") return cmd_explain(cfg);
    throw ConfigError("unknown command '" + command +
                      "'; expected one of gen-synth, embed-reviews, train-base, "
                      "make-lists, train-rerank, evaluate, ablate, profile, explain");
}

int run_cli(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << cli_usage();
        return 1;
    }
    const std::string command = argv[1];
    if (command == "--help" || command == "-h" || command == "help") {
        std::cout << cli_usage();
        return 0;
    }
    try {
        const RunConfig cfg = parse_config(std::vector<std::string>(argv + 2, argv + argc));
        return run_command(command, cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace ranking
