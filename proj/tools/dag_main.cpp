// Command-line front end: synth | train | eval | heatmap | gradcheck | bench.
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>

#include "CLI11.hpp"
#include "dag/bag_io.hpp"
#include "dag/grad_check.hpp"
#include "dag/model.hpp"
#include "dag/model_io.hpp"
#include "dag/split.hpp"
#include "dag/synthetic.hpp"
#include "dag/train.hpp"

namespace fs = std::filesystem;

namespace {

struct ModelFlags {
    std::uint32_t k = 8;
    double stride = 256.0;
    std::uint32_t hidden = 0;
    std::string readout = "attention";
    bool no_offset = false;
    bool no_weight = false;
    bool no_coords = false;
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
    cmd->add_option("--k", mf.k, "neighbor/query count K")->check(CLI::PositiveNumber);
    cmd->add_option("--stride", mf.stride, "offset stride S in pixels")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--hidden", mf.hidden, "offset net hidden dim (0 = dim/4, min 8)");
    cmd->add_option("--readout", mf.readout, "readout kind: mean|max|attention")
        ->check(CLI::IsMember({"mean", "max", "attention"}));
    cmd->add_flag("--no-offset", mf.no_offset, "disable the learnable offset module");
    cmd->add_flag("--no-weight", mf.no_weight, "disable the edge weight module");
    cmd->add_flag("--no-coords", mf.no_coords, "replace real coordinates with raster ranks");
}

dag::DagConfig to_config(const ModelFlags& mf, std::uint32_t dim, std::uint32_t classes) {
    dag::DagConfig cfg;
    cfg.dim = dim;
    cfg.offset_hidden = mf.hidden;
    cfg.neighbors = mf.k;
    cfg.stride = mf.stride;
    cfg.readout = dag::parse_readout(mf.readout);
    cfg.offset_on = !mf.no_offset;
    cfg.weight_on = !mf.no_weight;
    cfg.coords_on = !mf.no_coords;
    cfg.classes = classes;
    cfg.validate();
    return cfg;
}

dag::train::Dataset load_dataset(const std::string& manifest) {
    auto bags = dag::io::load_bags(manifest);
    if (bags.empty()) throw dag::InputError("manifest lists no bags: " + manifest);
    return dag::train::Dataset(std::move(bags));
}

std::uint32_t dataset_dim(const dag::train::Dataset& data) {
    const std::uint32_t dim = data.bags().front().d;
    for (const auto& b : data.bags())
        if (b.d != dim)
            throw dag::InputError("bag " + b.id + " has dim " + std::to_string(b.d) +
                                  " but the dataset started with " + std::to_string(dim));
    return dim;
}

std::uint32_t dataset_classes(const dag::train::Dataset& data) {
    std::uint32_t top = 0;
    for (const auto& b : data.bags()) top = std::max(top, b.label);
    return std::max(top + 1, 2u);
}

dag::Bag random_check_bag(std::uint32_t n, std::uint32_t d, std::uint32_t classes,
                          std::mt19937& rng, std::size_t ordinal) {
    std::normal_distribution<float> fdist(0.f, 1.f);
    std::uniform_real_distribution<float> cdist(0.f, 1000.f);
    dag::Bag bag;
    bag.id = "check" + std::to_string(ordinal);
    bag.label = std::uint32_t(rng() % classes);
    bag.n = n;
    bag.d = d;
    bag.features.resize(std::size_t(n) * d);
    bag.coords.resize(std::size_t(n) * 2);
    for (auto& f : bag.features) f = fdist(rng);
    for (auto& c : bag.coords) c = cdist(rng);
    return bag;
}

std::string format_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
    return buf;
}

void make_output_dir(const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(fs::path(out_dir), ec);
    if (ec) throw dag::IoError("cannot create output directory " + out_dir + ": " + ec.message());
}

// ---- synth ----

int cmd_synth(const dag::io::SyntheticConfig& scfg, const std::string& out_dir) {
    auto bags = dag::io::gen_synthetic(scfg);
    make_output_dir(out_dir);
    const fs::path dir(out_dir);

    std::vector<dag::ManifestEntry> entries;
    std::vector<std::size_t> per_class(scfg.classes, 0);
    for (const auto& sb : bags) {
        const std::string filename = sb.bag.id + ".dagbag";
        dag::io::write_bag(sb.bag, dir / filename);
        entries.push_back({sb.bag.id, filename, sb.bag.label});
        per_class[sb.bag.label] += 1;
    }
    dag::io::write_manifest(entries, dir / "manifest.json");

    std::printf("wrote %zu bags to %s\n", bags.size(), out_dir.c_str());
    for (std::uint32_t c = 0; c < scfg.classes; ++c)
        std::printf("  class %u: %zu bags\n", c, per_class[c]);
    return 0;
}

// ---- train ----

int cmd_train(const std::string& data_path, const std::string& out_dir, const ModelFlags& mf,
              dag::train::TrainConfig tc) {
    tc.validate();
    auto data = load_dataset(data_path);
    const auto cfg = to_config(mf, dataset_dim(data), dataset_classes(data));
    make_output_dir(out_dir);
    const fs::path dir(out_dir);

    auto runs = dag::train::run_repeated(data, cfg, tc);
    dag::train::write_report(runs.report, dir / "report.json");
    for (std::size_t r = 0; r < runs.models.size(); ++r)
        dag::io::save_model(runs.models[r], cfg,
                            dir / ("model_seed" + std::to_string(tc.seeds[r]) + ".dagmodel"));

    const auto& rep = runs.report;
    std::printf("DAG  ACC %s_{%s}  AUC %s_{%s}  F1 %s_{%s}  (%zu runs, population std)\n",
                format_pct(rep.mean.acc).c_str(), format_pct(rep.stdev.acc).c_str(),
                format_pct(rep.mean.auc).c_str(), format_pct(rep.stdev.auc).c_str(),
                format_pct(rep.mean.f1).c_str(), format_pct(rep.stdev.f1).c_str(),
                rep.runs.size());
    return 0;
}

// ---- eval ----

int cmd_eval(const std::string& data_path, const std::string& model_path,
             const std::string& out_path) {
    auto lm = dag::io::load_model(model_path);
    auto data = load_dataset(data_path);
    if (dataset_dim(data) != lm.cfg.dim)
        throw dag::InputError("dataset dim does not match the model");
    std::vector<std::string> ids;
    for (const auto& b : data.bags()) ids.push_back(b.id);
    auto m = dag::train::evaluate(data, ids, lm.store, lm.cfg);
    std::printf("ACC %.4f  F1 %.4f  AUC %.4f  (%zu bags)\n", m.acc, m.f1, m.auc, ids.size());
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw dag::IoError("cannot write " + out_path);
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "{\n  \"acc\": %.17g,\n  \"f1\": %.17g,\n  \"auc\": %.17g\n}\n", m.acc,
                      m.f1, m.auc);
        out << buf;
    }
    return 0;
}

// ---- heatmap ----

int cmd_heatmap(const std::string& data_path, const std::string& model_path,
                const std::string& out_dir) {
    auto lm = dag::io::load_model(model_path);
    auto data = load_dataset(data_path);
    if (dataset_dim(data) != lm.cfg.dim)
        throw dag::InputError("dataset dim does not match the model");
    make_output_dir(out_dir);
    const fs::path dir(out_dir);

    for (const auto& bag : data.bags()) {
        auto scores = dag::attention_heatmap(bag, lm.store, lm.cfg);
        std::ofstream out(dir / (bag.id + ".csv"), std::ios::trunc);
        if (!out) throw dag::IoError("cannot write heatmap for " + bag.id);
        out << "x,y,score\n";
        char line[96];
        for (std::uint32_t i = 0; i < bag.n; ++i) {
            std::snprintf(line, sizeof(line), "%.9g,%.9g,%.6f\n", double(bag.coords[2 * i]),
                          double(bag.coords[2 * i + 1]), scores[i]);
            out << line;
        }
    }
    std::printf("wrote %zu heatmaps to %s\n", data.bags().size(), out_dir.c_str());
    return 0;
}

// ---- gradcheck ----

int cmd_gradcheck(std::uint32_t n_bags, std::uint32_t patches, std::uint32_t dim,
                  const ModelFlags& mf, std::uint32_t classes, std::uint64_t seed, double eps,
                  double tol) {
    const auto cfg = to_config(mf, dim, classes);
    auto store = dag::make_params<double>(cfg, seed);
    std::mt19937 rng(std::uint32_t(seed) + 7777u);

    double worst = 0.0;
    std::map<std::string, double> per_param;
    for (std::uint32_t b = 0; b < n_bags; ++b) {
        const dag::Bag bag = random_check_bag(patches, dim, classes, rng, b);
        auto loss_fn = [&](dag::nn::ParamStore<double>& s) {
            auto fp = dag::forward_bag(bag, s, cfg);
            auto loss = fp.tape.cross_entropy(fp.logits, bag.label);
            fp.tape.backward(loss);
            dag::pull_gradients(fp.model, s);
            return double(fp.tape.value(loss).data[0]);
        };
        auto report = dag::nn::grad_check(loss_fn, store, eps, tol);
        for (const auto& e : report.entries) {
            auto [it, inserted] = per_param.emplace(e.name, e.max_rel_err);
            if (!inserted) it->second = std::max(it->second, e.max_rel_err);
        }
        worst = std::max(worst, report.max_rel_err);
    }
    for (const auto& [name, err] : per_param)
        std::printf("%-16s max rel err %.3e  %s\n", name.c_str(), err,
                    err <= tol ? "ok" : "FAIL");
    std::printf("gradcheck over %u bags (N=%u D=%u K=%u C=%u): max rel err %.3e (tol %.1e)\n",
                n_bags, patches, dim, mf.k, classes, worst, tol);
    if (worst > tol) {
        std::fprintf(stderr, "gradcheck failed\n");
        return 3;
    }
    return 0;
}

// ---- bench ----

int cmd_bench(std::size_t n_points, std::size_t n_queries, std::uint64_t seed,
              const std::string& out_path) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1e5);
    std::vector<dag::spatial::Point2> pts(n_points), queries(n_queries);
    for (auto& p : pts) p = {u(rng), u(rng)};
    for (auto& q : queries) q = {u(rng), u(rng)};

    using clock = std::chrono::steady_clock;
    auto ms = [](clock::duration d) {
        return std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(d).count();
    };

    const auto t0 = clock::now();
    dag::spatial::PointIndex index(pts);
    const auto t1 = clock::now();
    std::uint64_t kd_sum = 0;
    for (const auto& q : queries) kd_sum += index.nearest(q);
    const auto t2 = clock::now();
    std::uint64_t brute_sum = 0;
    for (const auto& q : queries) brute_sum += dag::spatial::nearest_bruteforce(pts, q);
    const auto t3 = clock::now();

    if (kd_sum != brute_sum) throw dag::NumericError("bench: kd-tree disagrees with brute force");

    const double build_ms = ms(t1 - t0);
    const double kd_ms = ms(t2 - t1);
    const double brute_ms = ms(t3 - t2);
    const double speedup = brute_ms / kd_ms;

    char table[256];
    std::snprintf(table, sizeof(table),
                  "points\tqueries\tbuild_ms\tkdtree_ms\tbrute_ms\tspeedup\n"
                  "%zu\t%zu\t%.3f\t%.3f\t%.3f\t%.2f\n",
                  n_points, n_queries, build_ms, kd_ms, brute_ms, speedup);
    std::fputs(table, stdout);
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw dag::IoError("cannot write " + out_path);
        out << table;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deformable attention graph pipeline for bag-of-patches classification"};
    app.require_subcommand(1);

    // synth
    dag::io::SyntheticConfig scfg;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "generate a synthetic bag dataset");
    synth->set_config("--config");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--bags", scfg.n_bags, "number of bags");
    synth->add_option("--classes", scfg.classes, "class count (labels = planted clusters)");
    synth->add_option("--patches", scfg.patches, "patches per bag");
    synth->add_option("--dim", scfg.dim, "feature dimension");
    synth->add_option("--pitch", scfg.grid_pitch, "grid pitch in pixels");
    synth->add_option("--radius", scfg.cluster_radius, "lesion cluster radius in pixels");
    synth->add_option("--noise", scfg.noise_sigma, "feature noise sigma");
    synth->add_option("--seed", scfg.seed, "generator seed");

    // train
    std::string train_data, train_out;
    ModelFlags train_mf;
    dag::train::TrainConfig tc;
    auto* train = app.add_subcommand("train", "repeated stratified training + evaluation");
    train->set_config("--config");
    train->add_option("--data", train_data, "manifest JSON path")->required();
    train->add_option("--out", train_out, "output directory")->required();
    add_model_flags(train, train_mf);
    train->add_option("--epochs", tc.epochs, "epoch cap");
    train->add_option("--lr", tc.lr, "Adam learning rate");
    train->add_option("--wd", tc.weight_decay, "weight decay coefficient");
    train->add_option("--patience", tc.patience, "early stopping patience");
    train->add_option("--seeds", tc.seeds, "run seeds (split + init + shuffle)")
        ->delimiter(',');
    train->add_option("--jobs", tc.jobs, "parallel seed-level workers");

    // eval
    std::string eval_data, eval_model, eval_out;
    auto* eval = app.add_subcommand("eval", "metrics of a saved model over a manifest");
    eval->set_config("--config");
    eval->add_option("--data", eval_data, "manifest JSON path")->required();
    eval->add_option("--model", eval_model, "model file")->required();
    eval->add_option("--out", eval_out, "optional metrics JSON path");

    // heatmap
    std::string hm_data, hm_model, hm_out;
    auto* heatmap = app.add_subcommand("heatmap", "per-bag attention heatmap CSVs");
    heatmap->set_config("--config");
    heatmap->add_option("--data", hm_data, "manifest JSON path")->required();
    heatmap->add_option("--model", hm_model, "model file")->required();
    heatmap->add_option("--out", hm_out, "output directory")->required();

    // gradcheck
    ModelFlags gc_mf;
    gc_mf.k = 4;
    gc_mf.stride = 64.0;
    std::uint32_t gc_bags = 10, gc_patches = 16, gc_dim = 8, gc_classes = 3;
    std::uint64_t gc_seed = 0;
    double gc_eps = 1e-5, gc_tol = 1e-4;
    auto* gradcheck = app.add_subcommand(
        "gradcheck", "finite-difference check of the full model (double precision)");
    gradcheck->set_config("--config");
    add_model_flags(gradcheck, gc_mf);
    gradcheck->add_option("--bags", gc_bags, "random bags to check");
    gradcheck->add_option("--patches", gc_patches, "patches per bag");
    gradcheck->add_option("--dim", gc_dim, "feature dimension");
    gradcheck->add_option("--classes", gc_classes, "class count");
    gradcheck->add_option("--seed", gc_seed, "random seed");
    gradcheck->add_option("--eps", gc_eps, "finite difference step");
    gradcheck->add_option("--tol", gc_tol, "max relative error tolerance");

    // bench
    std::size_t bench_n = 10000, bench_q = 10000;
    std::uint64_t bench_seed = 0;
    std::string bench_out;
    auto* bench = app.add_subcommand("bench", "kd-tree vs brute-force nearest neighbor timing");
    bench->set_config("--config");
    bench->add_option("--n", bench_n, "point count");
    bench->add_option("--queries", bench_q, "query count");
    bench->add_option("--seed", bench_seed, "random seed");
    bench->add_option("--out", bench_out, "optional TSV output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // help/version exit clean, bad flags are validation errors
    }

    try {
        if (synth->parsed()) return cmd_synth(scfg, synth_out);
        if (train->parsed()) return cmd_train(train_data, train_out, train_mf, tc);
        if (eval->parsed()) return cmd_eval(eval_data, eval_model, eval_out);
        if (heatmap->parsed()) return cmd_heatmap(hm_data, hm_model, hm_out);
        if (gradcheck->parsed())
            return cmd_gradcheck(gc_bags, gc_patches, gc_dim, gc_mf, gc_classes, gc_seed, gc_eps,
                                 gc_tol);
        if (bench->parsed()) return cmd_bench(bench_n, bench_q, bench_seed, bench_out);
    } catch (const dag::InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const dag::IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const dag::NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 1;
}
