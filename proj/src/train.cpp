#include "dag/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>

#include "dag/metrics.hpp"
#include "json.hpp"

namespace dag::train {

Dataset::Dataset(std::vector<Bag> bags) : bags_(std::move(bags)) {
    for (std::size_t i = 0; i < bags_.size(); ++i) {
        if (!index_.emplace(bags_[i].id, i).second)
            throw InputError("dataset: duplicate bag id " + bags_[i].id);
    }
}

const Bag& Dataset::by_id(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw InputError("dataset: unknown bag id " + id);
    return bags_[it->second];
}

std::vector<std::pair<std::string, std::uint32_t>> Dataset::manifest() const {
    std::vector<std::pair<std::string, std::uint32_t>> out;
    out.reserve(bags_.size());
    for (const auto& b : bags_) out.emplace_back(b.id, b.label);
    return out;
}

namespace {

double validation_accuracy(const Dataset& data, const std::vector<std::string>& ids,
                           const nn::ParamStore<float>& model, const DagConfig& cfg) {
    std::size_t hits = 0;
    for (const auto& id : ids) {
        const Bag& bag = data.by_id(id);
        auto fp = forward_bag(bag, model, cfg);
        if (fp.predicted_class() == bag.label) ++hits;
    }
    return double(hits) / double(ids.size());
}

}  // namespace

TrainOutcome train(const Dataset& data, const io::DatasetSplit& split,
                   nn::ParamStore<float> model, const DagConfig& cfg, const TrainConfig& tc,
                   std::uint64_t shuffle_seed) {
    tc.validate();
    if (split.train.empty() || split.val.empty())
        throw InputError("train: train and validation parts must be non-empty");

    nn::AdamSettings adam;
    adam.lr = tc.lr;
    adam.weight_decay = tc.weight_decay;

    std::mt19937 shuffle_rng(std::uint32_t(shuffle_seed) ^ std::uint32_t(shuffle_seed >> 32) ^
                             0x51ed2701u);
    std::vector<std::string> order = split.train;

    TrainHistory history;
    auto best_values = model.snapshot_values();
    double best_acc = -1.0;
    std::uint32_t best_epoch = 0;

    for (std::uint32_t epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        for (const auto& id : order) {
            const Bag& bag = data.by_id(id);
            try {
                auto fp = forward_bag(bag, model, cfg);
                auto loss = fp.tape.cross_entropy(fp.logits, bag.label);
                loss_sum += double(fp.tape.value(loss).data[0]);
                fp.tape.backward(loss);
                pull_gradients(fp.model, model);
            } catch (const NumericError& e) {
                throw NumericError("train: non-finite value on bag " + bag.id + ": " + e.what());
            }
            model.adam_step(adam);
        }

        EpochStats stats;
        stats.train_loss = loss_sum / double(order.size());
        stats.val_accuracy = validation_accuracy(data, split.val, model, cfg);
        history.epochs.push_back(stats);

        if (stats.val_accuracy > best_acc) {
            best_acc = stats.val_accuracy;
            best_epoch = epoch;
            best_values = model.snapshot_values();
        } else if (epoch - best_epoch >= tc.patience) {
            break;
        }
    }

    history.best_epoch = best_epoch;
    history.best_val_accuracy = best_acc;
    model.restore_values(best_values);
    return TrainOutcome{std::move(model), std::move(history)};
}

MetricTriple evaluate(const Dataset& data, const std::vector<std::string>& ids,
                      const nn::ParamStore<float>& model, const DagConfig& cfg) {
    if (ids.empty()) throw InputError("evaluate: empty id list");
    std::vector<std::uint32_t> preds, labels;
    std::vector<double> scores;
    preds.reserve(ids.size());
    labels.reserve(ids.size());
    scores.reserve(ids.size() * cfg.classes);
    for (const auto& id : ids) {
        const Bag& bag = data.by_id(id);
        auto fp = forward_bag(bag, model, cfg);
        preds.push_back(fp.predicted_class());
        labels.push_back(bag.label);
        for (double p : fp.probabilities()) scores.push_back(p);
    }
    MetricTriple m;
    m.acc = accuracy(preds, labels);
    m.f1 = weighted_f1(preds, labels, cfg.classes);
    m.auc = auc_ovr(scores, labels, cfg.classes);
    return m;
}

RepeatedRuns run_repeated(const Dataset& data, const DagConfig& cfg, const TrainConfig& tc) {
    tc.validate();
    const std::size_t n_runs = tc.seeds.size();
    RepeatedRuns out;
    out.splits.resize(n_runs);
    out.models.resize(n_runs);
    out.report.runs.resize(n_runs);

    const auto manifest = data.manifest();
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        for (;;) {
            const std::size_t r = next.fetch_add(1);
            if (r >= n_runs) return;
            try {
                const std::uint64_t seed = tc.seeds[r];
                auto split = io::split_stratified(manifest, {0.7, 0.2, 0.1}, seed);
                auto model = make_params<float>(cfg, seed);
                auto outcome = train(data, split, std::move(model), cfg, tc, seed);
                out.report.runs[r].seed = seed;
                out.report.runs[r].metrics = evaluate(data, split.test, outcome.model, cfg);
                out.splits[r] = std::move(split);
                out.models[r] = std::move(outcome.model);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };

    const std::size_t n_threads = std::min<std::size_t>(tc.jobs, n_runs);
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    aggregate_report(out.report);
    return out;
}

void aggregate_report(EvalReport& report) {
    if (report.runs.empty()) throw InputError("aggregate_report: no runs");
    const double n = double(report.runs.size());
    report.mean = {};
    report.stdev = {};
    for (const auto& run : report.runs) {
        report.mean.acc += run.metrics.acc;
        report.mean.f1 += run.metrics.f1;
        report.mean.auc += run.metrics.auc;
    }
    report.mean.acc /= n;
    report.mean.f1 /= n;
    report.mean.auc /= n;
    for (const auto& run : report.runs) {
        const double da = run.metrics.acc - report.mean.acc;
        const double df = run.metrics.f1 - report.mean.f1;
        const double du = run.metrics.auc - report.mean.auc;
        report.stdev.acc += da * da;
        report.stdev.f1 += df * df;
        report.stdev.auc += du * du;
    }
    report.stdev.acc = std::sqrt(report.stdev.acc / n);
    report.stdev.f1 = std::sqrt(report.stdev.f1 / n);
    report.stdev.auc = std::sqrt(report.stdev.auc / n);
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::json doc;
    doc["runs"] = nlohmann::json::array();
    for (const auto& run : report.runs)
        doc["runs"].push_back({{"seed", run.seed},
                               {"acc", run.metrics.acc},
                               {"f1", run.metrics.f1},
                               {"auc", run.metrics.auc}});
    doc["mean"] = {{"acc", report.mean.acc}, {"f1", report.mean.f1}, {"auc", report.mean.auc}};
    doc["std"] = {{"acc", report.stdev.acc}, {"f1", report.stdev.f1}, {"auc", report.stdev.auc}};
    return doc.dump(2) + "\n";
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write report: " + path.string());
    out << report_to_json(report);
}

}  // namespace dag::train
