#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dag/bag.hpp"
#include "dag/model.hpp"
#include "dag/split.hpp"

namespace dag::train {

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-5;
    std::uint32_t epochs = 70;
    std::uint32_t patience = 30;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::uint32_t jobs = 1;

    void validate() const {
        if (lr <= 0) throw InputError("train config: lr must be positive");
        if (patience > epochs) throw InputError("train config: patience must be <= epochs");
        if (epochs == 0) throw InputError("train config: epochs must be >= 1");
        if (seeds.empty()) throw InputError("train config: seed list is empty");
        if (jobs == 0) throw InputError("train config: jobs must be >= 1");
    }
};

struct EpochStats {
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::uint32_t best_epoch = 0;  // 1-based
    double best_val_accuracy = 0.0;
};

struct TrainOutcome {
    nn::ParamStore<float> model;
    TrainHistory history;
};

struct MetricTriple {
    double acc = 0.0;
    double f1 = 0.0;
    double auc = 0.0;
};

struct RunResult {
    std::uint64_t seed = 0;
    MetricTriple metrics;
};

struct EvalReport {
    std::vector<RunResult> runs;
    MetricTriple mean;
    MetricTriple stdev;  // population standard deviation
};

/// Indexable view of a loaded dataset.
class Dataset {
  public:
    explicit Dataset(std::vector<Bag> bags);

    const std::vector<Bag>& bags() const { return bags_; }
    const Bag& by_id(const std::string& id) const;
    std::vector<std::pair<std::string, std::uint32_t>> manifest() const;

  private:
    std::vector<Bag> bags_;
    std::map<std::string, std::size_t> index_;
};

/// One optimizer step per bag on cross-entropy, seeded shuffling, early
/// stopping on validation accuracy (best snapshot kept, ties favor the
/// earlier epoch). Throws NumericError naming the bag if the loss goes
/// non-finite.
TrainOutcome train(const Dataset& data, const io::DatasetSplit& split,
                   nn::ParamStore<float> model, const DagConfig& cfg, const TrainConfig& tc,
                   std::uint64_t shuffle_seed);

/// Accuracy / weighted F1 / OvR AUC of a model over the named bags.
MetricTriple evaluate(const Dataset& data, const std::vector<std::string>& ids,
                      const nn::ParamStore<float>& model, const DagConfig& cfg);

struct RepeatedRuns {
    EvalReport report;
    std::vector<io::DatasetSplit> splits;       // one per seed
    std::vector<nn::ParamStore<float>> models;  // best snapshot per seed
};

/// Per seed: re-split (stratified 7:2:1), re-initialize, re-train, evaluate
/// on the test part; aggregates mean and population standard deviation.
/// Seeds may run on parallel worker threads (tc.jobs); results are ordered
/// by seed index so the report does not depend on scheduling.
RepeatedRuns run_repeated(const Dataset& data, const DagConfig& cfg, const TrainConfig& tc);

/// Fills mean and population standard deviation from the per-run metrics.
void aggregate_report(EvalReport& report);

std::string report_to_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& path);

}  // namespace dag::train
