#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dpt/adamw.hpp"
#include "dpt/backbone.hpp"
#include "dpt/prompt.hpp"
#include "dpt/tasks.hpp"

namespace dpt {

// raised when a run breaks one of its own contracts (frozen weights touched,
// a trainable tensor left without gradient, ...)
struct InternalError : std::runtime_error { using std::runtime_error::runtime_error; };

enum class TrainMethod { vanilla, dpt, residual, rank_probe, full_ft };

const char* method_name(TrainMethod m);
TrainMethod method_from_name(const std::string& name);  // throws ConfigError
bool is_prompt_method(TrainMethod m);
PromptKind prompt_kind_for(TrainMethod m);  // throws ConfigError for full_ft

struct TrainConfig {
    double lr = 0.3;  // paper-scale default; desk profiles pick their own
    int epochs = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    int batch_size = 8;  // gradient accumulation over size-1 sequences
    TrainMethod method = TrainMethod::vanilla;
    int eval_max_steps = 10;  // greedy-decode cap during evaluation

    void validate() const;
};

struct StepRecord {
    long step;
    double loss;  // mean loss of the accumulated batch
};

struct EpochRecord {
    int epoch;
    double accuracy;  // exact-match on dev by greedy decode
};

struct RunLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    double final_loss = 0.0;
    double final_accuracy = 0.0;
    double best_accuracy = 0.0;
    bool aborted_non_finite = false;
    std::uint64_t checksum_before = 0;
    std::uint64_t checksum_after = 0;
    std::size_t trainable_params = 0;
    // echoed verbatim into the CSV header; callers may prepend fields
    std::vector<std::pair<std::string, std::string>> config_echo;
};

// called once with step 0 before training and after every optimizer step
using StepHook = std::function<void(long step)>;

// Seeded training loop: shuffled epochs, per-example forward/backward with
// gradient accumulation, AdamW on the trainable partition only, greedy-decode
// evaluation each epoch. param may be null only for full_ft.
RunLog train(Backbone& bb, PromptParameterization* param, const Dataset& train_set,
             const Dataset& dev_set, const TrainConfig& config, const StepHook& hook = {});

// uniform sample of k examples without replacement and without label
// balancing; deterministic per seed and shared across methods
Dataset few_shot_sample(const Dataset& dataset, std::size_t k, std::uint64_t seed);

// CSV: '#'-prefixed config echo, `step,loss` then `epoch,accuracy` sections,
// one summary line; no timestamps anywhere so reruns are byte-identical
void write_runlog_csv(std::ostream& os, const RunLog& log);

}  // namespace dpt
