#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dpt/tensor.hpp"

namespace dpt {

// Fixed token layout shared by the backbone and every task generator.
namespace tokens {
inline constexpr int pad = 0;
inline constexpr int bos = 1;
inline constexpr int eos = 2;
inline constexpr int yes = 3;
inline constexpr int no = 4;
inline constexpr int sep = 5;
// task cue tokens, used only in the pretraining mixture
inline constexpr int cue_copy = 6;
inline constexpr int cue_majority = 7;
inline constexpr int cue_parity = 8;
inline constexpr int cue_pair_match = 9;
// disjoint alphabet slices per task, so behaviors do not fight over rows
inline constexpr int first_symbol = 10;
inline constexpr int majority_base = 10;   // 3 symbols
inline constexpr int parity_base = 13;     // marker + 2 fillers
inline constexpr int pair_base = 16;       // 8 symbols
inline constexpr int copy_base = 24;       // the rest of the vocabulary
}  // namespace tokens

struct TextToTextExample {
    std::vector<int> input;   // X
    std::vector<int> target;  // Y, the verbalized label
    int label_id = 0;         // leading token of the verbalized label; accounting only
    bool operator==(const TextToTextExample&) const = default;
};

using Dataset = std::vector<TextToTextExample>;

enum class TaskKind { copy, majority, parity, pair_match };

const char* task_name(TaskKind kind);
TaskKind task_from_name(const std::string& name);  // throws ConfigError
std::vector<TaskKind> all_tasks();

struct TaskSpec {
    std::string name;  // defaults to task_name(kind) when empty
    TaskKind kind = TaskKind::majority;
    int train_size = 64;
    int dev_size = 64;
    std::uint64_t seed = 0;
    int vocab_size = 64;
};

// Deterministic per spec+seed; train and dev are disjoint as sets of examples.
std::pair<Dataset, Dataset> generate(const TaskSpec& spec);

// parity labeling rule (counts tokens::parity_base markers), exposed for the
// boundary case: an empty payload has an even marker count and labels "yes"
int parity_label_token(const std::vector<int>& payload);

// Pretraining mixture: uncued copy strings plus cue-prefixed task
// demonstrations with cue runs of length 1..max_cue_run, so the frozen model
// both copies raw input and carries task behaviors a tuned prompt can reach.
Dataset generate_pretrain_mixture(int vocab_size, int size, int max_cue_run, std::uint64_t seed);

// Line format: `input-ids <tab> target-ids`, ids space-separated.
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

std::uint64_t dataset_hash(const Dataset& ds);

}  // namespace dpt
