#include "dpt/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "dpt/rng.hpp"

namespace dpt {

namespace {

// Payload shapes per task. Sizes keep every label frequent enough to matter
// and every task learnable by a full fine-tune at desk scale.
constexpr int kMajorityAlphabet = 3;
constexpr int kMajorityMinLen = 5;
constexpr int kMajorityMaxLen = 9;  // odd lengths only
constexpr int kParityAlphabet = 3;  // marker plus fillers
constexpr int kParityLen = 6;
constexpr int kParityMaxMarkers = 3;
constexpr int kPairAlphabet = 8;
constexpr int kPairSegLen = 2;
constexpr int kCopyMinLen = 1;
constexpr int kCopyMaxLen = 8;

int copy_range(int vocab_size) { return vocab_size - tokens::copy_base; }

void check_vocab(const char* who, int vocab_size, int last_token) {
    if (vocab_size <= last_token) {
        throw ConfigError(std::string(who) + ": vocab_size " + std::to_string(vocab_size) +
                          " does not cover token " + std::to_string(last_token));
    }
}

std::vector<int> random_string(Rng& rng, int len, int base, int alphabet) {
    std::vector<int> s(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i)
        s[static_cast<std::size_t>(i)] =
            base + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(alphabet)));
    return s;
}

// distinct symbols, ascending
std::vector<int> random_segment(Rng& rng, int len, int base, int alphabet) {
    std::vector<std::size_t> picks = rng.sample_indices(static_cast<std::size_t>(alphabet),
                                                        static_cast<std::size_t>(len));
    std::vector<int> s;
    s.reserve(picks.size());
    for (std::size_t p : picks) s.push_back(base + static_cast<int>(p));
    return s;
}

int majority_label_token(const std::vector<int>& payload) {
    int count[kMajorityAlphabet] = {0};
    for (int t : payload) ++count[t - tokens::majority_base];
    int best = 0;
    for (int i = 1; i < kMajorityAlphabet; ++i)
        if (count[i] > count[best]) best = i;  // tie resolves to the lower symbol id
    return tokens::majority_base + best;
}

TextToTextExample gen_copy(Rng& rng, int vocab_size) {
    const int len = kCopyMinLen + static_cast<int>(rng.uniform_int(kCopyMaxLen - kCopyMinLen + 1));
    TextToTextExample ex;
    ex.input = random_string(rng, len, tokens::copy_base, copy_range(vocab_size));
    ex.target = ex.input;
    ex.label_id = ex.target[0];
    return ex;
}

TextToTextExample gen_majority(Rng& rng) {
    const int len = kMajorityMinLen + 2 * static_cast<int>(rng.uniform_int(
                                              (kMajorityMaxLen - kMajorityMinLen) / 2 + 1));
    TextToTextExample ex;
    ex.input = random_string(rng, len, tokens::majority_base, kMajorityAlphabet);
    ex.target = {majority_label_token(ex.input)};
    ex.label_id = ex.target[0];
    return ex;
}

TextToTextExample gen_parity(Rng& rng) {
    // marker counts drawn uniformly from a small range; the label stays the
    // parity of the marker count but the decision stays desk-learnable
    const int count = static_cast<int>(rng.uniform_int(kParityMaxMarkers + 1));
    std::vector<std::size_t> marker_at =
        rng.sample_indices(static_cast<std::size_t>(kParityLen), static_cast<std::size_t>(count));
    TextToTextExample ex;
    ex.input.assign(kParityLen, 0);
    std::size_t next_marker = 0;
    for (int i = 0; i < kParityLen; ++i) {
        if (next_marker < marker_at.size() && marker_at[next_marker] == static_cast<std::size_t>(i)) {
            ex.input[static_cast<std::size_t>(i)] = tokens::parity_base;
            ++next_marker;
        } else {
            ex.input[static_cast<std::size_t>(i)] =
                tokens::parity_base + 1 +
                static_cast<int>(rng.uniform_int(kParityAlphabet - 1));
        }
    }
    ex.target = {parity_label_token(ex.input)};
    ex.label_id = ex.target[0];
    return ex;
}

TextToTextExample gen_pair_match(Rng& rng) {
    const std::vector<int> a = random_segment(rng, kPairSegLen, tokens::pair_base, kPairAlphabet);
    const std::vector<int> b = random_segment(rng, kPairSegLen, tokens::pair_base, kPairAlphabet);
    TextToTextExample ex;
    ex.input = a;
    ex.input.push_back(tokens::sep);
    ex.input.insert(ex.input.end(), b.begin(), b.end());
    bool shared = false;
    for (int x : a)
        for (int y : b)
            if (x == y) shared = true;
    ex.target = {shared ? tokens::yes : tokens::no};
    ex.label_id = ex.target[0];
    return ex;
}

TextToTextExample gen_one(TaskKind kind, Rng& rng, int vocab_size) {
    switch (kind) {
        case TaskKind::copy: return gen_copy(rng, vocab_size);
        case TaskKind::majority: return gen_majority(rng);
        case TaskKind::parity: return gen_parity(rng);
        case TaskKind::pair_match: return gen_pair_match(rng);
    }
    throw ConfigError("unknown task kind");
}

int last_token_of(TaskKind kind) {
    switch (kind) {
        case TaskKind::copy: return tokens::copy_base;  // at least one copy symbol
        case TaskKind::majority: return tokens::majority_base + kMajorityAlphabet - 1;
        case TaskKind::parity: return tokens::parity_base + kParityAlphabet - 1;
        case TaskKind::pair_match: return tokens::pair_base + kPairAlphabet - 1;
    }
    return 0;
}

std::vector<int> key_of(const TextToTextExample& ex) {
    std::vector<int> key = ex.input;
    key.push_back(-1);
    key.insert(key.end(), ex.target.begin(), ex.target.end());
    return key;
}

}  // namespace

int parity_label_token(const std::vector<int>& payload) {
    int count = 0;
    for (int t : payload)
        if (t == tokens::parity_base) ++count;
    return count % 2 == 0 ? tokens::yes : tokens::no;
}

const char* task_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::copy: return "copy";
        case TaskKind::majority: return "majority";
        case TaskKind::parity: return "parity";
        case TaskKind::pair_match: return "pair-match";
    }
    return "?";
}

TaskKind task_from_name(const std::string& name) {
    for (TaskKind k : all_tasks())
        if (name == task_name(k)) return k;
    throw ConfigError("unknown task '" + name + "' (expected copy|majority|parity|pair-match)");
}

std::vector<TaskKind> all_tasks() {
    return {TaskKind::copy, TaskKind::majority, TaskKind::parity, TaskKind::pair_match};
}

std::pair<Dataset, Dataset> generate(const TaskSpec& spec) {
    if (spec.train_size < 1 || spec.dev_size < 1) {
        throw ConfigError("generate: train and dev sizes must be >= 1");
    }
    check_vocab("generate", spec.vocab_size, last_token_of(spec.kind));
    Rng rng(spec.seed);
    Dataset train, dev;
    std::set<std::vector<int>> seen;
    const std::size_t want = static_cast<std::size_t>(spec.train_size) +
                             static_cast<std::size_t>(spec.dev_size);
    // rejection keeps train/dev disjoint; cap guards degenerate task spaces
    const std::size_t cap = want * 1000 + 10000;
    std::size_t attempts = 0;
    while (seen.size() < want) {
        if (++attempts > cap) {
            throw ConfigError("generate: task space too small for requested sizes");
        }
        TextToTextExample ex = gen_one(spec.kind, rng, spec.vocab_size);
        if (!seen.insert(key_of(ex)).second) continue;
        if (train.size() < static_cast<std::size_t>(spec.train_size)) {
            train.push_back(std::move(ex));
        } else {
            dev.push_back(std::move(ex));
        }
    }
    return {std::move(train), std::move(dev)};
}

Dataset generate_pretrain_mixture(int vocab_size, int size, int max_cue_run, std::uint64_t seed) {
    if (size < 1) throw ConfigError("generate_pretrain_mixture: size must be >= 1");
    if (max_cue_run < 1) throw ConfigError("generate_pretrain_mixture: max_cue_run must be >= 1");
    check_vocab("generate_pretrain_mixture", vocab_size, tokens::copy_base);
    Rng rng(seed);
    Dataset out;
    out.reserve(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) {
        const int pick = static_cast<int>(rng.uniform_int(20));
        if (pick < 5) {  // uncued copy keeps the raw seq2seq skill alive
            out.push_back(gen_copy(rng, vocab_size));
            continue;
        }
        TaskKind kind;
        int cue;
        if (pick < 8) {
            kind = TaskKind::copy;
            cue = tokens::cue_copy;
        } else if (pick < 11) {
            kind = TaskKind::majority;
            cue = tokens::cue_majority;
        } else if (pick < 15) {
            kind = TaskKind::parity;
            cue = tokens::cue_parity;
        } else {
            kind = TaskKind::pair_match;
            cue = tokens::cue_pair_match;
        }
        TextToTextExample ex = gen_one(kind, rng, vocab_size);
        const int run = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_cue_run)));
        std::vector<int> cued(static_cast<std::size_t>(run), cue);
        cued.insert(cued.end(), ex.input.begin(), ex.input.end());
        ex.input = std::move(cued);
        out.push_back(std::move(ex));
    }
    return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream os(path);
    if (!os) throw IoError("save_dataset: cannot open " + path.string());
    for (const TextToTextExample& ex : ds) {
        for (std::size_t i = 0; i < ex.input.size(); ++i) {
            if (i) os << ' ';
            os << ex.input[i];
        }
        os << '\t';
        for (std::size_t i = 0; i < ex.target.size(); ++i) {
            if (i) os << ' ';
            os << ex.target[i];
        }
        os << '\n';
    }
    if (!os) throw IoError("save_dataset: write failed for " + path.string());
}

namespace {

std::vector<int> parse_id_list(const std::string& field, std::size_t line_no) {
    std::vector<int> ids;
    std::istringstream ss(field);
    std::string tok;
    while (ss >> tok) {
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(tok, &used);
        } catch (const std::exception&) {
            throw ParseError("dataset line " + std::to_string(line_no) + ": non-integer token '" +
                             tok + "'");
        }
        if (used != tok.size()) {
            throw ParseError("dataset line " + std::to_string(line_no) + ": non-integer token '" +
                             tok + "'");
        }
        ids.push_back(v);
    }
    return ids;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_dataset: cannot open " + path.string());
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError("dataset line " + std::to_string(line_no) + ": missing tab separator");
        }
        TextToTextExample ex;
        ex.input = parse_id_list(line.substr(0, tab), line_no);
        ex.target = parse_id_list(line.substr(tab + 1), line_no);
        if (ex.target.empty()) {
            throw ParseError("dataset line " + std::to_string(line_no) + ": empty target");
        }
        ex.label_id = ex.target[0];
        ds.push_back(std::move(ex));
    }
    return ds;
}

std::uint64_t dataset_hash(const Dataset& ds) {
    std::uint64_t h = 1469598103934665603ull;
    for (const TextToTextExample& ex : ds) {
        for (int t : ex.input) h = fnv1a64(&t, sizeof(t), h);
        const int sep = -1;
        h = fnv1a64(&sep, sizeof(sep), h);
        for (int t : ex.target) h = fnv1a64(&t, sizeof(t), h);
        const int end = -2;
        h = fnv1a64(&end, sizeof(end), h);
    }
    return h;
}

}  // namespace dpt
