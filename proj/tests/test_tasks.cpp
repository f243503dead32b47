#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "dpt/tasks.hpp"

using namespace dpt;

namespace {

std::filesystem::path temp_file(const char* stem) {
    static int counter = 0;
    return std::filesystem::temp_directory_path() /
           (std::string("dptlab_") + stem + "_" + std::to_string(++counter) + ".txt");
}

}  // namespace

TEST_CASE("generators are deterministic per spec+seed") {
    for (TaskKind kind : all_tasks()) {
        TaskSpec spec;
        spec.kind = kind;
        spec.train_size = 20;
        spec.dev_size = 10;
        spec.seed = 42;
        auto [tr1, dv1] = generate(spec);
        auto [tr2, dv2] = generate(spec);
        CHECK(tr1 == tr2);
        CHECK(dv1 == dv2);
        spec.seed = 43;
        auto [tr3, dv3] = generate(spec);
        CHECK(tr1 != tr3);
    }
}

TEST_CASE("train and dev are disjoint") {
    for (TaskKind kind : all_tasks()) {
        TaskSpec spec;
        spec.kind = kind;
        spec.train_size = 60;
        spec.dev_size = 40;
        spec.seed = 7;
        auto [train, dev] = generate(spec);
        CHECK(train.size() == 60);
        CHECK(dev.size() == 40);
        std::set<std::pair<std::vector<int>, std::vector<int>>> seen;
        for (const auto& ex : train) seen.insert({ex.input, ex.target});
        for (const auto& ex : dev) CHECK(seen.count({ex.input, ex.target}) == 0);
    }
}

TEST_CASE("majority labeling") {
    TaskSpec spec;
    spec.kind = TaskKind::majority;
    spec.train_size = 200;
    spec.dev_size = 50;
    spec.seed = 3;
    auto [train, dev] = generate(spec);
    for (const auto& ex : train) {
        REQUIRE(ex.target.size() == 1);
        // recount and confirm the verbalized label is the most frequent symbol
        std::map<int, int> counts;
        for (int t : ex.input) ++counts[t];
        int best = 0, best_count = -1;
        for (auto [tok, n] : counts) {
            if (n > best_count) {
                best = tok;
                best_count = n;
            }
        }
        CHECK(counts[ex.target[0]] == best_count);
        CHECK(ex.target[0] == best);  // ties resolve to the lower symbol id
        CHECK(ex.label_id == ex.target[0]);
    }
}

TEST_CASE("majority of an all-same-symbol string is that symbol") {
    TaskSpec spec;
    spec.kind = TaskKind::majority;
    spec.train_size = 400;
    spec.dev_size = 40;
    spec.seed = 8;
    auto [train, dev] = generate(spec);
    bool found_uniform = false;
    for (const auto& ex : train) {
        bool uniform = true;
        for (int t : ex.input) uniform = uniform && t == ex.input[0];
        if (uniform) {
            found_uniform = true;
            CHECK(ex.target == std::vector<int>{ex.input[0]});
        }
    }
    CHECK(found_uniform);
}

TEST_CASE("majority label distribution is non-degenerate") {
    TaskSpec spec;
    spec.kind = TaskKind::majority;
    spec.train_size = 9000;
    spec.dev_size = 1000;
    spec.seed = 1;
    auto [train, dev] = generate(spec);
    std::map<int, int> freq;
    for (const auto& ex : train) ++freq[ex.label_id];
    for (const auto& ex : dev) ++freq[ex.label_id];
    REQUIRE(freq.size() == 3);
    for (auto [label, n] : freq) CHECK(n >= 500);  // every label >= 5% of 10k
}

TEST_CASE("parity labeling and empty-payload boundary") {
    CHECK(parity_label_token({}) == tokens::yes);  // zero markers: even by definition
    CHECK(parity_label_token({tokens::parity_base}) == tokens::no);
    CHECK(parity_label_token({tokens::parity_base, tokens::parity_base}) == tokens::yes);
    CHECK(parity_label_token({tokens::parity_base + 1}) == tokens::yes);  // non-markers ignored

    TaskSpec spec;
    spec.kind = TaskKind::parity;
    spec.train_size = 50;
    spec.dev_size = 20;
    spec.seed = 9;
    auto [train, dev] = generate(spec);
    for (const auto& ex : train) {
        CHECK(ex.target == std::vector<int>{parity_label_token(ex.input)});
    }
}

TEST_CASE("pair-match labeling") {
    TaskSpec spec;
    spec.kind = TaskKind::pair_match;
    spec.train_size = 100;
    spec.dev_size = 30;
    spec.seed = 21;
    auto [train, dev] = generate(spec);
    int yes = 0;
    for (const auto& ex : train) {
        auto sep_it = std::find(ex.input.begin(), ex.input.end(), tokens::sep);
        REQUIRE(sep_it != ex.input.end());
        std::set<int> left(ex.input.begin(), sep_it);
        std::set<int> right(sep_it + 1, ex.input.end());
        bool shared = false;
        for (int t : left) shared = shared || right.count(t) > 0;
        CHECK(ex.target == std::vector<int>{shared ? tokens::yes : tokens::no});
        if (shared) ++yes;
    }
    CHECK(yes > 20);  // both labels well represented
    CHECK(yes < 80);
}

TEST_CASE("examples respect the vocabulary") {
    for (TaskKind kind : all_tasks()) {
        TaskSpec spec;
        spec.kind = kind;
        spec.train_size = 50;
        spec.dev_size = 10;
        spec.seed = 2;
        auto [train, dev] = generate(spec);
        for (const auto& ex : train) {
            CHECK(!ex.target.empty());
            for (int t : ex.input) {
                CHECK(t >= 0);
                CHECK(t < spec.vocab_size);
            }
            for (int t : ex.target) {
                CHECK(t >= 0);
                CHECK(t < spec.vocab_size);
            }
        }
    }
}

TEST_CASE("pretrain mixture contains cued and uncued examples") {
    Dataset mix = generate_pretrain_mixture(64, 500, 16, 11);
    CHECK(mix.size() == 500);
    int cued = 0, uncued = 0;
    for (const auto& ex : mix) {
        REQUIRE(!ex.input.empty());
        if (ex.input[0] >= tokens::cue_copy && ex.input[0] <= tokens::cue_pair_match) {
            ++cued;
        } else {
            ++uncued;
        }
    }
    CHECK(cued > 250);
    CHECK(uncued > 50);
    CHECK(generate_pretrain_mixture(64, 500, 16, 11) == mix);
}

TEST_CASE("dataset save/load round trip") {
    TaskSpec spec;
    spec.kind = TaskKind::pair_match;
    spec.train_size = 30;
    spec.dev_size = 5;
    spec.seed = 4;
    auto [train, dev] = generate(spec);
    const auto path = temp_file("roundtrip");
    save_dataset(path, train);
    Dataset loaded = load_dataset(path);
    CHECK(loaded == train);
    std::filesystem::remove(path);
}

TEST_CASE("empty file loads as empty dataset") {
    const auto path = temp_file("empty");
    {
        std::ofstream os(path);
    }
    CHECK(load_dataset(path).empty());
    std::filesystem::remove(path);
}

TEST_CASE("malformed dataset lines name the line") {
    const auto path = temp_file("malformed");
    {
        std::ofstream os(path);
        os << "1 2 3\t4\n";
        os << "1 x\t4\n";
    }
    CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("line 2"), ParseError);
    std::filesystem::remove(path);

    const auto path2 = temp_file("notab");
    {
        std::ofstream os(path2);
        os << "1 2 3 4\n";
    }
    CHECK_THROWS_WITH_AS(load_dataset(path2), doctest::Contains("line 1"), ParseError);
    std::filesystem::remove(path2);
}

TEST_CASE("dataset hash keys on content") {
    TaskSpec spec;
    spec.kind = TaskKind::majority;
    spec.train_size = 16;
    spec.dev_size = 4;
    spec.seed = 5;
    auto [a, adev] = generate(spec);
    auto [b, bdev] = generate(spec);
    CHECK(dataset_hash(a) == dataset_hash(b));
    spec.seed = 6;
    auto [c, cdev] = generate(spec);
    CHECK(dataset_hash(a) != dataset_hash(c));
}
