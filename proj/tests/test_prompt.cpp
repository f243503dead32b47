#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "dpt/prompt.hpp"
#include "dpt/rank_probe.hpp"
#include "dpt/rng.hpp"
#include "oracles.hpp"

using namespace dpt;

namespace {

std::size_t enumeration_count(const PromptParameterization& p) { return p.trainable_count(); }

PromptInit init_of(PromptKind kind, int e, int c, int b_or_h, std::uint64_t seed = 0) {
    PromptInit init;
    init.kind = kind;
    init.e = e;
    init.c = c;
    init.b = b_or_h;
    init.h = b_or_h;
    init.seed = seed;
    return init;
}

}  // namespace

TEST_CASE("trainable counts match the closed forms and the paper's figures") {
    // decomposed: eb + bc
    CHECK(trainable_param_count(PromptKind::decomposed, 4, 3, 2) == 14);
    CHECK(enumeration_count(*make_prompt(init_of(PromptKind::decomposed, 4, 3, 2))) == 14);

    // T5-Large scale: DPT 11.2K vs vanilla 102K vs residual 925K
    CHECK(trainable_param_count(PromptKind::decomposed, 1024, 100, 10) == 11240);
    CHECK(trainable_param_count(PromptKind::vanilla, 1024, 100, 0) == 102400);
    CHECK(trainable_param_count(PromptKind::residual, 1024, 100, 400) == 925072);

    // T5-Small / T5-Base rows
    CHECK(trainable_param_count(PromptKind::decomposed, 512, 100, 10) == 6120);
    CHECK(trainable_param_count(PromptKind::decomposed, 768, 100, 10) == 8680);
    CHECK(trainable_param_count(PromptKind::vanilla, 512, 100, 0) == 51200);

    // formula == live enumeration across kinds and dims
    Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        const int e = 2 + static_cast<int>(rng.uniform_int(40));
        const int c = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(e)));
        const int b = 1 + static_cast<int>(rng.uniform_int(8));
        for (PromptKind kind : {PromptKind::vanilla, PromptKind::decomposed, PromptKind::residual,
                                PromptKind::rank_probe}) {
            auto p = make_prompt(init_of(kind, e, c, b, trial));
            CHECK(trainable_param_count(kind, e, c, b) == p->trainable_count());
        }
    }
}

TEST_CASE("parameter ratio (eb+bc)/(ec) strictly decreases in c") {
    for (int e : {512, 768, 1024}) {
        const int b = 10;
        double prev = 2.0;
        for (int c : {20, 100, 200}) {
            const double ratio =
                static_cast<double>(trainable_param_count(PromptKind::decomposed, e, c, b)) /
                static_cast<double>(trainable_param_count(PromptKind::vanilla, e, c, 0));
            CHECK(ratio < prev);
            prev = ratio;
        }
    }
}

TEST_CASE("decomposed materialize is the matrix product") {
    // outer product case
    DecomposedPrompt p(2, 2, 1, Tensor::from_values({2, 1}, {1, 2}),
                       Tensor::from_values({1, 2}, {3, 4}));
    CHECK(p.materialize().values() == std::vector<double>{3, 4, 6, 8});

    // B = 0 gives the zero matrix
    DecomposedPrompt z(3, 4, 2, Tensor::constant({3, 2}, 1.5), Tensor::zeros({2, 4}));
    for (double v : z.materialize().values()) CHECK(v == 0.0);
    Tape::active().clear();
}

TEST_CASE("decomposed rank bound and Gaussian equality") {
    Rng rng(23);
    for (int trial = 0; trial < 40; ++trial) {
        const int e = 8 + static_cast<int>(rng.uniform_int(57));   // 8..64
        const int c = 4 + static_cast<int>(rng.uniform_int(29));   // 4..32
        const int b = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(std::min(e, c))));
        auto p = make_prompt(init_of(PromptKind::decomposed, e, c, b, trial + 100));
        Tensor m = p->materialize().detach();
        Tape::active().clear();
        const int r = numerical_rank(m);
        CHECK(r <= b);
        CHECK(r == b);  // Gaussian draws are full rank almost surely
    }
}

TEST_CASE("full-bottleneck factorization spans any target") {
    Rng rng(29);
    for (int trial = 0; trial < 5; ++trial) {
        const int e = 3 + static_cast<int>(rng.uniform_int(8));
        const int c = 3 + static_cast<int>(rng.uniform_int(8));
        const int b = std::min(e, c);
        Tensor target = oracle::randn(rng, {e, c});
        // least-squares optimum is exact at b = min(e,c): pick the factor pair
        // that reproduces the target and check the residual
        Tensor a = Tensor::zeros({e, b});
        Tensor bm = Tensor::zeros({b, c});
        if (b == c) {
            a = target.detach();
            for (int i = 0; i < b; ++i)
                bm.mutable_values()[static_cast<std::size_t>(i) * c + i] = 1.0;
        } else {
            for (int i = 0; i < b; ++i)
                a.mutable_values()[static_cast<std::size_t>(i) * b + i] = 1.0;
            bm = target.detach();
        }
        Tensor residual = sub(matmul(a, bm), target);
        double worst = 0.0;
        for (double v : residual.values()) worst = std::max(worst, std::abs(v));
        CHECK(worst < 1e-8);
        Tape::active().clear();
    }
}

TEST_CASE("rank probe materialization and limits") {
    auto p = make_prompt(init_of(PromptKind::rank_probe, 6, 4, 0, 3));
    auto* probe = dynamic_cast<RankProbePrompt*>(p.get());
    REQUIRE(probe != nullptr);

    // initial sign counts: all c diagonal entries positive
    SignCounts sc = count_sign_diagonal(probe->sigma_diag());
    CHECK(sc.pos == 4);
    CHECK(sc.neg == 0);
    CHECK(sc.zero == 0);

    // all-negative diagonal kills every singular direction
    for (double& v : probe->sigma_diag().node()->values) v = -1.0;
    Tensor m = probe->materialize().detach();
    for (double v : m.values()) CHECK(v == 0.0);
    Tape::active().clear();
}

TEST_CASE("rank probe requires c <= e") {
    CHECK_THROWS_AS(make_prompt(init_of(PromptKind::rank_probe, 4, 8, 0)), ConfigError);
}

TEST_CASE("materialize is pure") {
    for (PromptKind kind : {PromptKind::vanilla, PromptKind::decomposed, PromptKind::residual,
                            PromptKind::rank_probe}) {
        auto p = make_prompt(init_of(kind, 8, 5, 3, 17));
        Tensor m1 = p->materialize().detach();
        Tensor m2 = p->materialize().detach();
        CHECK(m1.values() == m2.values());
        Tape::active().clear();
    }
}

TEST_CASE("same seed gives identical parameters, different seeds differ") {
    for (PromptKind kind : {PromptKind::vanilla, PromptKind::decomposed, PromptKind::residual,
                            PromptKind::rank_probe}) {
        auto p1 = make_prompt(init_of(kind, 8, 5, 3, 99));
        auto p2 = make_prompt(init_of(kind, 8, 5, 3, 99));
        auto p3 = make_prompt(init_of(kind, 8, 5, 3, 100));
        auto n1 = p1->named_trainable();
        auto n2 = p2->named_trainable();
        auto n3 = p3->named_trainable();
        bool any_diff = false;
        for (std::size_t i = 0; i < n1.size(); ++i) {
            CHECK(n1[i].second.values() == n2[i].second.values());
            any_diff = any_diff || n1[i].second.values() != n3[i].second.values();
        }
        CHECK(any_diff);
    }
}

TEST_CASE("vanilla copy-init samples distinct embedding rows") {
    Rng rng(31);
    Tensor table = oracle::randn(rng, {16, 6});
    PromptInit init = init_of(PromptKind::vanilla, 6, 5, 0, 7);
    init.vocab_embedding = &table;
    auto p = make_prompt(init);
    Tensor m = p->materialize().detach();
    Tape::active().clear();
    // every prompt column equals some table row, all distinct
    std::set<int> used;
    for (int j = 0; j < 5; ++j) {
        int match = -1;
        for (int r = 0; r < 16 && match < 0; ++r) {
            bool same = true;
            for (int i = 0; i < 6; ++i)
                same = same && m.at(i, j) == table.at(r, i);
            if (same) match = r;
        }
        CHECK(match >= 0);
        CHECK(used.insert(match).second);
    }
}

TEST_CASE("decomposed init scale tracks (1/b)^(1/4)") {
    // entry variance of A*B stays near sigma_t^2 for small and large b
    for (int b : {1, 4, 16}) {
        auto p = make_prompt(init_of(PromptKind::decomposed, 64, 48, b, 5));
        Tensor m = p->materialize().detach();
        Tape::active().clear();
        double var = 0.0;
        for (double v : m.values()) var += v * v;
        var /= static_cast<double>(m.numel());
        CHECK(var > 0.4);
        CHECK(var < 2.5);
    }
}

TEST_CASE("export product round trip") {
    auto p = make_prompt(init_of(PromptKind::decomposed, 6, 4, 2, 13));
    auto* dp = dynamic_cast<DecomposedPrompt*>(p.get());
    REQUIRE(dp != nullptr);
    const auto path = std::filesystem::temp_directory_path() / "dptlab_product.txt";
    export_product(*dp, path);

    auto vp = load_vanilla_prompt(path);
    CHECK(vp->e() == 6);
    CHECK(vp->c() == 4);
    Tensor direct = dp->materialize().detach();
    Tensor loaded = vp->materialize().detach();
    Tape::active().clear();
    CHECK(direct.values() == loaded.values());

    // exported file re-dumps byte-identically
    std::ifstream is(path);
    std::stringstream first;
    first << is.rdbuf();
    std::stringstream second;
    dump_tensor(second, "P_emb", loaded);
    CHECK(first.str() == second.str());
    std::filesystem::remove(path);
}
