#include <doctest.h>

#include <filesystem>

#include "pve/denoiser.hpp"
#include "pve/toydit.hpp"
#include "pve/training.hpp"

using namespace pve;
namespace fs = std::filesystem;

static ToyDiTConfig small_cfg() {
    ToyDiTConfig c;
    c.patch = 4;
    c.embed = 16;
    c.heads = 2;
    c.layers = 1;
    c.vocab = 8;
    c.prompt_len = 3;
    c.max_frames = 2;
    c.height = 8;
    c.width = 8;
    c.channels = 3;
    return c;
}

TEST_CASE("gmm oracle: zero-mean point mass gives the Gaussian score") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    GmmOracle o({1.0}, {{0.0, 0.0}}, {0.0}, s);
    VideoTensor x(1, 1, 2, 1);
    x[0] = 0.7f;
    x[1] = -1.2f;
    int i = 60;
    VideoTensor eps = o.predict(x, i, PromptTokens{});
    float somb = s.sqrt_one_minus_ab(i);
    for (int64_t k = 0; k < x.size(); ++k) CHECK(eps[k] == doctest::Approx(x[k] / somb).epsilon(1e-5));
}

TEST_CASE("gmm oracle matches finite differences of the log marginal") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    GmmOracle o({0.4, 0.6}, {{1.0, -0.5}, {-1.5, 0.75}}, {0.3, 0.8}, s);
    RngStream r{21, RngPurpose::Sampling, 0};
    for (int t = 0; t < 10; ++t) {
        VideoTensor x = gaussian(r, {1, 1, 2, 1});
        int i = 1 + static_cast<int>(r.next_below(100));
        VideoTensor eps = o.predict(x, i, PromptTokens{});
        double somb = std::sqrt(1.0 - s.alpha_bar[static_cast<size_t>(i)]);
        const double h = 1e-5;
        for (size_t dmi = 0; dmi < 2; ++dmi) {
            std::vector<double> xp{x[0], x[1]}, xm{x[0], x[1]};
            xp[dmi] += h;
            xm[dmi] -= h;
            double grad = (o.log_marginal(xp, i) - o.log_marginal(xm, i)) / (2 * h);
            double want = -somb * grad;
            double denom = std::max({std::fabs(want), std::fabs(static_cast<double>(eps[static_cast<int64_t>(dmi)])), 1e-4});
            CHECK(std::fabs(eps[static_cast<int64_t>(dmi)] - want) / denom < 1e-4);
        }
    }
}

TEST_CASE("gmm oracle: symmetric components give zero score at the origin") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    GmmOracle o({0.5, 0.5}, {{2.0}, {-2.0}}, {0.5, 0.5}, s);
    VideoTensor x(1, 1, 1, 1);
    VideoTensor eps = o.predict(x, 50, PromptTokens{});
    CHECK(std::fabs(eps[0]) < 1e-7f);
}

TEST_CASE("gmm oracle validates its component tables") {
    auto s = make_linear_schedule(10, 1e-4, 0.02);
    CHECK_THROWS_AS(GmmOracle({1.0, 1.0}, {{0.0}}, {1.0}, s), ContractError);
    CHECK_THROWS_AS(GmmOracle({1.0, -1.0}, {{0.0}, {1.0}}, {1.0, 1.0}, s), ContractError);
    CHECK_THROWS_AS(GmmOracle({0.5, 0.5}, {{0.0}, {0.0, 1.0}}, {1.0, 1.0}, s), ContractError);
    CHECK_THROWS_AS(GmmOracle({0.5, 0.5}, {{0.0}, {1.0}}, {1.0, -1.0}, s), ContractError);
}

TEST_CASE("toy dit forward is deterministic") {
    ToyDiTNet<float> net(small_cfg());
    RngStream init{0, RngPurpose::InitNoise, 0};
    net.init_weights(init);
    RngStream r{1, RngPurpose::Sampling, 0};
    VideoTensor v = gaussian(r, {2, 8, 8, 3});
    PromptTokens p{{1, 2, 3}};
    VideoTensor a = net.forward(v, 5, p);
    VideoTensor b = net.forward(v, 5, p);
    CHECK(max_abs_diff(a, b) == 0.0f);
}

TEST_CASE("paired forward with an empty spec equals independent forwards") {
    ToyDiTNet<float> net(small_cfg());
    RngStream init{0, RngPurpose::InitNoise, 0};
    net.init_weights(init);
    RngStream r{2, RngPurpose::Sampling, 0};
    VideoTensor v1 = gaussian(r, {2, 8, 8, 3});
    VideoTensor v2 = gaussian(r, {2, 8, 8, 3});
    PromptTokens p1{{1, 2, 3}}, p2{{4, 5, 6}};
    auto [o1, o2] = net.forward_pair(v1, v2, 5, p1, p2, {});
    CHECK(max_abs_diff(o1, net.forward(v1, 5, p1)) == 0.0f);
    CHECK(max_abs_diff(o2, net.forward(v2, 5, p2)) == 0.0f);
}

TEST_CASE("paired forward with identical branches and full replacement is symmetric") {
    ToyDiTNet<float> net(small_cfg());
    RngStream init{0, RngPurpose::InitNoise, 0};
    net.init_weights(init);
    RngStream r{3, RngPurpose::Sampling, 0};
    VideoTensor v = gaussian(r, {2, 8, 8, 3});
    PromptTokens p{{1, 2, 3}};
    attn::ReplacementSpec spec;
    for (int k = 0; k < 3; ++k) spec.pairs.emplace_back(k, k);
    auto [o1, o2] = net.forward_pair(v, v, 5, p, p, spec);
    CHECK(max_abs_diff(o2, o1) < 1e-6f);
}

TEST_CASE("prompt differing in one slot changes the prediction") {
    ToyDiTNet<float> net(small_cfg());
    RngStream init{0, RngPurpose::InitNoise, 0};
    net.init_weights(init);
    RngStream r{4, RngPurpose::Sampling, 0};
    VideoTensor v = gaussian(r, {2, 8, 8, 3});
    VideoTensor a = net.forward(v, 5, PromptTokens{{1, 2, 3}});
    VideoTensor b = net.forward(v, 5, PromptTokens{{1, 2, 4}});
    CHECK(max_abs_diff(a, b) > 0.0f);
}

TEST_CASE("prompt token order does not matter (no positional encoding on prompts)") {
    ToyDiTNet<float> net(small_cfg());
    RngStream init{0, RngPurpose::InitNoise, 0};
    net.init_weights(init);
    RngStream r{5, RngPurpose::Sampling, 0};
    VideoTensor v = gaussian(r, {2, 8, 8, 3});
    VideoTensor a = net.forward(v, 5, PromptTokens{{1, 2, 3}});
    VideoTensor b = net.forward(v, 5, PromptTokens{{3, 1, 2}});
    CHECK(max_abs_diff(a, b) < 1e-6f);
}

TEST_CASE("frame count beyond capacity requires a window") {
    ToyDiTNet<float> net(small_cfg());
    RngStream init{0, RngPurpose::InitNoise, 0};
    net.init_weights(init);
    RngStream r{6, RngPurpose::Sampling, 0};
    VideoTensor v = gaussian(r, {4, 8, 8, 3});
    PromptTokens p{{1, 2, 3}};
    CHECK_THROWS_AS(net.forward(v, 5, p), CapacityError);
    attn::WindowSpec ws{4, 2, 1, false};
    CHECK_NOTHROW(net.forward(v, 5, p, &ws));
}

TEST_CASE("a covering window reproduces unwindowed attention") {
    ToyDiTNet<float> net(small_cfg());
    RngStream init{0, RngPurpose::InitNoise, 0};
    net.init_weights(init);
    RngStream r{7, RngPurpose::Sampling, 0};
    VideoTensor v = gaussian(r, {2, 8, 8, 3});
    PromptTokens p{{1, 2, 3}};
    attn::WindowSpec ws{2, 100, 1, false};
    VideoTensor a = net.forward(v, 5, p);
    VideoTensor b = net.forward(v, 5, p, &ws);
    CHECK(max_abs_diff(a, b) < 1e-6f);
}

TEST_CASE("checkpoint roundtrip preserves the forward function") {
    ToyDiTNet<float> net(small_cfg());
    RngStream init{9, RngPurpose::InitNoise, 0};
    net.init_weights(init);
    auto dir = fs::temp_directory_path() / "pve_test_ckpt";
    fs::create_directories(dir);
    auto path = (dir / "m.vckp").string();
    net.save_checkpoint(path);
    auto loaded = ToyDiTNet<float>::load_checkpoint(path);
    RngStream r{8, RngPurpose::Sampling, 0};
    VideoTensor v = gaussian(r, {2, 8, 8, 3});
    PromptTokens p{{1, 2, 3}};
    CHECK(max_abs_diff(net.forward(v, 5, p), loaded.forward(v, 5, p)) == 0.0f);
}

TEST_CASE("bad checkpoint magic is a format error") {
    auto dir = fs::temp_directory_path() / "pve_test_ckpt";
    fs::create_directories(dir);
    auto path = (dir / "bad.vckp").string();
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE garbage";
    }
    CHECK_THROWS_AS(ToyDiTNet<float>::load_checkpoint(path), FormatError);
}
