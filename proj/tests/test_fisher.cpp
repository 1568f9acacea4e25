#include "doctest_fwd.hpp"

#include <fstream>

#include "support.hpp"
#include "transferi2i/errors.hpp"
#include "transferi2i/fisher.hpp"
#include "transferi2i/pretrain.hpp"

using namespace transferi2i;
using namespace transferi2i::fisher;

namespace {

Checkpoint generator_checkpoint(uint64_t seed) {
    auto spec = testing::tiny_spec();
    auto n = nets::build_networks(spec, false, seed);
    Checkpoint ck;
    ck.stage = Stage::i2i;
    ck.spec = spec;
    store_module(ck, "1to2.G", *n.generator);
    return ck;
}

DiagonalFisher unit_fisher(const Checkpoint& ck, const std::string& prefix) {
    DiagonalFisher f;
    for (const auto& [name, t] : ck.tensors) {
        if (name.rfind(prefix, 0) == 0) f[name.substr(prefix.size())] = torch::ones_like(t);
    }
    return f;
}

}  // namespace

TEST_CASE("quadratic form hand values") {
    CHECK(quadratic_form(torch::tensor({1.0, 2.0}), torch::ones({2}, torch::kDouble)) == doctest::Approx(5.0));
    CHECK(quadratic_form(torch::tensor({1.0, 3.0}), torch::tensor({2.0, 0.0})) == doctest::Approx(2.0));
}

TEST_CASE("weight fluctuation of a checkpoint with itself is exactly zero") {
    auto ck = generator_checkpoint(0);
    auto wf = weight_fluctuation(ck, ck, "1to2.G", unit_fisher(ck, "1to2.G."), 4);
    REQUIRE(wf.size() == 4);
    for (double v : wf) CHECK(v == 0.0);
}

TEST_CASE("weight fluctuation groups by ResBlock and is non-negative") {
    auto a = generator_checkpoint(0);
    auto b = a;
    b.tensors["1to2.G.rb2.conv1.weight"] = a.tensors["1to2.G.rb2.conv1.weight"] + 0.5;
    auto f = unit_fisher(a, "1to2.G.");
    auto wf = weight_fluctuation(a, b, "1to2.G", f, 4);
    CHECK(wf[0] == 0.0);
    CHECK(wf[1] == 0.0);
    CHECK(wf[2] == doctest::Approx(0.25 * double(a.tensors["1to2.G.rb2.conv1.weight"].numel())));
    CHECK(wf[3] == 0.0);

    auto neg = f;
    neg["rb2.conv1.weight"] = -neg["rb2.conv1.weight"];
    CHECK_THROWS_AS(weight_fluctuation(a, b, "1to2.G", neg, 4), NumericalError);
}

TEST_CASE("weight fluctuation needs matching checkpoints") {
    auto a = generator_checkpoint(0);
    auto b = a;
    b.tensors.erase("1to2.G.rb1.conv2.bias");
    CHECK_THROWS_AS(weight_fluctuation(a, b, "1to2.G", unit_fisher(a, "1to2.G."), 4), CheckpointError);
}

TEST_CASE("estimated Fisher is non-negative and deterministic") {
    auto spec = testing::tiny_spec();
    auto n = nets::build_networks(spec, false, 1);
    auto f1 = estimate_generator_fisher(n.generator, n.discriminator, 3, 4, 9);
    auto f2 = estimate_generator_fisher(n.generator, n.discriminator, 3, 4, 9);
    REQUIRE(f1.size() == n.generator->named_parameters().size());
    for (const auto& [name, t] : f1) {
        CHECK(t.min().item<double>() >= 0.0);
        CHECK(testing::bit_equal(t, f2.at(name)));
    }
    // Estimating must not leave gradients behind on D.
    for (auto& p : n.discriminator->parameters()) CHECK_FALSE(p.grad().defined());
}

TEST_CASE("table and plot outputs") {
    testing::TempDir dir("wf");
    std::vector<WeightFluctuationRow> rows{{0, 2.0, 1.0}, {1, 0.5, 0.25}};
    write_wf_table(dir.path() / "wf.csv", rows);
    write_wf_plot(dir.path() / "wf.png", rows);
    std::ifstream in(dir.path() / "wf.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "resblock,wf_with_aux,wf_without_aux");
    CHECK(std::filesystem::file_size(dir.path() / "wf.png") > 0);
}
