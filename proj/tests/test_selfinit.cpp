#include "doctest_fwd.hpp"

#include "support.hpp"
#include "transferi2i/checkpoint.hpp"
#include "transferi2i/errors.hpp"
#include "transferi2i/pretrain.hpp"
#include "transferi2i/selfinit.hpp"

using namespace transferi2i;
using namespace transferi2i::selfinit;
using transferi2i::testing::bit_equal;

namespace {

nets::FeaturePyramid one_level(std::initializer_list<float> values, int64_t level = 0) {
    return {{level, torch::tensor(std::vector<float>(values)).view({1, 1, 1, -1})}};
}

Checkpoint tiny_pair(uint64_t seed) {
    auto c = testing::tiny_config();
    c.steps_base = 2;
    return pretrain::train_base_gan(c.arch, testing::tiny_corpus(), c, seed).checkpoint;
}

}  // namespace

TEST_CASE("alignment loss hand values") {
    auto f = one_level({1, 2, 3, 4});
    CHECK(alignment_loss(f, f).item<double>() == 0.0);
    CHECK(alignment_loss(f, one_level({1, 2, 3, 5})).item<double>() == doctest::Approx(0.25));

    nets::FeaturePyramid g{{0, torch::zeros({1, 1, 1, 4})}, {1, torch::zeros({1, 1, 2, 2})}};
    nets::FeaturePyramid a{{0, torch::tensor({0.f, 0.f, 0.f, 1.f}).view({1, 1, 1, 4})},
                           {1, torch::full({1, 1, 2, 2}, 0.5f)}};
    CHECK(alignment_loss(g, a).item<double>() == doctest::Approx(0.75));
}

TEST_CASE("alignment loss rejects mismatched pyramids") {
    auto f = one_level({1, 2, 3, 4});
    CHECK_THROWS_AS(alignment_loss(f, one_level({1, 2, 3})), ShapeError);
    CHECK_THROWS_AS(alignment_loss(f, one_level({1, 2, 3, 4}, 1)), ShapeError);
    nets::FeaturePyramid two = f;
    two.emplace(1, torch::zeros({1}));
    CHECK_THROWS_AS(alignment_loss(f, two), ShapeError);
}

TEST_CASE("alignment loss gradient matches central differences") {
    torch::manual_seed(3);
    nets::FeaturePyramid g{{0, torch::randn({2, 3, 2, 2}, torch::kDouble)}, {1, torch::randn({2, 2, 4, 4}, torch::kDouble)}};
    nets::FeaturePyramid a{{0, torch::randn({2, 3, 2, 2}, torch::kDouble).requires_grad_()},
                           {1, torch::randn({2, 2, 4, 4}, torch::kDouble).requires_grad_()}};
    alignment_loss(g, a).backward();
    auto r = testing::check_gradients({a.at(0), a.at(1)}, [&] { return alignment_loss(g, a).item<double>(); }, 8);
    CHECK(r.worst < 1e-4);
}

TEST_CASE("self-initialization keeps G and D frozen and reads no data") {
    auto ck = tiny_pair(0);
    auto c = testing::tiny_config();
    auto adaptor = nets::build_networks(c.arch, false, 99).adaptor;
    const auto reads = data::dataset_reads();
    auto r = self_initialize_adaptor(ck, ck, adaptor, 20, c, 1);
    CHECK(data::dataset_reads() == reads);
    CHECK(r.checkpoint.stage == Stage::selfinit);
    for (const auto& [name, t] : ck.tensors) {
        if (name.rfind("G.", 0) == 0 || name.rfind("D.", 0) == 0) CHECK(bit_equal(t, r.checkpoint.tensors.at(name)));
    }
    CHECK(r.log.size() == 20);
    CHECK(r.checkpoint.extra.contains("initial_l_ali"));
    CHECK(r.final_loss < r.initial_loss);
}

TEST_CASE("zero steps leave the adaptor at its initialization") {
    auto ck = tiny_pair(0);
    auto c = testing::tiny_config();
    auto adaptor = nets::build_networks(c.arch, false, 5).adaptor;
    auto fresh = nets::build_networks(c.arch, false, 5).adaptor;
    auto r = self_initialize_adaptor(ck, ck, adaptor, 0, c, 1);
    for (auto& p : fresh->named_parameters()) CHECK(bit_equal(r.checkpoint.tensors.at("A." + p.key()), p.value()));
    CHECK(r.initial_loss == r.final_loss);
}

TEST_CASE("dataset reads inside the data-free scope are contract violations") {
    auto corpus = testing::tiny_corpus();
    data::DataFreeScope scope("selfinit");
    std::vector<int64_t> idx{0};
    CHECK_THROWS_AS(corpus.fetch(idx), ContractViolation);
    CHECK_THROWS_AS(corpus.images(), ContractViolation);
}

TEST_CASE("self-initialization checks stage tags") {
    auto ck = tiny_pair(0);
    auto c = testing::tiny_config();
    auto r = self_initialize_adaptor(ck, ck, nets::build_networks(c.arch, false, 0).adaptor, 1, c, 0);
    CHECK_THROWS_AS(self_initialize_adaptor(r.checkpoint, ck, nets::build_networks(c.arch, false, 0).adaptor, 1, c, 0),
                    StageTagError);
}

TEST_CASE("conditional self-initialization") {
    auto c = testing::tiny_config(true);
    c.arch.num_classes = 3;
    c.steps_base = 1;
    auto base = pretrain::train_base_gan(c.arch, testing::tiny_corpus(3, 4), c, 0).checkpoint;
    auto r = self_initialize_adaptor(base, base, nets::build_networks(c.arch, true, 0).adaptor, 3, c, 0);
    CHECK(r.checkpoint.conditional);
    CHECK(r.log.size() == 3);
}

TEST_CASE("reconstruction probe reports one error per level") {
    auto c = testing::tiny_config();
    auto n = nets::build_networks(c.arch, false, 0);
    auto p = reconstruction_probe(n.generator, n.discriminator, n.adaptor, 4, 0);
    CHECK(p.per_level.size() == 4);
    CHECK(p.original.sizes() == p.reconstructed.sizes());
    CHECK(p.pixel_l1 >= 0);
}

TEST_CASE("smoothing is a trailing mean") {
    std::vector<AlignmentRecord> log{{1, 4}, {2, 2}, {3, 0}, {4, 6}};
    auto s = smoothed(log, 2);
    CHECK(s == std::vector<double>{4, 3, 1, 3});
}
