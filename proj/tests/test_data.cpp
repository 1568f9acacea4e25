#include "doctest_fwd.hpp"

#include <fstream>

#include <Eigen/Dense>

#include "support.hpp"
#include "transferi2i/data.hpp"
#include "transferi2i/errors.hpp"
#include "transferi2i/image_io.hpp"
#include "transferi2i/rng.hpp"

using namespace transferi2i;
using namespace transferi2i::data;
using transferi2i::testing::bit_equal;

namespace {

void write_folder(const std::filesystem::path& root, const std::vector<std::pair<std::string, int>>& classes) {
    for (const auto& [name, count] : classes) {
        std::filesystem::create_directories(root / name);
        for (int i = 0; i < count; ++i) {
            auto img = torch::full({1, 3, 8, 8}, -1.0 + 2.0 * i / std::max(count, 1));
            char file[32];
            std::snprintf(file, sizeof file, "img%03d.png", i);
            write_png_grid(root / name / file, img, 1);
        }
    }
}

// 8x8 grayscale thumbnail plus a bias column.
Eigen::MatrixXd thumbnails(const torch::Tensor& images) {
    auto g = torch::adaptive_avg_pool2d(images.mean(1, true), {8, 8}).flatten(1).to(torch::kDouble).contiguous();
    Eigen::MatrixXd x(g.size(0), g.size(1) + 1);
    auto acc = g.accessor<double, 2>();
    for (int64_t i = 0; i < g.size(0); ++i) {
        for (int64_t j = 0; j < g.size(1); ++j) x(i, j) = acc[i][j];
        x(i, g.size(1)) = 1.0;
    }
    return x;
}

}  // namespace

TEST_CASE("synthetic shapes counts and determinism") {
    auto a = synthetic_shapes(2, 100, 32, 7);
    CHECK(a.size() == 200);
    CHECK(a.class_histogram() == std::vector<int64_t>{100, 100});
    CHECK(a.images().sizes() == std::vector<int64_t>{200, 3, 32, 32});
    CHECK(a.images().min().item<float>() >= -1.0f);
    CHECK(a.images().max().item<float>() <= 1.0f);
    auto b = synthetic_shapes(2, 100, 32, 7);
    CHECK(bit_equal(a.images(), b.images()));
    CHECK(a.labels() == b.labels());
    CHECK_FALSE(bit_equal(a.images(), synthetic_shapes(2, 100, 32, 8).images()));
    CHECK_THROWS_AS(synthetic_shapes(1, 10, 32, 0), DataError);
}

TEST_CASE("normalization round trip is exact for every 8-bit value") {
    auto pixels = torch::arange(256, torch::kInt).to(torch::kByte).view({1, 1, 16, 16});
    auto x = normalize(pixels);
    CHECK(x.min().item<float>() == -1.0f);
    CHECK(x.max().item<float>() == 1.0f);
    CHECK(bit_equal(denormalize(x), pixels));
}

TEST_CASE("image folder split") {
    testing::TempDir dir("folder");
    write_folder(dir.path(), {{"cat", 100}, {"dog", 100}});
    auto [train, test] = load_image_folder(dir.path(), 16, 0.9, 3);
    CHECK(train.size() == 180);
    CHECK(test.size() == 20);
    CHECK(train.class_histogram() == std::vector<int64_t>{90, 90});
    CHECK(test.split() == Split::test);
    CHECK(train.images().size(3) == 16);

    auto [train2, test2] = load_image_folder(dir.path(), 16, 0.9, 3);
    CHECK(train.paths() == train2.paths());
    CHECK(test.paths() == test2.paths());
    auto [train3, test3] = load_image_folder(dir.path(), 16, 0.9, 4);
    CHECK(train.paths() != train3.paths());

    // train/test disjoint
    std::set<std::string> seen(train.paths().begin(), train.paths().end());
    for (const auto& p : test.paths()) CHECK_FALSE(seen.contains(p));

    auto [fixed_train, fixed_test] = load_image_folder(dir.path(), 16, 0.9, 3, 10);
    CHECK(fixed_test.class_histogram() == std::vector<int64_t>{10, 10});
}

TEST_CASE("stratification stays within one image of the fraction") {
    testing::TempDir dir("strat");
    write_folder(dir.path(), {{"a", 7}, {"b", 13}, {"c", 31}});
    auto [train, test] = load_image_folder(dir.path(), 8, 0.8, 0);
    auto tr = train.class_histogram();
    const std::vector<int> totals{7, 13, 31};
    for (size_t c = 0; c < 3; ++c) CHECK(std::abs(tr[c] - 0.8 * totals[c]) <= 1.0);
}

TEST_CASE("empty class and undecodable files") {
    testing::TempDir dir("bad");
    write_folder(dir.path(), {{"good", 3}, {"zzz_empty", 0}});
    try {
        load_image_folder(dir.path(), 8, 0.9, 0);
        FAIL("expected a data error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("zzz_empty") != std::string::npos);
    }
    std::filesystem::remove_all(dir.path() / "zzz_empty");
    std::ofstream(dir.path() / "good" / "broken.png") << "not an image";
    auto [train, test] = load_image_folder(dir.path(), 8, 1.0, 0);
    CHECK(train.size() == 3);
}

TEST_CASE("corpus manifest lists every item") {
    testing::TempDir dir("manifest");
    auto c = synthetic_shapes(2, 3, 8, 0);
    write_manifest(dir.path() / "m.csv", c, c.select(std::vector<int64_t>{0}));
    std::ifstream in(dir.path() / "m.csv");
    int lines = 0;
    for (std::string s; std::getline(in, s);) ++lines;
    CHECK(lines == 1 + 6 + 1);
}

TEST_CASE("batches are seed-deterministic") {
    auto c = synthetic_shapes(2, 10, 8, 0);
    auto g1 = step_generator(1, Stream::batch_source, 5);
    auto g2 = step_generator(1, Stream::batch_source, 5);
    CHECK(bit_equal(sample_batch(c, 4, g1).images, sample_batch(c, 4, g2).images));
}

TEST_CASE("pose axis transfers across classes") {
    auto s = synthetic_shapes_with_poses(2, 300, 32, 11);
    const auto& labels = s.corpus.labels();
    auto x = thumbnails(s.corpus.images());
    std::vector<Eigen::Index> a, b;
    for (size_t i = 0; i < labels.size(); ++i) (labels[i] == 0 ? a : b).push_back(static_cast<Eigen::Index>(i));
    auto target = [&](Eigen::Index i) { return Eigen::Vector2d(s.poses[size_t(i)].cx, s.poses[size_t(i)].cy); };

    Eigen::MatrixXd xa(a.size(), x.cols()), ya(a.size(), 2);
    for (size_t k = 0; k < a.size(); ++k) {
        xa.row(Eigen::Index(k)) = x.row(a[k]);
        ya.row(Eigen::Index(k)) = target(a[k]).transpose();
    }
    // Ridge regression fitted on class 0 only.
    Eigen::MatrixXd gram = xa.transpose() * xa + 1e-2 * Eigen::MatrixXd::Identity(x.cols(), x.cols());
    Eigen::MatrixXd w = gram.ldlt().solve(xa.transpose() * ya);
    Eigen::Vector2d mean_a = ya.colwise().mean().transpose();

    double err = 0, chance = 0;
    for (auto i : b) {
        Eigen::Vector2d t = target(i);
        err += (x.row(i) * w - t.transpose()).squaredNorm();
        chance += (mean_a - t).squaredNorm();
    }
    MESSAGE("probe error " << err / double(b.size()) << " vs chance " << chance / double(b.size()));
    CHECK(err < 0.5 * chance);
}
