#include "doctest_fwd.hpp"

#include <fstream>

#include "support.hpp"
#include "transferi2i/checkpoint.hpp"
#include "transferi2i/config.hpp"
#include "transferi2i/errors.hpp"
#include "transferi2i/nets.hpp"

using namespace transferi2i;

TEST_CASE("checkpoint save, load, save is byte identical") {
    testing::TempDir dir("ckpt");
    auto spec = testing::tiny_spec(3);
    auto n = nets::build_networks(spec, true, 0);
    Checkpoint ck;
    ck.stage = Stage::selfinit;
    ck.step = 17;
    ck.seed = 0xfeedULL;
    ck.spec = spec;
    ck.conditional = true;
    ck.sharing.num_shared_resblocks = 1;
    ck.sharing.shared_param_names = {"rb0.conv1.weight"};
    ck.extra["note"] = "x";
    store_module(ck, "G", *n.generator);
    store_module(ck, "A", *n.adaptor);
    ck.tensors["counts"] = torch::arange(5, torch::kLong);

    ck.save(dir.path() / "a.ckpt");
    auto back = Checkpoint::load(dir.path() / "a.ckpt");
    back.save(dir.path() / "b.ckpt");
    auto read = [](const std::filesystem::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(f), {});
    };
    CHECK(read(dir.path() / "a.ckpt") == read(dir.path() / "b.ckpt"));
    CHECK(back.stage == Stage::selfinit);
    CHECK(back.step == 17);
    CHECK(back.seed == 0xfeedULL);
    CHECK(back.spec == spec);
    CHECK(back.sharing.shared_param_names == ck.sharing.shared_param_names);
    CHECK(back.extra["note"] == "x");

    nets::Generator g(spec, true);
    load_module(back, "G", *g);
    CHECK(parameter_hash(*g) == parameter_hash(*n.generator));
}

TEST_CASE("checkpoint errors") {
    testing::TempDir dir("ckpt_bad");
    CHECK_THROWS_AS(Checkpoint::load(dir.path() / "missing.ckpt"), CheckpointError);
    std::ofstream(dir.path() / "junk.ckpt") << "garbage";
    CHECK_THROWS_AS(Checkpoint::load(dir.path() / "junk.ckpt"), CheckpointError);

    Checkpoint ck;
    ck.stage = Stage::base;
    CHECK_THROWS_AS(require_stage(ck, Stage::pretrain, "test"), StageTagError);
    CHECK_NOTHROW(require_stage(ck, Stage::base, "test"));

    auto spec = testing::tiny_spec();
    nets::Generator g(spec, false);
    CHECK_THROWS_AS(load_module(ck, "G", *g), CheckpointError);
}

TEST_CASE("sha256 of a known string") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("config defaults follow the two-class table") {
    auto c = parse_config("");
    CHECK(c.lr_g == 1e-5);
    CHECK(c.lr_ad == 1e-3);
    CHECK(c.beta1 == 0.0);
    CHECK(c.beta2 == 0.99);
    CHECK(c.batch_size == 16);
    CHECK(c.lambda_aux == 0.01);
    CHECK(c.lambda_rec == 1.0);
    CHECK(c.alpha_or_default() == std::vector<double>(4, 1.0));
    CHECK(c.shared_resblocks == 4);
    CHECK(c.w_or_default() == std::vector<double>{1.0, 1.0, 1.0, 0.1});
}

TEST_CASE("config file, overrides and unknown keys") {
    auto c = parse_config("# comment\nconditional = true\nlambda_rec = 2\nsteps_i2i = 7\n", {"lambda_rec=3"});
    CHECK(c.conditional);
    CHECK(c.lr_g == 5e-5);
    CHECK(c.lambda_rec == 3.0);
    CHECK(c.steps_i2i == 7);
    CHECK_THROWS_AS(parse_config("lamda_rec = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("", {"nonsense=1"}), ConfigError);
    CHECK_THROWS_AS(parse_config("steps_i2i = many\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("shared_resblocks = 5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("no equals sign\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.cfg"), ConfigError);
}

TEST_CASE("config text round trip") {
    auto c = parse_config("alpha = 1,0.5,0.25,2\nseed = 12345678901\nchannels_base = 8\n");
    auto back = parse_config(c.to_text());
    CHECK(back.to_text() == c.to_text());
    CHECK(back.alpha == std::vector<double>{1, 0.5, 0.25, 2});
    CHECK(back.seed == 12345678901ULL);
    CHECK(config_keys().contains("lambda_aux"));
}
