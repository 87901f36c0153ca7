#include <doctest.h>

#include <fstream>

#include "test_support.hpp"
#include "weakheight/ensemble.hpp"
#include "weakheight/errors.hpp"

using namespace weakheight;

namespace {

ModelConfig tiny_config(int branches = 3) {
  ModelConfig c;
  c.n_branches = branches;
  c.input_rows = 16;
  c.input_cols = 16;
  c.stem_factor = 2;
  c.encoder_widths = {4, 8};
  c.decoder_widths = {4};
  c.classifier_channels = 4;
  c.classifier_hidden = 4;
  return c;
}

std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_SUITE("ensemble") {
  TEST_CASE("config validation") {
    CHECK_NOTHROW(validate_model_config(tiny_config()));
    CHECK(tiny_config().downsampling_factor() == 4);
    CHECK(ModelConfig{}.downsampling_factor() == 16);

    auto c = tiny_config();
    c.input_rows = 18;
    CHECK_THROWS_AS(validate_model_config(c), ConfigError);
    c = tiny_config();
    c.n_branches = 4;
    CHECK_THROWS_AS(validate_model_config(c), ConfigError);
    c = tiny_config();
    c.decoder_widths = {4, 4};
    CHECK_THROWS_AS(validate_model_config(c), ConfigError);
    CHECK_THROWS_AS(EnsembleNet{c}, ConfigError);

    const auto round = model_config_from_json(model_config_to_json(tiny_config()));
    CHECK(model_config_to_json(round) == model_config_to_json(tiny_config()));
    auto doc = model_config_to_json(tiny_config());
    doc["depth"] = 3;
    CHECK_THROWS_AS(model_config_from_json(doc), ConfigError);
  }

  TEST_CASE("forward shapes and probabilities") {
    torch::manual_seed(0);
    EnsembleNet net(tiny_config());
    const auto out = net->forward(torch::rand({2, 3, 16, 16}));
    CHECK(out.branch_heights.sizes() == torch::IntArrayRef({2, 3, 16, 16}));
    CHECK(out.class_logits.sizes() == torch::IntArrayRef({2, 3}));
    CHECK(torch::allclose(out.class_probs.sum(1), torch::ones({2}), 1e-6, 1e-6));
    CHECK(blend(out).sizes() == torch::IntArrayRef({2, 16, 16}));
    CHECK(branch_prediction(out, QualityClass::Low).sizes() == torch::IntArrayRef({2, 16, 16}));
    CHECK_THROWS_AS(net->forward(torch::rand({1, 3, 18, 16})), DataError);
    CHECK_THROWS_AS(net->forward(torch::rand({1, 1, 16, 16})), DataError);

    EnsembleNet two(tiny_config(2));
    CHECK_THROWS_AS(branch_prediction(two->forward(torch::rand({1, 3, 16, 16})), QualityClass::Low), std::out_of_range);

    EnsembleNet single(tiny_config(1));
    const auto s = single->forward(torch::rand({1, 3, 16, 16}));
    CHECK(s.class_probs.sizes() == torch::IntArrayRef({1, 1}));
    CHECK(s.class_probs.item<float>() == 1.0f);
  }

  TEST_CASE("evaluation is deterministic") {
    torch::manual_seed(1);
    EnsembleNet net(tiny_config());
    net->eval();
    torch::NoGradGuard guard;
    const auto x = torch::rand({3, 3, 16, 16});
    const auto a = net->forward(x);
    const auto b = net->forward(x);
    CHECK(torch::equal(a.branch_heights, b.branch_heights));
    CHECK(torch::equal(a.class_probs, b.class_probs));
  }

  TEST_CASE("blending") {
    EnsembleOutput out;
    out.branch_heights = torch::stack({torch::full({1, 4, 4}, 2.0), torch::full({1, 4, 4}, 4.0)}, 1);
    out.class_probs = torch::tensor({{0.5f, 0.5f}});
    CHECK(torch::allclose(blend(out), torch::full({1, 4, 4}, 3.0)));
    CHECK(torch::allclose(blend(out, torch::tensor({0.25f, 0.75f})), torch::full({1, 4, 4}, 3.5)));
    CHECK(torch::allclose(blend(out, torch::tensor({{1.0f, 0.0f}})), torch::full({1, 4, 4}, 2.0)));
    CHECK(torch::equal(branch_prediction(out, 1), torch::full({1, 4, 4}, 4.0)));
  }

  TEST_CASE("a branch loss only reaches its own decoder and the encoder") {
    torch::manual_seed(2);
    EnsembleNet net(tiny_config());
    const auto out = net->forward(torch::rand({2, 3, 16, 16}));
    branch_prediction(out, 1).sum().backward();
    const auto groups = net->parameter_groups();
    auto touched = [&](const std::string& name) {
      for (const auto& p : groups.at(name)) {
        if (p.grad().defined() && p.grad().abs().sum().item<double>() > 0) return true;
      }
      return false;
    };
    CHECK(touched("encoder"));
    CHECK(touched("decoder_1"));
    CHECK_FALSE(touched("decoder_0"));
    CHECK_FALSE(touched("decoder_2"));
    CHECK_FALSE(touched("classifier"));
  }

  TEST_CASE("parameter groups partition the parameters") {
    EnsembleNet net(tiny_config());
    const auto groups = net->parameter_groups();
    CHECK(groups.size() == 5);
    std::size_t grouped = 0;
    for (const auto& [name, params] : groups) grouped += params.size();
    CHECK(grouped == net->parameters().size());
    CHECK(EnsembleNet(tiny_config(1))->parameter_groups().count("classifier") == 0);
  }

  TEST_CASE("inference modes") {
    CHECK(InferenceMode::from_string("classifier").kind == InferenceMode::Kind::Classifier);
    CHECK(InferenceMode::from_string("uniform").kind == InferenceMode::Kind::Uniform);
    const auto b = InferenceMode::from_string("branch:2");
    CHECK(b.kind == InferenceMode::Kind::Branch);
    CHECK(b.branch == 2);
    CHECK(b.to_string() == "branch:2");
    CHECK_THROWS_AS(InferenceMode::from_string("branch:x"), ConfigError);
    CHECK_THROWS_AS(InferenceMode::from_string("mean"), ConfigError);
    CHECK_THROWS_AS(EnsemblePredictor(EnsembleNet(tiny_config(2)), InferenceMode::from_string("branch:2")),
                    ConfigError);
  }

  TEST_CASE("predictors") {
    torch::manual_seed(3);
    const auto patch = testsupport::box_patch(16, 16);
    EnsemblePredictor pred(EnsembleNet(tiny_config()), InferenceMode{}, 2);
    const auto maps = pred.predict({&patch, &patch, &patch});
    REQUIRE(maps.size() == 3);
    CHECK(maps[0].size() == 256);
    // the same patch in different chunks
    CHECK(torch::allclose(torch::tensor(maps[0]), torch::tensor(maps[2]), 1e-5, 1e-5));

    OraclePredictor oracle;
    CHECK(oracle.predict({&patch})[0] == patch.height);
  }

  TEST_CASE("checkpoint round-trip") {
    torch::manual_seed(4);
    const auto dir = testsupport::scratch_dir("checkpoint");
    EnsembleNet net(tiny_config());
    save_checkpoint(make_checkpoint(net, InferenceMode::from_string("uniform"), {{"epoch", 3}}), dir / "m.wkc");
    const auto ck = load_checkpoint(dir / "m.wkc");
    CHECK(ck.kind == "ensemble");
    CHECK(ck.inference.to_string() == "uniform");
    CHECK(ck.metadata["epoch"] == 3);

    auto restored = restore_model(ck);
    net->eval();
    restored->eval();
    torch::NoGradGuard guard;
    const auto x = torch::rand({1, 3, 16, 16});
    CHECK(torch::equal(net->forward(x).branch_heights, restored->forward(x).branch_heights));

    save_checkpoint(make_oracle_checkpoint(), dir / "o.wkc");
    const auto patch = testsupport::box_patch(16, 16);
    CHECK(make_predictor(load_checkpoint(dir / "o.wkc"))->predict({&patch})[0] == patch.height);
  }

  TEST_CASE("checkpoint errors") {
    torch::manual_seed(5);
    const auto dir = testsupport::scratch_dir("checkpoint_errors");
    save_checkpoint(make_checkpoint(EnsembleNet(tiny_config()), InferenceMode{}), dir / "m.wkc");
    const auto good = read_bytes(dir / "m.wkc");

    auto bytes = good;
    bytes[0] = 'X';
    write_bytes(dir / "bad.wkc", bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "bad.wkc"), doctest::Contains("magic"), FormatError);

    bytes = good;
    bytes[4] = 7;
    write_bytes(dir / "bad.wkc", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.wkc"), FormatError);

    bytes = good;
    bytes.resize(bytes.size() - 4);
    write_bytes(dir / "bad.wkc", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.wkc"), FormatError);

    bytes.assign(good.begin(), good.begin() + 5);
    write_bytes(dir / "bad.wkc", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.wkc"), FormatError);

    CHECK_THROWS_AS(load_checkpoint(dir / "missing.wkc"), DataError);
  }

  TEST_CASE("parameter snapshots") {
    torch::manual_seed(6);
    EnsembleNet net(tiny_config());
    const auto snap = snapshot_parameters(net);
    {
      torch::NoGradGuard guard;
      for (auto& p : net->parameters()) p.add_(1.0);
    }
    load_parameters(net, snap);
    for (const auto& item : net->named_parameters()) CHECK(torch::equal(item.value(), snap.at(item.key())));

    EnsembleNet other(tiny_config(2));
    CHECK_THROWS_AS(load_parameters(other, snap), DataError);
  }
}
