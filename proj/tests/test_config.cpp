#include <doctest.h>

#include "pepler/config.hpp"
#include "pepler/errors.hpp"

using namespace pepler::cli;

namespace {

const char* kSample = R"(# sample configuration
[paths]
dataset = data/sample.jsonl
tokenizer = out/tok
backbone = out/backbone.ckpt
checkpoint = out/model.ckpt
log = out/train.csv
split = out/split.json

[model]
layers = 2
heads = 2
dim = 32
ffn_dim = 64
max_seq = 48
vocab = 512
attn_scale = per_head
pos_on_prompt = true

[training]
mode = continuous
strategy = sequential
lambda = 0.1
batch = 16
patience = 5
max_epochs = 20

[run]
seed = 7
precision = f64
)";

}  // namespace

TEST_CASE("config file parses into typed fields") {
  auto c = parse_config(kSample, "mem");
  CHECK(c.dataset == "data/sample.jsonl");
  CHECK(c.tokenizer == "out/tok");
  CHECK(c.layers == 2);
  CHECK(c.heads == 2);
  CHECK(c.dim == 32);
  CHECK(c.ffn_dim == 64);
  CHECK(c.max_seq == 48);
  CHECK(c.vocab == 512);
  CHECK(c.pos_on_prompt == true);
  CHECK(c.mode == "continuous");
  CHECK(c.strategy == "sequential");
  CHECK(c.lambda == doctest::Approx(0.1));
  CHECK(c.batch == 16);
  CHECK(c.seed == 7);
  CHECK(c.precision == "f64");
  validate_config(c);
}

TEST_CASE("defaults are sensible without a file") {
  Config c;
  validate_config(c);
  CHECK(c.layers == 4);
  CHECK(c.heads == 4);
  CHECK(c.dim == 128);
  CHECK(c.ffn_dim == 512);
  CHECK(c.max_seq == 64);
  CHECK(c.vocab == 8192);
  CHECK(c.batch == 128);
  CHECK(c.patience == 5);
  CHECK(c.weight_decay == doctest::Approx(0.01));
  CHECK(c.mlp_layers == 2);
  CHECK(c.mlp_hidden == 400);
  CHECK(c.prompt_budget == 20);
  CHECK(c.max_new == 20);
  CHECK(c.precision == "f32");
}

TEST_CASE("learning rate defaults depend on the prompt mode") {
  Config c;
  c.mode = "continuous";
  CHECK(c.resolved_lr() == doctest::Approx(1e-3));
  c.mode = "discrete";
  CHECK(c.resolved_lr() == doctest::Approx(1e-4));
  c.lr = 0.5;
  CHECK(c.resolved_lr() == doctest::Approx(0.5));
  CHECK(c.resolved_lr_stage2() == doctest::Approx(0.5));
  c.lr_stage2 = 0.25;
  CHECK(c.resolved_lr_stage2() == doctest::Approx(0.25));
}

TEST_CASE("unknown keys and sections are rejected") {
  CHECK_THROWS_WITH_AS(parse_config("[model]\nwidth = 3\n", "mem"),
                       doctest::Contains("unknown key"), pepler::ParseError);
  CHECK_THROWS_WITH_AS(parse_config("[models]\ndim = 3\n", "mem"),
                       doctest::Contains("unknown section"),
                       pepler::ParseError);
  CHECK_THROWS_AS(parse_config("dim = 3\n", "mem"), pepler::ParseError);
  CHECK_THROWS_AS(parse_config("[model]\ndim\n", "mem"), pepler::ParseError);
  CHECK_THROWS_AS(parse_config("[model]\ndim = abc\n", "mem"),
                  pepler::ParseError);
  CHECK_THROWS_AS(parse_config("[model]\npos_on_prompt = maybe\n", "mem"),
                  pepler::ParseError);
}

TEST_CASE("overrides reuse the same key table") {
  Config c;
  set_config_key(c, "training.lambda", "0.5");
  CHECK(c.lambda == doctest::Approx(0.5));
  set_config_key(c, "run.seed", "99");
  CHECK(c.seed == 99);
  set_config_key(c, "model.attn_scale", "model_dim");
  CHECK(c.attn_scale == "model_dim");
  CHECK_THROWS_AS(set_config_key(c, "training.nope", "1"), pepler::ParseError);
}

TEST_CASE("validation rejects bad values") {
  auto bad = [](auto&& mutate) {
    Config c;
    mutate(c);
    CHECK_THROWS_AS(validate_config(c), pepler::ValidationError);
  };
  bad([](Config& c) { c.dim = 30; });             // not divisible by heads
  bad([](Config& c) { c.heads = 0; });
  bad([](Config& c) { c.vocab = 100; });
  bad([](Config& c) { c.attn_scale = "nope"; });
  bad([](Config& c) { c.mode = "both"; });
  bad([](Config& c) { c.strategy = "yolo"; });
  bad([](Config& c) { c.lambda = -1; });
  bad([](Config& c) { c.batch = 0; });
  bad([](Config& c) { c.valid_fraction = 1.0; });
  bad([](Config& c) { c.precision = "f16"; });
}

TEST_CASE("config maps to flat key-value pairs for checkpoints") {
  auto c = parse_config(kSample, "mem");
  auto m = config_to_map(c);
  CHECK(m.at("model.dim") == "32");
  CHECK(m.at("training.strategy") == "sequential");
  CHECK(m.at("run.seed") == "7");
  CHECK(m.at("run.precision") == "f64");
  CHECK(m.at("paths.dataset") == "data/sample.jsonl");
  CHECK(m.count("training.lambda") == 1);
}
