#include <doctest.h>

#include <json.hpp>

#include "microdense/planner.hpp"

using namespace microdense;

TEST_CASE("fixed_growth_channels: closed form and loop summation agree") {
  CHECK(fixed_growth_channels(16, 12, 4) == 64);
  CHECK(fixed_growth_channels(16, 12, 0) == 16);
  for (std::int64_t n = 0; n <= 100; ++n) {
    std::int64_t loop = 7;
    for (std::int64_t l = 1; l <= n; ++l) loop += 5;
    CHECK(fixed_growth_channels(7, 5, n) == loop);
  }
}

TEST_CASE("increasing_growth_channels: closed form vs per-layer rates") {
  CHECK(increasing_growth_channels(16, 12, 4, 4) == 88);  // 16 + 48 + 4*6
  CHECK(increasing_growth_channels(16, 12, 0, 4) == fixed_growth_channels(16, 12, 4));
  for (std::int64_t n = 0; n <= 100; ++n) {
    std::int64_t loop = 9;
    for (std::int64_t i = 1; i <= n; ++i) loop += 4 + 3 * (i - 1);
    CHECK(increasing_growth_channels(9, 4, 3, n) == loop);
  }
}

TEST_CASE("growth calculus: increasing >= fixed, equality iff rhat=0 or n<=1") {
  for (std::int64_t rhat : {0, 1, 2, 5})
    for (std::int64_t n = 0; n <= 32; ++n) {
      const auto fixed = fixed_growth_channels(16, 8, n);
      const auto inc = increasing_growth_channels(16, 8, rhat, n);
      CHECK(inc >= fixed);
      if (rhat == 0 || n <= 1)
        CHECK(inc == fixed);
      else
        CHECK(inc > fixed);
    }
}

TEST_CASE("pyramid_widths: reference values, degenerate alpha, and exhaustive sweep") {
  auto w = pyramid_widths(16, 64, 30);
  CHECK(w.size() == 31);
  CHECK(w[0] == 16);
  CHECK(w[10] == 37);  // floor(16 + 640/30)
  CHECK(w[30] == 80);

  for (auto v : pyramid_widths(16, 0, 8)) CHECK(v == 16);

  CHECK_THROWS_AS(pyramid_widths(16, 64, 0), Error);

  for (std::int64_t n = 1; n <= 64; ++n)
    for (std::int64_t alpha = 0; alpha <= 256; alpha += 7) {
      auto ws = pyramid_widths(16, alpha, n);
      for (std::size_t k = 1; k < ws.size(); ++k) CHECK(ws[k] >= ws[k - 1]);
      CHECK(ws.front() == 16);
      CHECK(ws.back() == 16 + alpha);  // k=N: floor(W0 + N*alpha/N) exactly
    }
}

TEST_CASE("cardinality_schedule: k_j = j + 1") {
  CHECK(cardinality_schedule(3) == std::vector<std::int64_t>{2, 3, 4});
  CHECK(cardinality_schedule(1) == std::vector<std::int64_t>{2});
  CHECK_THROWS_AS(cardinality_schedule(0), Error);
  // c_j = (c_0/g_c)*k_j is divisible by k_j whenever g_c | c_0.
  const std::int64_t c0 = 24, gc = 4;
  for (auto k : cardinality_schedule(8)) CHECK(((c0 / gc) * k) % k == 0);
}

TEST_CASE("rational arithmetic: floor_mul is exact") {
  CHECK(floor_mul(64, Rational{1, 4}) == 16);
  CHECK(floor_mul(10, Rational{1, 4}) == 2);
  CHECK(floor_mul(0, Rational{1, 4}) == 0);
  CHECK(floor_mul(7, Rational{9, 40}) == 1);  // floor(1.575)
  CHECK(rational_from_double(0.25).num == 1);
  CHECK(rational_from_double(0.25).den == 4);
  CHECK(rational_from_double(0.225).num == 9);
  CHECK(rational_from_double(0.225).den == 40);
  auto r = rational_from_string("9/40");
  CHECK(r.num == 9);
  CHECK(r.den == 40);
}

TEST_CASE("plan_block: hand-evaluated recurrences for c_in=64, r_a=1/4, n=3") {
  auto b = plan_block("block01", 1, 64, 66, 3, 4, Rational{1, 4}, false, 32, 32);
  CHECK(b.compression_width == 64);  // floor(64/4)*4 = 64
  CHECK(b.dense_widths == std::vector<std::int64_t>{32, 48, 64});
  CHECK(b.cardinalities == std::vector<std::int64_t>{2, 3, 4});

  // Row sequence: bn0, compress, (c1,c3) x3, out.
  REQUIRE(b.layers.size() == 9);
  CHECK(b.layers[0].kind == LayerKind::EntryBN);
  CHECK(b.layers[1].kind == LayerKind::C1BR);
  CHECK(b.layers[1].in_channels == 64);
  CHECK(b.layers[1].out_channels == 64);
  // Dense inputs are the running concatenations 64, 96, 144.
  CHECK(b.layers[2].in_channels == 64);
  CHECK(b.layers[4].in_channels == 96);
  CHECK(b.layers[6].in_channels == 144);
  // Output layer reads 64+32+48+64 = 208.
  CHECK(b.layers[8].in_channels == 208);
  CHECK(b.layers[8].out_channels == 66);

  // All C3-BR rows keep in == out == c_j with groups k_j.
  CHECK(b.layers[3].groups == 2);
  CHECK(b.layers[5].groups == 3);
  CHECK(b.layers[7].groups == 4);
  for (std::size_t i : {3u, 5u, 7u}) {
    CHECK(b.layers[i].kind == LayerKind::C3BR);
    CHECK(b.layers[i].in_channels == b.layers[i].out_channels);
  }
}

TEST_CASE("plan_block: n=1 yields compression + one dense layer + output") {
  auto b = plan_block("b", 1, 16, 20, 1, 4, Rational{1, 4}, false, 8, 8);
  REQUIRE(b.layers.size() == 5);  // bn0, compress, c1, c3, out
  CHECK(b.dense_widths.size() == 1);
  CHECK(b.shortcut == ShortcutKind::ZeroPad);
}

TEST_CASE("plan_block: degenerate compression errors with a remediation hint") {
  CHECK_THROWS_WITH_AS(plan_block("b", 1, 3, 8, 3, 4, Rational{1, 4}, false, 8, 8),
                       doctest::Contains("raise the compression ratio"), Error);
}

TEST_CASE("plan_block: pyramidal strict increase and divisibility invariants") {
  for (std::int64_t c_in : {8, 16, 24, 40, 64, 96})
    for (int n : {1, 2, 3, 4, 5})
      for (auto ra : {Rational{1, 4}, Rational{9, 40}, Rational{1, 2}}) {
        auto b = plan_block("b", 1, c_in, c_in + 8, n, 4, ra, false, 16, 16);
        for (std::size_t j = 1; j < b.dense_widths.size(); ++j)
          CHECK(b.dense_widths[j] > b.dense_widths[j - 1]);
        for (const auto& l : b.layers) {
          if (!l.has_conv()) continue;
          CHECK(l.in_channels % l.groups == 0);
          CHECK(l.out_channels % l.groups == 0);
        }
      }
}

TEST_CASE("plan_block: downsampling merges a 4x4 stride-2 compression") {
  auto b = plan_block("b", 11, 37, 39, 3, 4, Rational{1, 4}, true, 32, 32);
  CHECK(b.downsample);
  CHECK(b.shortcut == ShortcutKind::DownsampleZeroPad);
  CHECK(b.layers[1].kind == LayerKind::DownsampleConv);
  CHECK(b.layers[1].kernel == 4);
  CHECK(b.layers[1].stride == 2);
  CHECK(b.layers[1].out_h == 16);
  CHECK(b.layers.back().kind == LayerKind::ShortcutPool);
  CHECK(b.layers.back().out_h == 16);
}

TEST_CASE("plan_network: 30a64 structure and spatial trace") {
  ArchConfig cfg;  // defaults are the 30a64 CIFAR config
  auto plan = plan_network(cfg);
  CHECK(plan.blocks.size() == 30);
  CHECK(plan.stem.size() == 1);
  CHECK(plan.stem[0].kind == LayerKind::StemConvBN);

  // Spatial trace 32 -> 32 -> 16 -> 8 at stage entries.
  CHECK(plan.blocks[0].layers[1].out_h == 32);
  CHECK(plan.blocks[10].downsample);
  CHECK(plan.blocks[10].layers[1].out_h == 16);
  CHECK(plan.blocks[20].downsample);
  CHECK(plan.blocks[20].layers[1].out_h == 8);
  CHECK(plan.head[0].in_h == 8);
  CHECK(plan.head.back().kind == LayerKind::Linear);
  CHECK(plan.head.back().out_channels == 10);

  // Output widths follow the pyramid schedule.
  auto w = pyramid_widths(16, 64, 30);
  for (std::size_t k = 0; k < 30; ++k) {
    CHECK(plan.blocks[k].in_channels == w[k]);
    CHECK(plan.blocks[k].out_channels == w[k + 1]);
  }
}

TEST_CASE("plan_network: stage blocks must sum to num_blocks") {
  ArchConfig cfg;
  cfg.stage_blocks = {10, 10};
  CHECK_THROWS_WITH_AS(plan_network(cfg), doctest::Contains("sums to"), Error);
}

TEST_CASE("flops: convention arithmetic and the independent walker") {
  ConvSpec c1{4, 4, 1, 1, 1, 0, 1, false};
  CHECK(conv_flops(c1, 8, 8) == 2048);  // 2*64*4*4
  ConvSpec c4{4, 4, 1, 1, 1, 0, 4, false};
  CHECK(conv_flops(c4, 8, 8) == 512);

  // Independent walker: re-derive spatial sizes from the config and re-sum.
  ArchConfig cfg;
  cfg.num_blocks = 6;
  cfg.stage_blocks = {2, 2, 2};
  auto plan = plan_network(cfg);
  std::int64_t total = 0;
  for (const auto* l : plan.all_layers()) {
    std::int64_t f = 0;
    const std::int64_t spatial = l->out_h * l->out_w;
    switch (l->kind) {
      case LayerKind::StemConvBN:
        f = 2 * spatial * l->out_channels * l->in_channels * 9 +
            4 * spatial * l->out_channels;
        break;
      case LayerKind::EntryBN:
        f = 4 * spatial * l->out_channels;
        break;
      case LayerKind::C1BR:
        f = 2 * spatial * l->out_channels * l->in_channels +
            5 * spatial * l->out_channels;
        break;
      case LayerKind::C3BR:
        f = 2 * spatial * l->out_channels * (l->in_channels / l->groups) * 9 +
            5 * spatial * l->out_channels;
        break;
      case LayerKind::DownsampleConv:
        f = 2 * spatial * l->out_channels * l->in_channels * 16 +
            5 * spatial * l->out_channels;
        break;
      case LayerKind::ShortcutPool:
        f = 4 * spatial * l->out_channels;
        break;
      case LayerKind::HeadBN:
        f = 5 * spatial * l->out_channels;
        break;
      case LayerKind::GlobalPool:
        f = l->in_channels * l->in_h * l->in_w;
        break;
      case LayerKind::Linear:
        f = 2 * l->in_channels * l->out_channels + l->out_channels;
        break;
    }
    CHECK(f == l->flop_count);
    total += f;
  }
  CHECK(total == plan.flop_total);
}

TEST_CASE("parameter growth: quadratic without groups, linear with adaptive groups") {
  // Channels grow linearly as c(l) = 8*(l+1); groups grow as k(l) = l+1.
  auto plain_count = [](std::int64_t l) {
    ConvSpec s{8 * (l + 1), 8 * (l + 1), 3, 3, 1, 1, 1, false};
    return count_params(s, CountMode::Exact);
  };
  auto grouped_count = [](std::int64_t l) {
    ConvSpec s{8 * (l + 1), 8 * (l + 1), 3, 3, 1, 1, l + 1, false};
    return count_params(s, CountMode::Exact);
  };
  // Ratio test over l in [1,32]: plain cost divided by width^2 is constant
  // (quadratic growth), grouped cost divided by width is constant (linear).
  const double plain_unit = static_cast<double>(plain_count(1)) / 4.0;
  const double grouped_unit = static_cast<double>(grouped_count(1)) / 2.0;
  for (std::int64_t l = 1; l <= 32; ++l) {
    const double w = static_cast<double>(l + 1);
    CHECK(static_cast<double>(plain_count(l)) / (w * w) ==
          doctest::Approx(plain_unit).epsilon(1e-12));
    CHECK(static_cast<double>(grouped_count(l)) / w ==
          doctest::Approx(grouped_unit).epsilon(1e-12));
    // A quadratic curve outpaces a linear one at every doubling.
    CHECK(static_cast<double>(plain_count(2 * l)) / plain_count(l) >
          static_cast<double>(grouped_count(2 * l)) / grouped_count(l));
  }
}

TEST_CASE("plan JSON round-trip preserves every field") {
  ArchConfig cfg;
  cfg.num_blocks = 6;
  cfg.stage_blocks = {2, 2, 2};
  cfg.compression_ratio = Rational{9, 40};
  auto plan = plan_network(cfg);
  auto j = plan_to_json(plan);
  auto back = plan_from_json(j);
  CHECK(back.param_total == plan.param_total);
  CHECK(back.flop_total == plan.flop_total);
  CHECK(back.blocks.size() == plan.blocks.size());
  for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
    CHECK(back.blocks[i].layers.size() == plan.blocks[i].layers.size());
    for (std::size_t l = 0; l < plan.blocks[i].layers.size(); ++l) {
      const auto& a = plan.blocks[i].layers[l];
      const auto& b = back.blocks[i].layers[l];
      CHECK(a.name == b.name);
      CHECK(a.kind == b.kind);
      CHECK(a.param_count == b.param_count);
      CHECK(a.flop_count == b.flop_count);
      CHECK(a.groups == b.groups);
      CHECK(a.out_h == b.out_h);
    }
  }
  CHECK(back.config.compression_ratio.num == 9);
  CHECK(back.config.compression_ratio.den == 40);
}

TEST_CASE("render_plan emits one block section per block and a total line") {
  ArchConfig cfg;
  cfg.num_blocks = 3;
  cfg.stage_blocks = {1, 1, 1};
  auto text = render_plan(plan_network(cfg), true);
  CHECK(text.find("block01") != std::string::npos);
  CHECK(text.find("block03") != std::string::npos);
  CHECK(text.find("total: params=") != std::string::npos);
}
