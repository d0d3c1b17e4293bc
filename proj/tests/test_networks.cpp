// Network stack: architecture config, the encoder-decoder with taps, the
// single-step predictor built from the noise predictor, timestep-conditioned
// projection heads, gradients against finite differences, and checkpoints.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include "denseprior/checkpoint.hpp"
#include "denseprior/diffusion.hpp"
#include "denseprior/losses.hpp"
#include "denseprior/nn.hpp"
#include "denseprior/projection.hpp"
#include "denseprior/rng.hpp"
#include "denseprior/unet.hpp"

using namespace dp;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.input_height = 16;
  cfg.input_width = 16;
  cfg.base_channels = 2;
  cfg.depth_levels = 2;
  cfg.tap_indices = {0, 1};
  cfg.output_channels = 1;
  cfg.timestep_embed_dim = 4;
  return cfg;
}

TensorF random_image(Rng& rng, int c, int h, int w, float lo = -1.0f,
                     float hi = 1.0f) {
  TensorF x({c, h, w});
  for (float& v : x.v) v = float(rng.uniform(lo, hi));
  return x;
}

bool bit_equal(const TensorF& a, const TensorF& b) {
  return a.shape == b.shape && a.v == b.v;
}

std::filesystem::path temp_dir(const std::string& tag) {
  auto d = std::filesystem::temp_directory_path() /
           ("denseprior_net_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

// Scalar objective used by the gradient checks: alignment between projected
// student taps and teacher taps, plus a quadratic prediction penalty.
struct PipelineLoss {
  Network* teacher;
  NoiseSchedule sched;
  TensorF x, eps, target;
  int t = 1;
  double lambda = 0.7;

  double value(PredictorState& st) {
    auto [pred, taps] = student_forward(st, x);
    TapBundle tt = teacher_forward(*teacher, x, eps, t, sched);
    TapBundle proj = project(st, taps, t);
    double task = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
      const double d = double(pred.v[i]) - double(target.v[i]);
      task += d * d;
    }
    task /= double(pred.size());
    return loss_agg(proj, tt) + lambda * task;
  }

  // Accumulates d(value)/d(params) into the state's gradients.
  double value_and_grad(PredictorState& st) {
    auto [pred, taps] = student_forward(st, x);
    TapBundle tt = teacher_forward(*teacher, x, eps, t, sched);
    TapBundle proj = project(st, taps, t);
    std::vector<TensorF> dproj(proj.taps.size());
    for (size_t k = 0; k < dproj.size(); ++k) dproj[k] = TensorF(proj.taps[k].shape);
    const double agg = loss_agg(proj, tt, &dproj);
    double task = 0.0;
    TensorF dpred(pred.shape);
    const float ks = float(lambda * 2.0 / double(pred.size()));
    for (size_t i = 0; i < pred.size(); ++i) {
      const double d = double(pred.v[i]) - double(target.v[i]);
      task += d * d;
      dpred.v[i] = ks * float(d);
    }
    task /= double(pred.size());
    std::vector<TensorF> dtaps = project_backward(st, dproj);
    st.student.backward(&dpred, &dtaps);
    return agg + lambda * task;
  }
};

}  // namespace

TEST_CASE("network config validates and round-trips") {
  NetworkConfig cfg;
  REQUIRE_NOTHROW(cfg.validate());
  REQUIRE(cfg.channels_at(0) == 4);
  REQUIRE(cfg.channels_at(2) == 16);

  NetworkConfig back = parse_network_config(cfg.serialize());
  REQUIRE(back.input_height == cfg.input_height);
  REQUIRE(back.input_width == cfg.input_width);
  REQUIRE(back.base_channels == cfg.base_channels);
  REQUIRE(back.depth_levels == cfg.depth_levels);
  REQUIRE(back.tap_indices == cfg.tap_indices);
  REQUIRE(back.output_channels == cfg.output_channels);
  REQUIRE(back.timestep_embed_dim == cfg.timestep_embed_dim);
  REQUIRE(back.depth_scale == cfg.depth_scale);

  NetworkConfig odd = cfg;
  odd.depth_scale = 4.700000000000001;
  REQUIRE(parse_network_config(odd.serialize()).depth_scale == odd.depth_scale);

  auto expect_bad = [](NetworkConfig c) { REQUIRE_THROWS_AS(c.validate(), config_error); };
  { NetworkConfig c; c.depth_levels = 1; expect_bad(c); }
  { NetworkConfig c; c.depth_levels = 7; expect_bad(c); }
  { NetworkConfig c; c.base_channels = 0; expect_bad(c); }
  { NetworkConfig c; c.input_width = 62; expect_bad(c); }
  { NetworkConfig c; c.input_height = 4; expect_bad(c); }  // deepest < 2 px
  { NetworkConfig c; c.tap_indices = {}; expect_bad(c); }
  { NetworkConfig c; c.tap_indices = {0, 0}; expect_bad(c); }
  { NetworkConfig c; c.tap_indices = {2, 1}; expect_bad(c); }
  { NetworkConfig c; c.tap_indices = {0, 3}; expect_bad(c); }  // beyond decoder
  { NetworkConfig c; c.tap_indices = {-1}; expect_bad(c); }
  { NetworkConfig c; c.output_channels = 2; expect_bad(c); }
  { NetworkConfig c; c.timestep_embed_dim = 5; expect_bad(c); }
  { NetworkConfig c; c.timestep_embed_dim = 2; expect_bad(c); }
  { NetworkConfig c; c.depth_scale = 0.0; expect_bad(c); }

  const std::string good = cfg.serialize();
  REQUIRE_THROWS_AS(parse_network_config(good + "mystery=1\n"), format_error);
  REQUIRE_THROWS_AS(parse_network_config(good + "depth_scale=4\n"), format_error);
  REQUIRE_THROWS_AS(parse_network_config("input_height=64\n"), format_error);
  REQUIRE_THROWS_AS(parse_network_config("input_height=abc\n"), format_error);
  {
    std::string broken = good;
    const size_t at = broken.find("tap_indices=0,1,2");
    broken.replace(at, 17, "tap_indices=0,,2x");
    REQUIRE_THROWS_AS(parse_network_config(broken), format_error);
  }
  try {
    parse_network_config(good + "mystery=1\n", /*base=*/1000);
    FAIL("expected format_error");
  } catch (const format_error& e) {
    REQUIRE(e.offset == 1000 + good.size());
  }
}

TEST_CASE("noise-predictor shapes follow the architecture contract") {
  NetworkConfig cfg;
  cfg.input_height = 64;
  cfg.input_width = 64;
  cfg.base_channels = 32;
  cfg.depth_levels = 3;
  cfg.tap_indices = {0, 1, 2};
  cfg.output_channels = 3;
  cfg.timestep_embed_dim = 32;
  Network net = build_teacher(cfg, 11);

  Rng rng(5);
  const TensorF x = random_image(rng, 3, 64, 64);
  NetOut o = net.forward(x, 10);
  REQUIRE(o.pred.shape == std::vector<int>{3, 64, 64});
  REQUIRE(o.taps.size() == 3);
  // Two factor-2 downsamplings: the deepest tapped feature is 16x16.
  REQUIRE(o.taps[0].shape == std::vector<int>{128, 16, 16});
  REQUIRE(o.taps[1].shape == std::vector<int>{64, 32, 32});
  REQUIRE(o.taps[2].shape == std::vector<int>{32, 64, 64});

  // The final convolution starts at zero, so the initial prediction is zero.
  for (float v : o.pred.v) REQUIRE(v == 0.0f);

  // Taps are live features, not zeros.
  for (const TensorF& tap : o.taps) {
    double mag = 0.0;
    for (float v : tap.v) mag += std::abs(v);
    REQUIRE(mag > 0.0);
  }

  // A subset tap set picks the same features.
  NetworkConfig sub = cfg;
  sub.tap_indices = {1};
  Network net2 = build_teacher(sub, 11);
  NetOut o2 = net2.forward(x, 10);
  REQUIRE(o2.taps.size() == 1);
  REQUIRE(bit_equal(o2.taps[0], o.taps[1]));
  REQUIRE(bit_equal(o2.pred, o.pred));
}

TEST_CASE("seeded builds repeat exactly and differ across seeds") {
  const NetworkConfig cfg = tiny_config();
  Network a = build_teacher(cfg, 42);
  Network b = build_teacher(cfg, 42);
  Network c = build_teacher(cfg, 43);
  REQUIRE(params_checksum(a.params()) == params_checksum(b.params()));
  REQUIRE(params_checksum(a.params()) != params_checksum(c.params()));

  PredictorState s1 = build_student(cfg, a, 7);
  PredictorState s2 = build_student(cfg, b, 7);
  REQUIRE(params_checksum(s1.params()) == params_checksum(s2.params()));

  // Parameter names are unique.
  std::set<std::string> names;
  for (auto& [name, p] : s1.params()) names.insert(name);
  REQUIRE(names.size() == s1.params().size());
}

TEST_CASE("configuration errors: bad taps and architecture mismatch") {
  NetworkConfig cfg = tiny_config();
  cfg.tap_indices = {0, 2};  // decoder has indices 0 and 1 only
  REQUIRE_THROWS_AS(build_teacher(cfg, 1), config_error);

  Network teacher = build_teacher(tiny_config(), 1);
  NetworkConfig deeper = tiny_config();
  deeper.depth_levels = 3;
  deeper.tap_indices = {0, 1, 2};
  REQUIRE_THROWS_AS(build_student(deeper, teacher, 2), config_error);

  NetworkConfig other_taps = tiny_config();
  other_taps.tap_indices = {1};
  REQUIRE_THROWS_AS(build_student(other_taps, teacher, 2), config_error);

  NetworkConfig wider = tiny_config();
  wider.base_channels = 3;
  REQUIRE_THROWS_AS(build_student(wider, teacher, 2), config_error);

  // Output-channel and depth-scale changes are task-side, not architecture.
  NetworkConfig task = tiny_config();
  task.output_channels = 3;
  task.depth_scale = 2.0;
  REQUIRE_NOTHROW(build_student(task, teacher, 2));
}

TEST_CASE("student copies the backbone and replaces task equipment") {
  const NetworkConfig cfg = tiny_config();
  Network teacher = build_teacher(cfg, 21);
  // Make the teacher's head affine distinctive so copying is observable.
  for (auto& [name, p] : teacher.params())
    if (name == "head.gn.b") p->w.v.assign(p->w.v.size(), 0.25f);

  PredictorState st = build_student(cfg, teacher, 99);
  REQUIRE(st.heads.size() == cfg.tap_indices.size());
  REQUIRE(st.step == 0);
  REQUIRE(st.nfe == 0);
  REQUIRE(st.seed == 99);

  std::map<std::string, Param*> tmap;
  for (auto& [name, p] : teacher.params()) tmap[name] = p;
  const std::vector<float> e0 =
      sinusoidal_embedding(0, cfg.timestep_embed_dim);
  size_t copied = 0, fresh = 0;
  for (auto& [name, p] : st.student.params()) {
    if (name == "null.embed") {
      REQUIRE(p->w.v == e0);
      ++fresh;
    } else if (name.rfind("head.conv.", 0) == 0) {
      // Redrawn for the task: one output channel, small but not all-zero
      // weights (a constant output map would be degenerate for the
      // scale-shift-invariant depth statistics).
      if (name == "head.conv.w") {
        REQUIRE(p->w.shape[0] == 1);
        double mag = 0.0, peak = 0.0;
        for (float v : p->w.v) {
          mag += std::abs(v);
          peak = std::max(peak, double(std::abs(v)));
        }
        REQUIRE(mag > 0.0);
        REQUIRE(peak < 0.1);
      }
      ++fresh;
    } else {
      REQUIRE(tmap.count(name) == 1);
      REQUIRE(p->w.v == tmap[name]->w.v);
      ++copied;
    }
  }
  REQUIRE(fresh == 3);
  REQUIRE(copied > 10);

  // Projection heads exist per tap and their parameters are live.
  ParamList all = st.params();
  size_t head_params = 0;
  for (auto& [name, p] : all)
    if (name.rfind("proj", 0) == 0) ++head_params;
  REQUIRE(head_params == cfg.tap_indices.size() * 8);
}

TEST_CASE("student forward: deterministic, counted, validated") {
  const NetworkConfig cfg = tiny_config();
  Network teacher = build_teacher(cfg, 3);
  PredictorState st = build_student(cfg, teacher, 4);

  Rng rng(17);
  const TensorF x = random_image(rng, 3, 16, 16);
  auto [p1, b1] = student_forward(st, x);
  auto [p2, b2] = student_forward(st, x);
  REQUIRE(st.nfe == 2);
  REQUIRE(bit_equal(p1, p2));
  REQUIRE(b1.tag == TapTag::student_clean);
  REQUIRE(b1.t == -1);
  REQUIRE(b1.taps.size() == 2);
  for (size_t k = 0; k < b1.taps.size(); ++k)
    REQUIRE(bit_equal(b1.taps[k], b2.taps[k]));
  REQUIRE(p1.shape == std::vector<int>{1, 16, 16});
  REQUIRE(b1.taps[0].shape == std::vector<int>{4, 8, 8});
  REQUIRE(b1.taps[1].shape == std::vector<int>{2, 16, 16});

  const TensorF small = random_image(rng, 3, 8, 8);
  REQUIRE_THROWS_AS(student_forward(st, small), shape_error);
  TensorF hot = x;
  hot.v[5] = 1.5f;
  REQUIRE_THROWS_AS(student_forward(st, hot), range_error);
  REQUIRE(st.nfe == 2);  // failed calls are not evaluations
}

TEST_CASE("unit signal level: noisy taps reduce to clean-image taps") {
  const NetworkConfig cfg = tiny_config();
  Network teacher = build_teacher(cfg, 31);
  NoiseSchedule sched;
  sched.T = 2;
  sched.alpha_bar = {1.0, 0.25};

  Rng rng(8);
  const TensorF x = random_image(rng, 3, 16, 16);
  TensorF eps({3, 16, 16});
  for (float& v : eps.v) v = float(rng.normal());

  TapBundle noisy0 = teacher_forward(teacher, x, eps, 0, sched);
  REQUIRE(noisy0.tag == TapTag::teacher_at_t);
  REQUIRE(noisy0.t == 0);
  NetOut clean = teacher.forward(x, 0);
  for (size_t k = 0; k < noisy0.taps.size(); ++k)
    REQUIRE(bit_equal(noisy0.taps[k], clean.taps[k]));

  // At a lossy signal level the taps genuinely move.
  TapBundle noisy1 = teacher_forward(teacher, x, eps, 1, sched);
  REQUIRE(noisy1.t == 1);
  REQUIRE_FALSE(bit_equal(noisy1.taps[0], clean.taps[0]));

  REQUIRE_THROWS_AS(teacher_forward(teacher, x, eps, 2, sched), range_error);
  REQUIRE_THROWS_AS(teacher_forward(teacher, x, eps, -1, sched), range_error);

  // Copy-initialization equality: the freshly built student's clean taps
  // equal the noise predictor's taps at unit signal level, bit for bit,
  // because the null embedding starts at that timestep's embedding.
  PredictorState st = build_student(cfg, teacher, 77);
  auto [pred, sb] = student_forward(st, x);
  REQUIRE(sb.taps.size() == noisy0.taps.size());
  for (size_t k = 0; k < sb.taps.size(); ++k)
    REQUIRE(bit_equal(sb.taps[k], noisy0.taps[k]));
}

TEST_CASE("projection heads condition on the timestep") {
  const NetworkConfig cfg = tiny_config();
  Network teacher = build_teacher(cfg, 51);
  PredictorState st = build_student(cfg, teacher, 52);

  Rng rng(9);
  const TensorF x = random_image(rng, 3, 16, 16);
  auto [pred, taps] = student_forward(st, x);

  TapBundle a = project(st, taps, 5);
  REQUIRE(a.tag == TapTag::student_clean);
  REQUIRE(a.taps.size() == taps.taps.size());
  for (size_t k = 0; k < a.taps.size(); ++k)
    REQUIRE(a.taps[k].shape == taps.taps[k].shape);

  TapBundle a2 = project(st, taps, 5);
  for (size_t k = 0; k < a.taps.size(); ++k)
    REQUIRE(bit_equal(a.taps[k], a2.taps[k]));

  TapBundle b = project(st, taps, 6);
  for (size_t k = 0; k < a.taps.size(); ++k) {
    float maxdiff = 0.0f;
    for (size_t i = 0; i < a.taps[k].size(); ++i)
      maxdiff = std::max(maxdiff, std::abs(a.taps[k].v[i] - b.taps[k].v[i]));
    REQUIRE(maxdiff > 0.0f);
  }

  NoiseSchedule sched;
  sched.T = 2;
  sched.alpha_bar = {1.0, 0.25};
  TensorF eps({3, 16, 16});
  for (float& v : eps.v) v = float(rng.normal());
  TapBundle tb = teacher_forward(teacher, x, eps, 1, sched);
  REQUIRE_THROWS_AS(project(st, tb, 1), usage_error);
  REQUIRE_THROWS_AS(project(st, taps, -1), range_error);
}

TEST_CASE("layer blocks match finite differences") {
  Rng rng(1234);

  SECTION("3x3 convolution data and weight gradients") {
    Conv3Block conv;
    conv.init(rng, 2, 3);
    TensorF x = random_image(rng, 2, 5, 6);
    TensorF dy = random_image(rng, 3, 5, 6);
    conv.forward(x);
    zero_grads({{"w", &conv.w}, {"b", &conv.b}});
    TensorF dx = conv.backward(dy);

    auto objective = [&](const TensorF& xin) {
      Conv3Block probe = conv;
      TensorF y = probe.forward(xin);
      double j = 0.0;
      for (size_t i = 0; i < y.size(); ++i) j += double(dy.v[i]) * y.v[i];
      return j;
    };
    const float h = 1e-2f;
    for (size_t i = 0; i < x.size(); i += 7) {
      TensorF xp = x, xm = x;
      xp.v[i] += h;
      xm.v[i] -= h;
      const double fd = (objective(xp) - objective(xm)) / (2.0 * h);
      REQUIRE_THAT(double(dx.v[i]),
                   Catch::Matchers::WithinAbs(fd, 1e-3) ||
                       Catch::Matchers::WithinRel(fd, 1e-2));
    }
    // Weight gradient along a random direction.
    TensorF u({3, 2, 3, 3});
    for (float& v : u.v) v = float(rng.normal());
    double analytic = 0.0;
    for (size_t i = 0; i < u.size(); ++i) analytic += double(conv.w.g.v[i]) * u.v[i];
    Conv3Block cp = conv, cm = conv;
    for (size_t i = 0; i < u.size(); ++i) {
      cp.w.w.v[i] += h * u.v[i];
      cm.w.w.v[i] -= h * u.v[i];
    }
    TensorF yp = cp.forward(x), ym = cm.forward(x);
    double jp = 0.0, jm = 0.0;
    for (size_t i = 0; i < yp.size(); ++i) {
      jp += double(dy.v[i]) * yp.v[i];
      jm += double(dy.v[i]) * ym.v[i];
    }
    const double fd = (jp - jm) / (2.0 * h);
    REQUIRE_THAT(analytic, Catch::Matchers::WithinRel(fd, 1e-3));
  }

  SECTION("group normalization gradient") {
    GroupNormBlock gn;
    gn.init(4);
    for (float& v : gn.gamma.w.v) v = 1.0f + 0.3f * float(rng.normal());
    for (float& v : gn.beta.w.v) v = 0.3f * float(rng.normal());
    TensorF x = random_image(rng, 4, 3, 3);
    TensorF dy = random_image(rng, 4, 3, 3);
    gn.forward(x);
    zero_grads({{"g", &gn.gamma}, {"b", &gn.beta}});
    TensorF dx = gn.backward(dy);

    auto objective = [&](const TensorF& xin) {
      GroupNormBlock probe = gn;
      TensorF y = probe.forward(xin);
      double j = 0.0;
      for (size_t i = 0; i < y.size(); ++i) j += double(dy.v[i]) * y.v[i];
      return j;
    };
    const float h = 1e-2f;
    for (size_t i = 0; i < x.size(); i += 5) {
      TensorF xp = x, xm = x;
      xp.v[i] += h;
      xm.v[i] -= h;
      const double fd = (objective(xp) - objective(xm)) / (2.0 * h);
      REQUIRE_THAT(double(dx.v[i]),
                   Catch::Matchers::WithinAbs(fd, 2e-3) ||
                       Catch::Matchers::WithinRel(fd, 2e-2));
    }
  }

  SECTION("pooling and upsampling are exact adjoints") {
    TensorF x = random_image(rng, 2, 6, 6);
    TensorF y = random_image(rng, 2, 3, 3);
    const TensorF px = avgpool2_forward(x);
    const TensorF qy = avgpool2_backward(y);
    double lhs = 0.0, rhs = 0.0;
    for (size_t i = 0; i < px.size(); ++i) lhs += double(px.v[i]) * y.v[i];
    for (size_t i = 0; i < qy.size(); ++i) rhs += double(qy.v[i]) * x.v[i];
    REQUIRE_THAT(lhs, Catch::Matchers::WithinRel(rhs, 1e-6));

    const TensorF ux = upsample2_forward(y);
    const TensorF vy = upsample2_backward(x);
    lhs = rhs = 0.0;
    for (size_t i = 0; i < ux.size(); ++i) lhs += double(ux.v[i]) * x.v[i];
    for (size_t i = 0; i < vy.size(); ++i) rhs += double(vy.v[i]) * y.v[i];
    REQUIRE_THAT(lhs, Catch::Matchers::WithinRel(rhs, 1e-6));
  }
}

TEST_CASE("full pipeline gradient matches finite differences") {
  const NetworkConfig cfg = tiny_config();
  Network teacher = build_teacher(cfg, 61);
  PredictorState st = build_student(cfg, teacher, 62);

  // Nudge every parameter once so no gradient path sits at a symmetric
  // point during the finite-difference comparison.
  Rng nudge(63);
  for (auto& [name, p] : st.params())
    for (float& v : p->w.v) v += 0.01f * float(nudge.normal());

  NoiseSchedule sched;
  sched.T = 4;
  sched.alpha_bar = {1.0, 0.9, 0.5, 0.2};
  Rng rng(64);
  PipelineLoss pl;
  pl.teacher = &teacher;
  pl.sched = sched;
  pl.x = random_image(rng, 3, 16, 16);
  pl.eps = TensorF({3, 16, 16});
  for (float& v : pl.eps.v) v = float(rng.normal());
  pl.target = random_image(rng, 1, 16, 16, 0.0f, 1.0f);
  pl.t = 2;

  ParamList params = st.params();
  zero_grads(params);
  const double L0 = pl.value_and_grad(st);
  REQUIRE(std::isfinite(L0));

  // Directional derivative along a fixed random direction.
  std::vector<std::vector<float>> dir(params.size());
  Rng drng(65);
  double analytic = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    dir[pi].resize(params[pi].second->size());
    for (size_t i = 0; i < dir[pi].size(); ++i) {
      dir[pi][i] = float(drng.normal());
      analytic += double(params[pi].second->g.v[i]) * dir[pi][i];
    }
  }
  const double h = 1e-3;
  auto offset = [&](double s) {
    for (size_t pi = 0; pi < params.size(); ++pi)
      for (size_t i = 0; i < dir[pi].size(); ++i)
        params[pi].second->w.v[i] += float(s) * dir[pi][i];
  };
  offset(h);
  const double lp = pl.value(st);
  offset(-2.0 * h);
  const double lm = pl.value(st);
  offset(h);
  const double fd = (lp - lm) / (2.0 * h);
  INFO("analytic=" << analytic << " fd=" << fd);
  REQUIRE_THAT(analytic, Catch::Matchers::WithinRel(fd, 5e-3));

  // Gradients are nonzero in every major piece of the state.
  auto grad_mag = [&](const std::string& prefix) {
    double m = 0.0;
    for (auto& [name, p] : params)
      if (name.rfind(prefix, 0) == 0)
        for (float g : p->g.v) m += std::abs(g);
    return m;
  };
  REQUIRE(grad_mag("proj") > 0.0);
  REQUIRE(grad_mag("stem") > 0.0);
  REQUIRE(grad_mag("head.conv") > 0.0);
  REQUIRE(grad_mag("null.embed") > 0.0);
  REQUIRE(grad_mag("temb.") > 0.0);
}

TEST_CASE("teacher stays frozen through a student update") {
  const NetworkConfig cfg = tiny_config();
  Network teacher = build_teacher(cfg, 71);
  PredictorState st = build_student(cfg, teacher, 72);
  const uint64_t before = params_checksum(teacher.params());

  NoiseSchedule sched;
  sched.T = 2;
  sched.alpha_bar = {0.99, 0.5};
  Rng rng(73);
  PipelineLoss pl;
  pl.teacher = &teacher;
  pl.sched = sched;
  pl.x = random_image(rng, 3, 16, 16);
  pl.eps = TensorF({3, 16, 16});
  for (float& v : pl.eps.v) v = float(rng.normal());
  pl.target = random_image(rng, 1, 16, 16, 0.0f, 1.0f);
  pl.t = 1;

  ParamList params = st.params();
  zero_grads(params);
  pl.value_and_grad(st);
  Adam opt(1e-3);
  opt.step(params);

  REQUIRE(params_checksum(teacher.params()) == before);
  for (auto& [name, p] : teacher.params())
    for (float g : p->g.v) REQUIRE(g == 0.0f);

  // The update actually moved the student.
  auto [pred, taps] = student_forward(st, pl.x);
  double moved = 0.0;
  for (float v : pred.v) moved += std::abs(v);
  REQUIRE(moved > 0.0);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const auto dir = temp_dir("ckpt");
  const NetworkConfig cfg = tiny_config();
  Network teacher = build_teacher(cfg, 81);
  const std::string tpath = (dir / "teacher.dpck").string();
  save_teacher(tpath, teacher, 123);

  TeacherCheckpoint tc = load_teacher(tpath);
  REQUIRE(tc.step == 123);
  REQUIRE(tc.net.seed == 81);
  REQUIRE(architecture_equals(tc.net.cfg, cfg));
  REQUIRE(params_checksum(tc.net.params()) == params_checksum(teacher.params()));

  PredictorState st = build_student(cfg, teacher, 82);
  Rng rng(83);
  const TensorF x = random_image(rng, 3, 16, 16);
  auto [pred0, taps0] = student_forward(st, x);
  st.step = 7;
  const std::string ppath = (dir / "predict.dpck").string();
  save_predictor(ppath, st);

  PredictorState back = load_predictor(ppath);
  REQUIRE(back.step == 7);
  REQUIRE(back.nfe == 1);
  REQUIRE(back.seed == 82);
  REQUIRE(back.config.output_channels == 1);
  REQUIRE(params_checksum(back.params()) == params_checksum(st.params()));
  auto [pred1, taps1] = student_forward(back, x);
  REQUIRE(bit_equal(pred0, pred1));

  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint format errors carry positions and versions") {
  const auto dir = temp_dir("ckpterr");
  const NetworkConfig cfg = tiny_config();
  Network teacher = build_teacher(cfg, 91);
  const std::string path = (dir / "t.dpck").string();
  save_teacher(path, teacher, 1);

  auto slurp = [&]() {
    std::ifstream f(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  };
  auto spit = [&](const std::string& p, const std::vector<char>& bytes) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), std::streamsize(bytes.size()));
  };
  const std::vector<char> good = slurp();

  {  // version bumped to 2: both versions named, position recorded
    std::vector<char> bad = good;
    bad[4] = 2;
    const std::string p = (dir / "ver.dpck").string();
    spit(p, bad);
    try {
      load_teacher(p);
      FAIL("expected format_error");
    } catch (const format_error& e) {
      REQUIRE(e.offset == 4);
      REQUIRE(std::string(e.what()).find("version 2") != std::string::npos);
      REQUIRE(std::string(e.what()).find("version 1") != std::string::npos);
    }
  }
  {  // a predictor loader refuses a noise-predictor file
    try {
      load_predictor(path);
      FAIL("expected format_error");
    } catch (const format_error& e) {
      REQUIRE(e.offset == 8);
    }
  }
  {  // bad magic
    std::vector<char> bad = good;
    bad[0] = 'X';
    const std::string p = (dir / "magic.dpck").string();
    spit(p, bad);
    try {
      load_teacher(p);
      FAIL("expected format_error");
    } catch (const format_error& e) {
      REQUIRE(e.offset == 0);
    }
  }
  {  // truncation
    std::vector<char> bad(good.begin(), good.begin() + ptrdiff_t(good.size() / 2));
    const std::string p = (dir / "trunc.dpck").string();
    spit(p, bad);
    REQUIRE_THROWS_AS(load_teacher(p), format_error);
  }
  {  // trailing byte
    std::vector<char> bad = good;
    bad.push_back(0);
    const std::string p = (dir / "trail.dpck").string();
    spit(p, bad);
    REQUIRE_THROWS_AS(load_teacher(p), format_error);
  }
  {  // renamed array: reported as unexpected
    std::vector<char> bad = good;
    // find the name "stem.w" in the byte stream and corrupt it
    const std::string needle = "stem.w";
    auto it = std::search(bad.begin(), bad.end(), needle.begin(), needle.end());
    REQUIRE(it != bad.end());
    *it = 'z';
    const std::string p = (dir / "name.dpck").string();
    spit(p, bad);
    REQUIRE_THROWS_AS(load_teacher(p), format_error);
  }
  REQUIRE_THROWS_AS(load_teacher((dir / "absent.dpck").string()), io_error);

  std::filesystem::remove_all(dir);
}

TEST_CASE("optimizer and embedding basics") {
  // Adam drives a quadratic toward its minimum.
  Param p;
  p.init_shape({2});
  p.w.v = {5.0f, -3.0f};
  ParamList pl{{"p", &p}};
  Adam opt(0.05);
  for (int i = 0; i < 400; ++i) {
    p.zero_grad();
    p.g.v[0] = 2.0f * p.w.v[0];
    p.g.v[1] = 2.0f * (p.w.v[1] + 1.0f);
    opt.step(pl);
  }
  REQUIRE(std::abs(p.w.v[0]) < 1e-2f);
  REQUIRE(std::abs(p.w.v[1] + 1.0f) < 1e-2f);
  REQUIRE(opt.steps_taken() == 400);

  // Sinusoidal embedding: t = 0 is all sines zero / cosines one; distinct
  // timesteps give distinct vectors; odd dims are rejected.
  const auto e0 = sinusoidal_embedding(0, 8);
  for (int i = 0; i < 4; ++i) {
    REQUIRE(e0[size_t(i)] == 0.0f);
    REQUIRE(e0[size_t(4 + i)] == 1.0f);
  }
  const auto e5 = sinusoidal_embedding(5, 8);
  REQUIRE(e5 != e0);
  REQUIRE(e5[0] == float(std::sin(5.0)));
  REQUIRE_THROWS_AS(sinusoidal_embedding(1, 7), config_error);

  // Checksum reacts to any single-bit weight change.
  Network net = build_teacher(tiny_config(), 5);
  const uint64_t h0 = params_checksum(net.params());
  net.params()[3].second->w.v[0] += 1e-7f;
  REQUIRE(params_checksum(net.params()) != h0);
}
