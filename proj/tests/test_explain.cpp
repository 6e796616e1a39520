#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "mwp/errors.hpp"
#include "mwp/explain.hpp"
#include "mwp/rng.hpp"

using namespace mwp;

namespace {

ModelConfig tiny_model_cfg() {
  ModelConfig m;
  m.vit.embed_dim = 16;
  m.vit.layers = 1;
  m.vit.heads = 2;
  m.vit.patch_side = 8;
  m.fusion.attn_dim = 16;
  m.fusion.fused_dim = 32;
  m.fusion.stages = 1;
  m.fusion.heads = 2;
  return m;
}

Image noise_image(int side, std::uint64_t seed) {
  Rng rng(seed);
  Image img = Image::filled(side, 0.0);
  for (double& v : img.data) v = rng.uniform(0.0, 1.0);
  return img;
}

FeatureVector sample_features(std::uint64_t seed, int category) {
  Rng rng(seed);
  FeatureVector f;
  for (double& v : f.values) v = rng.uniform(-1.5, 1.5);
  f.category_index = category;
  return f;
}

Tensor row_tensor(std::vector<double> v) {
  Shape shape{1, v.size()};
  return Tensor::from_vector(shape, std::move(v));
}

}  // namespace

TEST_CASE("modality contribution follows the norm ratio exactly") {
  Tensor h_v = row_tensor({3.0, 4.0});    // norm 5
  Tensor h_m = row_tensor({0.0, 12.0});   // norm 12
  McrResult r = mcr(h_v, h_m);
  CHECK(r.s_visual == doctest::Approx(5.0 / (17.0 + 1e-12)).epsilon(1e-14));
  CHECK(r.s_meta == doctest::Approx(12.0 / (17.0 + 1e-12)).epsilon(1e-14));
  CHECK(r.s_visual + r.s_meta < 1.0);
  CHECK(1.0 - (r.s_visual + r.s_meta) < 1e-8);

  McrResult zero = mcr(row_tensor({0.0}), row_tensor({0.0}));
  CHECK(zero.s_visual == 0.0);
  CHECK(zero.s_meta == 0.0);

  McrResult even = mcr(row_tensor({1.0, 2.0, 2.0}), row_tensor({2.0, 1.0, 2.0}));
  CHECK(std::fabs(even.s_visual - even.s_meta) < 1e-12);

  McrResult lopsided = mcr(row_tensor({100.0}), row_tensor({0.0}));
  CHECK(lopsided.s_visual > 0.999999);
  CHECK(lopsided.s_meta == 0.0);
}

TEST_CASE("shapley attribution satisfies efficiency and the null player axiom") {
  ModelConfig cfg = tiny_model_cfg();
  MwpModel model = MwpModel::init(cfg, 42);
  Image img = noise_image(cfg.vit.image_side, 7);
  FeatureVector x = sample_features(13, 4);

  double pred = 0.0, base = 0.0;
  auto t0 = std::chrono::steady_clock::now();
  std::vector<ShapleyItem> items = shapley_exact(model, img, x, 0, &pred, &base);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 5.0);

  REQUIRE(items.size() == 10);
  CHECK(items[0].name == std::string(kSelectedFeatureNames[0]));
  CHECK(items[9].name == "category");

  double phi_sum = 0.0;
  for (const ShapleyItem& it : items) phi_sum += it.phi;
  double scale = std::max(1.0, std::fabs(pred - base));
  CHECK(std::fabs(phi_sum - (pred - base)) / scale < 1e-9);

  FeatureVector x_full = x;
  double direct = model.predict_weight(img, x_full);
  CHECK(pred == direct);  // full-coalition value is the ordinary prediction

  // A feature already at its baseline value contributes exactly nothing.
  FeatureVector null_x = x;
  null_x.values[3] = 0.0;
  std::vector<ShapleyItem> null_items = shapley_exact(model, img, null_x, 0);
  CHECK(null_items[3].phi == 0.0);

  // Same for the category player when it matches the baseline category.
  FeatureVector cat_x = x;
  cat_x.category_index = 0;
  std::vector<ShapleyItem> cat_items = shapley_exact(model, img, cat_x, 0);
  CHECK(cat_items[9].phi == 0.0);

  CHECK_THROWS_AS(shapley_exact(model, img, x, -1), ValidationError);
  CHECK_THROWS_AS(shapley_exact(model, img, x, cfg.categories), ValidationError);
}

TEST_CASE("exchangeable features receive equal shapley credit") {
  ModelConfig cfg = tiny_model_cfg();
  MwpModel model = MwpModel::init(cfg, 99);
  // Make features 1 and 2 indistinguishable to the network.
  Tensor w1 = model.store.at("meta.w1");
  for (int c = 0; c < 128; ++c) w1.data()[2 * 128 + c] = w1.data()[1 * 128 + c];

  Image img = noise_image(cfg.vit.image_side, 21);
  FeatureVector x = sample_features(33, 5);
  x.values[2] = x.values[1];

  std::vector<ShapleyItem> items = shapley_exact(model, img, x, 0);
  CHECK(std::fabs(items[1].phi - items[2].phi) < 1e-6);
  CHECK(std::fabs(items[1].phi) + std::fabs(items[2].phi) > 0.0);
}

TEST_CASE("template substitution fills every placeholder or refuses") {
  std::map<std::string, std::string> fields{{"a", "1"}, {"long_name", "two"}};
  CHECK(render_template("x {a} y {long_name} z", fields) == "x 1 y two z");
  CHECK(render_template("no placeholders", fields) == "no placeholders");
  CHECK(render_template("{a}{a}{a}", fields) == "111");
  try {
    render_template("hello {missing}", fields);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("missing") != std::string::npos);
  }
  CHECK_THROWS_AS(render_template("broken {a", fields), ValidationError);
}

TEST_CASE("the rendered report has both sections and one-decimal numbers") {
  ExplanationReport rep;
  rep.prediction_kg = 123.64;
  rep.baseline_prediction_kg = 110.07;
  rep.has_actual = true;
  rep.actual_kg = 126.44;
  rep.abs_error_kg = 2.8;
  rep.pct_error = 2.21;
  rep.s_visual = 0.538;
  rep.s_meta = 0.462;
  rep.shapley = {{"log_volume", 31.26},  {"density_proxy", -12.84}, {"aspect_xy", 0.4},
                 {"aspect_xz", -0.2},    {"aspect_yz", 0.1},        {"log_lx", 5.91},
                 {"log_ly", 0.05},       {"log_lz", -0.01},         {"offset_norm", 0.02},
                 {"category", 2.0}};

  std::string text = render_report(rep);
  CHECK(text == render_report(rep));  // deterministic
  CHECK(text.find("Prediction Overview") != std::string::npos);
  CHECK(text.find("Input Modality Influence") != std::string::npos);
  CHECK(text.find("Predicted weight: 123.6 kg") != std::string::npos);
  CHECK(text.find("absolute error of 2.8 kg") != std::string::npos);
  CHECK(text.find("2.2% of actual") != std::string::npos);
  CHECK(text.find("Visual features: 53.8%") != std::string::npos);
  CHECK(text.find("Metadata features: 46.2%") != std::string::npos);

  // Top three drivers by magnitude, signed, in order.
  std::size_t p1 = text.find("1. log_volume: +31.3 kg");
  std::size_t p2 = text.find("2. density_proxy: -12.8 kg");
  std::size_t p3 = text.find("3. log_lx: +5.9 kg");
  CHECK(p1 != std::string::npos);
  CHECK(p2 != std::string::npos);
  CHECK(p3 != std::string::npos);
  CHECK(p1 < p2);
  CHECK(p2 < p3);
  CHECK(text.find("aspect_xy") == std::string::npos);  // rank 4 stays out

  ExplanationReport no_actual = rep;
  no_actual.has_actual = false;
  std::string bare = render_report(no_actual);
  CHECK(bare.find("Actual weight") == std::string::npos);
  CHECK(bare.find("Predicted weight: 123.6 kg") != std::string::npos);
}

TEST_CASE("explain_record wires prediction, scores and text together") {
  ModelConfig cfg = tiny_model_cfg();
  MwpModel model = MwpModel::init(cfg, 11);
  Standardizer stz;
  stz.mean.fill(0.0);
  stz.stdev.fill(1.0);
  Image img = noise_image(cfg.vit.image_side, 3);
  RawGeometry g{120.0, 80.0, 40.0, 60.0, 30.0};

  double actual = 250.0;
  ExplanationReport rep = explain_record(model, stz, img, g, 2, 0, &actual);
  CHECK(rep.prediction_kg ==
        model.predict_weight(img, stz.transform(compute_features(g, 2))));
  CHECK(rep.has_actual);
  CHECK(rep.abs_error_kg == doctest::Approx(std::fabs(rep.prediction_kg - 250.0)).epsilon(1e-12));
  CHECK(rep.s_visual >= 0.0);
  CHECK(rep.s_meta >= 0.0);
  CHECK(rep.s_visual + rep.s_meta <= 1.0);
  CHECK(rep.shapley.size() == 10);
  CHECK(rep.rendered_text.find("Prediction Overview") != std::string::npos);
  CHECK(rep.warnings.empty());

  ExplanationReport bare = explain_record(model, stz, img, g, 2, 0);
  CHECK_FALSE(bare.has_actual);
  CHECK(bare.prediction_kg == rep.prediction_kg);

  double bad = -1.0;
  CHECK_THROWS_AS(explain_record(model, stz, img, g, 2, 0, &bad), DomainError);

  std::string json = explanation_json(rep);
  nlohmann::json j = nlohmann::json::parse(json);
  CHECK(j.at("prediction_kg").get<double>() == rep.prediction_kg);
  CHECK(j.at("shapley").size() == 10);
  CHECK(j.at("efficiency_residual").get<double>() < 1e-6);
}

TEST_CASE("external narration appends on success and degrades gracefully") {
  ExplanationReport rep;
  rep.prediction_kg = 100.0;
  rep.baseline_prediction_kg = 90.0;
  rep.s_visual = 0.6;
  rep.s_meta = 0.4;
  rep.shapley = {{"log_volume", 5.0}, {"category", 3.0}};
  rep.rendered_text = "Prediction Overview\n";

  SUBCASE("endpoint unset keeps the template untouched") {
    unsetenv("XAI_ENDPOINT_URL");
    ExplanationReport r = rep;
    append_external_narrative(r);
    CHECK(r.rendered_text == rep.rendered_text);
    CHECK(r.warnings.empty());
  }

  SUBCASE("a live endpoint contributes its text and sees the numeric context") {
    httplib::Server svr;
    std::string seen_body;
    std::atomic<bool> got{false};
    svr.Post("/narrate", [&](const httplib::Request& req, httplib::Response& res) {
      seen_body = req.body;
      got = true;
      res.set_content("The crate is moderately heavy for its size.", "text/plain");
    });
    int port = svr.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread t([&] { svr.listen_after_bind(); });
    svr.wait_until_ready();

    setenv("XAI_ENDPOINT_URL", ("http://127.0.0.1:" + std::to_string(port) + "/narrate").c_str(),
           1);
    setenv("XAI_MODEL", "narrator-1", 1);
    setenv("XAI_TIMEOUT_MS", "2000", 1);
    ExplanationReport r = rep;
    append_external_narrative(r);
    svr.stop();
    t.join();

    REQUIRE(got.load());
    CHECK(r.warnings.empty());
    CHECK(r.rendered_text.find("Prediction Overview") == 0);
    CHECK(r.rendered_text.find("External narrative:") != std::string::npos);
    CHECK(r.rendered_text.find("moderately heavy") != std::string::npos);

    nlohmann::json prompt = nlohmann::json::parse(seen_body);
    CHECK(prompt.contains("prediction_kg"));
    CHECK(prompt.contains("s_visual"));
    CHECK(prompt.contains("shapley_top3"));
    CHECK(prompt.at("model").get<std::string>() == "narrator-1");
    unsetenv("XAI_ENDPOINT_URL");
  }

  SUBCASE("an empty reply keeps the template and records a warning") {
    httplib::Server svr;
    svr.Post("/narrate", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("", "text/plain");
    });
    int port = svr.bind_to_any_port("127.0.0.1");
    std::thread t([&] { svr.listen_after_bind(); });
    svr.wait_until_ready();
    setenv("XAI_ENDPOINT_URL", ("http://127.0.0.1:" + std::to_string(port) + "/narrate").c_str(),
           1);
    ExplanationReport r = rep;
    append_external_narrative(r);
    svr.stop();
    t.join();
    CHECK(r.rendered_text == rep.rendered_text);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("empty") != std::string::npos);
    unsetenv("XAI_ENDPOINT_URL");
  }

  SUBCASE("an http error keeps the template and records a warning") {
    httplib::Server svr;
    svr.Post("/narrate", [](const httplib::Request&, httplib::Response& res) {
      res.status = 500;
      res.set_content("boom", "text/plain");
    });
    int port = svr.bind_to_any_port("127.0.0.1");
    std::thread t([&] { svr.listen_after_bind(); });
    svr.wait_until_ready();
    setenv("XAI_ENDPOINT_URL", ("http://127.0.0.1:" + std::to_string(port) + "/narrate").c_str(),
           1);
    ExplanationReport r = rep;
    append_external_narrative(r);
    svr.stop();
    t.join();
    CHECK(r.rendered_text == rep.rendered_text);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("500") != std::string::npos);
    unsetenv("XAI_ENDPOINT_URL");
  }

  SUBCASE("an unreachable endpoint times out into a warning") {
    setenv("XAI_ENDPOINT_URL", "http://127.0.0.1:1/narrate", 1);
    setenv("XAI_TIMEOUT_MS", "300", 1);
    ExplanationReport r = rep;
    append_external_narrative(r);
    CHECK(r.rendered_text == rep.rendered_text);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("cannot reach") != std::string::npos);
    unsetenv("XAI_ENDPOINT_URL");
    unsetenv("XAI_TIMEOUT_MS");
  }
}
