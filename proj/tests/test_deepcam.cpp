#include "deepcam/deepcam.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace deepcam;
using test::normalize_rows;
using test::random_matrix;
using test::random_vector;

TEST_CASE("effective filter size") {
  CHECK(effective_filter_size({3, 3}) == 5);
  CHECK(effective_filter_size({3, 3, 3}) == 7);
  CHECK(effective_filter_size({3, 3, 3, 3}) == 9);
  CHECK(effective_filter_size({3, 3, 3, 5}) == 11);
  CHECK(effective_filter_size({1, 1, 1}) == 1);
  CHECK_THROWS_AS(effective_filter_size({}), ValidationError);
}

TEST_CASE("super patch sizes") {
  CHECK(super_patch_sizes({2, 3}, 4) == std::vector<int>{7, 6, 4});
  CHECK(super_patch_sizes({1, 1}, 1) == std::vector<int>{1, 1, 1});
  CHECK(super_patch_sizes({3, 3, 3}, 5) == std::vector<int>{11, 9, 7, 5});
}

TEST_CASE("minimum IPAD atoms") {
  CHECK(min_ipad_atoms({2, 3}, 4, 1) == std::vector<int>{2, 4});
  // Degenerate window: a single output position needs the full dimension.
  CHECK(min_ipad_atoms({3}, 1, 1) == std::vector<int>{9});
  CHECK(min_ipad_atoms({3, 3, 3}, 5, 1) == std::vector<int>{2, 3, 5});
}

TEST_CASE("minimum CAD atoms") {
  CHECK(min_cad_atoms(5, 4, 4) == 5);
  CHECK(min_cad_atoms(7, 6, 4) == 16);
  CHECK(min_cad_atoms(0, 6, 4) == 0);
}

TEST_CASE("layer spec validation") {
  SUBCASE("accepts the 3-layer recipe") {
    const auto specs = make_layer_specs(2, {3, 3, 3}, {9, 25, 64}, 3);
    REQUIRE(specs.size() == 3);
    CHECK(specs[0].d_ipad == 2);
    CHECK(specs[1].d_ipad == 4);
    CHECK(specs[2].d_ipad == 9);
    CHECK(specs[0].ps == 9);
    CHECK(specs[2].n() == 9 * 25);
  }
  SUBCASE("rejects an undersized IPAD count naming the layer") {
    try {
      make_layer_specs(2, {3, 3}, {16, 64}, 3, {1, 6});
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
  }
  SUBCASE("override flag admits undersized configs") {
    const auto specs = make_layer_specs(2, {3, 3}, {16, 64}, 3, {1, 6}, true);
    CHECK(specs[0].d_ipad == 1);
  }
}

TEST_CASE("per-layer synthesis") {
  std::mt19937_64 rng(81);
  SUBCASE("recovers a planted map") {
    const Matrix d0 = random_matrix(6, 4, rng);
    const Matrix x = random_matrix(4, 50, rng);
    const Matrix d = per_layer_synthesis(x, d0 * x);
    CHECK((d - d0).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("residual is orthogonal to the inputs") {
    const Matrix x = random_matrix(5, 40, rng);
    const Matrix y = random_matrix(3, 40, rng);
    const Matrix d = per_layer_synthesis(x, y);
    const Matrix e = y - d * x;
    CHECK((e * x.transpose()).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("identity inputs return the targets") {
    const Matrix y = random_matrix(3, 4, rng);
    const Matrix d = per_layer_synthesis(Matrix::Identity(4, 4), y);
    CHECK((d - y).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("threshold scale search") {
  std::mt19937_64 rng(82);
  SUBCASE("exactly reconstructible targets pick the smallest threshold") {
    const Index atoms = 3, n = 60;
    const Matrix f = random_matrix(atoms, n, rng);
    const Matrix targets = random_matrix(2, atoms, rng) * f;
    const Vector sigma = Vector::Ones(atoms);
    const auto res = threshold_scale_search(f, targets, sigma, 1, {1e-3, 0.5, 100.0},
                                            ThresholdMode::kInverse);
    CHECK(res.rho == 1e-3);
    CHECK(res.score < 1e-4 * targets.squaredNorm());
  }
  SUBCASE("all-zero features score the target norm and tie-break small") {
    const Matrix f = Matrix::Constant(2, 10, 0.5);
    const Matrix targets = random_matrix(1, 10, rng);
    const Vector sigma = Vector::Ones(2);
    // Every rho wipes the features out entirely.
    const auto res = threshold_scale_search(f, targets, sigma, 1, {10.0, 100.0, 1000.0},
                                            ThresholdMode::kProportional);
    CHECK(res.rho == 10.0);
    CHECK(res.score == doctest::Approx(targets.squaredNorm()));
    CHECK(res.fitted.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("singleton grid returns its element") {
    const Matrix f = random_matrix(2, 8, rng);
    const auto res = threshold_scale_search(f, random_matrix(1, 8, rng), Vector::Ones(2), 1,
                                            {0.25}, ThresholdMode::kInverse);
    CHECK(res.rho == 0.25);
  }
  SUBCASE("zero-sigma atoms get zero thresholds") {
    const Matrix f = random_matrix(2, 8, rng);
    Vector sigma(2);
    sigma << 1.0, 0.0;
    const auto res =
        threshold_scale_search(f, random_matrix(1, 8, rng), sigma, 1, {0.5},
                               ThresholdMode::kInverse);
    CHECK(res.lambda[1] == 0.0);
  }
}

TEST_CASE("default search grid shape") {
  const auto grid = default_search_grid();
  REQUIRE(grid.size() == 36);
  CHECK(grid.front() == doctest::Approx(1e-3));
  CHECK(grid.back() == doctest::Approx(9.0));
  // Contains ... 1e-2, 2e-2, ..., 1e-1, 2e-1 ... per the published pattern.
  CHECK(std::count_if(grid.begin(), grid.end(),
                      [](double v) { return v > 0.009999 && v < 0.1; }) == 9);
}

namespace {

TrainedLayer make_layer(const Matrix& omega, const Vector& lambda, int p, int d_in) {
  TrainedLayer l;
  l.spec.index = 1;
  l.spec.p = p;
  l.spec.d_in = d_in;
  l.spec.d = static_cast<int>(omega.rows());
  l.spec.d_ipad = static_cast<int>(omega.rows());
  l.spec.ps = 0;
  l.omega = omega;
  l.lambda = lambda;
  return l;
}

}  // namespace

TEST_CASE("layer_forward") {
  std::mt19937_64 rng(83);
  SUBCASE("identity layer") {
    FeatureTensor x(4, 4, 1);
    x.channel(0) = random_matrix(4, 4, rng);
    const TrainedLayer layer = make_layer(Matrix::Ones(1, 1), Vector::Zero(1), 1, 1);
    const FeatureTensor out = layer_forward(x, layer);
    CHECK((out.flat() - x.flat()).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("equals the stacked-operator form with thresholds") {
    const int side = 6, p = 3, d = 2;
    const PatchGeom g = PatchGeom::two_d(side, p, 1);
    FeatureTensor x(side, side, 1);
    x.channel(0) = random_matrix(side, side, rng);
    const Matrix omega = normalize_rows(random_matrix(d, p * p, rng));
    Vector lambda(d);
    lambda << 0.3, 1.1;
    const TrainedLayer layer = make_layer(omega, lambda, p, 1);
    const FeatureTensor out = layer_forward(x, layer);

    // H-form oracle: materialized dictionary action, then per-atom-block
    // soft thresholding of the stacked coefficients.
    const Vector coeffs = materialize_conv_dict(omega, g) * x.flat();
    const Index positions = g.out_positions();
    Vector thresh(coeffs.size());
    for (int j = 0; j < d; ++j)
      thresh.segment(j * positions, positions).setConstant(lambda[j]);
    Vector expect(coeffs.size());
    for (Index i = 0; i < coeffs.size(); ++i) expect[i] = soft_threshold(coeffs[i], thresh[i]);
    CHECK((out.flat() - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("huge thresholds zero the output") {
    FeatureTensor x(5, 5, 1);
    x.channel(0) = random_matrix(5, 5, rng);
    const TrainedLayer layer =
        make_layer(normalize_rows(random_matrix(2, 9, rng)), Vector::Constant(2, 1e9), 3, 1);
    CHECK(layer_forward(x, layer).flat().cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("undersized input is rejected") {
    FeatureTensor x(2, 2, 1);
    const TrainedLayer layer = make_layer(Matrix::Ones(1, 9), Vector::Zero(1), 3, 1);
    CHECK_THROWS_AS(layer_forward(x, layer), ValidationError);
  }
}

TEST_CASE("pixel shuffle pattern") {
  FeatureTensor y(1, 1, 4);
  y(0, 0, 0) = 1;  // a
  y(0, 0, 1) = 2;  // b
  y(0, 0, 2) = 3;  // c
  y(0, 0, 3) = 4;  // d
  const LumaImage img = pixel_shuffle(y, 2);
  CHECK(img.pix(0, 0) == 1);
  CHECK(img.pix(0, 1) == 2);
  CHECK(img.pix(1, 0) == 3);
  CHECK(img.pix(1, 1) == 4);
}

TEST_CASE("pixel shuffle round trip at scale 3") {
  std::mt19937_64 rng(84);
  FeatureTensor y(4, 5, 9);
  for (Index c = 0; c < 9; ++c) y.channel(c) = random_matrix(4, 5, rng);
  const FeatureTensor back = pixel_unshuffle(pixel_shuffle(y, 3), 3);
  CHECK((back.flat() - y.flat()).cwiseAbs().maxCoeff() == 0.0);
}

namespace {

DeepCamModel identity_model() {
  DeepCamModel m;
  m.scale = 1;
  TrainedLayer l = make_layer(Matrix::Ones(1, 1), Vector::Zero(1), 1, 1);
  m.layers.push_back(l);
  m.synth.p = 1;
  m.synth.d_in = 1;
  m.synth.D = Matrix::Ones(1, 1);
  return m;
}

}  // namespace

TEST_CASE("super_resolve: identity model reproduces the input") {
  std::mt19937_64 rng(85);
  LumaImage img;
  img.pix = random_matrix(7, 9, rng).cwiseAbs() * 30.0;
  const LumaImage out = super_resolve(identity_model(), img);
  CHECK((out.pix - img.pix).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("super_resolve output size is exactly scale times the input") {
  std::mt19937_64 rng(86);
  DeepCamModel m;
  m.scale = 2;
  TrainedLayer l = make_layer(normalize_rows(random_matrix(3, 9, rng)),
                              Vector::Constant(3, 0.1), 3, 1);
  m.layers.push_back(l);
  m.synth.p = 3;
  m.synth.d_in = 3;
  m.synth.D = 0.1 * random_matrix(4, 27, rng);
  LumaImage img;
  img.pix = random_matrix(11, 14, rng).cwiseAbs() * 20.0;
  const LumaImage out = super_resolve(m, img);
  CHECK(out.height() == 22);
  CHECK(out.width() == 28);
}

TEST_CASE("two linear layers compose into one convolution of the combined support") {
  std::mt19937_64 rng(87);
  const int p1 = 2, p2 = 3, d1 = 2, d2 = 3;
  const Matrix bank1 = random_matrix(d1, p1 * p1, rng);
  const Matrix bank2 = random_matrix(d2, p2 * p2 * d1, rng);
  const TrainedLayer l1 = make_layer(bank1, Vector::Zero(d1), p1, 1);
  TrainedLayer l2 = make_layer(bank2, Vector::Zero(d2), p2, d1);

  FeatureTensor x(9, 9, 1);
  x.channel(0) = random_matrix(9, 9, rng);
  const FeatureTensor chained = layer_forward(layer_forward(x, l1), l2);

  // Equivalent single bank: channel-wise full 2-D convolution of the two
  // kernels, support p1 + p2 - 1.
  const int pe = p1 + p2 - 1;
  for (int j = 0; j < d2; ++j) {
    Matrix eff = Matrix::Zero(pe, pe);
    for (int c = 0; c < d1; ++c) {
      const Matrix k1 = mat(bank1.row(c).transpose(), p1, p1);
      const Matrix k2 = mat(bank2.row(j).segment(c * p2 * p2, p2 * p2).transpose(), p2, p2);
      for (Index u = 0; u < p2; ++u)
        for (Index v = 0; v < p2; ++v)
          for (Index a = 0; a < p1; ++a)
            for (Index b = 0; b < p1; ++b) eff(u + a, v + b) += k2(u, v) * k1(a, b);
    }
    Vector eff_flat(pe * pe);
    Index idx = 0;
    for (Index cc = 0; cc < pe; ++cc)
      for (Index rr = 0; rr < pe; ++rr) eff_flat[idx++] = eff(rr, cc);
    const Matrix direct = conv2d_valid(FilterAtom::two_d(eff_flat, pe, 1), x);
    CHECK((direct - chained.channel(j)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

namespace {

DeepCamModel random_model(std::mt19937_64& rng) {
  DeepCamModel m;
  m.scale = 2;
  TrainedLayer l1 = make_layer(normalize_rows(random_matrix(4, 9, rng)),
                               random_vector(4, rng).cwiseAbs(), 3, 1);
  l1.spec.d_ipad = 2;
  l1.spec.index = 1;
  TrainedLayer l2 = make_layer(normalize_rows(random_matrix(5, 9 * 4, rng)),
                               random_vector(5, rng).cwiseAbs(), 3, 4);
  l2.spec.d_ipad = 3;
  l2.spec.index = 2;
  m.layers = {l1, l2};
  m.synth.p = 3;
  m.synth.d_in = 5;
  m.synth.D = random_matrix(4, 45, rng);
  return m;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("model serialization round trip is byte-identical") {
  std::mt19937_64 rng(88);
  const DeepCamModel m = random_model(rng);
  const std::string p1 = temp_path("deepcam_model_a.dcam");
  const std::string p2 = temp_path("deepcam_model_b.dcam");
  save_model(p1, m);
  const DeepCamModel back = load_model(p1);
  CHECK(back.scale == m.scale);
  REQUIRE(back.layers.size() == m.layers.size());
  for (size_t i = 0; i < m.layers.size(); ++i) {
    CHECK(back.layers[i].omega == m.layers[i].omega);
    CHECK(back.layers[i].lambda == m.layers[i].lambda);
    CHECK(back.layers[i].spec.d_ipad == m.layers[i].spec.d_ipad);
  }
  CHECK(back.synth.D == m.synth.D);
  save_model(p2, back);
  std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("corrupted model files are rejected") {
  std::mt19937_64 rng(89);
  const DeepCamModel m = random_model(rng);
  const std::string path = temp_path("deepcam_model_corrupt.dcam");
  save_model(path, m);
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(40);
  f.put(static_cast<char>(0x5a));
  f.close();
  CHECK_THROWS_AS(load_model(path), ValidationError);
  std::remove(path.c_str());
}

TEST_CASE("train_model: synthesis-only degenerate model beats the zero predictor") {
  std::mt19937_64 rng(90);
  LumaImage img;
  img.pix = (random_matrix(40, 40, rng).array().abs() * 60.0).min(255.0);
  const TrainingPairs pairs = build_training_pairs({img}, 2, {3}, 200, 400, 4);

  ModelConfig mc;
  mc.scale = 2;
  mc.synth_side = 3;
  TrainSettings ts;
  ts.opt.seed = 4;
  const DeepCamModel model = train_model(pairs, mc, ts);
  CHECK(model.layers.empty());

  const Matrix x = pairs.xs0;
  const Matrix targets = pairs.super_center_groups();
  const double residual = (targets - model.synth.D * x).squaredNorm();
  CHECK(residual <= targets.squaredNorm());
}

TEST_CASE("train_model: one-layer toy run keeps the spec bookkeeping") {
  std::mt19937_64 rng(91);
  // A smooth-ish synthetic texture so the subspace is well conditioned.
  LumaImage img;
  img.pix.resize(48, 48);
  for (Index y = 0; y < 48; ++y)
    for (Index x = 0; x < 48; ++x)
      img.pix(y, x) = 128.0 + 60.0 * std::sin(0.3 * static_cast<double>(x)) *
                                  std::cos(0.2 * static_cast<double>(y));
  img.pix += 4.0 * random_matrix(48, 48, rng);
  const TrainingPairs pairs = build_training_pairs({img}, 2, {3, 3}, 300, 900, 11);

  ModelConfig mc;
  mc.scale = 2;
  mc.layer_sides = {3};
  mc.layer_filters = {8};
  mc.synth_side = 3;
  TrainSettings ts;
  ts.opt.seed = 11;
  ts.opt.max_batch_iters = 12;
  ts.opt.num_batches = 2;
  ts.n2 = 900;
  const DeepCamModel model = train_model(pairs, mc, ts);

  REQUIRE(model.layers.size() == 1);
  const TrainedLayer& l = model.layers[0];
  CHECK(l.spec.p == 3);
  CHECK(l.spec.d == 8);
  CHECK(l.spec.d_ipad == 3);  // ceil(25 / 9)
  CHECK(l.omega.rows() == 8);
  CHECK(l.omega.cols() == 9);
  CHECK(l.lambda.size() == 8);
  CHECK(l.lambda.minCoeff() >= 0.0);
  for (Index i = 0; i < l.omega.rows(); ++i)
    CHECK(std::abs(l.omega.row(i).norm() - 1.0) < 1e-6);
  CHECK(model.synth.D.rows() == 4);
  CHECK(model.synth.D.cols() == 9 * 8);

  // The trained model runs end to end.
  const LumaImage sr = super_resolve(model, bicubic_resize(img, 0.5));
  CHECK(sr.height() == 48);
  CHECK(sr.width() == 48);
}
