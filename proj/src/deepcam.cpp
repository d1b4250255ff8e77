#include "deepcam/deepcam.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <random>

namespace deepcam {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

Index ceil_div(Index a, Index b) { return (a + b - 1) / b; }
}  // namespace

std::vector<int> DeepCamModel::all_sides() const {
  std::vector<int> sides;
  for (const auto& l : layers) sides.push_back(l.spec.p);
  sides.push_back(synth.p);
  return sides;
}

void DeepCamModel::validate() const {
  if (scale < 1) throw ValidationError("model: scale must be >= 1");
  int d_prev = 1;
  for (const auto& l : layers) {
    if (l.spec.d_in != d_prev) throw ValidationError("model: broken channel chaining");
    if (l.omega.rows() != l.spec.d || l.omega.cols() != l.spec.n())
      throw ValidationError("model: dictionary shape mismatch");
    if (l.lambda.size() != l.spec.d) throw ValidationError("model: threshold count mismatch");
    if (!l.omega.allFinite() || !l.lambda.allFinite() || l.lambda.minCoeff() < 0)
      throw ValidationError("model: non-finite or negative parameters");
    d_prev = l.spec.d;
  }
  if (synth.d_in != d_prev) throw ValidationError("model: synthesis channel mismatch");
  if (synth.D.rows() != static_cast<Index>(scale) * scale ||
      synth.D.cols() != static_cast<Index>(synth.p) * synth.p * synth.d_in)
    throw ValidationError("model: synthesis shape mismatch");
}

int effective_filter_size(const std::vector<int>& p_list) {
  if (p_list.empty()) throw ValidationError("effective_filter_size: empty chain");
  int sum = 0;
  for (int p : p_list) {
    if (p < 1) throw ValidationError("effective_filter_size: sides must be >= 1");
    sum += p;
  }
  return sum - static_cast<int>(p_list.size() - 1);
}

std::vector<int> super_patch_sizes(const std::vector<int>& layer_sides, int p_synth) {
  if (p_synth < 1) throw ValidationError("super_patch_sizes: synthesis side must be >= 1");
  std::vector<int> ps(layer_sides.size() + 1);
  int acc = p_synth;
  ps.back() = acc;
  for (int i = static_cast<int>(layer_sides.size()) - 1; i >= 0; --i) {
    if (layer_sides[i] < 1) throw ValidationError("super_patch_sizes: sides must be >= 1");
    acc += layer_sides[i] - 1;
    ps[i] = acc;
  }
  return ps;
}

std::vector<int> min_ipad_atoms(const std::vector<int>& layer_sides, int p_synth, int d0) {
  const std::vector<int> ps = super_patch_sizes(layer_sides, p_synth);
  std::vector<int> out(layer_sides.size());
  const Index numer = static_cast<Index>(ps[0]) * ps[0] * d0;
  for (size_t i = 0; i < layer_sides.size(); ++i) {
    const int win = ps[i] - layer_sides[i] + 1;
    if (win < 1) throw ValidationError("min_ipad_atoms: window smaller than filter");
    out[i] = static_cast<int>(ceil_div(numer, static_cast<Index>(win) * win));
  }
  return out;
}

int min_cad_atoms(int d_prev_cad, int prev_window, int window) {
  if (prev_window < 1 || window < 1) throw ValidationError("min_cad_atoms: bad windows");
  if (d_prev_cad <= 0) return 0;
  return static_cast<int>(ceil_div(static_cast<Index>(d_prev_cad) * prev_window * prev_window,
                                   static_cast<Index>(window) * window));
}

std::vector<LayerSpec> make_layer_specs(int scale, const std::vector<int>& layer_sides,
                                        const std::vector<int>& layer_filters, int p_synth,
                                        const std::vector<int>& ipad_counts,
                                        bool allow_undersized, std::ostream* log) {
  if (scale < 1) throw ValidationError("make_layer_specs: scale must be >= 1");
  if (layer_sides.size() != layer_filters.size())
    throw ValidationError("make_layer_specs: sides/filters length mismatch");
  if (!ipad_counts.empty() && ipad_counts.size() != layer_sides.size())
    throw ValidationError("make_layer_specs: ipad_counts length mismatch");

  const std::vector<int> ps = super_patch_sizes(layer_sides, p_synth);
  const std::vector<int> min_ipad = min_ipad_atoms(layer_sides, p_synth, 1);

  std::vector<LayerSpec> specs;
  int d_prev = 1, cad_prev = 0, win_prev = 0;
  for (size_t i = 0; i < layer_sides.size(); ++i) {
    LayerSpec s;
    s.index = static_cast<int>(i) + 1;
    s.p = layer_sides[i];
    s.d_in = d_prev;
    s.d = layer_filters[i];
    s.ps = ps[i];
    s.d_ipad = ipad_counts.empty() ? min_ipad[i] : ipad_counts[i];
    if (s.d_ipad < 1 || s.d_ipad > s.d)
      throw ValidationError("make_layer_specs: layer " + std::to_string(s.index) +
                            " has no room for " + std::to_string(s.d_ipad) + " IPAD atoms");
    if (s.d_ipad < min_ipad[i]) {
      const std::string msg = "layer " + std::to_string(s.index) + ": d_I=" +
                              std::to_string(s.d_ipad) + " violates d_I >= " +
                              std::to_string(min_ipad[i]) +
                              " (information-preservation bound)";
      if (!allow_undersized) throw ValidationError("make_layer_specs: " + msg);
      if (log) (*log) << "warning: " << msg << " (override in effect)\n";
    }
    if (i > 0) {
      const int need = min_cad_atoms(cad_prev, win_prev, s.out_window());
      if (s.d_cad() < need && log)
        (*log) << "warning: layer " << s.index << ": d_C=" << s.d_cad()
               << " below the non-decrease guideline d_C >= " << need << "\n";
    }
    cad_prev = s.d_cad();
    win_prev = s.out_window();
    d_prev = s.d;
    specs.push_back(s);
  }
  return specs;
}

Matrix solve_gram(const Matrix& gram, const Matrix& rhs) {
  Eigen::LDLT<Matrix> ldlt(gram);
  const double trace = gram.trace();
  bool ok = ldlt.info() == Eigen::Success && trace > 0;
  if (ok) {
    const Vector d = ldlt.vectorD();
    ok = d.minCoeff() > 1e-12 * d.maxCoeff();
  }
  if (!ok) {
    if (trace <= 0) throw NumericalError("solve_gram: zero Gram matrix");
    Matrix ridged = gram;
    ridged.diagonal().array() += 1e-8 * trace;
    ldlt.compute(ridged);
    if (ldlt.info() != Eigen::Success)
      throw NumericalError("solve_gram: factorization failed after ridge");
  }
  return ldlt.solve(rhs);
}

Matrix per_layer_synthesis(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.cols()) throw ValidationError("per_layer_synthesis: column mismatch");
  if (x.cols() < 1) throw ValidationError("per_layer_synthesis: empty data");
  const Matrix gram = x * x.transpose();
  const Matrix rhs = x * y.transpose();
  return solve_gram(gram, rhs).transpose();
}

std::vector<double> default_search_grid(int min_exp, int max_exp) {
  if (min_exp > max_exp) throw ValidationError("default_search_grid: bad exponent range");
  std::vector<double> grid;
  for (int b = min_exp; b <= max_exp; ++b)
    for (int a = 1; a <= 9; ++a) grid.push_back(a * std::pow(10.0, b));
  return grid;
}

ThresholdSearchResult threshold_scale_search(const Matrix& features, const Matrix& targets,
                                             const Vector& sigma, Index out_positions,
                                             const std::vector<double>& grid,
                                             ThresholdMode mode, std::ostream* log) {
  if (grid.empty()) throw ValidationError("threshold_scale_search: empty grid");
  if (features.cols() != targets.cols())
    throw ValidationError("threshold_scale_search: column mismatch");
  const Index atoms = sigma.size();
  if (features.rows() != atoms * out_positions)
    throw ValidationError("threshold_scale_search: feature rows != atoms * positions");

  Vector base(atoms);
  for (Index j = 0; j < atoms; ++j) {
    if (sigma[j] > 1e-12) {
      base[j] = mode == ThresholdMode::kInverse ? 1.0 / sigma[j] : sigma[j];
    } else {
      base[j] = 0;
      if (log) (*log) << "warning: atom " << j << " has zero response scale; threshold 0\n";
    }
  }

  std::vector<double> sorted(grid);
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() <= 0) throw ValidationError("threshold_scale_search: grid must be positive");

  const double zero_score = targets.squaredNorm();
  auto evaluate = [&](double rho, Matrix* fitted) {
    Vector thresh(features.rows());
    for (Index j = 0; j < atoms; ++j)
      thresh.segment(j * out_positions, out_positions).setConstant(rho * base[j]);
    const Matrix z = soft_threshold_rows(features, thresh);
    if (z.cwiseAbs().maxCoeff() == 0) {
      if (fitted) fitted->setZero(targets.rows(), targets.cols());
      return zero_score;
    }
    Matrix g;
    try {
      g = solve_gram(z * z.transpose(), z * targets.transpose()).transpose();
    } catch (const NumericalError&) {
      return kInf;
    }
    const Matrix est = g * z;
    if (fitted) *fitted = est;
    return (targets - est).squaredNorm();
  };

  ThresholdSearchResult best;
  best.score = kInf;
  for (double rho : sorted) {
    const double score = evaluate(rho, nullptr);
    if (score < best.score) {
      best.score = score;
      best.rho = rho;
    }
  }
  if (!std::isfinite(best.score)) {
    best.rho = sorted.front();
    best.score = evaluate(best.rho, nullptr);
  }
  best.lambda = best.rho * base;
  evaluate(best.rho, &best.fitted);
  return best;
}

FeatureTensor layer_forward(const FeatureTensor& in, const TrainedLayer& layer) {
  const LayerSpec& s = layer.spec;
  if (in.channels() != s.d_in) throw ValidationError("layer_forward: channel mismatch");
  if (in.rows() < s.p || in.cols() < s.p)
    throw ValidationError("layer_forward: input smaller than the filter");
  FeatureTensor out(in.rows() - s.p + 1, in.cols() - s.p + 1, s.d);
  for (int j = 0; j < s.d; ++j) {
    FilterAtom atom{layer.omega.row(j).transpose(), s.p, s.d_in};
    out.channel(j) = soft_threshold(conv2d_valid(atom, in), layer.lambda[j]);
  }
  return out;
}

FeatureTensor synthesis_forward(const FeatureTensor& in, const SynthesisLayer& synth,
                                int scale) {
  if (in.channels() != synth.d_in) throw ValidationError("synthesis_forward: channel mismatch");
  FeatureTensor out(in.rows() - synth.p + 1, in.cols() - synth.p + 1,
                    static_cast<Index>(scale) * scale);
  for (Index c = 0; c < out.channels(); ++c) {
    FilterAtom atom{synth.D.row(c).transpose(), synth.p, synth.d_in};
    out.channel(c) = conv2d_valid(atom, in);
  }
  return out;
}

LumaImage pixel_shuffle(const FeatureTensor& y, int s) {
  if (y.channels() != static_cast<Index>(s) * s)
    throw ValidationError("pixel_shuffle: need s^2 channels");
  LumaImage out;
  out.pix.resize(y.rows() * s, y.cols() * s);
  for (int c = 0; c < s * s; ++c) {
    const int oy = c / s, ox = c % s;
    for (Index x = 0; x < y.cols(); ++x)
      for (Index yy = 0; yy < y.rows(); ++yy)
        out.pix(s * yy + oy, s * x + ox) = y(yy, x, c);
  }
  return out;
}

FeatureTensor pixel_unshuffle(const LumaImage& img, int s) {
  if (img.height() % s || img.width() % s)
    throw ValidationError("pixel_unshuffle: dimensions not divisible by scale");
  FeatureTensor out(img.height() / s, img.width() / s, static_cast<Index>(s) * s);
  for (int c = 0; c < s * s; ++c) {
    const int oy = c / s, ox = c % s;
    for (Index x = 0; x < out.cols(); ++x)
      for (Index yy = 0; yy < out.rows(); ++yy)
        out(yy, x, c) = img.pix(s * yy + oy, s * x + ox);
  }
  return out;
}

LumaImage replicate_pad(const LumaImage& img, int top, int bottom, int left, int right) {
  LumaImage out;
  out.pix.resize(img.height() + top + bottom, img.width() + left + right);
  for (Index y = 0; y < out.pix.rows(); ++y) {
    const Index sy = std::clamp<Index>(y - top, 0, img.height() - 1);
    for (Index x = 0; x < out.pix.cols(); ++x) {
      const Index sx = std::clamp<Index>(x - left, 0, img.width() - 1);
      out.pix(y, x) = img.pix(sy, sx);
    }
  }
  return out;
}

LumaImage super_resolve(const DeepCamModel& model, const LumaImage& lr) {
  model.validate();
  const int p_eff = effective_filter_size(model.all_sides());
  if (lr.height() < 1 || lr.width() < 1) throw ValidationError("super_resolve: empty image");
  const int pad = p_eff - 1;
  const int top = pad / 2;
  LumaImage padded = replicate_pad(lr, top, pad - top, top, pad - top);

  FeatureTensor feat = FeatureTensor::from_matrix(padded.pix);
  for (const auto& layer : model.layers) feat = layer_forward(feat, layer);
  const FeatureTensor groups = synthesis_forward(feat, model.synth, model.scale);
  LumaImage hr = pixel_shuffle(groups, model.scale);
  hr.pix = hr.pix.cwiseMax(0.0).cwiseMin(255.0);
  return hr;
}

ObjectiveConfig ipad_weights(int n, int d_ipad) {
  ObjectiveConfig w;
  w.nu = 10.0 * n;
  w.kappa = 100.0 * d_ipad;
  w.upsilon = 0.01 * d_ipad;
  return w;
}

ObjectiveConfig cad_weights(int n, int d_cad) {
  ObjectiveConfig w;
  w.nu = 10.0 * n;
  w.kappa = 0.1 * d_cad;
  w.upsilon = 0.01 * d_cad;
  w.mu = 100.0;
  return w;
}

namespace {

ObjectiveConfig apply_ipad_overrides(ObjectiveConfig w, const WeightOverrides& o) {
  if (o.ipad_nu) w.nu = *o.ipad_nu;
  if (o.ipad_kappa) w.kappa = *o.ipad_kappa;
  if (o.ipad_upsilon) w.upsilon = *o.ipad_upsilon;
  return w;
}

ObjectiveConfig apply_cad_overrides(ObjectiveConfig w, const WeightOverrides& o) {
  if (o.cad_nu) w.nu = *o.cad_nu;
  if (o.cad_kappa) w.kappa = *o.cad_kappa;
  if (o.cad_upsilon) w.upsilon = *o.cad_upsilon;
  if (o.cad_mu) w.mu = *o.cad_mu;
  return w;
}

}  // namespace

namespace {

Matrix flatten_stack(const std::vector<FeatureTensor>& stack) {
  if (stack.empty()) throw ValidationError("flatten_stack: empty");
  Matrix out(stack[0].size(), static_cast<Index>(stack.size()));
  for (size_t k = 0; k < stack.size(); ++k) out.col(static_cast<Index>(k)) = stack[k].flat();
  return out;
}

Vector window_at(const FeatureTensor& t, Index dy, Index dx, Index win) {
  Vector out(win * win * t.channels());
  Index j = 0;
  for (Index c = 0; c < t.channels(); ++c)
    for (Index x = 0; x < win; ++x)
      for (Index y = 0; y < win; ++y) out[j++] = t(dy + y, dx + x, c);
  return out;
}

Vector normalize_or_randomize(Vector row, const Matrix& V, std::mt19937_64& rng) {
  const double nrm = row.norm();
  if (nrm > 1e-10) return row / nrm;
  std::normal_distribution<double> gauss;
  Vector w(row.size());
  double n2 = 0;
  do {
    for (Index i = 0; i < w.size(); ++i) w[i] = gauss(rng);
    if (V.cols() > 0) w -= V * (V.transpose() * w);
    n2 = w.norm();
  } while (n2 < 1e-12);
  return w / n2;
}

}  // namespace

DeepCamModel train_model(const TrainingPairs& pairs, const ModelConfig& config,
                         const TrainSettings& settings, std::ostream* log) {
  const std::vector<LayerSpec> specs =
      make_layer_specs(config.scale, config.layer_sides, config.layer_filters,
                       config.synth_side, config.ipad_counts, config.allow_undersized, log);
  if (pairs.scale != config.scale)
    throw ValidationError("train_model: pairs were built for a different scale");
  const std::vector<int> ps = super_patch_sizes(config.layer_sides, config.synth_side);
  if (pairs.super_side != ps.front())
    throw ValidationError("train_model: pairs super-patch side does not match the chain");

  const Index n1 = pairs.xs0.cols();
  const int s = config.scale;
  const Matrix targets = pairs.super_center_groups();  // s^2 x N1

  // Super-patch stacks propagated through the trained layers.
  std::vector<FeatureTensor> sp;
  sp.reserve(n1);
  for (Index k = 0; k < n1; ++k)
    sp.emplace_back(pairs.xs0.col(k), pairs.super_side, pairs.super_side, 1);

  DeepCamModel model;
  model.scale = s;
  std::mt19937_64 rng(settings.opt.seed);

  int shrink = 0;  // LR rows consumed by the layers trained so far
  for (size_t li = 0; li < specs.size(); ++li) {
    const int delta = shrink / 2;  // centers the HR alignment of deep small patches
    const LayerSpec& spec = specs[li];
    if (log)
      (*log) << "[layer " << spec.index << "] p=" << spec.p << " d=" << spec.d
             << " d_I=" << spec.d_ipad << " ps=" << spec.ps << " n=" << spec.n() << "\n";
    const PatchGeom geom = PatchGeom::two_d(spec.ps, spec.p, spec.d_in);

    try {
      const Matrix xs = flatten_stack(sp);

      // Small-patch data and its aligned HR patches.
      Matrix x, yi;
      if (li == 0) {
        x = pairs.x0;
        yi = pairs.y1;
      } else {
        const Index offs = spec.ps - spec.p + 1;
        const Index avail = n1 * offs * offs;
        const Index n2 = std::min<Index>(settings.n2, avail);
        std::uniform_int_distribution<Index> pick_sp(0, n1 - 1);
        std::uniform_int_distribution<Index> pick_off(0, offs - 1);
        x.resize(spec.n(), n2);
        yi.resize(static_cast<Index>(s) * spec.p * s * spec.p, n2);
        for (Index k = 0; k < n2; ++k) {
          const Index spi = pick_sp(rng);
          const Index dy = pick_off(rng), dx = pick_off(rng);
          x.col(k) = window_at(sp[spi], dy, dx, spec.p);
          const PatchRef& ref = pairs.super_pos[static_cast<size_t>(spi)];
          yi.col(k) = pairs.hr_patch(ref.img, ref.y + static_cast<int>(dy) + delta,
                                     ref.x + static_cast<int>(dx) + delta, spec.p);
        }
      }

      // IPAD.
      OptimizerConfig opt = settings.opt;
      opt.seed = settings.opt.seed + 1000 * (li + 1);
      LearnProblem ipad = make_ipad_problem(
          xs, geom, x, spec.d_ipad,
          apply_ipad_overrides(ipad_weights(spec.n(), spec.d_ipad), settings.weights),
          settings.subspace_energy, opt.seed, log);
      Matrix omega_i = learn_dictionary(
          random_dictionary(spec.d_ipad, spec.n(), ipad.V, rng), ipad, opt, log,
          settings.iteration_callback);

      // CAD.
      Matrix omega_c(0, spec.n());
      if (spec.d_cad() > 0) {
        const Matrix d_i = per_layer_synthesis(x, yi);
        const Matrix yhat = d_i * x;
        const Matrix e = yi - yhat;
        OptimizerConfig copt = opt;
        copt.seed = opt.seed + 1;
        LearnProblem cad = make_cad_problem(
            yhat, e, spec.d_cad(),
            apply_cad_overrides(cad_weights(spec.n(), spec.d_cad()), settings.weights),
            settings.subspace_energy, copt.seed, log);
        const Matrix psi = learn_dictionary(
            random_dictionary(spec.d_cad(), yhat.rows(), cad.V, rng), cad, copt, log,
            settings.iteration_callback);
        omega_c = psi * d_i;
        for (Index r = 0; r < omega_c.rows(); ++r)
          omega_c.row(r) =
              normalize_or_randomize(omega_c.row(r).transpose(), Matrix(), rng).transpose();
      }

      // Thresholds: IPAD first, then CAD against the IPAD residual.
      const Vector sigma_i = laplacian_scales(omega_i, x);
      const Matrix feat_i = conv_dict_features(omega_i, xs, geom);
      const Index positions = geom.out_positions();
      const ThresholdSearchResult res_i = threshold_scale_search(
          feat_i, targets, sigma_i, positions, settings.grid, ThresholdMode::kInverse, log);
      const Matrix y_residual = targets - res_i.fitted;
      if (log)
        (*log) << "[layer " << spec.index << "] rho_I=" << res_i.rho
               << " score=" << res_i.score << "\n";

      Vector lambda(spec.d);
      lambda.head(spec.d_ipad) = res_i.lambda;
      if (spec.d_cad() > 0) {
        const Vector sigma_c = laplacian_scales(omega_c, x);
        const Matrix feat_c = conv_dict_features(omega_c, xs, geom);
        const ThresholdSearchResult res_c =
            threshold_scale_search(feat_c, y_residual, sigma_c, positions, settings.grid,
                                   ThresholdMode::kProportional, log);
        lambda.tail(spec.d_cad()) = res_c.lambda;
        if (log)
          (*log) << "[layer " << spec.index << "] rho_C=" << res_c.rho
                 << " score=" << res_c.score << "\n";
      }

      TrainedLayer layer;
      layer.spec = spec;
      layer.omega.resize(spec.d, spec.n());
      layer.omega.topRows(spec.d_ipad) = omega_i;
      if (spec.d_cad() > 0) layer.omega.bottomRows(spec.d_cad()) = omega_c;
      layer.lambda = lambda;

      for (auto& t : sp) t = layer_forward(t, layer);
      model.layers.push_back(std::move(layer));
      shrink += spec.p - 1;
    } catch (const std::exception& e) {
      throw NumericalError("train_model: layer " + std::to_string(spec.index) +
                           " failed: " + e.what());
    }
  }

  // Final synthesis over the fully propagated super-patches.
  const Matrix x_last = flatten_stack(sp);
  const int d_last = specs.empty() ? 1 : specs.back().d;
  if (sp[0].rows() != config.synth_side || sp[0].cols() != config.synth_side)
    throw NumericalError("train_model: propagated super-patch has unexpected size");
  model.synth.p = config.synth_side;
  model.synth.d_in = d_last;
  model.synth.D = per_layer_synthesis(x_last, targets);
  model.validate();
  return model;
}

}  // namespace deepcam
