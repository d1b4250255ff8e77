#pragma once

#include "deepcam/convgoal.hpp"
#include "deepcam/imaging.hpp"
#include "deepcam/structured_ops.hpp"
#include "deepcam/tensor.hpp"
#include "deepcam/types.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace deepcam {

/// Geometry of one analysis layer.
struct LayerSpec {
  int index = 0;    // 1-based layer number
  int p = 0;        // spatial filter side p_i
  int d_in = 0;     // input channels d_{i-1}
  int d = 0;        // filters d_i
  int d_ipad = 0;   // information-preserving atoms d_Ii
  int ps = 0;       // super-patch side p_{S,i}

  int n() const { return p * p * d_in; }
  int super_len() const { return ps * ps * d_in; }
  int d_cad() const { return d - d_ipad; }
  int out_window() const { return ps - p + 1; }
};

/// One trained layer: IPAD rows stacked above CAD rows, one threshold per
/// atom.
struct TrainedLayer {
  LayerSpec spec;
  Matrix omega;   // d x n
  Vector lambda;  // d
};

struct SynthesisLayer {
  int p = 0;     // spatial side p_{L+1}
  int d_in = 0;  // channels of the last feature map
  Matrix D;      // s^2 x (p^2 d_in)
};

struct DeepCamModel {
  int scale = 1;
  std::vector<TrainedLayer> layers;
  SynthesisLayer synth;

  std::vector<int> all_sides() const;  // analysis sides then synthesis side
  void validate() const;
};

// --- Sizing -----------------------------------------------------------------

/// Support of the single convolution equivalent to the chain: sum p_j - (count-1).
int effective_filter_size(const std::vector<int>& p_list);

/// Super-patch side per stage, including the synthesis stage:
/// p_{S,i} = p_synth + sum_{j>=i} (p_j - 1). Returns layer_sides.size()+1 values.
std::vector<int> super_patch_sizes(const std::vector<int>& layer_sides, int p_synth);

/// Minimum IPAD atoms per layer: ceil(p_{S,1}^2 d0 / (p_{S,i} - p_i + 1)^2).
std::vector<int> min_ipad_atoms(const std::vector<int>& layer_sides, int p_synth, int d0);

/// Minimum CAD atoms so discriminative coefficients do not shrink:
/// ceil(d_prev_cad * prev_window^2 / window^2).
int min_cad_atoms(int d_prev_cad, int prev_window, int window);

/// Full layer-spec chain from the model shape; throws on an Eq.-style
/// IPAD bound violation unless allow_undersized, warns (to log) on a CAD
/// bound violation.
std::vector<LayerSpec> make_layer_specs(int scale, const std::vector<int>& layer_sides,
                                        const std::vector<int>& layer_filters, int p_synth,
                                        const std::vector<int>& ipad_counts = {},
                                        bool allow_undersized = false,
                                        std::ostream* log = nullptr);

// --- Training building blocks ------------------------------------------------

/// Least-squares map D = Y X^T (X X^T)^-1 with a ridge fallback when the
/// Gram matrix is numerically singular.
Matrix per_layer_synthesis(const Matrix& x, const Matrix& y);

/// Solves gram * out = rhs; retries with ridge 1e-8 * trace when singular.
Matrix solve_gram(const Matrix& gram, const Matrix& rhs);

enum class ThresholdMode { kInverse, kProportional };

struct ThresholdSearchResult {
  double rho = 0;
  Vector lambda;   // per-atom thresholds at the chosen rho
  double score = 0;
  Matrix fitted;   // G Z at the chosen rho (targets' best estimate)
};

/// 1-D grid search for the threshold scale: for each rho, features are
/// soft-thresholded per atom block, targets are regressed on them and the
/// residual Frobenius norm is scored. Ties prefer the smaller rho.
ThresholdSearchResult threshold_scale_search(const Matrix& features, const Matrix& targets,
                                             const Vector& sigma, Index out_positions,
                                             const std::vector<double>& grid,
                                             ThresholdMode mode, std::ostream* log = nullptr);

/// The searched grid {a 10^b : a in 1..9, b in min_exp..max_exp}.
std::vector<double> default_search_grid(int min_exp = -3, int max_exp = 0);

// --- Forward pass -------------------------------------------------------------

/// Convolution + per-channel soft-thresholding of one layer.
FeatureTensor layer_forward(const FeatureTensor& in, const TrainedLayer& layer);

/// Valid convolution with the synthesis dictionary: s^2 output channels.
FeatureTensor synthesis_forward(const FeatureTensor& in, const SynthesisLayer& synth,
                                int scale);

/// Rearranges s^2 channels into an s-times larger image; channel c lands at
/// offset (c / s, c % s).
LumaImage pixel_shuffle(const FeatureTensor& y, int s);
FeatureTensor pixel_unshuffle(const LumaImage& img, int s);

LumaImage replicate_pad(const LumaImage& img, int top, int bottom, int left, int right);

/// Full super-resolution: replicate-pad, run the layers and the synthesis,
/// pixel-shuffle. Output is exactly scale * input size, clamped to [0,255].
LumaImage super_resolve(const DeepCamModel& model, const LumaImage& lr);

// --- Whole-model training ------------------------------------------------------

struct ModelConfig {
  int scale = 2;
  std::vector<int> layer_sides;
  std::vector<int> layer_filters;
  int synth_side = 3;
  std::vector<int> ipad_counts;  // empty: minimum per the sizing bound
  bool allow_undersized = false;
};

/// Optional absolute overrides of the per-layer objective weight defaults.
struct WeightOverrides {
  std::optional<double> ipad_nu, ipad_kappa, ipad_upsilon;
  std::optional<double> cad_nu, cad_kappa, cad_upsilon, cad_mu;
};

struct TrainSettings {
  OptimizerConfig opt;
  double subspace_energy = 0.9999;
  Index n2 = 50'000;
  std::vector<double> grid = default_search_grid();
  WeightOverrides weights;
  IterCallback iteration_callback;  // observes every accepted learner iterate
};

DeepCamModel train_model(const TrainingPairs& pairs, const ModelConfig& config,
                         const TrainSettings& settings, std::ostream* log = nullptr);

/// Table II weight defaults for layer geometry (n_i, d_Ii, d_Ci).
ObjectiveConfig ipad_weights(int n, int d_ipad);
ObjectiveConfig cad_weights(int n, int d_cad);

// --- Serialization --------------------------------------------------------------

/// Binary model container: magic "DCAM", little-endian u32 header fields,
/// row-major float64 payloads, trailing CRC-32 of everything before it.
void save_model(const std::string& path, const DeepCamModel& model);
DeepCamModel load_model(const std::string& path);

}  // namespace deepcam
