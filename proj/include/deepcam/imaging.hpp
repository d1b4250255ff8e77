#pragma once

#include "deepcam/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace deepcam {

/// Grayscale image, values nominally in [0, 255], stored row = y, col = x.
struct LumaImage {
  Matrix pix;

  Index height() const { return pix.rows(); }
  Index width() const { return pix.cols(); }
};

/// Reads a binary PGM (P5, maxval 255) bit-exactly, or a PNG for
/// convenience (RGB inputs are converted with BT.601 full-range luma).
LumaImage load_image(const std::string& path);

/// Writes binary PGM (P5, maxval 255), rounding and clamping to 8 bits.
void save_pgm(const std::string& path, const LumaImage& img);

/// Separable resampling with the Keys cubic kernel (a = -0.5), replicate
/// edges. Downscaling widens the kernel by 1/factor (antialiasing), which
/// is the convention the usual super-resolution degradation uses.
LumaImage bicubic_resize(const LumaImage& img, double factor);

/// Crop so both dimensions are divisible by s.
LumaImage modcrop(const LumaImage& img, int s);

/// 10 log10(255^2 / MSE) over the region excluding border_crop pixels per
/// side. Identical inputs give +inf.
double psnr(const LumaImage& ref, const LumaImage& test, int border_crop);

/// LR-grid location of one sampled super-patch (top-left corner).
struct PatchRef {
  int img = 0;
  int y = 0;
  int x = 0;
};

/// Paired training data for one scale factor and one layer chain.
///
/// Super-patches of side `super_side` are sampled from the bicubic-degraded
/// LR images; every super-patch is paired with the s x s group of HR pixels
/// written by its central LR position. Layer-1 small patches (side p1) are
/// sampled inside the super-patches together with their center HR groups
/// and their s*p1-sided HR patches.
struct TrainingPairs {
  int scale = 1;
  int super_side = 0;
  int p1 = 0;
  std::uint64_t seed = 0;

  std::vector<LumaImage> hr;  // modcropped originals
  std::vector<LumaImage> lr;  // bicubic 1/s degradations

  std::vector<PatchRef> super_pos;  // N1 entries
  Matrix xs0;                       // super_side^2 x N1

  struct SmallRef {
    int sp = 0;  // index into super_pos
    int dy = 0, dx = 0;
  };
  std::vector<SmallRef> small_pos;  // N2 entries
  Matrix x0;  // p1^2 x N2
  Matrix y;   // s^2 x N2   center HR groups of the small patches
  Matrix y1;  // (s*p1)^2 x N2 HR patches covering the small patches

  /// s^2 HR pixels written by LR position (y, x): element c is
  /// HR(s*y + c/s, s*x + c%s).
  Vector hr_group(int img, int ly, int lx) const;
  /// Vectorized (s*side)^2 HR patch covering LR positions [y, y+side).
  Vector hr_patch(int img, int ly, int lx, int side) const;
  /// Center HR groups of all super-patches, s^2 x N1.
  Matrix super_center_groups() const;
};

/// Samples N1 super-patches and N2 layer-1 small patches (seeded,
/// deterministic). Counts are capped to the number of available positions.
/// p_chain lists the analysis layer sides followed by the synthesis side.
TrainingPairs build_training_pairs(const std::vector<LumaImage>& hr_images, int s,
                                   const std::vector<int>& p_chain, Index n1, Index n2,
                                   std::uint64_t seed);

/// Binary cache of TrainingPairs inputs (8-bit luma images + sampling
/// parameters); loading rebuilds the pairs deterministically.
void save_pairs_cache(const std::string& path, const TrainingPairs& pairs);
TrainingPairs load_pairs_cache(const std::string& path, const std::vector<int>& p_chain);

/// All .pgm/.png files in a directory, sorted by filename.
std::vector<std::string> list_image_files(const std::string& dir);

}  // namespace deepcam
