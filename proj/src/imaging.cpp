#include "deepcam/imaging.hpp"

#include "deepcam/deepcam.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>

namespace deepcam {

namespace {

int read_pnm_token(std::istream& in) {
  // Skips whitespace and '#' comments between header fields.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      in.unget();
      int value = 0;
      if (!(in >> value)) throw ValidationError("PGM: malformed header");
      return value;
    }
    c = in.get();
  }
  throw ValidationError("PGM: truncated header");
}

LumaImage load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  char magic[2];
  in.read(magic, 2);
  if (in.gcount() != 2 || magic[0] != 'P' || magic[1] != '5')
    throw ValidationError("PGM: not a P5 file: " + path);
  const int w = read_pnm_token(in);
  const int h = read_pnm_token(in);
  const int maxval = read_pnm_token(in);
  if (w < 1 || h < 1) throw ValidationError("PGM: bad dimensions in " + path);
  if (maxval != 255) throw ValidationError("PGM: unsupported maxval in " + path);
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw ValidationError("PGM: truncated pixel data in " + path);
  LumaImage img;
  img.pix.resize(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.pix(y, x) = buf[static_cast<size_t>(y) * w + x];
  return img;
}

LumaImage load_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw ValidationError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw NumericalError("PNG: allocation failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw ValidationError("PNG: malformed file " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
      png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_uint_32 ch = png_get_channels(png, info);
  std::vector<unsigned char> row(static_cast<size_t>(w) * ch);
  LumaImage img;
  img.pix.resize(h, w);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x) {
      double v;
      if (ch >= 3) {
        // BT.601 full-range luma.
        v = std::round(0.299 * row[x * ch] + 0.587 * row[x * ch + 1] +
                       0.114 * row[x * ch + 2]);
      } else {
        v = row[x * ch];
      }
      img.pix(static_cast<Index>(y), static_cast<Index>(x)) = v;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

bool ends_with_ci(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(),
                    [](char a, char b) { return std::tolower(a) == std::tolower(b); });
}

double keys_cubic(double t) {
  t = std::abs(t);
  if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

// One separable resampling pass along the rows of src (length in -> out).
Matrix resample_rows(const Matrix& src, Index out, double factor) {
  const Index in = src.rows();
  const double scale = factor < 1.0 ? factor : 1.0;
  const double support = 2.0 / scale;
  Matrix dst(out, src.cols());
  for (Index i = 0; i < out; ++i) {
    const double center = (static_cast<double>(i) + 0.5) / factor - 0.5;
    const Index lo = static_cast<Index>(std::ceil(center - support));
    const Index hi = static_cast<Index>(std::floor(center + support));
    double wsum = 0;
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(src.cols());
    for (Index j = lo; j <= hi; ++j) {
      const double w = keys_cubic((center - static_cast<double>(j)) * scale) * scale;
      if (w == 0) continue;
      const Index idx = std::clamp<Index>(j, 0, in - 1);
      acc += w * src.row(idx);
      wsum += w;
    }
    dst.row(i) = acc / wsum;
  }
  return dst;
}

}  // namespace

LumaImage load_image(const std::string& path) {
  if (ends_with_ci(path, ".png")) return load_png(path);
  return load_pgm(path);
}

void save_pgm(const std::string& path, const LumaImage& img) {
  if (img.height() < 1 || img.width() < 1) throw ValidationError("save_pgm: empty image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> buf(static_cast<size_t>(img.width()) * img.height());
  for (Index y = 0; y < img.height(); ++y)
    for (Index x = 0; x < img.width(); ++x) {
      const double v = std::round(img.pix(y, x));
      buf[static_cast<size_t>(y) * img.width() + x] =
          static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
    }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ValidationError("write failure on " + path);
}

LumaImage bicubic_resize(const LumaImage& img, double factor) {
  if (factor <= 0) throw ValidationError("bicubic_resize: factor must be positive");
  const Index oh = static_cast<Index>(std::floor(img.height() * factor + 0.5));
  const Index ow = static_cast<Index>(std::floor(img.width() * factor + 0.5));
  if (oh < 1 || ow < 1) throw ValidationError("bicubic_resize: output dimension < 1");
  LumaImage out;
  const Matrix tmp = resample_rows(img.pix, oh, factor);
  out.pix = resample_rows(tmp.transpose(), ow, factor).transpose();
  return out;
}

LumaImage modcrop(const LumaImage& img, int s) {
  if (s < 1) throw ValidationError("modcrop: scale must be >= 1");
  LumaImage out;
  out.pix = img.pix.topLeftCorner(img.height() - img.height() % s,
                                  img.width() - img.width() % s);
  return out;
}

double psnr(const LumaImage& ref, const LumaImage& test, int border_crop) {
  if (ref.height() != test.height() || ref.width() != test.width())
    throw ValidationError("psnr: dimension mismatch");
  const Index c = border_crop;
  if (c < 0 || ref.height() <= 2 * c || ref.width() <= 2 * c)
    throw ValidationError("psnr: crop leaves no pixels");
  const auto a = ref.pix.block(c, c, ref.height() - 2 * c, ref.width() - 2 * c);
  const auto b = test.pix.block(c, c, ref.height() - 2 * c, ref.width() - 2 * c);
  const double mse = (a - b).squaredNorm() / static_cast<double>(a.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

Vector TrainingPairs::hr_group(int img, int ly, int lx) const {
  return hr_patch(img, ly, lx, 1);
}

Vector TrainingPairs::hr_patch(int img, int ly, int lx, int side) const {
  const int s = scale;
  const Matrix& h = hr[img].pix;
  Vector out(static_cast<Index>(s) * side * s * side);
  if (side == 1) {
    // Group order: element c is the HR pixel at offset (c/s, c%s).
    for (int c = 0; c < s * s; ++c)
      out[c] = h(static_cast<Index>(s) * ly + c / s, static_cast<Index>(s) * lx + c % s);
    return out;
  }
  const auto block = h.block(static_cast<Index>(s) * ly, static_cast<Index>(s) * lx,
                             static_cast<Index>(s) * side, static_cast<Index>(s) * side);
  Index j = 0;
  for (Index x = 0; x < block.cols(); ++x)
    for (Index y = 0; y < block.rows(); ++y) out[j++] = block(y, x);
  return out;
}

Matrix TrainingPairs::super_center_groups() const {
  const int off = (super_side - 1) / 2;
  Matrix out(static_cast<Index>(scale) * scale, static_cast<Index>(super_pos.size()));
  for (size_t k = 0; k < super_pos.size(); ++k)
    out.col(static_cast<Index>(k)) =
        hr_group(super_pos[k].img, super_pos[k].y + off, super_pos[k].x + off);
  return out;
}

TrainingPairs build_training_pairs(const std::vector<LumaImage>& hr_images, int s,
                                   const std::vector<int>& p_chain, Index n1, Index n2,
                                   std::uint64_t seed) {
  if (hr_images.empty()) throw ValidationError("build_training_pairs: empty corpus");
  if (s < 1) throw ValidationError("build_training_pairs: scale must be >= 1");
  if (p_chain.empty()) throw ValidationError("build_training_pairs: empty layer chain");

  TrainingPairs tp;
  tp.scale = s;
  tp.seed = seed;
  std::vector<int> analysis(p_chain.begin(), p_chain.end() - 1);
  tp.p1 = analysis.empty() ? p_chain.back() : analysis.front();
  tp.super_side = super_patch_sizes(analysis, p_chain.back()).front();

  for (const auto& img : hr_images) {
    LumaImage h = modcrop(img, s);
    if (h.height() / s < tp.super_side || h.width() / s < tp.super_side)
      throw ValidationError("build_training_pairs: image too small for the super-patch");
    tp.lr.push_back(bicubic_resize(h, 1.0 / s));
    tp.hr.push_back(std::move(h));
  }

  // Uniform over all valid top-left positions across all images.
  std::vector<std::int64_t> cum{0};
  for (const auto& l : tp.lr) {
    const std::int64_t c = (l.height() - tp.super_side + 1) * (l.width() - tp.super_side + 1);
    cum.push_back(cum.back() + c);
  }
  const std::int64_t total = cum.back();
  if (n1 > total) {
    std::cerr << "build_training_pairs: N1 capped to " << total << " available positions\n";
    n1 = total;
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> pick(0, total - 1);
  tp.super_pos.reserve(n1);
  const Index ss = tp.super_side;
  tp.xs0.resize(ss * ss, n1);
  for (Index k = 0; k < n1; ++k) {
    const std::int64_t r = pick(rng);
    const size_t img = static_cast<size_t>(
        std::upper_bound(cum.begin(), cum.end(), r) - cum.begin() - 1);
    const std::int64_t within = r - cum[img];
    const Index w = tp.lr[img].width() - ss + 1;
    PatchRef ref{static_cast<int>(img), static_cast<int>(within / w),
                 static_cast<int>(within % w)};
    tp.super_pos.push_back(ref);
    Index j = 0;
    for (Index x = 0; x < ss; ++x)
      for (Index y = 0; y < ss; ++y)
        tp.xs0(j++, k) = tp.lr[img].pix(ref.y + y, ref.x + x);
  }

  // Layer-1 small patches with their HR alignments.
  const Index p1 = tp.p1;
  const Index offs = ss - p1 + 1;
  const std::int64_t avail = static_cast<std::int64_t>(n1) * offs * offs;
  if (n2 > avail) {
    std::cerr << "build_training_pairs: N2 capped to " << avail << " available positions\n";
    n2 = avail;
  }
  std::uniform_int_distribution<Index> pick_sp(0, n1 - 1);
  std::uniform_int_distribution<Index> pick_off(0, offs - 1);
  const int center = static_cast<int>((p1 - 1) / 2);
  tp.small_pos.reserve(n2);
  tp.x0.resize(p1 * p1, n2);
  tp.y.resize(static_cast<Index>(s) * s, n2);
  tp.y1.resize(static_cast<Index>(s) * p1 * s * p1, n2);
  for (Index k = 0; k < n2; ++k) {
    TrainingPairs::SmallRef sr;
    sr.sp = static_cast<int>(pick_sp(rng));
    sr.dy = static_cast<int>(pick_off(rng));
    sr.dx = static_cast<int>(pick_off(rng));
    tp.small_pos.push_back(sr);
    const PatchRef& sp = tp.super_pos[sr.sp];
    Index j = 0;
    for (Index x = 0; x < p1; ++x)
      for (Index y = 0; y < p1; ++y)
        tp.x0(j++, k) = tp.lr[sp.img].pix(sp.y + sr.dy + y, sp.x + sr.dx + x);
    tp.y.col(k) = tp.hr_group(sp.img, sp.y + sr.dy + center, sp.x + sr.dx + center);
    tp.y1.col(k) = tp.hr_patch(sp.img, sp.y + sr.dy, sp.x + sr.dx, static_cast<int>(p1));
  }
  return tp;
}

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::uint32_t u32() {
    if (pos + 4 > buf.size()) throw ValidationError("cache: truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    if (pos + 8 > buf.size()) throw ValidationError("cache: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
};

}  // namespace

void save_pairs_cache(const std::string& path, const TrainingPairs& pairs) {
  std::string buf;
  buf += "DCPD";
  put_u32(buf, 1);  // format version
  put_u32(buf, static_cast<std::uint32_t>(pairs.scale));
  put_u64(buf, pairs.seed);
  put_u64(buf, static_cast<std::uint64_t>(pairs.super_pos.size()));
  put_u64(buf, static_cast<std::uint64_t>(pairs.small_pos.size()));
  put_u32(buf, static_cast<std::uint32_t>(pairs.super_side));
  put_u32(buf, static_cast<std::uint32_t>(pairs.p1));
  put_u32(buf, static_cast<std::uint32_t>(pairs.hr.size()));
  for (const auto& img : pairs.hr) {
    put_u32(buf, static_cast<std::uint32_t>(img.height()));
    put_u32(buf, static_cast<std::uint32_t>(img.width()));
    for (Index y = 0; y < img.height(); ++y)
      for (Index x = 0; x < img.width(); ++x)
        buf.push_back(static_cast<char>(static_cast<unsigned char>(
            std::clamp(std::round(img.pix(y, x)), 0.0, 255.0))));
  }
  const std::uint32_t crc = static_cast<std::uint32_t>(
      ::crc32(0, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
  put_u32(buf, crc);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ValidationError("write failure on " + path);
}

TrainingPairs load_pairs_cache(const std::string& path, const std::vector<int>& p_chain) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || buf.compare(0, 4, "DCPD") != 0)
    throw ValidationError("cache: bad magic in " + path);
  const std::uint32_t stored_crc =
      static_cast<std::uint32_t>(static_cast<unsigned char>(buf[buf.size() - 4])) |
      static_cast<std::uint32_t>(static_cast<unsigned char>(buf[buf.size() - 3])) << 8 |
      static_cast<std::uint32_t>(static_cast<unsigned char>(buf[buf.size() - 2])) << 16 |
      static_cast<std::uint32_t>(static_cast<unsigned char>(buf[buf.size() - 1])) << 24;
  const std::uint32_t crc = static_cast<std::uint32_t>(::crc32(
      0, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
  if (crc != stored_crc) throw ValidationError("cache: CRC mismatch in " + path);

  Reader r{buf, 4};
  if (r.u32() != 1) throw ValidationError("cache: unsupported version");
  const int scale = static_cast<int>(r.u32());
  const std::uint64_t seed = r.u64();
  const Index n1 = static_cast<Index>(r.u64());
  const Index n2 = static_cast<Index>(r.u64());
  const int super_side = static_cast<int>(r.u32());
  const int p1 = static_cast<int>(r.u32());
  const std::uint32_t num_images = r.u32();
  std::vector<LumaImage> images;
  images.reserve(num_images);
  for (std::uint32_t i = 0; i < num_images; ++i) {
    const Index h = static_cast<Index>(r.u32());
    const Index w = static_cast<Index>(r.u32());
    if (r.pos + static_cast<size_t>(h) * w > buf.size())
      throw ValidationError("cache: truncated image data");
    LumaImage img;
    img.pix.resize(h, w);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        img.pix(y, x) = static_cast<unsigned char>(buf[r.pos++]);
    images.push_back(std::move(img));
  }

  TrainingPairs tp = build_training_pairs(images, scale, p_chain, n1, n2, seed);
  if (tp.super_side != super_side || tp.p1 != p1)
    throw ValidationError("cache: layer chain does not match the cached geometry");
  return tp;
}

std::vector<std::string> list_image_files(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> out;
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string p = e.path().string();
    if (ends_with_ci(p, ".pgm") || ends_with_ci(p, ".png")) out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace deepcam
