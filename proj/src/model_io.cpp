#include "deepcam/deepcam.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace deepcam {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64_row_major(std::string& buf, const Matrix& m) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) {
      double v = m(r, c);
      char raw[8];
      std::memcpy(raw, &v, 8);
      buf.append(raw, 8);
    }
}

void put_f64(std::string& buf, const Vector& v) {
  for (Index i = 0; i < v.size(); ++i) {
    double d = v[i];
    char raw[8];
    std::memcpy(raw, &d, 8);
    buf.append(raw, 8);
  }
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw ValidationError("model file: truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  Matrix f64_row_major(Index rows, Index cols) {
    need(static_cast<size_t>(rows) * cols * 8);
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) {
        double v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        m(r, c) = v;
      }
    return m;
  }
  Vector f64(Index n) {
    need(static_cast<size_t>(n) * 8);
    Vector v(n);
    for (Index i = 0; i < n; ++i) {
      double d;
      std::memcpy(&d, buf.data() + pos, 8);
      pos += 8;
      v[i] = d;
    }
    return v;
  }
};

std::uint32_t crc_of(const std::string& buf, size_t len) {
  return static_cast<std::uint32_t>(
      ::crc32(0, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(len)));
}

}  // namespace

void save_model(const std::string& path, const DeepCamModel& model) {
  model.validate();
  std::string buf;
  buf += "DCAM";
  put_u32(buf, kFormatVersion);
  put_u32(buf, static_cast<std::uint32_t>(model.scale));
  put_u32(buf, static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    put_u32(buf, static_cast<std::uint32_t>(layer.spec.p));
    put_u32(buf, static_cast<std::uint32_t>(layer.spec.d_in));
    put_u32(buf, static_cast<std::uint32_t>(layer.spec.d));
    put_u32(buf, static_cast<std::uint32_t>(layer.spec.d_ipad));
    put_f64_row_major(buf, layer.omega);
    put_f64(buf, layer.lambda);
  }
  put_u32(buf, static_cast<std::uint32_t>(model.synth.p));
  put_u32(buf, static_cast<std::uint32_t>(model.synth.D.cols()));
  put_u32(buf, static_cast<std::uint32_t>(model.synth.D.rows()));
  put_f64_row_major(buf, model.synth.D);
  put_u32(buf, crc_of(buf, buf.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ValidationError("write failure on " + path);
}

DeepCamModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 20 || buf.compare(0, 4, "DCAM") != 0)
    throw ValidationError("model file: bad magic in " + path);

  Reader tail{buf, buf.size() - 4};
  const std::uint32_t stored_crc = tail.u32();
  if (crc_of(buf, buf.size() - 4) != stored_crc)
    throw ValidationError("model file: CRC mismatch in " + path);

  Reader r{buf, 4};
  if (r.u32() != kFormatVersion) throw ValidationError("model file: unsupported version");
  DeepCamModel model;
  model.scale = static_cast<int>(r.u32());
  if (model.scale < 1 || model.scale > 16) throw ValidationError("model file: bad scale");
  const std::uint32_t num_layers = r.u32();
  if (num_layers > 64) throw ValidationError("model file: implausible layer count");

  int d_prev = 1;
  for (std::uint32_t i = 0; i < num_layers; ++i) {
    TrainedLayer layer;
    layer.spec.index = static_cast<int>(i) + 1;
    layer.spec.p = static_cast<int>(r.u32());
    layer.spec.d_in = static_cast<int>(r.u32());
    layer.spec.d = static_cast<int>(r.u32());
    layer.spec.d_ipad = static_cast<int>(r.u32());
    if (layer.spec.p < 1 || layer.spec.d < 1 || layer.spec.d_in != d_prev ||
        layer.spec.d_ipad < 0 || layer.spec.d_ipad > layer.spec.d)
      throw ValidationError("model file: inconsistent layer header");
    layer.omega = r.f64_row_major(layer.spec.d, layer.spec.n());
    layer.lambda = r.f64(layer.spec.d);
    d_prev = layer.spec.d;
    model.layers.push_back(std::move(layer));
  }
  model.synth.p = static_cast<int>(r.u32());
  const Index n_synth = static_cast<Index>(r.u32());
  const Index rows = static_cast<Index>(r.u32());
  model.synth.d_in = d_prev;
  if (model.synth.p < 1 ||
      n_synth != static_cast<Index>(model.synth.p) * model.synth.p * d_prev ||
      rows != static_cast<Index>(model.scale) * model.scale)
    throw ValidationError("model file: inconsistent synthesis header");
  model.synth.D = r.f64_row_major(rows, n_synth);
  if (r.pos != buf.size() - 4) throw ValidationError("model file: trailing bytes");
  model.validate();
  return model;
}

}  // namespace deepcam
