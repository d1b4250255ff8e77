#include "deepcam/config.hpp"
#include "deepcam/deepcam.hpp"
#include "deepcam/imaging.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace deepcam;

namespace {

std::vector<LumaImage> load_corpus(const std::string& dir) {
  const auto files = list_image_files(dir);
  if (files.empty()) throw ValidationError("no images found in " + dir + " (count 0)");
  std::vector<LumaImage> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_image(f));
  return out;
}

int cmd_prepare(const std::string& hr_dir, int scale, const std::string& out,
                const std::vector<int>& layer_p, int synth_p, long long n1, long long n2,
                long long seed) {
  std::vector<int> chain = layer_p;
  chain.push_back(synth_p);
  const auto images = load_corpus(hr_dir);
  TrainingPairs pairs = build_training_pairs(images, scale, chain, n1, n2,
                                             static_cast<std::uint64_t>(seed));
  save_pairs_cache(out, pairs);
  std::cerr << "prepared " << pairs.xs0.cols() << " super-patches and " << pairs.x0.cols()
            << " small patches from " << images.size() << " images -> " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_model) {
  RunConfig rc = RunConfig::from_file(config_path);
  TrainingPairs pairs;
  if (!rc.train_cache.empty()) {
    pairs = load_pairs_cache(rc.train_cache, rc.chain_with_synth());
    if (pairs.scale != rc.model.scale)
      throw ValidationError("train: cache scale does not match config scale");
  } else {
    pairs = build_training_pairs(load_corpus(rc.train_dir), rc.model.scale,
                                 rc.chain_with_synth(), rc.n1, rc.settings.n2,
                                 rc.settings.opt.seed);
  }
  const DeepCamModel model = train_model(pairs, rc.model, rc.settings, &std::cerr);
  save_model(out_model, model);
  std::cerr << "model written to " << out_model << "\n";
  return 0;
}

int cmd_sr(const std::string& model_path, const std::string& input, const std::string& output) {
  const DeepCamModel model = load_model(model_path);
  if (fs::is_directory(input)) {
    fs::create_directories(output);
    for (const auto& f : list_image_files(input)) {
      const LumaImage hr = super_resolve(model, load_image(f));
      const std::string name = fs::path(f).stem().string() + ".pgm";
      save_pgm((fs::path(output) / name).string(), hr);
      std::cerr << f << " -> " << (fs::path(output) / name).string() << "\n";
    }
    return 0;
  }
  save_pgm(output, super_resolve(model, load_image(input)));
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& hr_dir, int scale,
             const std::string& csv_path) {
  const DeepCamModel model = load_model(model_path);
  if (scale != model.scale)
    throw ValidationError("eval: --scale does not match the model's scale");
  const auto files = list_image_files(hr_dir);
  if (files.empty()) throw ValidationError("no images found in " + hr_dir + " (count 0)");

  std::ofstream csv(csv_path);
  if (!csv) throw ValidationError("cannot write " + csv_path);
  csv << "image,method,psnr_db\n";
  double sum_bicubic = 0, sum_model = 0;
  for (const auto& f : files) {
    const LumaImage hr = modcrop(load_image(f), scale);
    const LumaImage lr = bicubic_resize(hr, 1.0 / scale);
    const LumaImage up = bicubic_resize(lr, static_cast<double>(scale));
    const LumaImage sr = super_resolve(model, lr);
    const double p_b = psnr(hr, up, scale);
    const double p_m = psnr(hr, sr, scale);
    sum_bicubic += p_b;
    sum_model += p_m;
    const std::string name = fs::path(f).stem().string();
    csv << name << ",bicubic," << p_b << "\n";
    csv << name << ",deepcam," << p_m << "\n";
    std::cerr << name << ": bicubic " << p_b << " dB, deepcam " << p_m << " dB\n";
  }
  const double n = static_cast<double>(files.size());
  csv << "average,bicubic," << sum_bicubic / n << "\n";
  csv << "average,deepcam," << sum_model / n << "\n";
  std::cerr << "average: bicubic " << sum_bicubic / n << " dB, deepcam " << sum_model / n
            << " dB\n";
  return 0;
}

int cmd_inspect(const std::string& model_path, const std::string& dump_dir,
                const std::string& input) {
  const DeepCamModel model = load_model(model_path);
  fs::create_directories(dump_dir);

  std::ofstream csv((fs::path(dump_dir) / "thresholds.csv").string());
  if (!csv) throw ValidationError("cannot write thresholds.csv");
  csv << "layer,atom,lambda,kind\n";
  for (const auto& layer : model.layers)
    for (int j = 0; j < layer.spec.d; ++j)
      csv << layer.spec.index << "," << j << "," << layer.lambda[j] << ","
          << (j < layer.spec.d_ipad ? "IPAD" : "CAD") << "\n";

  if (!input.empty()) {
    FeatureTensor feat = FeatureTensor::from_matrix(load_image(input).pix);
    for (const auto& layer : model.layers) {
      feat = layer_forward(feat, layer);
      for (Index c = 0; c < feat.channels(); ++c) {
        LumaImage vis;
        vis.pix = feat.channel(c);
        const double lo = vis.pix.minCoeff(), hi = vis.pix.maxCoeff();
        if (hi > lo)
          vis.pix = 255.0 * (vis.pix.array() - lo) / (hi - lo);
        else
          vis.pix.setZero();
        char name[64];
        std::snprintf(name, sizeof name, "layer%d_ch%03d.pgm", layer.spec.index,
                      static_cast<int>(c));
        save_pgm((fs::path(dump_dir) / name).string(), vis);
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeepCAM: convolutional analysis dictionary learning for super-resolution"};
  app.require_subcommand(1);

  auto* prepare = app.add_subcommand("prepare", "build and cache training pairs");
  std::string hr_dir, out_path;
  int scale = 2, synth_p = 3;
  std::vector<int> layer_p{3};
  long long n1 = 20'000, n2 = 50'000, seed = 0;
  prepare->add_option("--hr-dir", hr_dir, "directory of HR images")->required();
  prepare->add_option("--scale", scale, "upscaling factor");
  prepare->add_option("--out", out_path, "cache file to write")->required();
  prepare->add_option("--layer-p", layer_p, "analysis layer filter sides");
  prepare->add_option("--synth-p", synth_p, "synthesis filter side");
  prepare->add_option("--n1", n1, "super-patch count");
  prepare->add_option("--n2", n2, "small-patch count");
  prepare->add_option("--seed", seed, "sampling seed");

  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string config_path, out_model;
  train->add_option("--config", config_path, "key = value config file")->required();
  train->add_option("--out-model", out_model, "model file to write")->required();

  auto* sr = app.add_subcommand("sr", "super-resolve an image or directory");
  std::string model_path, in_path, sr_out;
  sr->add_option("--model", model_path, "trained model file")->required();
  sr->add_option("--in", in_path, "input image or directory")->required();
  sr->add_option("--out", sr_out, "output image or directory")->required();

  auto* eval = app.add_subcommand("eval", "PSNR against bicubic on a HR corpus");
  std::string eval_dir, csv_path;
  eval->add_option("--model", model_path, "trained model file")->required();
  eval->add_option("--hr-dir", eval_dir, "directory of HR images")->required();
  eval->add_option("--scale", scale, "upscaling factor")->required();
  eval->add_option("--csv", csv_path, "CSV file to write")->required();

  auto* inspect = app.add_subcommand("inspect", "dump thresholds and feature maps");
  std::string dump_dir, inspect_input;
  inspect->add_option("--model", model_path, "trained model file")->required();
  inspect->add_option("--dump-dir", dump_dir, "output directory")->required();
  inspect->add_option("--input", inspect_input, "optional image for feature maps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(hr_dir, scale, out_path, layer_p, synth_p, n1, n2, seed);
    if (train->parsed()) return cmd_train(config_path, out_model);
    if (sr->parsed()) return cmd_sr(model_path, in_path, sr_out);
    if (eval->parsed()) return cmd_eval(model_path, eval_dir, scale, csv_path);
    if (inspect->parsed()) return cmd_inspect(model_path, dump_dir, inspect_input);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
