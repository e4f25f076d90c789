// splatnet: train, run and inspect lattice segmentation networks.
//
// Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "splatnet/splatnet.hpp"

namespace fs = std::filesystem;
using namespace splatnet;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::vector<double> parse_lambdas(const std::string& text) {
  std::vector<double> out;
  for (const auto& tok : detail::split_list(text)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != tok.size()) throw ConfigError("--lambda: expected numbers, got '" + tok + "'");
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("--lambda: values must be > 0");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--lambda: no values given");
  return out;
}

std::string fmt(double v) { return detail::format_double(v); }

// Writes through a temporary file so readers never see a partial file.
template <typename Fn>
void write_atomically(const fs::path& path, Fn&& write) {
  const fs::path tmp = path.string() + ".tmp";
  write(tmp);
  fs::rename(tmp, path);
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::string> out;
  std::optional<std::string> resume;
};

fs::path resolve_against(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

int cmd_train(const TrainArgs& args) {
  RunConfig cfg = load_run_config(args.config);
  if (args.seed) cfg.train.seed = *args.seed;
  if (args.threads) cfg.threads = *args.threads;
  if (args.out) cfg.output_dir = *args.out;
  try {
    finalize_run_config(cfg);
  } catch (const ParseError& e) {
    throw ConfigError(std::string("config key 'arch': ") + e.what());
  }
  set_num_threads(cfg.threads);

  // Relative data paths are taken from the config file's directory.
  const fs::path base = fs::absolute(args.config).parent_path();
  Dataset data = load_dataset(resolve_against(base, cfg.data_dir));
  if (data.empty()) throw EmptyInput("no clouds found in '" + cfg.data_dir + "'");
  Dataset validation;
  if (!cfg.val_dir.empty()) {
    validation = load_dataset(resolve_against(base, cfg.val_dir));
  } else if (cfg.val_fraction > 0.0) {
    const std::vector<double> fractions{1.0 - cfg.val_fraction, cfg.val_fraction};
    const auto parts = split_dataset(data.size(), fractions, cfg.train.seed);
    validation = data.subset(parts[1]);
    data = data.subset(parts[0]);
  }

  Model model;
  std::optional<OptimizerState> resume_state;
  std::size_t start = 0;
  if (args.resume) {
    Checkpoint ck = load_checkpoint(*args.resume);
    if (!(ck.config == cfg.model)) throw ConfigError("checkpoint '" + *args.resume + "' does not match the config");
    if (!ck.optimizer) throw ConfigError("checkpoint '" + *args.resume + "' has no optimizer state to resume from");
    model = Model::restore(ck.config, std::move(ck.params));
    start = static_cast<std::size_t>(ck.optimizer->step);
    resume_state = std::move(ck.optimizer);
  } else {
    model = Model::create(cfg.model, cfg.train.seed);
  }

  const fs::path out_dir = args.out ? fs::path(*args.out) : resolve_against(base, cfg.output_dir);
  fs::create_directories(out_dir);
  const fs::path metrics_path = out_dir / "metrics.csv";
  const bool fresh = start == 0 || !fs::exists(metrics_path);
  std::ofstream metrics(metrics_path, fresh ? std::ios::trunc : std::ios::app);
  if (!metrics) throw Error("cannot write '" + metrics_path.string() + "'");
  if (fresh) metrics << "iteration,loss,accuracy,wall_seconds\n";

  TrainConfig tc = cfg.train;
  const std::size_t print_every = tc.log_interval;
  tc.log_interval = 1;  // every iteration reaches the CSV
  TrainHooks hooks;
  hooks.on_log = [&](const TrainLogEntry& e) {
    metrics << e.iteration << ',' << fmt(e.loss) << ',' << fmt(e.accuracy) << ',' << fmt(e.wall_seconds) << '\n';
    if (print_every > 0 && (e.iteration % print_every == 0 || e.iteration == tc.max_iterations)) {
      metrics.flush();
      std::printf("iter %zu  loss %.6f  acc %.4f  %.1fs\n", e.iteration, e.loss, e.accuracy, e.wall_seconds);
      std::fflush(stdout);
    }
  };
  hooks.on_checkpoint = [&](const Model& m, const OptimizerState& s, std::size_t it) {
    const fs::path path = out_dir / ("checkpoint_" + std::to_string(it) + ".ckpt");
    write_atomically(path, [&](const fs::path& tmp) { save_checkpoint(tmp, make_checkpoint(m, s)); });
    // model.ckpt always holds the latest one
    write_atomically(out_dir / "model.ckpt", [&](const fs::path& tmp) { fs::copy_file(path, tmp, fs::copy_options::overwrite_existing); });
  };

  const auto result = train_loop(std::move(model), data, tc, validation.empty() ? nullptr : &validation,
                                 std::move(resume_state), start, hooks);
  metrics.flush();
  if (result.stopped_early) std::printf("stopped early at iteration %zu\n", result.iterations);
  std::printf("wrote %s\n", (out_dir / "model.ckpt").string().c_str());
  return 0;
}

// ---- predict ---------------------------------------------------------------

int cmd_predict(const std::string& cloud_path, const std::string& checkpoint, const std::string& out,
                bool probabilities) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const Model model = Model::restore(ck.config, ck.params);
  PointCloud cloud = load_cloud(cloud_path);
  const FeatureMatrix probs = model.infer(cloud);
  cloud.set_labels(predict(probs));
  if (probabilities) {
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      std::vector<double> col(probs.rows());
      for (std::size_t r = 0; r < probs.rows(); ++r) col[r] = probs(r, k);
      cloud.set_channel("prob_" + std::to_string(k), std::move(col));
    }
  }
  save_cloud(out, cloud);
  return 0;
}

// ---- eval ------------------------------------------------------------------

std::vector<int> labels_of(const PointCloud& cloud, const std::string& path) {
  if (!cloud.has_labels()) throw ConfigError("'" + path + "' has no label channel");
  return cloud.labels();
}

// Collects <dir>/<category>/<object> cloud files.
std::map<std::string, std::pair<std::string, fs::path>> objects_in(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("'" + dir.string() + "' is not a directory");
  std::map<std::string, std::pair<std::string, fs::path>> out;
  for (const auto& cat : fs::directory_iterator(dir)) {
    if (!cat.is_directory()) continue;
    for (const auto& f : fs::directory_iterator(cat.path())) {
      if (!f.is_regular_file()) continue;
      const std::string key = cat.path().filename().string() + "/" + f.path().filename().string();
      out[key] = {cat.path().filename().string(), f.path()};
    }
  }
  return out;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, const std::string& mode,
             std::optional<std::size_t> num_classes, std::optional<int> ignore, const std::string& out) {
  if (mode == "average_iou") {
    const auto pred = labels_of(load_cloud(pred_path), pred_path);
    const auto gt = labels_of(load_cloud(gt_path), gt_path);
    std::size_t classes = num_classes.value_or(0);
    if (!num_classes) {
      for (int l : gt) {
        if (!ignore || l != *ignore) classes = std::max(classes, static_cast<std::size_t>(std::max(l, 0)) + 1);
      }
      for (int l : pred) classes = std::max(classes, static_cast<std::size_t>(std::max(l, 0)) + 1);
    }
    const auto report = compute_iou(pred, gt, classes, ignore);
    std::cout << format_iou_table(report);
    if (!out.empty()) {
      std::ofstream csv(out);
      if (!csv) throw Error("cannot write '" + out + "'");
      csv << format_iou_csv(report);
    }
    return 0;
  }
  if (mode == "shapenet_miou") {
    const auto preds = objects_in(pred_path);
    const auto gts = objects_in(gt_path);
    std::vector<ObjectLabels> objects;
    std::vector<std::string> categories;
    for (const auto& [key, entry] : gts) {
      if (categories.empty() || categories.back() != entry.first) categories.push_back(entry.first);
      const auto it = preds.find(key);
      if (it == preds.end()) throw Error("no prediction for '" + key + "'");
      objects.push_back({entry.first, labels_of(load_cloud(it->second.second), it->second.second.string()),
                         labels_of(load_cloud(entry.second), entry.second.string())});
    }
    const auto report = shapenet_miou(objects, categories, ignore);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
    char buf[128];
    for (const auto& c : report.per_category) {
      std::snprintf(buf, sizeof buf, "%-16s %.4f  (%zu objects)\n", c.category.c_str(), c.miou, c.objects);
      std::cout << buf;
    }
    std::snprintf(buf, sizeof buf, "class_average %.4f\ninstance_average %.4f\n", report.class_average,
                  report.instance_average);
    std::cout << buf;
    if (!out.empty()) {
      std::ofstream csv(out);
      if (!csv) throw Error("cannot write '" + out + "'");
      csv << "category,miou\n";
      for (const auto& c : report.per_category) csv << c.category << ',' << fmt(c.miou) << '\n';
      csv << "class_average," << fmt(report.class_average) << "\ninstance_average,"
          << fmt(report.instance_average) << '\n';
    }
    return 0;
  }
  throw ConfigError("unknown --mode '" + mode + "' (expected average_iou or shapenet_miou)");
}

// ---- filter ----------------------------------------------------------------

int cmd_filter(const std::string& src_path, const std::string& dst_path, const std::string& lambda,
               const std::string& out, std::vector<std::string> channels,
               const std::vector<std::string>& lattice_channels, const std::string& gravity_axis) {
  const PointCloud src = load_cloud(src_path);
  PointCloud dst = load_cloud(dst_path);
  const auto lat_names = expand_channels(lattice_channels);
  if (channels.empty()) {
    for (const auto& n : src.channel_names()) {
      if (std::find(lat_names.begin(), lat_names.end(), n) == lat_names.end()) channels.push_back(n);
    }
    if (channels.empty()) throw ConfigError("'" + src_path + "' has no channels to transport");
  }
  const auto names = expand_channels(channels);
  const FeatureMatrix values = select_channels(src, names, gravity_axis);
  const FeatureMatrix src_lat = select_channels(src, lattice_channels, gravity_axis);
  const FeatureMatrix dst_lat = select_channels(dst, lattice_channels, gravity_axis);
  const auto lambdas = parse_lambdas(lambda);
  const LatticeConfig cfg = lambdas.size() == 1 ? LatticeConfig::isotropic(lat_names.size(), lambdas[0])
                                                : LatticeConfig(lambdas);
  if (cfg.dim() != lat_names.size()) {
    throw ConfigError("--lambda gives " + std::to_string(cfg.dim()) + " values for " +
                      std::to_string(lat_names.size()) + " lattice channels");
  }
  const FeatureMatrix moved = project(values, src_lat, dst_lat, cfg);
  for (std::size_t c = 0; c < names.size(); ++c) {
    std::vector<double> col(moved.rows());
    for (std::size_t r = 0; r < moved.rows(); ++r) col[r] = moved(r, c);
    dst.set_channel(names[c], std::move(col));
  }
  save_cloud(out, dst);
  return 0;
}

// ---- lattice-stats -----------------------------------------------------------

int cmd_lattice_stats(const std::string& cloud_path, const std::string& lambda,
                      const std::vector<std::string>& lattice_channels, const std::string& gravity_axis) {
  const PointCloud cloud = load_cloud(cloud_path);
  const FeatureMatrix lat = select_channels(cloud, lattice_channels, gravity_axis);
  const auto lambdas = parse_lambdas(lambda);
  std::cout << "n: " << lat.rows() << "\nd_l: " << lat.cols() << '\n';
  for (double l : lambdas) {
    const SparseLattice lattice = build_lattice(lat, LatticeConfig::isotropic(lat.cols(), l));
    const double occupancy = static_cast<double>(lattice.num_vertices()) /
                             static_cast<double>(lat.rows() * (lat.cols() + 1));
    std::cout << "\nscale: " << fmt(l) << "\nV: " << lattice.num_vertices() << "\noccupancy: " << fmt(occupancy)
              << "\nadjacency_fill: " << fmt(lattice.adjacency().fill_rate()) << '\n';
  }
  return 0;
}

// ---- synth-blobs -------------------------------------------------------------

int cmd_synth_blobs(const std::string& out, std::size_t clouds, const BlobOptions& opt, std::uint64_t seed,
                    const std::string& ext) {
  if (ext != "ply" && ext != "xyz") throw ConfigError("--format must be ply or xyz");
  fs::create_directories(out);
  const Dataset data = make_blob_dataset(clouds, opt, seed);
  for (std::size_t i = 0; i < data.size(); ++i) {
    save_cloud(fs::path(out) / (data.names[i] + "." + ext), data.clouds[i]);
  }
  std::printf("wrote %zu clouds to %s\n", data.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lattice-based point cloud segmentation"};
  app.require_subcommand(1);
  unsigned threads = 1;
  app.add_option("--threads", threads, "Worker threads for lattice and convolution kernels")->check(CLI::PositiveNumber);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a network from a config file");
  train_cmd->add_option("--config", train.config, "Run config file")->required();
  train_cmd->add_option("--seed", train.seed, "Override the config seed");
  train_cmd->add_option("--threads", train.threads, "Override the config thread count")->check(CLI::PositiveNumber);
  train_cmd->add_option("--out", train.out, "Override the output directory");
  train_cmd->add_option("--checkpoint", train.resume, "Resume from this checkpoint");

  std::string cloud, checkpoint, out;
  bool with_probs = false;
  auto* predict_cmd = app.add_subcommand("predict", "Label a cloud with a trained network");
  predict_cmd->add_option("cloud", cloud, "Input cloud (.ply or text)")->required();
  predict_cmd->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  predict_cmd->add_option("--out", out, "Output cloud")->required();
  predict_cmd->add_flag("--probabilities", with_probs, "Also write prob_<k> channels");

  std::string pred, gt, mode = "average_iou", csv;
  std::optional<std::size_t> num_classes;
  std::optional<int> ignore;
  auto* eval_cmd = app.add_subcommand("eval", "Score predicted labels against ground truth");
  eval_cmd->add_option("pred", pred, "Predicted cloud (or directory in shapenet_miou mode)")->required();
  eval_cmd->add_option("gt", gt, "Ground-truth cloud (or directory in shapenet_miou mode)")->required();
  eval_cmd->add_option("--mode", mode, "average_iou or shapenet_miou");
  eval_cmd->add_option("--num-classes", num_classes, "Number of classes (default: inferred)");
  eval_cmd->add_option("--ignore-label", ignore, "Ground-truth label to skip");
  eval_cmd->add_option("--out", csv, "Also write the report as CSV");

  std::string src, dst, lambda;
  std::vector<std::string> channels;
  std::vector<std::string> lattice_channels{"xyz"};
  std::string gravity = "y";
  auto* filter_cmd = app.add_subcommand("filter", "Transport channels from one cloud onto another");
  filter_cmd->add_option("src", src, "Source cloud")->required();
  filter_cmd->add_option("dst", dst, "Destination cloud")->required();
  filter_cmd->add_option("--lambda", lambda, "Lattice scale, one value or one per lattice channel")->required();
  filter_cmd->add_option("--out", out, "Output cloud")->required();
  filter_cmd->add_option("--channels", channels, "Channels to transport (default: all non-lattice)")->delimiter(',');
  filter_cmd->add_option("--lattice-channels", lattice_channels, "Lattice channels")->delimiter(',');
  filter_cmd->add_option("--gravity-axis", gravity, "Axis used to derive height")->check(CLI::IsMember({"x", "y", "z"}));

  auto* stats_cmd = app.add_subcommand("lattice-stats", "Print lattice statistics for a list of scales");
  stats_cmd->add_option("cloud", cloud, "Input cloud")->required();
  stats_cmd->add_option("--lambda", lambda, "Comma-separated isotropic scales")->required();
  stats_cmd->add_option("--lattice-channels", lattice_channels, "Lattice channels")->delimiter(',');
  stats_cmd->add_option("--gravity-axis", gravity, "Axis used to derive height")->check(CLI::IsMember({"x", "y", "z"}));

  std::size_t blob_clouds = 200;
  std::uint64_t blob_seed = 0;
  std::string blob_format = "ply";
  BlobOptions blob;
  auto* synth_cmd = app.add_subcommand("synth-blobs", "Write a synthetic two-blob segmentation dataset");
  synth_cmd->add_option("--out", out, "Output directory")->required();
  synth_cmd->add_option("--clouds", blob_clouds, "Number of clouds");
  synth_cmd->add_option("--points", blob.points, "Points per cloud");
  synth_cmd->add_option("--separation", blob.separation, "Distance between blob centres");
  synth_cmd->add_option("--spread", blob.spread, "Blob standard deviation");
  synth_cmd->add_option("--seed", blob_seed, "Random seed");
  synth_cmd->add_option("--format", blob_format, "ply or xyz");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    set_num_threads(threads);
    if (*train_cmd) return cmd_train(train);
    if (*predict_cmd) return cmd_predict(cloud, checkpoint, out, with_probs);
    if (*eval_cmd) return cmd_eval(pred, gt, mode, num_classes, ignore, csv);
    if (*filter_cmd) return cmd_filter(src, dst, lambda, out, channels, lattice_channels, gravity);
    if (*stats_cmd) return cmd_lattice_stats(cloud, lambda, lattice_channels, gravity);
    if (*synth_cmd) return cmd_synth_blobs(out, blob_clouds, blob, blob_seed, blob_format);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
