#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "atpnet/binary_io.hpp"
#include "atpnet/errors.hpp"
#include "atpnet/image.hpp"
#include "atpnet/log.hpp"
#include "atpnet/pipeline.hpp"
#include "atpnet/ternary.hpp"
#include "atpnet/train.hpp"

namespace fs = std::filesystem;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kDataError = 2;

struct TrainArgs {
  fs::path train_dir;
  fs::path val_dir;
  fs::path config;
  fs::path resume;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<double> mr;
  std::optional<std::int64_t> epochs;
  std::optional<std::int64_t> warmup_epochs;
  std::optional<std::int64_t> batch;
  std::optional<double> lr;
  std::optional<double> sparsity_rate;
};

std::vector<atp::Image> images_only(std::vector<atp::NamedImage> named) {
  std::vector<atp::Image> images;
  for (auto& n : named) images.push_back(std::move(n.image));
  return images;
}

int run_train(const TrainArgs& args) {
  atp::TrainConfig config = args.config.empty() ? atp::TrainConfig{} : atp::load_train_config(args.config);
  if (args.seed) config.seed = *args.seed;
  if (args.mr) config.mr = *args.mr;
  if (args.epochs) config.epochs = *args.epochs;
  if (args.warmup_epochs) config.warmup_epochs = *args.warmup_epochs;
  if (args.batch) config.batch = *args.batch;
  if (args.lr) config.lr = *args.lr;
  if (args.sparsity_rate) config.sparsity_rate = *args.sparsity_rate;
  config.validate();

  std::vector<atp::Image> train = images_only(atp::load_image_directory(args.train_dir));
  std::vector<atp::Image> val;
  if (!args.val_dir.empty()) val = images_only(atp::load_image_directory(args.val_dir));

  std::optional<atp::Trainer> trainer;
  if (args.resume.empty()) {
    atp::log_info("training with sparsity_rate " + std::to_string(config.sparsity_rate) + ", warm-up " +
                  std::to_string(config.resolved_warmup()) + " of " + std::to_string(config.epochs) + " epochs");
    trainer.emplace(config, std::move(train), std::move(val));
  } else {
    atp::Checkpoint start = atp::load_checkpoint(args.resume);
    if (args.epochs) start.config.epochs = *args.epochs;
    trainer.emplace(start, std::move(train), std::move(val));
  }
  try {
    trainer->run();
  } catch (const atp::TrainingError&) {
    atp::save_checkpoint(args.out, trainer->last_good());
    atp::log_warning("wrote the last good checkpoint to '" + args.out.string() + "'");
    throw;
  }
  atp::save_checkpoint(args.out, trainer->checkpoint());
  return kOk;
}

struct TernarizeArgs {
  fs::path ckpt;
  fs::path data;
  fs::path config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<double> sparsity_rate;
};

int run_ternarize(const TernarizeArgs& args) {
  atp::Checkpoint checkpoint = atp::load_checkpoint(args.ckpt);
  if (checkpoint.mode == atp::SamplerMode::kTernary) throw atp::ConfigError("checkpoint is already ternary");
  if (!args.config.empty()) {
    const atp::TrainConfig overrides = atp::load_train_config(args.config);
    checkpoint.config.sparsity_rate = overrides.sparsity_rate;
    checkpoint.config.calibration = overrides.calibration;
  }
  if (args.sparsity_rate) checkpoint.config.sparsity_rate = *args.sparsity_rate;
  checkpoint.config.warmup_epochs = checkpoint.epoch;
  checkpoint.config.validate();

  atp::AtpNet<float> model = atp::restore_model(checkpoint);
  std::mt19937_64 rng;
  if (args.seed) {
    rng.seed(*args.seed);
  } else {
    std::istringstream state(checkpoint.rng_state);
    state >> rng;
  }
  const std::vector<atp::Image> images = images_only(atp::load_image_directory(args.data));
  std::vector<atp::Image> usable;
  for (const auto& image : images) {
    if (image.width >= checkpoint.config.crop && image.height >= checkpoint.config.crop) usable.push_back(image);
  }
  const atp::Tensor<float> calibration = atp::calibration_batch(usable, checkpoint.config, rng);
  atp::BoundaryOptions options;
  options.sparsity_rate = checkpoint.config.sparsity_rate;
  options.fit.steps = checkpoint.config.calibration.steps;
  options.fit.lr = checkpoint.config.calibration.lr;
  atp::apply_phase_boundary(model, calibration, options);
  atp::save_checkpoint(args.out, atp::capture(checkpoint.config, model, checkpoint.epoch, rng, checkpoint.history));
  return kOk;
}

int run_sample(const fs::path& ckpt, const fs::path& image_path, const fs::path& out) {
  const atp::Checkpoint checkpoint = atp::load_checkpoint(ckpt);
  const atp::AtpNet<float> model = atp::restore_model(checkpoint);
  const std::int64_t bs = checkpoint.config.block_size;
  const atp::Image image = atp::validate_input_size(atp::load_grayscale(image_path), bs);
  const atp::Tensor<float> x = atp::to_tensor(image);
  atp::MeasurementDump dump;
  dump.mr = checkpoint.config.mr;
  if (model.sampler.mode() == atp::SamplerMode::kTernary) {
    dump.values = atp::ternary_sample(atp::pack_sampler(model.sampler, checkpoint.config.sparsity_rate), x, bs);
  } else {
    atp::NoGradGuard no_grad;
    dump.values = model.measure(x);
  }
  atp::save_measurements(out, dump);
  return kOk;
}

int run_reconstruct(const fs::path& ckpt, const fs::path& measurements, const fs::path& out) {
  const atp::Checkpoint checkpoint = atp::load_checkpoint(ckpt);
  const atp::AtpNet<float> model = atp::restore_model(checkpoint);
  const atp::MeasurementDump dump = atp::load_measurements(measurements);
  if (std::abs(dump.mr - checkpoint.config.mr) > 1e-9) {
    throw atp::ConfigError("measurements were taken at mr " + std::to_string(dump.mr) + " but the checkpoint uses mr " +
                           std::to_string(checkpoint.config.mr));
  }
  atp::NoGradGuard no_grad;
  const atp::Tensor<float> image = model.reconstruct(dump.values);
  atp::save_png(out, atp::to_image(image));
  return kOk;
}

struct EvalArgs {
  fs::path ckpt;
  fs::path data;
  double mr = 0;
  fs::path out;
  fs::path csv;
  fs::path images;
  std::size_t threads = 0;
};

int run_eval(const EvalArgs& args) {
  const std::vector<std::uint8_t> bytes = atp::read_file(args.ckpt);
  const atp::Checkpoint checkpoint = atp::deserialize_checkpoint(bytes);
  const atp::AtpNet<float> model = atp::restore_model(checkpoint);
  const std::vector<atp::NamedImage> images = atp::load_image_directory(args.data);
  atp::EvalOptions options;
  options.threads = args.threads;
  if (!args.images.empty()) options.image_dir = args.images;
  const atp::EvalReport report = atp::evaluate(model, images, args.mr, atp::sha256_hex(bytes), options);
  const std::string json = atp::report_json(report);
  const auto as_bytes = [](const std::string& s) {
    return std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
  };
  if (args.out.empty()) {
    std::cout << json;
  } else {
    atp::write_file(args.out, as_bytes(json));
  }
  fs::path csv = args.csv;
  if (csv.empty() && !args.out.empty()) csv = fs::path(args.out).replace_extension(".csv");
  if (!csv.empty()) atp::write_file(csv, as_bytes(atp::report_csv(report)));
  std::cerr << "mean PSNR " << report.mean_psnr << " dB over " << report.entries.size() << " images\n";
  return kOk;
}

int run_pack(const fs::path& ckpt, const fs::path& out) {
  const atp::Checkpoint checkpoint = atp::load_checkpoint(ckpt);
  const atp::AtpNet<float> model = atp::restore_model(checkpoint);
  const atp::PackedTernaryMatrix packed = atp::pack_sampler(model.sampler, checkpoint.config.sparsity_rate);
  atp::save_packed(out, packed);
  const atp::StorageReport storage = atp::storage_report(packed);
  std::cerr << "packed " << storage.packed_bytes << " bytes vs " << storage.float_bytes << " float bytes (" << storage.ratio
            << "x)\n";
  return kOk;
}

int run_inspect(const fs::path& file, const fs::path& out) {
  const std::vector<std::uint8_t> bytes = atp::read_file(file);
  const std::string magic(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(4, bytes.size())));
  nlohmann::json j;
  j["file"] = file.string();
  j["sha256"] = atp::sha256_hex(bytes);
  if (magic == "ATPN") {
    const atp::Checkpoint c = atp::deserialize_checkpoint(bytes);
    j["kind"] = "checkpoint";
    j["config"] = nlohmann::json::parse(atp::to_json(c.config));
    j["epoch"] = c.epoch;
    j["mode"] = atp::to_string(c.mode);
    j["attention_in_path"] = c.attention_in_path;
    if (c.mask) j["pruned"] = c.mask->zero_count();
    std::int64_t count = 0;
    for (const auto& p : c.parameters) {
      j["parameters"][p.name] = p.shape.to_string();
      count += p.shape.numel();
    }
    j["parameter_count"] = count;
    if (!c.history.empty()) j["last_train_mse"] = c.history.back().train_mse;
  } else if (magic == "ATPK") {
    const atp::PackedTernaryMatrix p = atp::deserialize_packed(bytes);
    const atp::StorageReport s = atp::storage_report(p);
    j["kind"] = "packed";
    j["rows"] = p.rows;
    j["cols"] = p.cols;
    j["alpha"] = p.alpha;
    j["sparsity_rate"] = p.sparsity_rate;
    j["nonzero"] = p.nonzero_count();
    j["packed_bytes"] = s.packed_bytes;
    j["float_bytes"] = s.float_bytes;
  } else if (magic == "ATPM") {
    const atp::MeasurementDump m = atp::deserialize_measurements(bytes);
    j["kind"] = "measurements";
    j["shape"] = m.values.shape().to_string();
    j["mr"] = m.mr;
  } else {
    throw atp::FormatError("'" + file.string() + "' is not an ATPN, ATPK or ATPM file");
  }
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    atp::write_file(out, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trainable ternary sampling and reconstruction for block compressed sensing"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only print warnings and errors");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a directory of images");
  train_cmd->add_option("--train-dir", train.train_dir, "Training images (.png/.pgm)")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--val-dir", train.val_dir, "Validation images")->check(CLI::ExistingDirectory);
  train_cmd->add_option("--config", train.config, "JSON training configuration")->check(CLI::ExistingFile);
  train_cmd->add_option("--resume", train.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train.out, "Output checkpoint")->required();
  train_cmd->add_option("--seed", train.seed, "Random seed");
  train_cmd->add_option("--mr", train.mr, "Measurement rate");
  train_cmd->add_option("--epochs", train.epochs, "Total epochs");
  train_cmd->add_option("--warmup-epochs", train.warmup_epochs, "Float epochs before ternarization");
  train_cmd->add_option("--batch", train.batch, "Mini-batch size");
  train_cmd->add_option("--lr", train.lr, "Initial learning rate");
  train_cmd->add_option("--sparsity-rate", train.sparsity_rate, "Fraction of sampling weights pruned");

  TernarizeArgs ternarize;
  auto* ternarize_cmd = app.add_subcommand("ternarize", "Run the pruning and ternarization step on a float checkpoint");
  ternarize_cmd->add_option("--ckpt", ternarize.ckpt, "Float checkpoint")->required()->check(CLI::ExistingFile);
  ternarize_cmd->add_option("--data", ternarize.data, "Calibration images")->required()->check(CLI::ExistingDirectory);
  ternarize_cmd->add_option("--config", ternarize.config, "JSON configuration (sparsity and calibration)")
      ->check(CLI::ExistingFile);
  ternarize_cmd->add_option("--out", ternarize.out, "Output checkpoint")->required();
  ternarize_cmd->add_option("--seed", ternarize.seed, "Seed for the calibration crops");
  ternarize_cmd->add_option("--sparsity-rate", ternarize.sparsity_rate, "Fraction of sampling weights pruned");

  fs::path sample_ckpt, sample_image, sample_out;
  auto* sample_cmd = app.add_subcommand("sample", "Measure an image");
  sample_cmd->add_option("--ckpt", sample_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("--image", sample_image, "Input image")->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("--out", sample_out, "Measurement dump")->required();

  fs::path recon_ckpt, recon_measurements, recon_out;
  auto* recon_cmd = app.add_subcommand("reconstruct", "Reconstruct an image from a measurement dump");
  recon_cmd->add_option("--ckpt", recon_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  recon_cmd->add_option("--measurements", recon_measurements, "Measurement dump")->required()->check(CLI::ExistingFile);
  recon_cmd->add_option("--out", recon_out, "Output PNG")->required();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Report reconstruction PSNR over a directory");
  eval_cmd->add_option("--ckpt", eval.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval.data, "Test images")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--mr", eval.mr, "Measurement rate of the checkpoint")->required();
  eval_cmd->add_option("--out", eval.out, "JSON report (stdout when omitted)");
  eval_cmd->add_option("--csv", eval.csv, "CSV report (defaults next to --out)");
  eval_cmd->add_option("--images", eval.images, "Directory for reconstructed PNGs");
  eval_cmd->add_option("--threads", eval.threads, "Worker threads (default ATPNET_THREADS or all cores)");

  fs::path pack_ckpt, pack_out;
  auto* pack_cmd = app.add_subcommand("pack", "Write the ternary sampling matrix in packed form");
  pack_cmd->add_option("--ckpt", pack_ckpt, "Ternary checkpoint")->required()->check(CLI::ExistingFile);
  pack_cmd->add_option("--out", pack_out, "Packed output")->required();

  fs::path inspect_file, inspect_out;
  auto* inspect_cmd = app.add_subcommand("inspect", "Describe a checkpoint, packed matrix or measurement dump");
  inspect_cmd->add_option("file", inspect_file, "File to describe")->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--out", inspect_out, "Write the JSON description here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  if (quiet) atp::set_log_level(atp::LogLevel::kWarning);

  try {
    if (*train_cmd) return run_train(train);
    if (*ternarize_cmd) return run_ternarize(ternarize);
    if (*sample_cmd) return run_sample(sample_ckpt, sample_image, sample_out);
    if (*recon_cmd) return run_reconstruct(recon_ckpt, recon_measurements, recon_out);
    if (*eval_cmd) return run_eval(eval);
    if (*pack_cmd) return run_pack(pack_ckpt, pack_out);
    if (*inspect_cmd) return run_inspect(inspect_file, inspect_out);
  } catch (const atp::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}
