#include "atpnet/pipeline.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "atpnet/binary_io.hpp"
#include "atpnet/errors.hpp"
#include "atpnet/log.hpp"

namespace atp {

Image reconstruct_image(const AtpNet<float>& model, const Image& image) {
  const Image cropped = validate_input_size(image, model.config().sampler.block_size);
  NoGradGuard no_grad;
  return to_image(model.forward(to_tensor(cropped)));
}

std::size_t evaluation_threads() {
  if (const char* env = std::getenv("ATPNET_THREADS")) {
    char* end = nullptr;
    const long value = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && value > 0) return static_cast<std::size_t>(value);
    log_warning(std::string("ignoring ATPNET_THREADS='") + env + "'; expected a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

EvalReport evaluate(const AtpNet<float>& model, std::span<const NamedImage> images, double requested_mr,
                    const std::string& model_id, const EvalOptions& options) {
  const double model_mr = model.config().sampler.subrate;
  if (std::abs(model_mr - requested_mr) > 1e-9) {
    std::ostringstream message;
    message << "checkpoint was trained at mr " << model_mr << " but mr " << requested_mr
            << " was requested; evaluate with a checkpoint trained at mr " << requested_mr << " or pass --mr "
            << model_mr;
    throw ConfigError(message.str());
  }
  if (images.empty()) throw IoError("evaluation set contains no images");
  if (options.image_dir) std::filesystem::create_directories(*options.image_dir);

  const auto start = std::chrono::steady_clock::now();
  EvalReport report;
  report.mr = model_mr;
  report.model_id = model_id;
  report.entries.resize(images.size());
  const std::size_t workers = std::min(images.size(), options.threads ? options.threads : evaluation_threads());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto work = [&] {
    for (std::size_t i = next++; i < images.size(); i = next++) {
      try {
        const Image truth = validate_input_size(images[i].image, model.config().sampler.block_size);
        const Image output = reconstruct_image(model, truth);
        report.entries[i] = {images[i].name, truth.width, truth.height, psnr(truth, output)};
        if (options.image_dir) {
          save_png(*options.image_dir / (std::filesystem::path(images[i].name).stem().string() + ".png"), output);
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = images.size();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& thread : pool) thread.join();
  if (failure) std::rethrow_exception(failure);

  double total = 0;
  for (const EvalEntry& e : report.entries) total += e.psnr;
  report.mean_psnr = total / static_cast<double>(report.entries.size());
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {

nlohmann::json psnr_value(double value) {
  if (std::isinf(value)) return "inf";
  return value;
}

std::string psnr_text(double value) {
  if (std::isinf(value)) return "inf";
  std::ostringstream out;
  out << std::setprecision(17) << value;
  return out.str();
}

}  // namespace

std::string report_json(const EvalReport& report) {
  nlohmann::json j;
  j["model_id"] = report.model_id;
  j["mr"] = report.mr;
  j["mean_psnr"] = psnr_value(report.mean_psnr);
  j["seconds"] = report.seconds;
  j["images"] = nlohmann::json::array();
  for (const EvalEntry& e : report.entries) {
    j["images"].push_back({{"name", e.name}, {"width", e.width}, {"height", e.height}, {"psnr", psnr_value(e.psnr)}});
  }
  return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "name,width,height,psnr\n";
  for (const EvalEntry& e : report.entries) {
    std::string name = e.name;
    if (name.find_first_of(",\"\n") != std::string::npos) {
      std::string quoted = "\"";
      for (char c : name) quoted += c == '"' ? std::string("\"\"") : std::string(1, c);
      name = quoted + "\"";
    }
    out << name << ',' << e.width << ',' << e.height << ',' << psnr_text(e.psnr) << '\n';
  }
  out << "mean,,," << psnr_text(report.mean_psnr) << '\n';
  return out.str();
}

std::vector<std::uint8_t> serialize_measurements(const MeasurementDump& dump) {
  ByteWriter out;
  out.magic("ATPM");
  out.u32(kMeasurementFormatVersion);
  for (std::int64_t d : dump.values.shape().dims) out.u32(static_cast<std::uint32_t>(d));
  out.f64(dump.mr);
  for (float v : dump.values.data()) out.f32(v);
  return out.take();
}

MeasurementDump deserialize_measurements(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, "measurement dump");
  in.expect_magic("ATPM");
  const std::uint32_t version = in.u32();
  if (version != kMeasurementFormatVersion) {
    throw FormatError("measurement dump: unsupported format version " + std::to_string(version));
  }
  Shape shape;
  for (auto& d : shape.dims) d = in.u32();
  MeasurementDump dump;
  dump.mr = in.f64();
  const auto count = static_cast<std::size_t>(shape.numel());
  if (in.remaining() != count * sizeof(float)) {
    throw FormatError("measurement dump: expected " + std::to_string(count * sizeof(float)) + " value bytes, found " +
                      std::to_string(in.remaining()));
  }
  std::vector<float> values(count);
  for (float& v : values) v = in.f32();
  dump.values = Tensor<float>(shape, std::move(values));
  return dump;
}

void save_measurements(const std::filesystem::path& path, const MeasurementDump& dump) {
  write_file(path, serialize_measurements(dump));
}

MeasurementDump load_measurements(const std::filesystem::path& path) {
  return deserialize_measurements(read_file(path));
}

PackedTernaryMatrix pack_sampler(const SamplingLayer<float>& sampler, double sparsity_rate) {
  if (sampler.mode() != SamplerMode::kTernary) {
    throw QuantizationError(std::string("cannot pack a sampler in ") + to_string(sampler.mode()) +
                            " mode; run the ternarize step first");
  }
  const Shape shape = sampler.weight_shape();
  const std::vector<float> weights = sampler.effective_values();
  return pack(weights, shape.n(), shape.c() * shape.h() * shape.w(), sampler.alpha().value.item(),
              static_cast<float>(sparsity_rate));
}

}  // namespace atp
