#pragma once

// Experiment orchestration behind the command-line tool: input discovery and
// loading, the per-image worker pool, and report/manifest emission.
//
// Requires libpng, OpenSSL (libcrypto) and nlohmann/json.

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "grasp/bridge.hpp"
#include "grasp/config.hpp"
#include "grasp/engine.hpp"
#include "grasp/error.hpp"
#include "grasp/filters.hpp"
#include "grasp/losses.hpp"
#include "grasp/metrics.hpp"
#include "grasp/models.hpp"
#include "grasp/png_io.hpp"
#include "grasp/synthetic.hpp"

namespace grasp {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

enum ExitCode : int { kExitOk = 0, kExitPartial = 1, kExitConfig = 2, kExitProtocol = 3 };

// ---------------------------------------------------------------------------
// Logging (GRASP_LOG = error | warn | info | debug; default info)

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("GRASP_LOG");
    const std::string v = env ? env : "info";
    if (v == "error") return LogLevel::Error;
    if (v == "warn") return LogLevel::Warn;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

inline void log(LogLevel level, const std::string& msg) {
  static std::mutex mu;
  if (level > log_level()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(mu);
  std::cerr << "grasp " << names[static_cast<int>(level)] << ": " << msg << '\n';
}

// ---------------------------------------------------------------------------
// Hashing and JSON helpers

inline std::string sha256_hex(const void* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

inline std::string sha256_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ImageIoError("cannot read " + p.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes.data(), bytes.size());
}

inline std::string sha256_tensor(const ImageTensor& x) {
  return sha256_hex(x.values().data(), x.size() * sizeof(double));
}

// Non-finite values become strings so every record stays valid JSON.
inline Json json_number(double v) {
  if (std::isnan(v)) return "NAN";
  if (std::isinf(v)) return v > 0 ? "INF" : "-INF";
  return v;
}

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "NAN";
  if (std::isinf(v)) return v > 0 ? "INF" : "-INF";
  return detail::fmt_double(v);
}

inline Json shape_json(Shape s) { return Json::array({s.height, s.width, s.channels}); }

inline Json metrics_json(const ImageMetrics& m) {
  Json j;
  j["l2_out"] = json_number(m.l2_out);
  j["l1_out"] = json_number(m.l1_out);
  j["psnr_in"] = json_number(m.psnr_in);
  j["ssim_in"] = json_number(m.ssim_in);
  j["lf_in"] = json_number(m.lf_in);
  j["defense_success"] = m.defense_success;
  return j;
}

inline Json summary_json(const MetricsReport& r) {
  Json j;
  j["n_images"] = r.n_images;
  j["dsr"] = json_number(r.dsr);
  j["mean_l2_out"] = json_number(r.mean_l2_out);
  j["mean_l1_out"] = json_number(r.mean_l1_out);
  j["mean_psnr_in"] = json_number(r.mean_psnr_in);
  j["n_psnr_inf"] = r.n_psnr_inf;
  j["mean_ssim_in"] = json_number(r.mean_ssim_in);
  j["lf_metric"] = json_number(r.mean_lf_in);
  j["pixel_scale_note"] = MetricsReport::kPixelScaleNote;
  return j;
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  if (!out) throw Error("write failed: " + p.string());
}

// ---------------------------------------------------------------------------
// Models

inline std::unique_ptr<ManipulationModel> make_builtin_model(const ModelSpec& spec, Shape dims) {
  if (spec.name == "identity") return std::make_unique<IdentityModel>(dims);
  if (spec.name == "affine") {
    return std::make_unique<AffineModel>(AffineModel::uniform(dims, spec.gain, spec.bias));
  }
  if (spec.name == "conv") {
    ConvSurrogateParams p;
    p.seed = spec.seed;
    p.hidden_channels = spec.hidden_channels;
    p.weight_scale = spec.weight_scale;
    p.input_gain = spec.input_gain;
    return std::make_unique<ConvSurrogate>(dims, p);
  }
  throw ConfigError("unknown built-in model '" + spec.name + "'");
}

// One model per worker. Built-ins are immutable and shared; bridge
// connections are single-in-flight, so each worker gets its own.
class ModelPool {
 public:
  ModelPool(const ModelSpec& spec, std::size_t workers) : spec_(spec) {
    if (workers == 0) workers = 1;
    if (spec.name == "bridge") {
      for (std::size_t i = 0; i < workers; ++i) {
        owned_.push_back(bridge::bridge_connect(spec.bridge, spec.bridge_timeout_ms));
      }
      for (const auto& m : owned_) {
        if (m->input_dims() != owned_.front()->input_dims()) {
          throw ProtocolError("bridge: connections disagree on model dimensions");
        }
      }
    } else {
      owned_.push_back(make_builtin_model(spec, Shape{spec.height, spec.width, spec.channels}));
    }
  }

  std::size_t size() const { return owned_.size(); }
  const ManipulationModel& get(std::size_t worker) const {
    return *owned_[owned_.size() == 1 ? 0 : worker % owned_.size()];
  }
  Shape dims() const { return owned_.front()->input_dims(); }

  Json describe() const {
    const ManipulationModel& m = *owned_.front();
    Json j;
    j["name"] = m.name();
    if (spec_.name == "bridge") {
      j["endpoint"] = spec_.bridge;
    } else {
      j["seed"] = spec_.seed;
    }
    j["input_dims"] = shape_json(m.input_dims());
    j["output_range"] = Json::array({m.output_range().lo, m.output_range().hi});
    return j;
  }

 private:
  ModelSpec spec_;
  std::vector<std::unique_ptr<ManipulationModel>> owned_;
};

// ---------------------------------------------------------------------------
// Inputs

struct InputRef {
  std::string label;  // as reported
  std::string stem;   // output file name without extension
  fs::path path;      // empty for synthetic inputs
  std::uint64_t synthetic_seed = 0;
};

// Expands files, directories (their *.png, sorted) and "synthetic:N".
// Throws ConfigError for missing paths or colliding output names.
inline std::vector<InputRef> expand_inputs(const std::vector<std::string>& specs) {
  std::vector<InputRef> out;
  for (const std::string& s : specs) {
    if (s.rfind("synthetic:", 0) == 0) {
      const std::uint64_t n = detail::to_uint("synthetic input count", s.substr(10));
      if (n == 0) throw ConfigError("synthetic input count must be positive");
      for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint64_t seed = kSuiteSeedBase + i;
        out.push_back({"synthetic:" + std::to_string(seed), "synthetic_" + std::to_string(seed), {},
                       seed});
      }
      continue;
    }
    const fs::path p(s);
    std::error_code ec;
    if (fs::is_directory(p, ec)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p)) {
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) out.push_back({f.string(), f.stem().string(), f, 0});
    } else if (fs::is_regular_file(p, ec)) {
      out.push_back({p.string(), p.stem().string(), p, 0});
    } else {
      throw ConfigError("input does not exist: " + s);
    }
  }
  if (out.empty()) throw ConfigError("no input images found");
  std::set<std::string> stems;
  for (const auto& r : out) {
    if (!stems.insert(r.stem).second) throw ConfigError("two inputs share the name '" + r.stem + "'");
  }
  return out;
}

struct LoadedInput {
  ImageTensor x;
  Shape original;
  bool resized = false;
  bool channels_expanded = false;
  std::string sha256;
};

// Brings an image to the model's shape: gray inputs are replicated to three
// channels when needed, and spatial mismatches are resized bilinearly.
inline LoadedInput conform(ImageTensor img, Shape dims) {
  LoadedInput in;
  in.original = img.shape();
  if (img.channels() != dims.channels) {
    if (img.channels() == 1 && dims.channels == 3) {
      ImageTensor rgb(Shape{img.height(), img.width(), 3});
      for (std::size_t i = 0; i < img.height() * img.width(); ++i)
        for (std::size_t c = 0; c < 3; ++c) rgb[i * 3 + c] = img[i];
      img = std::move(rgb);
      in.channels_expanded = true;
    } else {
      throw ShapeError("image has " + std::to_string(img.channels()) + " channels, model expects " +
                       std::to_string(dims.channels));
    }
  }
  if (img.height() != dims.height || img.width() != dims.width) {
    img = resize_bilinear(img, dims.height, dims.width);
    in.resized = true;
  }
  in.x = std::move(img);
  return in;
}

inline LoadedInput load_input(const InputRef& ref, Shape dims) {
  if (ref.path.empty()) {
    LoadedInput in = conform(synthetic_image(dims, ref.synthetic_seed), dims);
    in.sha256 = sha256_tensor(in.x);
    return in;
  }
  LoadedInput in = conform(load_png(ref.path.string()), dims);
  in.sha256 = sha256_file(ref.path);
  return in;
}

// ---------------------------------------------------------------------------
// Worker pool

// Calls f(worker, index) for every index; results must be stored by index so
// output order never depends on scheduling.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& f) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) f(std::size_t{0}, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  std::vector<std::thread> threads;
  threads.reserve(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    threads.emplace_back([&, w] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(w, i);
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Per-image defense

struct ImageOutcome {
  bool ok = false;
  std::string error;
  bool protocol_error = false;
  LoadedInput input;
  ImageTensor x_adv;
  DefenseTrace trace;
  ImageMetrics metrics;
  double final_mse = 0.0;  // output MSE at the returned adversarial image
};

inline ImageOutcome defend_one(const ManipulationModel& model, const InputRef& ref,
                               const DefenseConfig& defense) {
  ImageOutcome out;
  try {
    out.input = load_input(ref, model.input_dims());
    DefenseConfig d = defense;
    d.ssim = SsimConfig::for_range(out.input.x.range(), defense.ssim.window_size, defense.ssim.sigma);
    d.ssim.literal_form = defense.ssim.literal_form;
    DefenseResult r = generate_adversarial(model, out.input.x, d);
    out.x_adv = std::move(r.x_adv);
    out.trace = std::move(r.trace);
    const ImageTensor clean = model.forward(out.input.x);
    out.metrics = measure_pair(model, out.input.x, out.x_adv, clean, out.x_adv);
    out.final_mse = mse_output_loss_from_clean(model, clean, out.x_adv).value;
    out.ok = true;
  } catch (const DefenseFailure& e) {
    out.error = e.what();
    out.trace = e.partial_trace();
  } catch (const ProtocolError& e) {
    out.error = e.what();
    out.protocol_error = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  if (!out.ok) log(LogLevel::Error, ref.label + ": " + out.error);
  return out;
}

inline std::vector<ImageOutcome> defend_all(const ModelPool& pool, const std::vector<InputRef>& refs,
                                            const DefenseConfig& defense, std::size_t jobs) {
  std::vector<ImageOutcome> results(refs.size());
  parallel_for(refs.size(), std::min(jobs, pool.size() == 1 ? jobs : pool.size()),
               [&](std::size_t w, std::size_t i) {
                 log(LogLevel::Debug, "defending " + refs[i].label);
                 results[i] = defend_one(pool.get(w), refs[i], defense);
               });
  return results;
}

inline std::optional<MetricsReport> aggregate_ok(const std::vector<ImageOutcome>& results) {
  std::vector<ImageMetrics> ms;
  for (const auto& r : results)
    if (r.ok) ms.push_back(r.metrics);
  if (ms.empty()) return std::nullopt;
  return aggregate(std::move(ms));
}

inline Json trace_summary_json(const DefenseTrace& t) {
  Json j;
  j["iterations"] = t.records.size();
  double max_linf = 0.0;
  std::array<std::size_t, 3> conflicts{0, 0, 0};
  std::size_t random_steps = 0, degenerate = 0;
  for (const auto& r : t.records) {
    max_linf = std::max(max_linf, r.linf);
    for (int k = 0; k < 3; ++k) conflicts[k] += r.conflict_flags[k];
    random_steps += r.random_direction;
    degenerate += r.degenerate_projections;
  }
  j["max_linf"] = json_number(max_linf);
  j["conflicts"] = Json::array({conflicts[0], conflicts[1], conflicts[2]});
  j["random_direction_steps"] = random_steps;
  j["degenerate_projections"] = degenerate;
  return j;
}

inline Json trace_record_json(std::size_t index, std::size_t it, const IterationRecord& r) {
  Json j;
  j["index"] = index;
  j["iteration"] = it;
  j["mse"] = json_number(r.mse);
  j["ssim"] = json_number(r.ssim);
  j["lf"] = json_number(r.lf);
  j["conflict_flags"] = Json::array({r.conflict_flags[0], r.conflict_flags[1], r.conflict_flags[2]});
  j["random_direction"] = r.random_direction;
  j["degenerate_projections"] = r.degenerate_projections;
  j["linf"] = json_number(r.linf);
  return j;
}

// ---------------------------------------------------------------------------
// Run context: resolved config, output directory, manifest.

class RunContext {
 public:
  RunContext(const RunConfig& cfg, std::vector<InputRef> refs)
      : cfg_(cfg), refs_(std::move(refs)), out_(cfg.out_dir) {}

  const RunConfig& cfg() const { return cfg_; }
  const std::vector<InputRef>& refs() const { return refs_; }
  const fs::path& out() const { return out_; }

  void prepare_output() {
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw ConfigError("cannot create output directory " + out_.string() + ": " + ec.message());
  }

  // Writes `text` under the output directory and records it as an artifact.
  void write_artifact(const std::string& rel, const std::string& text) {
    write_text(out_ / rel, text);
    add_artifact(rel);
  }

  void add_artifact(const std::string& rel) {
    std::lock_guard lock(mu_);
    artifacts_.push_back(rel);
  }

  void note_input(std::size_t index, const LoadedInput& in) {
    std::lock_guard lock(mu_);
    inputs_[index] = in;
    has_input_[index] = true;
  }

  void init_inputs() {
    inputs_.assign(refs_.size(), {});
    has_input_.assign(refs_.size(), false);
  }

  void write_manifest(const ModelPool* pool) {
    Json m;
    m["tool"] = "grasp";
    m["format_version"] = 1;
    m["command"] = command_name(cfg_.command);
    Json resolved = Json::object();
    for (const auto& [k, v] : resolved_config(cfg_)) resolved[k] = v;
    m["resolved_config"] = resolved;
    if (pool) m["model"] = pool->describe();
    m["pixel_scale_note"] = MetricsReport::kPixelScaleNote;
    Json ins = Json::array();
    for (std::size_t i = 0; i < refs_.size(); ++i) {
      Json j;
      j["index"] = i;
      j["input"] = refs_[i].label;
      if (i < has_input_.size() && has_input_[i]) {
        j["sha256"] = inputs_[i].sha256;
        j["original_shape"] = shape_json(inputs_[i].original);
        j["resized"] = inputs_[i].resized;
        j["channels_expanded"] = inputs_[i].channels_expanded;
      } else {
        j["sha256"] = nullptr;
      }
      ins.push_back(j);
    }
    m["inputs"] = ins;
    std::vector<std::string> arts = artifacts_;
    std::sort(arts.begin(), arts.end());
    Json a = Json::array();
    for (const auto& rel : arts) a.push_back({{"path", rel}, {"sha256", sha256_file(out_ / rel)}});
    m["artifacts"] = a;
    write_text(out_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  RunConfig cfg_;
  std::vector<InputRef> refs_;
  fs::path out_;
  std::mutex mu_;
  std::vector<std::string> artifacts_;
  std::vector<LoadedInput> inputs_;
  std::vector<bool> has_input_;
};

inline int exit_for(const std::vector<ImageOutcome>& results) {
  bool any_fail = false, any_protocol = false;
  for (const auto& r : results) {
    any_fail |= !r.ok;
    any_protocol |= r.protocol_error;
  }
  if (any_protocol) return kExitProtocol;
  return any_fail ? kExitPartial : kExitOk;
}

inline std::string report_lines(const std::vector<ImageOutcome>& results,
                                const std::vector<InputRef>& refs, bool with_outputs,
                                const std::vector<std::string>& output_hashes) {
  std::string text;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    Json j;
    j["index"] = i;
    j["input"] = refs[i].label;
    j["status"] = r.ok ? "ok" : "error";
    if (!r.ok) {
      j["error"] = r.error;
    } else {
      j["input_sha256"] = r.input.sha256;
      j["original_shape"] = shape_json(r.input.original);
      j["resized"] = r.input.resized;
      if (with_outputs) {
        j["output"] = "adv/" + refs[i].stem + ".png";
        j["output_sha256"] = output_hashes[i];
      }
      j["metrics"] = metrics_json(r.metrics);
      if (!r.trace.records.empty() || with_outputs) {
        Json t = trace_summary_json(r.trace);
        t["final_mse"] = json_number(r.final_mse);
        j["trace"] = t;
      }
    }
    text += j.dump() + "\n";
  }
  return text;
}

// ---------------------------------------------------------------------------
// Commands

inline int run_defend(RunContext& ctx, const ModelPool& pool) {
  const RunConfig& cfg = ctx.cfg();
  std::vector<ImageOutcome> results = defend_all(pool, ctx.refs(), cfg.defense, cfg.jobs);
  fs::create_directories(ctx.out() / "adv");
  std::vector<std::string> hashes(results.size());
  std::string traces;
  for (std::size_t i = 0; i < results.size(); ++i) {
    auto& r = results[i];
    if (!r.ok) continue;
    ctx.note_input(i, r.input);
    const std::string rel = "adv/" + ctx.refs()[i].stem + ".png";
    try {
      save_png16((ctx.out() / rel).string(), r.x_adv);
      ctx.add_artifact(rel);
      hashes[i] = sha256_file(ctx.out() / rel);
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
      log(LogLevel::Error, ctx.refs()[i].label + ": " + r.error);
      continue;
    }
    for (std::size_t t = 0; t < r.trace.records.size(); ++t) {
      traces += trace_record_json(i, t, r.trace.records[t]).dump() + "\n";
    }
  }
  ctx.write_artifact("report.jsonl", report_lines(results, ctx.refs(), true, hashes));
  ctx.write_artifact("traces.jsonl", traces);
  Json summary;
  summary["n_inputs"] = results.size();
  summary["n_failed"] = std::count_if(results.begin(), results.end(), [](auto& r) { return !r.ok; });
  if (auto rep = aggregate_ok(results)) summary["metrics"] = summary_json(*rep);
  ctx.write_artifact("summary.json", summary.dump(2) + "\n");
  ctx.write_manifest(&pool);
  if (auto rep = aggregate_ok(results)) {
    log(LogLevel::Info, "dsr " + csv_number(rep->dsr) + ", mean psnr " + csv_number(rep->mean_psnr_in) +
                            " dB over " + std::to_string(rep->n_images) + " image(s)");
  }
  return exit_for(results);
}

// Loads the adversarial counterpart of each input from adv_dir/<stem>.png.
inline std::vector<ImageOutcome> load_pairs(RunContext& ctx, const ModelPool& pool, bool measure) {
  const RunConfig& cfg = ctx.cfg();
  std::vector<ImageOutcome> results(ctx.refs().size());
  parallel_for(results.size(), cfg.jobs, [&](std::size_t w, std::size_t i) {
    ImageOutcome& r = results[i];
    const InputRef& ref = ctx.refs()[i];
    try {
      const ManipulationModel& model = pool.get(w);
      r.input = load_input(ref, model.input_dims());
      const fs::path adv = fs::path(cfg.adv_dir) / (ref.stem + ".png");
      r.x_adv = conform(load_png(adv.string()), model.input_dims()).x;
      if (measure) {
        const ImageTensor clean = model.forward(r.input.x);
        r.metrics = measure_pair(model, r.input.x, r.x_adv, clean, r.x_adv);
        r.final_mse = mse_output_loss_from_clean(model, clean, r.x_adv).value;
      }
      r.ok = true;
    } catch (const ProtocolError& e) {
      r.error = e.what();
      r.protocol_error = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    if (!r.ok) log(LogLevel::Error, ref.label + ": " + r.error);
  });
  for (std::size_t i = 0; i < results.size(); ++i)
    if (results[i].ok) ctx.note_input(i, results[i].input);
  return results;
}

inline int run_evaluate(RunContext& ctx, const ModelPool& pool) {
  std::vector<ImageOutcome> results = load_pairs(ctx, pool, true);
  ctx.write_artifact("report.jsonl", report_lines(results, ctx.refs(), false, {}));
  Json summary;
  summary["n_inputs"] = results.size();
  summary["n_failed"] = std::count_if(results.begin(), results.end(), [](auto& r) { return !r.ok; });
  if (auto rep = aggregate_ok(results)) summary["metrics"] = summary_json(*rep);
  ctx.write_artifact("summary.json", summary.dump(2) + "\n");
  ctx.write_manifest(&pool);
  return exit_for(results);
}

inline int run_robustness(RunContext& ctx, const ModelPool& pool) {
  const RunConfig& cfg = ctx.cfg();
  std::vector<ImageOutcome> results;
  if (cfg.adv_dir.empty()) {
    results = defend_all(pool, ctx.refs(), cfg.defense, cfg.jobs);
    for (std::size_t i = 0; i < results.size(); ++i)
      if (results[i].ok) ctx.note_input(i, results[i].input);
  } else {
    results = load_pairs(ctx, pool, false);
  }
  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < results.size(); ++i)
    if (results[i].ok) ok.push_back(i);
  if (ok.empty()) {
    ctx.write_manifest(&pool);
    log(LogLevel::Error, "no image could be processed");
    return exit_for(results);
  }

  std::vector<ImageTensor> clean(ok.size());
  parallel_for(ok.size(), cfg.jobs, [&](std::size_t w, std::size_t k) {
    clean[k] = pool.get(w).forward(results[ok[k]].input.x);
  });

  std::string lines, csv = "transform,dsr,mean_l2_out,mean_l1_out,mean_psnr_in,mean_ssim_in,lf_metric\n";
  Json baseline;
  for (const Transform& t : cfg.battery) {
    std::vector<ImageMetrics> per(ok.size());
    parallel_for(ok.size(), cfg.jobs, [&](std::size_t w, std::size_t k) {
      const ImageOutcome& r = results[ok[k]];
      per[k] = measure_pair(pool.get(w), r.input.x, r.x_adv, clean[k], robustness_transform(r.x_adv, t));
    });
    const MetricsReport rep = aggregate(std::move(per));
    Json j;
    j["transform"] = t.label();
    j["summary"] = summary_json(rep);
    Json success = Json::array();
    for (const auto& m : rep.images) success.push_back(m.defense_success);
    j["defense_success"] = success;
    lines += j.dump() + "\n";
    csv += t.label() + "," + csv_number(rep.dsr) + "," + csv_number(rep.mean_l2_out) + "," +
           csv_number(rep.mean_l1_out) + "," + csv_number(rep.mean_psnr_in) + "," +
           csv_number(rep.mean_ssim_in) + "," + csv_number(rep.mean_lf_in) + "\n";
    log(LogLevel::Info, t.label() + ": dsr " + csv_number(rep.dsr));
  }
  ctx.write_artifact("robustness.jsonl", lines);
  ctx.write_artifact("robustness.csv", csv);
  ctx.write_manifest(&pool);
  return exit_for(results);
}

struct AblationRow {
  std::string name;
  LossSelection losses;
  bool projection;
};

// MSE only; +SSIM; +SSIM+LF summed without projection; everything with projection.
inline std::vector<AblationRow> ablation_rows() {
  return {{"mse", {true, false, false}, false},
          {"mse+ssim", {true, true, false}, false},
          {"mse+ssim+lf", {true, true, true}, false},
          {"full", {true, true, true}, true}};
}

inline int run_ablate(RunContext& ctx, const ModelPool& pool) {
  const RunConfig& cfg = ctx.cfg();
  Json rows = Json::array();
  std::string csv = "row,losses_mse,losses_ssim,losses_lf,projection,dsr,mean_l2_out,mean_psnr_in,"
                    "mean_ssim_in,lf_metric,mean_final_mse\n";
  int status = kExitOk;
  for (const AblationRow& row : ablation_rows()) {
    DefenseConfig d = cfg.defense;
    d.losses = row.losses;
    d.projection.enabled = row.projection;
    std::vector<ImageOutcome> results = defend_all(pool, ctx.refs(), d, cfg.jobs);
    for (std::size_t i = 0; i < results.size(); ++i)
      if (results[i].ok) ctx.note_input(i, results[i].input);
    status = std::max(status, exit_for(results));
    const auto rep = aggregate_ok(results);
    if (!rep) continue;
    double final_mse = 0.0;
    for (const auto& r : results)
      if (r.ok) final_mse += r.final_mse;
    final_mse /= static_cast<double>(rep->n_images);
    Json j;
    j["row"] = row.name;
    j["losses"] = {{"mse", row.losses.mse}, {"ssim", row.losses.ssim}, {"lf", row.losses.lf}};
    j["projection"] = row.projection;
    j["summary"] = summary_json(*rep);
    j["mean_final_mse"] = json_number(final_mse);
    rows.push_back(j);
    csv += row.name + "," + detail::fmt_bool(row.losses.mse) + "," + detail::fmt_bool(row.losses.ssim) +
           "," + detail::fmt_bool(row.losses.lf) + "," + detail::fmt_bool(row.projection) + "," +
           csv_number(rep->dsr) + "," + csv_number(rep->mean_l2_out) + "," +
           csv_number(rep->mean_psnr_in) + "," + csv_number(rep->mean_ssim_in) + "," +
           csv_number(rep->mean_lf_in) + "," + csv_number(final_mse) + "\n";
    log(LogLevel::Info, "ablation " + row.name + ": dsr " + csv_number(rep->dsr) + ", psnr " +
                            csv_number(rep->mean_psnr_in));
  }
  ctx.write_artifact("ablation.json", Json{{"rows", rows}}.dump(2) + "\n");
  ctx.write_artifact("ablation.csv", csv);
  ctx.write_manifest(&pool);
  return status;
}

inline int run_sweep(RunContext& ctx, const ModelPool& pool) {
  const RunConfig& cfg = ctx.cfg();
  std::string csv = "axis,value,dsr,mean_psnr_in,lf_metric,mean_l2_out,mean_ssim_in\n";
  Json values = Json::array(), dsr = Json::array(), psnr_s = Json::array(), lf = Json::array(),
       l2 = Json::array();
  int status = kExitOk;
  for (double v : cfg.sweep_values) {
    const DefenseConfig d = with_sweep_value(cfg.defense, cfg.sweep_axis, v);
    d.validate();
    std::vector<ImageOutcome> results = defend_all(pool, ctx.refs(), d, cfg.jobs);
    for (std::size_t i = 0; i < results.size(); ++i)
      if (results[i].ok) ctx.note_input(i, results[i].input);
    status = std::max(status, exit_for(results));
    const auto rep = aggregate_ok(results);
    if (!rep) continue;
    values.push_back(v);
    dsr.push_back(json_number(rep->dsr));
    psnr_s.push_back(json_number(rep->mean_psnr_in));
    lf.push_back(json_number(rep->mean_lf_in));
    l2.push_back(json_number(rep->mean_l2_out));
    csv += cfg.sweep_axis + "," + csv_number(v) + "," + csv_number(rep->dsr) + "," +
           csv_number(rep->mean_psnr_in) + "," + csv_number(rep->mean_lf_in) + "," +
           csv_number(rep->mean_l2_out) + "," + csv_number(rep->mean_ssim_in) + "\n";
    log(LogLevel::Info, "sweep " + cfg.sweep_axis + "=" + csv_number(v) + ": dsr " + csv_number(rep->dsr));
  }
  Json j;
  j["axis"] = cfg.sweep_axis;
  j["values"] = values;
  j["series"] = {{"dsr", dsr}, {"psnr", psnr_s}, {"lf", lf}, {"l2_out", l2}};
  j["pixel_scale_note"] = MetricsReport::kPixelScaleNote;
  ctx.write_artifact("sweep.json", j.dump(2) + "\n");
  ctx.write_artifact("sweep.csv", csv);
  ctx.write_manifest(&pool);
  return status;
}

// ---------------------------------------------------------------------------
// Gradient check

inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kLfGradTolerance = 1e-3;
inline constexpr double kFiniteDiffStep = 1e-6;

struct GradCheckRow {
  std::string loss;
  std::uint64_t seed = 0;
  double rel_error = 0.0;
  double tolerance = 0.0;
  bool pass() const { return rel_error <= tolerance; }
};

// Largest odd window that fits a side of length n, capped at 11.
inline std::size_t fitting_window(std::size_t n) {
  std::size_t w = std::min<std::size_t>(11, n);
  if (w % 2 == 0) --w;
  return std::max<std::size_t>(w, 1);
}

// A random clean image and a nearby adversarial candidate.
inline std::pair<ImageTensor, ImageTensor> gradcheck_point(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  ImageTensor x(s), x_adv(s);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.uniform(0.1, 0.9);
    x_adv[i] = x[i] + rng.uniform(-0.05, 0.05);
  }
  return {x, x_adv};
}

inline std::vector<GradCheckRow> gradient_check(const ManipulationModel& model, std::size_t seeds,
                                                std::uint64_t seed_base = 1) {
  const Shape s = model.input_dims();
  SsimConfig sc = SsimConfig::for_range({}, fitting_window(std::min(s.height, s.width)));
  std::vector<GradCheckRow> rows;
  for (std::uint64_t k = 0; k < seeds; ++k) {
    const std::uint64_t seed = seed_base + k;
    const auto [x, x_adv] = gradcheck_point(s, seed);
    auto check = [&](const std::string& name, double tol, auto&& f) {
      const LossEval e = f(x_adv);
      const ImageTensor fd = finite_diff_grad([&](const ImageTensor& v) { return f(v).value; }, x_adv,
                                              kFiniteDiffStep);
      rows.push_back({name, seed, relative_error(e.grad_wrt_adv, fd), tol});
    };
    check("ssim", kGradTolerance, [&](const ImageTensor& v) { return ssim_loss(x, v, sc); });
    check("lf", kLfGradTolerance, [&](const ImageTensor& v) { return lf_loss(x, v); });
    const ImageTensor clean = model.forward(x);
    check("mse:" + model.name(), kGradTolerance,
          [&](const ImageTensor& v) { return mse_output_loss_from_clean(model, clean, v); });
  }
  return rows;
}

inline int run_gradcheck(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  std::unique_ptr<ManipulationModel> owned;
  const ManipulationModel* model = nullptr;
  std::optional<ModelPool> pool;
  if (cfg.model.name == "bridge") {
    pool.emplace(cfg.model, 1);
    model = &pool->get(0);
  } else {
    owned = make_builtin_model(cfg.model, Shape{cfg.gradcheck_size, cfg.gradcheck_size,
                                                cfg.model.channels});
    model = owned.get();
  }
  const auto rows = gradient_check(*model, cfg.gradcheck_seeds);
  Json arr = Json::array();
  bool all = true;
  for (const auto& r : rows) {
    arr.push_back({{"loss", r.loss}, {"seed", r.seed}, {"rel_error", json_number(r.rel_error)},
                   {"tolerance", r.tolerance}, {"pass", r.pass()}});
    all &= r.pass();
    if (!r.pass()) {
      log(LogLevel::Error, "gradient mismatch: " + r.loss + " seed " + std::to_string(r.seed) +
                               " rel " + csv_number(r.rel_error));
    }
  }
  ctx.write_artifact("gradcheck.json", Json{{"all_pass", all}, {"checks", arr}}.dump(2) + "\n");
  ctx.write_manifest(pool ? &*pool : nullptr);
  log(LogLevel::Info, std::string("gradient check ") + (all ? "passed" : "FAILED") + " (" +
                          std::to_string(rows.size()) + " checks)");
  return all ? kExitOk : kExitPartial;
}

// ---------------------------------------------------------------------------
// Entry point

// Validates, resolves inputs and dispatches. Nothing is written when the
// configuration is rejected.
inline int run(RunConfig cfg) {
  try {
    validate_config(cfg);
    std::vector<InputRef> refs;
    if (cfg.command != Command::Gradcheck) refs = expand_inputs(cfg.inputs);
    if (cfg.command == Command::Evaluate || (cfg.command == Command::Robustness && !cfg.adv_dir.empty())) {
      if (!fs::is_directory(cfg.adv_dir)) throw ConfigError("adv_dir does not exist: " + cfg.adv_dir);
    }
    RunContext ctx(cfg, std::move(refs));
    ctx.init_inputs();
    if (cfg.command == Command::Gradcheck) {
      ctx.prepare_output();
      return run_gradcheck(ctx);
    }
    ModelPool pool(cfg.model, cfg.model.name == "bridge" ? cfg.jobs : 1);
    ctx.prepare_output();
    switch (cfg.command) {
      case Command::Defend: return run_defend(ctx, pool);
      case Command::Evaluate: return run_evaluate(ctx, pool);
      case Command::Robustness: return run_robustness(ctx, pool);
      case Command::Ablate: return run_ablate(ctx, pool);
      case Command::Sweep: return run_sweep(ctx, pool);
      case Command::Gradcheck: break;
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    log(LogLevel::Error, std::string("configuration: ") + e.what());
    return kExitConfig;
  } catch (const ProtocolError& e) {
    log(LogLevel::Error, std::string("protocol: ") + e.what());
    return kExitProtocol;
  } catch (const ModelError& e) {
    log(LogLevel::Error, std::string("model: ") + e.what());
    return cfg.model.name == "bridge" ? kExitProtocol : kExitPartial;
  } catch (const std::exception& e) {
    log(LogLevel::Error, e.what());
    return kExitPartial;
  }
}

}  // namespace grasp
