#pragma once

// Shared helpers for the unit tests and the acceptance runner.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>

#include <sys/wait.h>

#include "m2fedaqi/model.hpp"
#include "m2fedaqi/rng.hpp"

namespace m2fedaqi::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "m2fedaqi") {
    auto base = std::filesystem::temp_directory_path();
    std::string pattern = (base / (tag + "-XXXXXX")).string();
    if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct ProcessResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

/// Runs a shell command to completion.
inline ProcessResult run_process(const std::string& command) {
  ProcessResult r;
  FILE* pipe = ::popen((command + " 2>&1").c_str(), "r");
  if (pipe == nullptr) throw std::runtime_error("popen failed: " + command);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

/// Waits for a file to appear and returns its contents, or "" on timeout.
inline std::string wait_for_file(const std::string& path, std::chrono::seconds timeout) {
  const auto until = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < until) {
    if (std::filesystem::exists(path)) return slurp(path);
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  return {};
}

template <typename Scalar>
nn::Matrix<Scalar> random_matrix(nn::Index rows, nn::Index cols, RandomStream rng, double scale = 1.0) {
  nn::Matrix<Scalar> m(rows, cols);
  for (nn::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(scale * rng.normal());
  return m;
}

/// Relative error ||a - n|| / (||a|| + ||n||), with 0 when both vanish.
template <typename A, typename B>
double relative_error(const A& analytic, const B& numeric) {
  const double diff = (analytic.template cast<double>() - numeric.template cast<double>()).norm();
  const double scale = analytic.template cast<double>().norm() + numeric.template cast<double>().norm();
  return scale == 0.0 ? 0.0 : diff / scale;
}

/// Central differences of a scalar function of a flat vector.
template <typename Scalar>
nn::Vector<Scalar> numeric_gradient(nn::Vector<Scalar>& x, const std::function<double()>& f, double step) {
  nn::Vector<Scalar> g(x.size());
  for (nn::Index i = 0; i < x.size(); ++i) {
    const Scalar saved = x(i);
    x(i) = static_cast<Scalar>(saved + step);
    const double plus = f();
    x(i) = static_cast<Scalar>(saved - step);
    const double minus = f();
    x(i) = saved;
    g(i) = static_cast<Scalar>((plus - minus) / (2.0 * step));
  }
  return g;
}

struct GradientCheck {
  double worst = 0.0;     // largest per-tensor relative error
  std::string worst_entry;
};

/// Compares the model's analytic gradient with central differences, entry
/// by entry. Dropout masks are held fixed by reusing one stream.
template <typename Scalar>
GradientCheck check_model_gradient(const ModelConfig& cfg, const Batch<Scalar>& batch, std::uint64_t seed,
                                   double step = 1e-3) {
  auto params = build_model<Scalar>(cfg, seed);
  // Move FiLM and norm parameters off their special initial values so
  // every path carries a nontrivial gradient.
  RandomStream jitter = RandomStream(seed).derive("jitter");
  for (nn::Index i = 0; i < params.values().size(); ++i) {
    params.values()(i) += static_cast<Scalar>(0.1 * jitter.normal());
  }
  const RandomStream drop = RandomStream(seed).derive("dropout");
  const auto [loss, grads] = loss_and_grad(params, cfg, batch, drop);
  (void)loss;
  const auto f = [&] { return static_cast<double>(evaluate_loss(params, cfg, batch, drop, nn::Mode::kTrain)); };
  const auto numeric = numeric_gradient<Scalar>(params.values(), f, step);

  GradientCheck out;
  for (const auto& e : params.layout().entries()) {
    const auto a = grads.values().segment(static_cast<nn::Index>(e.offset), static_cast<nn::Index>(e.numel()));
    const auto n = numeric.segment(static_cast<nn::Index>(e.offset), static_cast<nn::Index>(e.numel()));
    const double err = relative_error(a, n);
    if (err > out.worst) {
      out.worst = err;
      out.worst_entry = e.name;
    }
  }
  return out;
}

/// Shrunk gradient-check fixture: random inputs and targets.
template <typename Scalar>
Batch<Scalar> random_batch(const ModelConfig& cfg, nn::Index b, std::uint64_t seed) {
  RandomStream rng = RandomStream(seed).derive("batch");
  Batch<Scalar> batch;
  batch.image = random_matrix<Scalar>(b, cfg.has_image() ? cfg.d_img_in : 0, rng.derive("img"));
  batch.tabular = random_matrix<Scalar>(b, cfg.has_tabular() ? cfg.d_tab_in : 0, rng.derive("tab"));
  RandomStream t = rng.derive("targets");
  for (nn::Index i = 0; i < b; ++i) {
    batch.labels.push_back(static_cast<int>(t() % static_cast<std::uint64_t>(cfg.num_classes)));
    batch.values.push_back(static_cast<Scalar>(cfg.target_mean + cfg.target_scale * 3.0 * t.normal()));
  }
  return batch;
}

}  // namespace m2fedaqi::testing
