#include "rectflow/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

namespace rectflow {

namespace {

using ojson = nlohmann::ordered_json;

ojson gauss(std::vector<double> mean, double stddev) {
  ojson g;
  g["type"] = "gaussian";
  g["mean"] = mean;
  g["stddev"] = stddev;
  return g;
}

// Equal-weight Gaussian ring: `modes` components of scale `stddev` on a
// circle of radius `radius` around (cx, cy), first mode at `phase_deg`.
ojson ring(double cx, double cy, double radius, int modes, double phase_deg,
           double stddev) {
  ojson out;
  out["type"] = "mixture";
  out["weights"] = std::vector<double>(modes, 1.0 / modes);
  ojson comps = ojson::array();
  for (int k = 0; k < modes; ++k) {
    const double a = (phase_deg + 360.0 * k / modes) * std::numbers::pi / 180.0;
    comps.push_back(
        gauss({cx + radius * std::cos(a), cy + radius * std::sin(a)}, stddev));
  }
  out["components"] = comps;
  return out;
}

ojson euler(int steps, int record_every) {
  ojson s;
  s["type"] = "euler";
  s["steps"] = steps;
  s["record_every"] = record_every;
  return s;
}

ojson exact_backend(double sigma0 = 1.0) {
  ojson b;
  b["type"] = "exact";
  b["sigma0"] = sigma0;
  return b;
}

ojson knn_backend(double bandwidth, int m) {
  ojson b;
  b["type"] = "knn";
  b["bandwidth"] = bandwidth;
  b["m"] = m;
  return b;
}

ojson mlp_backend(int iterations) {
  ojson b;
  b["type"] = "mlp";
  b["iterations"] = iterations;
  b["batch_size"] = 256;
  b["learning_rate"] = 1e-3;
  b["hidden"] = std::vector<int>{64, 64};
  b["activation"] = "tanh";
  return b;
}

// Two tight blobs flowing to two tight blobs below them; the independent
// coupling sends half the mass across the diagonal, so one rectification
// visibly rewires it.
ojson two_dots() {
  ojson c;
  c["seed"] = 7;
  c["train_n"] = 512;
  c["eval_n"] = 512;
  c["reflow_k"] = 1;
  ojson src;
  src["type"] = "mixture";
  src["weights"] = std::vector<double>{0.5, 0.5};
  src["components"] = ojson::array({gauss({-4.0, 4.0}, 0.3), gauss({4.0, 4.0}, 0.3)});
  ojson tgt;
  tgt["type"] = "mixture";
  tgt["weights"] = std::vector<double>{0.5, 0.5};
  tgt["components"] =
      ojson::array({gauss({-4.0, -4.0}, 0.3), gauss({4.0, -4.0}, 0.3)});
  c["source"] = src;
  c["target"] = tgt;
  c["backend"] = knn_backend(0.3, 64);
  c["solver"] = euler(100, 1);
  return c;
}

ojson six_modes() {
  ojson c;
  c["seed"] = 11;
  c["train_n"] = 2000;
  c["eval_n"] = 2000;
  c["reflow_k"] = 3;
  c["source"] = gauss({0.0, 0.0}, 1.0);
  c["target"] = ring(0.0, 0.0, 8.0, 6, 0.0, 0.5);
  c["backend"] = knn_backend(0.5, 100);
  c["solver"] = euler(100, 1);
  return c;
}

ojson gauss_to_mixture() {
  ojson c;
  c["seed"] = 13;
  c["train_n"] = 2000;
  c["eval_n"] = 2000;
  c["reflow_k"] = 1;
  c["source"] = gauss({0.0, 0.0}, 1.0);
  c["target"] = ring(7.0, 0.0, 4.0, 6, 0.0, 0.5);
  // Budget sized so the noisier diffusion-style schedules in the sweep train
  // to statistical indistinguishability at 100 Euler steps, not just linear.
  c["backend"] = mlp_backend(12000);
  c["backend"]["ema_decay"] = 0.999;
  c["solver"] = euler(100, 1);
  c["schedules"] = std::vector<std::string>{"linear", "vp", "sub-vp", "ve"};
  c["euler_steps_list"] = std::vector<int>{1, 2, 5, 100};
  c["lambdas"] = std::vector<double>{0.0, 1e-3, 1e-2, 1e-1};
  return c;
}

ojson gauss_to_mixture_n1() {
  ojson c = gauss_to_mixture();
  c["seed"] = 14;
  c.erase("schedules");
  c.erase("euler_steps_list");
  c.erase("lambdas");
  c["backend"] = exact_backend();
  c["solver"] = euler(1, 1);
  return c;
}

ojson gauss_to_gauss_1d() {
  ojson c;
  c["seed"] = 17;
  c["train_n"] = 2000;
  c["eval_n"] = 2000;
  c["reflow_k"] = 1;
  c["source"] = gauss({0.0}, 1.0);
  c["target"] = gauss({2.0}, 0.5);
  c["backend"] = exact_backend();
  c["solver"] = euler(100, 1);
  return c;
}

ojson gauss_to_two_atoms() {
  ojson c;
  c["seed"] = 19;
  c["train_n"] = 2000;
  c["eval_n"] = 2000;
  c["reflow_k"] = 1;
  c["source"] = gauss({0.0}, 1.0);
  ojson tgt;
  tgt["type"] = "empirical";
  tgt["points"] = ojson::array({ojson::array({-8.0}), ojson::array({8.0})});
  c["target"] = tgt;
  c["backend"] = exact_backend();
  c["solver"] = euler(1000, 50);
  return c;
}

ojson eight_atoms() {
  ojson c;
  c["seed"] = 23;
  c["train_n"] = 2000;
  c["eval_n"] = 2000;
  c["reflow_k"] = 1;
  c["source"] = gauss({0.0, 0.0}, 1.0);
  ojson tgt;
  tgt["type"] = "empirical";
  ojson pts = ojson::array();
  for (int k = 0; k < 8; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 8.0;
    pts.push_back(ojson::array({6.0 * std::cos(a), 6.0 * std::sin(a)}));
  }
  tgt["points"] = pts;
  c["target"] = tgt;
  c["backend"] = exact_backend();
  c["solver"] = euler(1000, 50);
  return c;
}

ojson two_circles() {
  ojson c;
  c["seed"] = 29;
  c["train_n"] = 2000;
  c["eval_n"] = 2000;
  c["reflow_k"] = 1;
  c["source"] = ring(0.0, 0.0, 3.0, 8, 0.0, 0.25);
  c["target"] = ring(0.0, 0.0, 6.0, 8, 22.5, 0.25);
  c["backend"] = mlp_backend(3000);
  c["solver"] = euler(100, 1);
  c["lambdas"] = std::vector<double>{0.0, 1e-3, 1e-2};
  return c;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char ch) { return std::tolower(ch); });
  return s;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"two-dots",           "six-modes",      "gauss-to-mixture",
          "gauss-to-mixture-N1", "gauss-to-gauss-1d", "gauss-to-two-atoms",
          "eight-atoms",        "two-circles"};
}

nlohmann::ordered_json preset_config(const std::string& name) {
  const auto build = [](const std::string& canonical) -> ojson {
    if (canonical == "two-dots") return two_dots();
    if (canonical == "six-modes") return six_modes();
    if (canonical == "gauss-to-mixture") return gauss_to_mixture();
    if (canonical == "gauss-to-mixture-N1") return gauss_to_mixture_n1();
    if (canonical == "gauss-to-gauss-1d") return gauss_to_gauss_1d();
    if (canonical == "gauss-to-two-atoms") return gauss_to_two_atoms();
    if (canonical == "eight-atoms") return eight_atoms();
    if (canonical == "two-circles") return two_circles();
    return {};
  };
  for (const std::string& canonical : preset_names()) {
    if (name == canonical || lower(name) == lower(canonical)) {
      return build(canonical);
    }
  }
  std::string known;
  for (const auto& p : preset_names()) {
    if (!known.empty()) known += ", ";
    known += p;
  }
  throw ValidationError("unknown preset '" + name + "' (known: " + known + ")");
}

}  // namespace rectflow
