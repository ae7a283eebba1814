// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.
//
//   acceptance [--config configs/desk.toml] [--work DIR] [--only N]...

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "traceseq/autoencoder/autoencoder.hpp"
#include "traceseq/cli/config.hpp"
#include "traceseq/cli/pipeline.hpp"
#include "traceseq/cohort/matching.hpp"
#include "traceseq/cohort/split.hpp"
#include "traceseq/errors.hpp"
#include "traceseq/eval/metrics.hpp"
#include "traceseq/numkit/adadelta.hpp"
#include "traceseq/numkit/checkpoint.hpp"
#include "traceseq/numkit/gradcheck.hpp"
#include "traceseq/numkit/gru.hpp"
#include "traceseq/numkit/kernels.hpp"
#include "traceseq/numkit/ops.hpp"
#include "traceseq/predictor/predictor.hpp"

using namespace traceseq;
namespace fs = std::filesystem;
namespace ops = numkit::ops;
using numkit::DenseArray;
using numkit::ParameterSet;
using numkit::Rng;
using numkit::Tape;
using numkit::Var;

namespace {

constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

DenseArray random_array(numkit::Shape shape, std::mt19937_64& g, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  DenseArray a(std::move(shape));
  for (auto& v : a.values()) v = u(g);
  return a;
}

// ---- 1. gradient fidelity ------------------------------------------------

// Reduces any op output to a scalar through fixed random linear probes.
Var probe(Var out, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  auto& tape = *out.tape;
  const auto& shape = out.value().shape();
  if (out.value().size() == 1) return out;
  if (shape.size() == 1) {
    return ops::matmul(out, tape.constant(random_array({shape[0], 1}, g)));
  }
  const Var left = ops::matmul(tape.constant(random_array({1, shape[0]}, g)), out);
  return ops::matmul(left, tape.constant(random_array({shape[1], 1}, g)));
}

double op_gradients(std::vector<std::string>& lines) {
  std::mt19937_64 g(101);
  double worst = 0.0;
  auto check = [&](const std::string& name, std::map<std::string, DenseArray> inputs,
                   const std::function<Var(Tape&, std::map<std::string, Var>&)>& op) {
    ParameterSet ps;
    for (auto& [k, v] : inputs) ps.add(k, v);
    const auto report = numkit::finite_diff_check(
        [&](Tape& t) {
          std::map<std::string, Var> vars;
          for (auto& [k, p] : ps) vars.emplace(k, t.parameter(p));
          return probe(op(t, vars), 7);
        },
        ps, kGradStep, kGradTol);
    worst = std::max(worst, report.max_rel_error());
    if (!report.passed()) lines.push_back(name + " " + fmt("%.3g", report.max_rel_error()));
  };
  using M = std::map<std::string, Var>;
  auto pos = [&](numkit::Shape s) { return random_array(std::move(s), g, 0.2, 1.0); };
  auto any = [&](numkit::Shape s) { return random_array(std::move(s), g); };

  check("matmul", {{"a", any({3, 4})}, {"b", any({4, 5})}}, [](Tape&, M& v) { return ops::matmul(v["a"], v["b"]); });
  check("matmul(vector)", {{"a", any({4})}, {"b", any({4, 3})}},
        [](Tape&, M& v) { return ops::matmul(v["a"], v["b"]); });
  check("matmul_nt", {{"a", any({3, 4})}, {"b", any({5, 4})}},
        [](Tape&, M& v) { return ops::matmul_nt(v["a"], v["b"]); });
  check("add", {{"a", any({3, 4})}, {"b", any({3, 4})}}, [](Tape&, M& v) { return ops::add(v["a"], v["b"]); });
  check("sub", {{"a", any({5})}, {"b", any({5})}}, [](Tape&, M& v) { return ops::sub(v["a"], v["b"]); });
  check("mul", {{"a", any({3, 4})}, {"b", any({3, 4})}}, [](Tape&, M& v) { return ops::mul(v["a"], v["b"]); });
  check("scale", {{"a", any({3, 4})}}, [](Tape&, M& v) { return ops::scale(v["a"], -1.7); });
  check("one_minus", {{"a", any({6})}}, [](Tape&, M& v) { return ops::one_minus(v["a"]); });
  check("add_bias", {{"x", any({3, 4})}, {"b", any({4})}}, [](Tape&, M& v) { return ops::add_bias(v["x"], v["b"]); });
  check("sigmoid", {{"x", any({3, 4})}}, [](Tape&, M& v) { return ops::sigmoid(v["x"]); });
  check("tanh", {{"x", any({3, 4})}}, [](Tape&, M& v) { return ops::tanh(v["x"]); });
  check("relu", {{"x", pos({3, 4})}}, [](Tape&, M& v) { return ops::relu(ops::scale(v["x"], -1.0)); });
  check("relu(+)", {{"x", pos({3, 4})}}, [](Tape&, M& v) { return ops::relu(v["x"]); });
  check("softmax_rows", {{"x", any({3, 5})}}, [](Tape&, M& v) { return ops::softmax_rows(v["x"]); });
  check("layer_norm_rows", {{"x", any({3, 5})}, {"gain", pos({5})}, {"bias", any({5})}},
        [](Tape&, M& v) { return ops::layer_norm_rows(v["x"], v["gain"], v["bias"]); });
  check("dropout", {{"x", any({4, 5})}}, [](Tape&, M& v) {
    Rng frozen(3);
    return ops::dropout(v["x"], 0.5, numkit::Mode::kTrain, frozen);
  });
  check("scale_rows", {{"w", any({4, 3})}, {"x", any({4})}},
        [](Tape&, M& v) { return ops::scale_rows(v["w"], v["x"]); });
  check("project_scaled_rows", {{"p", any({2, 4})}, {"w", any({4, 3})}, {"x", pos({4})}},
        [](Tape&, M& v) { return ops::project_scaled_rows(v["p"], v["w"], v["x"]); });
  const auto sparse = DenseArray::vector({1.0, 0.0, 0.4, 0.0, 1.0});
  check("project_scaled_rows(sparse x)", {{"p", any({2, 5})}, {"w", any({5, 3})}},
        [&](Tape& t, M& v) { return ops::project_scaled_rows(v["p"], v["w"], t.constant(sparse)); });
  check("mean_pool_rows", {{"x", any({4, 3})}}, [](Tape&, M& v) { return ops::mean_pool_rows(v["x"]); });
  check("concat", {{"a", any({3})}, {"b", any({2})}}, [](Tape&, M& v) { return ops::concat({v["a"], v["b"]}); });
  check("slice", {{"x", any({6})}}, [](Tape&, M& v) { return ops::slice(v["x"], 2, 3); });
  check("stack_rows", {{"a", any({3})}, {"b", any({3})}},
        [](Tape&, M& v) { return ops::stack_rows({v["a"], v["b"]}); });
  check("reshape", {{"x", any({6})}}, [](Tape&, M& v) { return ops::reshape(v["x"], {2, 3}); });
  check("add_n", {{"a", any({4})}, {"b", any({4})}, {"c", any({4})}},
        [](Tape&, M& v) { return ops::add_n({v["a"], v["b"], v["c"], v["a"]}); });
  const auto target = random_array({5}, g, 0.0, 1.0);
  check("loss mse", {{"x", any({5})}},
        [&](Tape&, M& v) { return ops::loss(ops::LossKind::kMse, v["x"], target); });
  check("loss bce", {{"x", pos({5})}},
        [&](Tape&, M& v) { return ops::loss(ops::LossKind::kBce, ops::scale(v["x"], 0.9), target); });
  check("loss ce_softmax", {{"x", any({5})}},
        [&](Tape&, M& v) { return ops::loss(ops::LossKind::kCeSoftmax, v["x"], DenseArray::vector({0, .5, 0, .5, 0})); });

  Rng init(5);
  ParameterSet cell_params;
  numkit::GruCell cell("gru", 3, 4);
  cell.init(cell_params, init);
  for (auto& v : cell_params.at("gru.bias").value.values()) v = std::uniform_real_distribution<double>(-.5, .5)(g);
  cell_params.add("h", any({4}));
  cell_params.add("x", any({3}));
  const auto report = numkit::finite_diff_check(
      [&](Tape& t) {
        return probe(numkit::gru_step(cell.bind(t, cell_params), t.parameter(cell_params.at("h")),
                                      t.parameter(cell_params.at("x"))),
                     9);
      },
      cell_params, kGradStep, kGradTol);
  worst = std::max(worst, report.max_rel_error());
  if (!report.passed()) lines.push_back("gru_step " + fmt("%.3g", report.max_rel_error()));
  return worst;
}

// 2 patients x 2 visits over n = 20 features.
autoencoder::Dims toy_dims() {
  autoencoder::Dims d;
  d.codes = 8;
  d.observations = 6;
  d.demographics = 4;
  d.n_tilde = 4;
  d.d_z = 8;
  d.d_emb = 8;
  d.d_h = 6;
  d.d_ff = 16;
  return d;
}

ehr::VisitVector toy_visit(const autoencoder::Dims& d, std::mt19937_64& g) {
  ehr::VisitVector v{DenseArray({d.codes}, 0.0), DenseArray({d.observations + d.demographics + d.numerics}, 0.0)};
  v.x[g() % d.codes] = 1.0;
  for (std::size_t i = 0; i < d.codes; ++i) {
    if (g() % 4 == 0) v.x[i] = 1.0;
  }
  if (g() % 2) v.d[g() % d.observations] = 1.0;
  v.d[d.observations + g() % (d.demographics / 2)] = 1.0;
  v.d[d.observations + d.demographics / 2 + g() % (d.demographics / 2)] = 1.0;
  v.d[d.observations + d.demographics] = std::log1p(40.0 + static_cast<double>(g() % 30));
  v.d[d.observations + d.demographics + 1] = std::log1p(static_cast<double>(g() % 400));
  return v;
}

double report_worst(const numkit::GradCheckReport& r, const std::string& tag, std::vector<std::string>& lines) {
  for (const auto& p : r.params) {
    if (p.max_rel_error >= kGradTol) {
      lines.push_back(tag + ":" + p.name + " " + fmt("%.3g", p.max_rel_error) + " at analytic " +
                      fmt("%.3g", p.worst_analytic) + " vs numeric " + fmt("%.3g", p.worst_numeric));
    }
  }
  return r.max_rel_error();
}

Outcome gradient_fidelity() {
  std::vector<std::string> bad;
  const double ops_worst = op_gradients(bad);

  const auto d = toy_dims();
  std::mt19937_64 g(202);
  const std::vector<std::vector<ehr::VisitVector>> batch = {{toy_visit(d, g), toy_visit(d, g)},
                                                            {toy_visit(d, g), toy_visit(d, g)}};
  autoencoder::Autoencoder ae(d);
  ParameterSet ae_params;
  Rng rng(11);
  ae.init(ae_params, rng);
  const double ae_worst = report_worst(numkit::finite_diff_check(
                                           [&](Tape& t) {
                                             numkit::Binder b(t, ae_params);
                                             Rng frozen(5);
                                             std::vector<Var> l;
                                             for (const auto& s : batch) l.push_back(ae.loss(b, s, numkit::Mode::kTrain, frozen).total);
                                             return ops::scale(ops::add_n(l), 0.5);
                                           },
                                           ae_params, kGradStep, kGradTol),
                                       "autoencoder", bad);

  predictor::ModelConfig mc;
  mc.variant = predictor::Variant::kTrace;
  mc.dims = d;
  mc.d_m = 5;
  mc.d_att = 7;
  predictor::Predictor model(mc);
  ParameterSet tp;
  Rng rng2(9);
  model.init(tp, rng2);
  // A larger head keeps the deepest gradients above central-difference roundoff.
  for (auto& w : tp.at("output.weight").value.values()) w *= 8.0;
  std::vector<predictor::PatientExample> examples(2);
  for (int i = 0; i < 2; ++i) {
    examples[i].id = "p" + std::to_string(i);
    examples[i].label = 1 - i;
    examples[i].sequence = batch[i];
  }
  const double trace_worst = report_worst(numkit::finite_diff_check(
                                              [&](Tape& t) {
                                                numkit::Binder b(t, tp);
                                                Rng frozen(5);
                                                std::vector<Var> l;
                                                for (const auto& e : examples) l.push_back(model.loss(b, e, numkit::Mode::kTrain, frozen));
                                                return ops::scale(ops::add_n(l), 0.5);
                                              },
                                              tp, kGradStep, kGradTol),
                                          "TRACE", bad);

  std::string detail = "max rel error ops " + fmt("%.2e", ops_worst) + ", autoencoder " + fmt("%.2e", ae_worst) +
                       ", TRACE " + fmt("%.2e", trace_worst) + " (tol 1e-4, h 1e-5)";
  for (const auto& b : bad) detail += "; " + b;
  return {bad.empty(), detail};
}

// ---- 2. metric oracles ---------------------------------------------------

double brute_force_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  const double npos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  double ap = 0.0, prev_tp = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (y[i] == 1 ? tp : fp) += 1.0;
    }
    if (tp > prev_tp) ap += ((tp - prev_tp) / npos) * (tp / (tp + fp));
    prev_tp = tp;
  }
  return ap;
}

Outcome metric_oracles() {
  std::mt19937_64 g(303);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + g() % 9;
    std::vector<double> s(n);
    std::vector<int> y(n);
    const bool coarse = trial % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? static_cast<double>(g() % 5) / 4.0 : std::uniform_real_distribution<double>(0, 1)(g);
      y[i] = static_cast<int>(g() % 2);
    }
    // At least one patient of each class.
    const std::size_t i = g() % n;
    y[i] = 1;
    y[(i + 1 + g() % (n - 1)) % n] = 0;
    mismatches += eval::auprc(s, y) != brute_force_ap(s, y);
  }
  const double example = eval::auprc({0.9, 0.8, 0.3}, {1, 0, 1});
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t big = 100000;
  std::vector<double> s(big);
  std::vector<int> y(big);
  for (std::size_t i = 0; i < big; ++i) {
    s[i] = u(g);
    y[i] = i % 7 == 0;
  }
  const double random_ap = eval::auprc(s, y);
  const bool pass = mismatches == 0 && std::abs(example - 0.8333333333333333) <= 1e-12 &&
                    std::abs(random_ap - 0.1429) <= 0.02;
  return {pass, std::to_string(mismatches) + "/1000 oracle mismatches; example " + fmt("%.15f", example) +
                    "; random scores at 1/7 -> " + fmt("%.4f", random_ap)};
}

// ---- 3. optimizer oracle -------------------------------------------------

Outcome optimizer_oracle() {
  ParameterSet ps;
  auto& p = ps.add("w", DenseArray::scalar(0.0));
  p.grad[0] = 1.0;
  numkit::adadelta_step(ps, {0.95, 1e-6, 1.0});
  const double step = p.value[0];
  return {std::abs(step - (-4.4721e-3)) <= 1e-7, "first step " + fmt("%.10e", step) + " (target -4.4721e-3 +- 1e-7)"};
}

// ---- 4. matching contract ------------------------------------------------

std::vector<cohort::MatchEntry> replay_greedy(std::vector<cohort::Candidate> cases,
                                              const std::vector<cohort::Candidate>& controls, std::size_t k) {
  std::stable_sort(cases.begin(), cases.end(), [](auto& a, auto& b) { return a.id < b.id; });
  std::stable_sort(cases.begin(), cases.end(), [](auto& a, auto& b) { return a.score > b.score; });
  std::set<std::string> used;
  std::vector<cohort::MatchEntry> out;
  for (const auto& c : cases) {
    for (std::size_t m = 0; m < k; ++m) {
      const cohort::Candidate* best = nullptr;
      double best_d = 0.0;
      for (const auto& ctl : controls) {
        if (used.count(ctl.id)) continue;
        const double d = std::fabs(cohort::logit(c.score) - cohort::logit(ctl.score));
        if (!best || d < best_d || (d == best_d && ctl.id < best->id)) {
          best = &ctl;
          best_d = d;
        }
      }
      used.insert(best->id);
      out.push_back({c.id, best->id, best_d});
    }
  }
  return out;
}

Outcome matching_contract() {
  std::mt19937_64 g(404);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  bool ratio_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<cohort::Candidate> cases, controls;
    const std::size_t nc = 5 + g() % 20;
    for (std::size_t i = 0; i < nc; ++i) cases.push_back({"c" + std::to_string(i), u(g)});
    for (std::size_t i = 0; i < 6 * nc + g() % 50; ++i) controls.push_back({"k" + std::to_string(i), u(g)});
    const auto table = cohort::greedy_match(cases, controls, 6);
    std::set<std::string> used;
    std::map<std::string, int> per_case;
    for (const auto& m : table) {
      used.insert(m.control_id);
      ++per_case[m.case_id];
    }
    ratio_ok = ratio_ok && used.size() == table.size() && table.size() == 6 * nc && per_case.size() == nc;
    for (const auto& [id, n] : per_case) ratio_ok = ratio_ok && n == 6;
  }
  std::size_t replays = 0, mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<cohort::Candidate> cases, controls;
    for (int i = 0; i < 3; ++i) cases.push_back({"c" + std::to_string(i), u(g)});
    for (int i = 0; i < 12; ++i) controls.push_back({"k" + std::to_string(10 + i), u(g)});
    for (std::size_t k = 1; k <= 4; ++k) {
      const auto a = cohort::greedy_match(cases, controls, k);
      const auto b = replay_greedy(cases, controls, k);
      bool same = a.size() == b.size();
      for (std::size_t i = 0; same && i < a.size(); ++i) {
        same = a[i].case_id == b[i].case_id && a[i].control_id == b[i].control_id && a[i].distance == b[i].distance;
      }
      mismatches += !same;
      ++replays;
    }
  }
  return {ratio_ok && mismatches == 0,
          std::string("k=6 injective with exact 1:6 on 20 instances: ") + (ratio_ok ? "yes" : "no") +
              "; 3-case/12-control brute-force replay mismatches " + std::to_string(mismatches) + "/" +
              std::to_string(replays)};
}

// ---- 5. split contract ---------------------------------------------------

Outcome split_contract() {
  std::vector<cohort::Labeled> patients;
  const std::size_t cases = 21113, controls = 126678;
  for (std::size_t i = 0; i < cases + controls; ++i) patients.push_back({"P" + std::to_string(i), i < cases ? 1 : 0});
  const auto split = cohort::stratified_split(patients, {}, 7);
  std::array<std::size_t, 3> total{}, pos{};
  for (const auto& p : patients) {
    const auto s = static_cast<std::size_t>(split.at(p.id));
    ++total[s];
    pos[s] += p.label;
  }
  const bool pass = patients.size() == 147791 && total[0] == 110842 && total[1] == 14778 && total[2] == 22171;
  std::string detail = std::to_string(patients.size()) + " patients -> " + std::to_string(total[0]) + " / " +
                       std::to_string(total[1]) + " / " + std::to_string(total[2]) + " (cases " +
                       std::to_string(pos[0]) + " / " + std::to_string(pos[1]) + " / " + std::to_string(pos[2]) + ")";
  return {pass, detail};
}

// ---- 6. autoencoder convergence -----------------------------------------

Outcome autoencoder_convergence() {
  auto d = toy_dims();
  d.d_z = d.d_emb = d.d_h = 16;
  d.d_ff = 32;
  autoencoder::Autoencoder model(d);
  ParameterSet params;
  Rng rng(31);
  model.init(params, rng);
  std::mt19937_64 g(32);
  std::vector<std::vector<ehr::VisitVector>> batch;
  for (int i = 0; i < 8; ++i) batch.push_back({toy_visit(d, g), toy_visit(d, g), toy_visit(d, g)});
  const double before = autoencoder::mean_loss(model, params, batch).total;
  double after = before;
  Rng dropout(33);
  int steps = 0;
  for (; steps < 500 && after > 0.1 * before; ++steps) {
    for (const auto& seq : batch) {
      Tape tape;
      numkit::Binder bind(tape, params);
      tape.backward(model.loss(bind, seq, numkit::Mode::kTrain, dropout).total, 1.0 / 8.0);
    }
    numkit::adadelta_step(params, {});
    after = autoencoder::mean_loss(model, params, batch).total;
  }

  // Row permutation of Z~ permutes the transformer output identically.
  const auto z = random_array({d.n_tilde, d.d_z}, g);
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  DenseArray zp(z.shape());
  for (std::size_t r = 0; r < d.n_tilde; ++r) {
    for (std::size_t c = 0; c < d.d_z; ++c) zp.at(r, c) = z.at(perm[r], c);
  }
  Tape tape;
  numkit::Binder bind(tape, params);
  Rng unused(0);
  const auto x = model.transformer_encode(bind, tape.constant(z), numkit::Mode::kEval, unused).x.value();
  const auto xp = model.transformer_encode(bind, tape.constant(zp), numkit::Mode::kEval, unused).x.value();
  double equiv = 0.0;
  for (std::size_t r = 0; r < d.n_tilde; ++r) {
    for (std::size_t c = 0; c < d.d_emb; ++c) equiv = std::max(equiv, std::abs(xp.at(r, c) - x.at(perm[r], c)));
  }
  const double cut = 1.0 - after / before;
  return {cut >= 0.9 && equiv <= 1e-12, "8-patient batch loss " + fmt("%.4f", before) + " -> " + fmt("%.4f", after) +
                                            " (" + fmt("%.1f%%", 100 * cut) + " cut) in " + std::to_string(steps) +
                                            " steps; row-equivariance error " + fmt("%.2e", equiv)};
}

// ---- pipeline-backed criteria --------------------------------------------

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

double test_auprc(const fs::path& out, const std::string& variant) {
  const auto m = read_json(cli::Layout{out}.model(variant) / "metrics.json");
  return m["auprc_test"].is_number() ? m["auprc_test"].get<double>() : std::nan("");
}

void run_stages(const cli::RunOptions& o, const std::vector<cli::Stage>& stages, const std::string& tag) {
  for (auto s : stages) {
    const auto t0 = std::chrono::steady_clock::now();
    cli::run_stage(s, o);
    std::cerr << "  [" << tag << "] " << cli::stage_name(s) << " " << fmt("%.1f s", seconds_since(t0)) << '\n';
  }
}

const std::vector<cli::Stage> kAllStages = {cli::Stage::kGenCohort,       cli::Stage::kPretrainCodes,
                                            cli::Stage::kPretrainAutoencoder, cli::Stage::kTrain,
                                            cli::Stage::kEvaluate,        cli::Stage::kExportAttention,
                                            cli::Stage::kExportEmbeddings};

struct Fixture {
  cli::ExperimentConfig config;
  fs::path work;
  fs::path main() const { return work / "seed1"; }
  fs::path seed_dir(std::uint64_t s) const { return s == config.seed ? main() : work / ("seed" + std::to_string(s)); }
  fs::path rerun() const { return work / "seed1_rerun"; }
  bool main_done = false;
};

cli::RunOptions options_for(const cli::ExperimentConfig& base, const fs::path& out, std::uint64_t seed) {
  cli::RunOptions o{base, {}, nullptr};
  o.config.out = out;
  o.config.seed = seed;
  return o;
}

void ensure_main(Fixture& f) {
  if (f.main_done) return;
  fs::remove_all(f.main());
  const auto t0 = std::chrono::steady_clock::now();
  run_stages(options_for(f.config, f.main(), f.config.seed), kAllStages, "seed " + std::to_string(f.config.seed));
  std::cerr << "  full desk pipeline: " << fmt("%.1f s", seconds_since(t0)) << '\n';
  f.main_done = true;
}

// ---- 7. planted signal ---------------------------------------------------

Outcome planted_signal(Fixture& f) {
  ensure_main(f);
  const std::vector<std::uint64_t> seeds = {f.config.seed, f.config.seed + 1, f.config.seed + 2};
  for (auto s : seeds) {
    if (s == f.config.seed) continue;
    auto o = options_for(f.config, f.seed_dir(s), s);
    o.config.autoencoder.visit_encoders = {"transformer"};
    o.variants = {"TRACE", "RNN", "LR"};
    fs::remove_all(f.seed_dir(s));
    run_stages(o, {cli::Stage::kGenCohort, cli::Stage::kPretrainCodes, cli::Stage::kPretrainAutoencoder,
                   cli::Stage::kTrain},
               "seed " + std::to_string(s));
  }
  const auto summary = read_json(cli::Layout{f.main()}.cohort_summary());
  const double prevalence = summary["splits"]["test"]["cases"].get<double>() /
                            summary["splits"]["test"]["patients"].get<double>();
  const double floor = prevalence + 0.15;
  bool seq_ok = true;
  double trace_mean = 0.0, lr_mean = 0.0;
  std::string detail = "prevalence " + fmt("%.4f", prevalence) + ", floor " + fmt("%.4f", floor) + ";";
  for (auto s : seeds) {
    const double trace = test_auprc(f.seed_dir(s), "TRACE");
    const double rnn = test_auprc(f.seed_dir(s), "RNN");
    const double lr = test_auprc(f.seed_dir(s), "LR");
    seq_ok = seq_ok && trace >= floor && rnn >= floor;
    trace_mean += trace / 3.0;
    lr_mean += lr / 3.0;
    detail += " seed " + std::to_string(s) + ": TRACE " + fmt("%.4f", trace) + " RNN " + fmt("%.4f", rnn) + " LR " +
              fmt("%.4f", lr) + ";";
  }
  const double gap = trace_mean - lr_mean;
  detail += " mean TRACE " + fmt("%.4f", trace_mean) + " vs LR " + fmt("%.4f", lr_mean) + " (gap " + fmt("%.4f", gap) +
            ", need >= 0.03)";
  const std::size_t patients = summary["patients"];
  const std::size_t codes = summary["codes"], observations = summary["observations"];
  detail += "; fixture " + std::to_string(patients) + " patients, |C| " + std::to_string(codes) + ", |obs| " +
            std::to_string(observations);
  return {seq_ok && gap >= 0.03, detail};
}

// ---- 8. ablation machinery ------------------------------------------------

std::set<std::string> checkpoint_names(const fs::path& model_dir) {
  const auto ckpt = numkit::load_checkpoint(model_dir / "checkpoint.json");
  const auto v = ckpt.params.names();
  return {v.begin(), v.end()};
}

Outcome ablation_machinery(Fixture& f) {
  ensure_main(f);
  const cli::Layout layout{f.main()};
  bool ok = true;
  std::string detail;
  for (const char* v : {"TRACE_base", "RACE", "RACE_base"}) {
    const auto m = read_json(layout.model(v) / "metrics.json");
    const auto history = read_csv(layout.model(v) / "history.csv");
    const bool trained = m["epochs"] == f.config.train.epochs && history.size() == f.config.train.epochs + 2 &&
                         m["auprc_test"].is_number() && m["nll_test"].is_number();
    ok = ok && trained;
    detail += std::string(v) + " test AUPRC " + fmt("%.4f", m["auprc_test"].is_number() ? m["auprc_test"].get<double>() : NAN) +
              (trained ? "" : " (incomplete)") + "; ";
  }
  const auto trace = checkpoint_names(layout.model("TRACE"));
  const auto race = checkpoint_names(layout.model("RACE"));
  std::set<std::string> only_trace, only_race;
  std::set_difference(trace.begin(), trace.end(), race.begin(), race.end(), std::inserter(only_trace, only_trace.end()));
  std::set_difference(race.begin(), race.end(), trace.begin(), trace.end(), std::inserter(only_race, only_race.end()));
  bool diff_ok = !only_trace.empty() && !only_race.empty();
  for (const auto& n : only_trace) diff_ok = diff_ok && n.starts_with(autoencoder::names::kTransformer + ".");
  for (const auto& n : only_race) diff_ok = diff_ok && n.starts_with(autoencoder::names::kDense + ".");
  detail += "checkpoint diff: " + std::to_string(only_trace.size()) + " names only in TRACE (all " +
            autoencoder::names::kTransformer + ".*), " + std::to_string(only_race.size()) + " only in RACE (all " +
            autoencoder::names::kDense + ".*), " + std::to_string(trace.size() - only_trace.size()) + " shared";
  if (!diff_ok) detail += " [unexpected names in the diff]";
  return {ok && diff_ok, detail};
}

// ---- 9. attention export --------------------------------------------------

Outcome attention_export(Fixture& f) {
  ensure_main(f);
  const cli::Layout layout{f.main()};
  const auto ckpt = numkit::load_checkpoint(layout.model("TRACE") / "checkpoint.json");
  const auto& w = ckpt.params.at(autoencoder::names::kWDown).value;
  const std::size_t m = w.rows(), n = w.cols();
  std::mt19937_64 g(909);

  DenseArray eye({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = 1.0;
  const auto a = random_array({n, n}, g);
  const auto same = eval::backproject(a, eye);
  double identity_err = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) identity_err = std::max(identity_err, std::abs(same[i] - a[i]));

  const auto a1 = random_array({m, m}, g), a2 = random_array({m, m}, g);
  const double c1 = 0.7, c2 = -1.3;
  DenseArray mix({m, m});
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = c1 * a1[i] + c2 * a2[i];
  const auto lhs = eval::backproject(mix, w), r1 = eval::backproject(a1, w), r2 = eval::backproject(a2, w);
  double linear_err = 0.0;
  for (std::size_t i = 0; i < lhs.size(); ++i) linear_err = std::max(linear_err, std::abs(lhs[i] - (c1 * r1[i] + c2 * r2[i])));

  // The exported case: the highest-scoring test case.
  const auto index = read_csv(layout.attention() / "index.csv");
  if (index.size() < 2) return {false, "attention index is empty"};
  const std::string id = index[1][0];
  const auto data = cli::load_dataset(options_for(f.config, f.main(), f.config.seed).config);
  const predictor::PatientExample* example = nullptr;
  for (const auto& e : data.examples) {
    if (e.id == id) example = &e;
  }
  if (!example) return {false, "exported patient " + id + " not in the cohort"};
  const auto scores = read_csv(layout.model("TRACE") / "scores_test.csv");
  double top = -1.0, mine = -1.0;
  std::size_t score_col = scores[0].size();
  for (std::size_t c = 0; c < scores[0].size(); ++c) {
    if (scores[0][c] == "score") score_col = c;
  }
  for (std::size_t r = 1; r < scores.size() && score_col < scores[0].size(); ++r) {
    const double s = std::stod(scores[r][score_col]);
    const bool is_case = scores[r][std::find(scores[0].begin(), scores[0].end(), "label") - scores[0].begin()] == "1";
    if (is_case) top = std::max(top, s);
    if (scores[r][0] == id) mine = s;
  }

  // Rows must cover exactly active x active for each visit.
  std::set<std::tuple<std::size_t, std::string, std::string>> expected, seen;
  for (std::size_t t = 0; t < example->sequence.size(); ++t) {
    const auto active = eval::active_features(example->sequence[t].concat());
    for (auto i : active) {
      for (auto j : active) expected.insert({t, data.space.feature_name(i), data.space.feature_name(j)});
    }
  }
  const auto rows = read_csv(layout.attention() / (id + ".csv"));
  bool header_ok = !rows.empty() && rows[0] == std::vector<std::string>{"visit_index", "row_feature", "col_feature", "weight"};
  for (std::size_t r = 1; r < rows.size(); ++r) seen.insert({std::stoul(rows[r][0]), rows[r][1], rows[r][2]});

  // Code features must occur in the raw visit record.
  const auto& raw = *std::find_if(data.file.patients.begin(), data.file.patients.end(),
                                  [&](const ehr::RawPatient& p) { return p.id == id; });
  // Visits survive indexing when they keep a diagnosis code; the sequence is the latest of those.
  std::vector<const ehr::RawVisit*> kept;
  for (const auto& v : raw.visits) {
    if (std::any_of(v.codes.begin(), v.codes.end(), [&](const std::string& c) {
          return c.starts_with("dx_") && data.space.codes.find(c).has_value();
        })) {
      kept.push_back(&v);
    }
  }
  if (kept.size() < example->sequence.size()) return {false, "raw record of " + id + " has too few visits"};
  const std::size_t offset = kept.size() - example->sequence.size();
  std::size_t foreign = 0;
  for (const auto& [t, row, col] : seen) {
    for (const auto& name : {row, col}) {
      if (!data.space.codes.find(name)) continue;
      const auto& codes = kept[offset + t]->codes;
      foreign += std::find(codes.begin(), codes.end(), name) == codes.end();
    }
  }
  const bool pass = identity_err <= 1e-10 && linear_err <= 1e-10 && header_ok && seen == expected &&
                    rows.size() - 1 == expected.size() && foreign == 0 && example->label == 1 && mine == top;
  return {pass, "identity error " + fmt("%.2e", identity_err) + ", linearity error " + fmt("%.2e", linear_err) +
                    "; case " + id + " (score " + fmt("%.4f", mine) + ", top test case) exports " +
                    std::to_string(rows.size() - 1) + " rows over " + std::to_string(example->sequence.size()) +
                    " visits, " + (seen == expected ? "exactly the active features" : "NOT the active features") +
                    ", " + std::to_string(foreign) + " codes absent from the raw visit"};
}

// ---- 10. determinism -------------------------------------------------------

Outcome determinism(Fixture& f) {
  ensure_main(f);
  fs::remove_all(f.rerun());
  run_stages(options_for(f.config, f.rerun(), f.config.seed), kAllStages, "rerun");
  std::size_t files = 0, manifests = 0;
  std::vector<std::string> diffs;
  const cli::Layout a{f.main()}, b{f.rerun()};
  for (const auto& entry : fs::directory_iterator(a.manifests())) {
    ++manifests;
    const auto other = b.manifests() / entry.path().filename();
    if (!fs::exists(other)) {
      diffs.push_back("missing manifest " + entry.path().filename().string());
      continue;
    }
    const auto ma = read_json(entry.path()), mb = read_json(other);
    if (ma["outputs"] != mb["outputs"] || ma["inputs"] != mb["inputs"] || ma["config_hash"] != mb["config_hash"]) {
      diffs.push_back("manifest hashes differ: " + entry.path().filename().string());
    }
    for (const auto& [rel, sha] : ma["outputs"].items()) {
      ++files;
      if (fs::path(rel).filename() == "metrics.json") {
        auto ja = read_json(f.main() / rel), jb = read_json(f.rerun() / rel);
        ja.erase("wall_clock");
        jb.erase("wall_clock");
        if (ja != jb) diffs.push_back(rel);
      } else if (slurp(f.main() / rel) != slurp(f.rerun() / rel)) {
        diffs.push_back(rel);
      }
    }
  }
  std::string detail = std::to_string(files) + " artifacts over " + std::to_string(manifests) +
                       " stage manifests compared; " + std::to_string(diffs.size()) + " differ";
  for (std::size_t i = 0; i < std::min<std::size_t>(diffs.size(), 5); ++i) detail += "; " + diffs[i];
  return {diffs.empty() && files > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path config_path = TRACE_SEQ_DESK_CONFIG;
  fs::path work = "acceptance_out";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) {
      config_path = argv[++i];
    } else if (arg == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      only.insert(std::stoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--config PATH] [--work DIR] [--only N]...\n";
      return 2;
    }
  }
  numkit::kernels::set_threads(numkit::kernels::threads_from_env(1));

  Fixture fixture;
  try {
    fixture.config = cli::load_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "acceptance: " << e.what() << '\n';
    return 2;
  }
  fixture.work = work;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"metric oracles", metric_oracles},
      {"optimizer oracle", optimizer_oracle},
      {"matching contract", matching_contract},
      {"split contract", split_contract},
      {"autoencoder convergence", autoencoder_convergence},
      {"planted-signal recovery", [&] { return planted_signal(fixture); }},
      {"ablation machinery", [&] { return ablation_machinery(fixture); }},
      {"attention export", [&] { return attention_export(fixture); }},
      {"determinism", [&] { return determinism(fixture); }},
  };

  const auto start = std::chrono::steady_clock::now();
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(static_cast<int>(i + 1))) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    failed += !r.pass;
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << ": " << r.detail
              << " [" << fmt("%.1f s", seconds_since(t0)) << "]" << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << " in "
            << fmt("%.1f s", seconds_since(start)) << std::endl;
  return failed == 0 ? 0 : 1;
}
