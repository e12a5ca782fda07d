#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rst/oracle.hpp"
#include "rst/tensor.hpp"

// Oracle suite shared by the `audit` command and the acceptance tests.
namespace rst::audit {

enum class Scope { kTensor, kDre, kRsas, kFfn, kModel, kAll };
Scope parse_scope(const std::string& text);

struct Options {
  std::uint64_t seed = 1;
  std::size_t instances = 30;      // random instances per oracle comparison
  std::size_t gradient_seeds = 3;  // random instances per gradient check
};

using Report = oracle::OracleReport;

// Central-difference check of d(sum r * fn(inputs)) / d(inputs) with random
// weights r. At most `samples` coordinates are probed. f32 uses eps 1e-3,
// f64 uses eps 1e-6.
// `regime`, when given, maps inputs to a discrete signature of the
// piecewise-smooth branch (e.g. floors of bilinear sample coordinates); a
// probe whose +-eps points change the signature is excluded as a kink.
template <typename T>
using Regime = std::function<std::vector<long long>(const std::vector<Tensor<T>>&)>;

template <typename T>
Report gradient_check(const std::string& op, const std::string& instance, const std::vector<Tensor<T>>& inputs,
                      const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& fn, std::mt19937_64& rng,
                      std::size_t samples, double tolerance, const Regime<T>& regime = {});

std::vector<Report> tensor_oracles(const Options& options);
std::vector<Report> tensor_gradients(const Options& options);
std::vector<Report> dre_reports(const Options& options);
std::vector<Report> rsas_reports(const Options& options);
std::vector<Report> ffn_reports(const Options& options);
std::vector<Report> model_reports(const Options& options);

// Runs the scope, handing every report to `sink` as it is produced.
// Returns the number of failing reports.
std::size_t run(Scope scope, const Options& options, const std::function<void(const Report&)>& sink);

}  // namespace rst::audit
