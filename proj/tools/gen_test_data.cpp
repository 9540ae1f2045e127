// Writes the committed test fixtures:
//   cifar10_fixture.bin  10 CIFAR-10 binary records with a fixed byte pattern
//   oracle_values.json   outputs of the reference oracles on fixed inputs
// Usage: gen_test_data <out-dir>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <json.hpp>

#include "oracles.hpp"

namespace {

std::vector<std::uint8_t> fixture_records() {
  std::vector<std::uint8_t> out;
  for (std::uint32_t r = 0; r < 10; ++r) {
    out.push_back(static_cast<std::uint8_t>((r * 3) % 10));
    for (std::uint32_t j = 0; j < 3072; ++j) {
      const std::uint32_t c = j / 1024, y = (j / 32) % 32, x = j % 32;
      out.push_back(static_cast<std::uint8_t>((r * 37 + c * 85 + y * 7 + x * 3 + ((x * y) >> 3)) & 0xff));
    }
  }
  return out;
}

nlohmann::json rank_cases() {
  std::mt19937_64 rng(31337);
  nlohmann::json cases = nlohmann::json::array();
  for (int t = 0; t < 60; ++t) {
    const auto m = oracle::planted_rank_matrix(rng);
    cases.push_back({{"rows", m.rows},
                     {"cols", m.cols},
                     {"data", m.data},
                     {"rank", oracle::bareiss_rank(m.data, m.rows, m.cols)}});
  }
  return cases;
}

nlohmann::json conv_case() {
  std::mt19937_64 rng(4242);
  const hrank::Tensor4 x = oracle::random_tensor({2, 3, 7, 6}, rng);
  hrank::FilterTensor f(4, 3, 3, true);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& w : f.weights()) w = u(rng);
  for (auto& b : f.bias()) b = u(rng);
  const hrank::Tensor4 y = oracle::naive_conv(x, f, 2, 1);
  return {{"input_shape", {2, 3, 7, 6}},
          {"input", x.vec()},
          {"filters", {4, 3, 3}},
          {"weights", std::vector<double>(f.weights().begin(), f.weights().end())},
          {"bias", std::vector<double>(f.bias().begin(), f.bias().end())},
          {"stride", 2},
          {"pad", 1},
          {"output_shape", {y.shape().n, y.shape().c, y.shape().h, y.shape().w}},
          {"output", y.vec()}};
}

nlohmann::json subset_cases() {
  std::mt19937_64 rng(777);
  nlohmann::json cases = nlohmann::json::array();
  for (int t = 0; t < 40; ++t) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 12)(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
    std::vector<std::uint64_t> v(n);
    for (auto& e : v) e = std::uniform_int_distribution<std::uint64_t>(0, 40)(rng);
    cases.push_back({{"rank_sum", v}, {"n_prune", k}, {"min_sum", oracle::brute_force_min_subset(v, k)}});
  }
  return cases;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: gen_test_data <out-dir>\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);

  const auto records = fixture_records();
  std::ofstream(dir / "cifar10_fixture.bin", std::ios::binary)
      .write(reinterpret_cast<const char*>(records.data()), static_cast<std::streamsize>(records.size()));

  const nlohmann::json frozen{{"rank", rank_cases()}, {"conv", conv_case()}, {"subset_min", subset_cases()}};
  std::ofstream(dir / "oracle_values.json") << frozen.dump(1) << "\n";
  return 0;
}
