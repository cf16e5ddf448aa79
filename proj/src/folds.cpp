#include "vncseg/folds.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "vncseg/rng.hpp"

namespace vncseg {

using json = nlohmann::json;

namespace {

void check_ids(const std::vector<std::string>& ids) {
  if (ids.empty()) throw std::runtime_error("no case ids given");
  std::set<std::string> seen(ids.begin(), ids.end());
  if (seen.size() != ids.size()) throw std::runtime_error("case ids are not unique");
}

// Splits `rest` (already shuffled) into val/train.
void split_val(const std::vector<std::string>& rest, double val_fraction, Fold& fold) {
  std::size_t m = rest.size();
  std::size_t n_val = 0;
  if (val_fraction > 0.0 && m >= 2) {
    n_val = static_cast<std::size_t>(
        std::max(1l, std::lround(val_fraction * static_cast<double>(m))));
    n_val = std::min(n_val, m - 1);
  }
  fold.val.assign(rest.begin(), rest.begin() + n_val);
  fold.train.assign(rest.begin() + n_val, rest.end());
}

}  // namespace

std::vector<Fold> make_folds(const std::vector<std::string>& ids, int n_folds,
                             std::uint64_t seed, double val_fraction) {
  check_ids(ids);
  if (n_folds < 2 || static_cast<std::size_t>(n_folds) > ids.size())
    throw std::runtime_error("fold count " + std::to_string(n_folds) +
                             " invalid for " + std::to_string(ids.size()) + " cases");

  Rng rng(mix_seed(seed, 0xF01D5));
  std::vector<std::string> order = ids;
  shuffle(order, rng);

  std::size_t n = order.size();
  std::size_t base = n / n_folds, extra = n % n_folds;
  std::vector<Fold> folds(n_folds);
  std::size_t at = 0;
  for (int f = 0; f < n_folds; ++f) {
    std::size_t take = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    folds[f].test.assign(order.begin() + at, order.begin() + at + take);
    at += take;
  }
  for (int f = 0; f < n_folds; ++f) {
    std::vector<std::string> rest;
    std::set<std::string> in_test(folds[f].test.begin(), folds[f].test.end());
    for (const auto& id : order)
      if (!in_test.count(id)) rest.push_back(id);
    shuffle(rest, rng);
    split_val(rest, val_fraction, folds[f]);
  }
  return folds;
}

Fold make_train_val_split(const std::vector<std::string>& ids, std::uint64_t seed,
                          double val_fraction) {
  check_ids(ids);
  Rng rng(mix_seed(seed, 0xF01D5));
  std::vector<std::string> order = ids;
  shuffle(order, rng);
  Fold fold;
  split_val(order, val_fraction, fold);
  return fold;
}

void write_folds_json(const std::vector<Fold>& folds, const std::string& path) {
  json j = json::array();
  for (std::size_t f = 0; f < folds.size(); ++f)
    j.push_back(json{{"fold", f},
                     {"train", folds[f].train},
                     {"val", folds[f].val},
                     {"test", folds[f].test}});
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << json{{"folds", j}}.dump(2) << "\n";
}

std::vector<Fold> read_folds_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing file: " + path);
  json j;
  try {
    in >> j;
    std::vector<Fold> folds;
    for (const auto& e : j.at("folds")) {
      Fold f;
      e.at("train").get_to(f.train);
      e.at("val").get_to(f.val);
      e.at("test").get_to(f.test);
      folds.push_back(std::move(f));
    }
    return folds;
  } catch (const json::exception& e) {
    throw std::runtime_error("invalid folds file " + path + ": " + e.what());
  }
}

}  // namespace vncseg
