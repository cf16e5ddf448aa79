#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vncseg {

struct Fold {
  std::vector<std::string> train, val, test;
};

// Seeded shuffle, then contiguous test chunks (the first count % n_folds
// chunks get one extra id). The remaining ids are reshuffled per fold and
// split val/train with val = max(1, round(val_fraction * m)), capped so at
// least one training id remains. val_fraction == 0 disables validation.
std::vector<Fold> make_folds(const std::vector<std::string>& ids, int n_folds,
                             std::uint64_t seed, double val_fraction);

// Same val/train policy applied to a whole id list, for single-model runs.
Fold make_train_val_split(const std::vector<std::string>& ids, std::uint64_t seed,
                          double val_fraction);

void write_folds_json(const std::vector<Fold>& folds, const std::string& path);
std::vector<Fold> read_folds_json(const std::string& path);

}  // namespace vncseg
