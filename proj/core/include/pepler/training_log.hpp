#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pepler/errors.hpp"

namespace pepler {

struct EpochLog {
  int epoch = 0;
  int stage = 1;
  double train_loss = 0;
  double valid_loss = 0;
  double l_c = 0;
  std::optional<double> l_r;  // empty when the objective has no rating term
};

inline std::string format_loss(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

// CSV columns: epoch,train_loss,valid_loss,l_c,l_r,stage. The l_r cell is
// empty for strategies without a rating term.
inline void write_training_log(const std::vector<EpochLog>& log,
                               const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,train_loss,valid_loss,l_c,l_r,stage\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << format_loss(e.train_loss) << ','
        << format_loss(e.valid_loss) << ',' << format_loss(e.l_c) << ','
        << (e.l_r ? format_loss(*e.l_r) : std::string()) << ',' << e.stage
        << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace pepler
