#include "rcnn/architecture.hpp"

#include <stdexcept>

namespace rcnn {

ArchitectureSpec ArchitectureSpec::named(std::string_view name, int in_channels, int classes) {
  ArchitectureSpec s;
  s.name = std::string(name);
  s.in_channels = in_channels;
  s.classes = classes;
  if (name == "B") {
  } else if (name == "B-F") {
    s.features = 64;
  } else if (name == "B-K") {
    s.kernel = 5;
  } else if (name == "BT") {
    s.topdown = true;
  } else if (name == "BL") {
    s.lateral = true;
  } else if (name == "BLT") {
    s.lateral = true;
    s.topdown = true;
  } else {
    throw std::invalid_argument("unknown architecture '" + s.name +
                                "' (expected B, B-F, B-K, BT, BL or BLT)");
  }
  s.validate_canonical();
  return s;
}

void ArchitectureSpec::validate() const {
  const bool want_lateral = name == "BL" || name == "BLT";
  const bool want_topdown = name == "BT" || name == "BLT";
  bool known = false;
  for (auto n : kArchitectureNames) known = known || n == name;
  if (!known) throw std::invalid_argument("unknown architecture '" + name + "'");
  if (lateral != want_lateral || topdown != want_topdown) {
    throw std::invalid_argument("architecture " + name +
                                ": connection flags do not match the name");
  }
  if (kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument("architecture " + name + ": kernel size must be odd");
  }
  if (features < 1 || time_steps < 1 || in_channels < 1 || classes < 2) {
    throw std::invalid_argument("architecture " + name + ": sizes must be positive");
  }
}

void ArchitectureSpec::validate_canonical() const {
  validate();
  const int want_features = name == "B-F" ? 64 : 32;
  const int want_kernel = name == "B-K" ? 5 : 3;
  if (features != want_features || kernel != want_kernel) {
    throw std::invalid_argument("architecture " + name + " requires " +
                                std::to_string(want_features) + " feature maps and " +
                                std::to_string(want_kernel) + "x" + std::to_string(want_kernel) +
                                " kernels");
  }
}

std::int64_t count_learnable(const ArchitectureSpec& spec) {
  spec.validate();
  const std::int64_t f = spec.features;
  const std::int64_t kk = static_cast<std::int64_t>(spec.kernel) * spec.kernel;
  const std::int64_t recurrent_conv = f * f * kk + f;

  std::int64_t total = spec.in_channels * f * kk + f;  // layer 1 bottom-up
  total += recurrent_conv;                              // layer 2 bottom-up
  if (spec.lateral) total += 2 * recurrent_conv;
  if (spec.topdown) total += recurrent_conv;
  total += f * spec.classes + spec.classes;
  return total;
}

}  // namespace rcnn
