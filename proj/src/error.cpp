#include "lgsim/error.hpp"

namespace lgsim {

namespace {
std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (const auto& i : items) s += (s.empty() ? "" : ", ") + i;
  return s;
}
}  // namespace

MissingArtifactError::MissingArtifactError(std::vector<std::string> missing)
    : std::runtime_error("incomplete run, missing artifacts: " + join(missing)), missing_(std::move(missing)) {}

}  // namespace lgsim
