#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string_view>
#include <vector>

#include "lgsim/params.hpp"

namespace lgsim {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class DictionaryMode { StandardBasis, RandomOrthogonal };
std::string_view to_string(DictionaryMode m);
DictionaryMode parse_dictionary_mode(std::string_view s);

/// d orthonormal words, one per row. Designated features occupy the first
/// 2 + k_plus + k_minus rows: v+ then v- then v+,c then v-,c.
struct Dictionary {
  RowMatrix words;
  int index_common_plus = 0;
  int index_common_minus = 1;
  std::vector<int> indices_sub_plus;
  std::vector<int> indices_sub_minus;
  DictionaryMode mode = DictionaryMode::StandardBasis;
  std::uint64_t seed = 0;

  int d() const { return static_cast<int>(words.cols()); }
  int k() const { return static_cast<int>(indices_sub_plus.size()); }
  int num_designated() const { return 2 + k() + static_cast<int>(indices_sub_minus.size()); }
  int common(int sign) const { return sign > 0 ? index_common_plus : index_common_minus; }
  int sub(int sign, int c) const;
  Eigen::Ref<const Eigen::RowVectorXd> word(int i) const { return words.row(i); }
  /// The first num_designated() rows.
  RowMatrix designated() const { return words.topRows(num_designated()); }
  /// The designated feature pool of the opposite coarse class.
  std::vector<int> opposite_pool(int sign) const;
};

Dictionary build_dictionary(const HyperParams& params, DictionaryMode mode, std::uint64_t seed);

/// max |<v_i, v_j> - delta_ij| over all word pairs.
double orthonormality_error(const Dictionary& dict);

}  // namespace lgsim
