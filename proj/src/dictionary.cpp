#include "lgsim/dictionary.hpp"

#include "lgsim/error.hpp"
#include "lgsim/rng.hpp"

namespace lgsim {

std::string_view to_string(DictionaryMode m) {
  return m == DictionaryMode::StandardBasis ? "standard_basis" : "random_orthogonal";
}

DictionaryMode parse_dictionary_mode(std::string_view s) {
  if (s == "standard_basis") return DictionaryMode::StandardBasis;
  if (s == "random_orthogonal") return DictionaryMode::RandomOrthogonal;
  throw ConfigError("unknown dictionary mode '" + std::string(s) + "'");
}

int Dictionary::sub(int sign, int c) const {
  const auto& v = sign > 0 ? indices_sub_plus : indices_sub_minus;
  if (c < 0 || c >= static_cast<int>(v.size())) throw ContractError("subclass index out of range");
  return v[c];
}

std::vector<int> Dictionary::opposite_pool(int sign) const {
  std::vector<int> pool;
  pool.push_back(common(-sign));
  const auto& v = sign > 0 ? indices_sub_minus : indices_sub_plus;
  pool.insert(pool.end(), v.begin(), v.end());
  return pool;
}

Dictionary build_dictionary(const HyperParams& params, DictionaryMode mode, std::uint64_t seed) {
  const int d = params.d;
  if (2 + params.k_plus + params.k_minus > d)
    throw ConfigError("dictionary dimension " + std::to_string(d) + " cannot hold " +
                      std::to_string(2 + params.k_plus + params.k_minus) + " designated features");
  Dictionary dict;
  dict.mode = mode;
  dict.seed = seed;
  dict.index_common_plus = 0;
  dict.index_common_minus = 1;
  for (int c = 0; c < params.k_plus; ++c) dict.indices_sub_plus.push_back(2 + c);
  for (int c = 0; c < params.k_minus; ++c) dict.indices_sub_minus.push_back(2 + params.k_plus + c);

  if (mode == DictionaryMode::StandardBasis) {
    dict.words = RowMatrix::Identity(d, d);
    return dict;
  }

  Rng rng = make_rng(seed, Stream::Dictionary);
  Eigen::MatrixXd g(d, d);
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < d; ++i) g(i, j) = standard_normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Sign fix makes the distribution Haar rather than QR-convention dependent.
  for (int j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  dict.words = q;  // rows of an orthogonal matrix are orthonormal too
  return dict;
}

double orthonormality_error(const Dictionary& dict) {
  Eigen::MatrixXd gram = dict.words * dict.words.transpose();
  gram -= Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
  return gram.cwiseAbs().maxCoeff();
}

}  // namespace lgsim
