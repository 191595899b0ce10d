#include "lgsim/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lgsim/error.hpp"

namespace lgsim {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

class Writer {
 public:
  explicit Writer(const fs::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  void magic(const char (&m)[9]) { out_.write(m, 8); }
  void i64(std::int64_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void f64(double v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void f64s(const double* p, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  }
  void finish(const fs::path& path) {
    out_.flush();
    if (!out_) throw std::runtime_error("write failed: " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const fs::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open " + path.string());
  }
  void magic(const char (&m)[9]) {
    char buf[8];
    read(buf, 8);
    if (std::memcmp(buf, m, 8) != 0) throw ConfigError(path_.string() + ": bad magic, expected " + m);
  }
  std::int64_t i64() {
    std::int64_t v;
    read(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    read(&v, sizeof v);
    return v;
  }
  void f64s(double* p, std::size_t n) { read(p, n * sizeof(double)); }
  std::int64_t count(std::int64_t limit = std::int64_t{1} << 40) {
    const std::int64_t v = i64();
    if (v < 0 || v > limit) throw ConfigError(path_.string() + ": corrupt header");
    return v;
  }

 private:
  void read(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw ConfigError(path_.string() + ": truncated file");
  }
  fs::path path_;
  std::ifstream in_;
};

void write_sample(Writer& w, const Sample& s) {
  w.i64(s.label.sign);
  w.i64(s.label.sub);
  w.i64(static_cast<std::int64_t>(s.kind));
  w.i64(static_cast<std::int64_t>(s.components.size()));
  for (PatchTag t : s.tags) w.i64(static_cast<std::int64_t>(t));
  w.f64s(s.alphas.data(), s.alphas.size());
  for (int o : s.component_offsets) w.i64(o);
  for (const Component& c : s.components) {
    w.i64(c.feature);
    w.f64(c.alpha);
  }
  w.f64s(s.patches.data(), static_cast<std::size_t>(s.patches.size()));
}

Sample read_sample(Reader& r, int P, int d) {
  Sample s;
  s.label.sign = static_cast<int>(r.i64());
  s.label.sub = static_cast<int>(r.i64());
  s.kind = static_cast<SampleKind>(r.i64());
  const auto nc = r.count();
  s.tags.resize(P);
  for (auto& t : s.tags) t = static_cast<PatchTag>(r.i64());
  s.alphas.resize(P);
  r.f64s(s.alphas.data(), P);
  s.component_offsets.resize(P + 1);
  for (auto& o : s.component_offsets) o = static_cast<int>(r.i64());
  s.components.resize(nc);
  for (auto& c : s.components) {
    c.feature = static_cast<int>(r.i64());
    c.alpha = r.f64();
  }
  s.patches.resize(P, d);
  r.f64s(s.patches.data(), static_cast<std::size_t>(P) * d);
  return s;
}

std::string_view tag_name(PatchTag t) {
  switch (t) {
    case PatchTag::Common: return "common";
    case PatchTag::Subclass: return "subclass";
    default: return "feature_noise";
  }
}

PatchTag parse_tag(const std::string& s) {
  if (s == "common") return PatchTag::Common;
  if (s == "subclass") return PatchTag::Subclass;
  if (s == "feature_noise") return PatchTag::FeatureNoise;
  throw ConfigError("unknown patch tag '" + s + "'");
}

json matrix_json(const RowMatrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    std::vector<double> row(m.row(i).data(), m.row(i).data() + m.cols());
    rows.push_back(row);
  }
  return rows;
}

RowMatrix matrix_from_json(const json& j) {
  const int rows = static_cast<int>(j.size());
  const int cols = rows ? static_cast<int>(j.at(0).size()) : 0;
  RowMatrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(j[i].size()) != cols) throw ConfigError("ragged matrix in JSON");
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

}  // namespace

json to_json(const HyperParams& p) {
  return json{{"d", p.d},
              {"P", p.P},
              {"s_star", p.s_star},
              {"s_f", p.s_f},
              {"iota", p.iota},
              {"gamma", p.gamma},
              {"sigma_zeta", p.sigma_zeta},
              {"k_plus", p.k_plus},
              {"k_minus", p.k_minus},
              {"m", p.m},
              {"m_sub", p.fine_neurons()},
              {"sigma_0", p.sigma_0},
              {"c_0", p.c_0},
              {"eta", p.eta},
              {"N", p.N},
              {"bias_decay_beta", p.bias_decay_beta},
              {"threshold_log_d", p.threshold_log_d},
              {"threshold_gap_multiplier", p.threshold_gap_multiplier},
              {"preset", std::string(to_string(p.preset))}};
}

HyperParams hyperparams_from_json(const json& j) {
  HyperParams p;
  p.d = j.at("d").get<int>();
  p.P = j.at("P").get<int>();
  p.s_star = j.at("s_star").get<int>();
  p.s_f = j.at("s_f").get<int>();
  p.iota = j.at("iota").get<double>();
  p.gamma = j.at("gamma").get<double>();
  p.sigma_zeta = j.at("sigma_zeta").get<double>();
  p.k_plus = j.at("k_plus").get<int>();
  p.k_minus = j.at("k_minus").get<int>();
  p.m = j.at("m").get<int>();
  p.m_sub = j.at("m_sub").get<int>();
  p.sigma_0 = j.at("sigma_0").get<double>();
  p.c_0 = j.at("c_0").get<double>();
  p.eta = j.at("eta").get<double>();
  p.N = j.at("N").get<int>();
  p.bias_decay_beta = j.at("bias_decay_beta").get<double>();
  p.threshold_log_d = j.at("threshold_log_d").get<double>();
  p.threshold_gap_multiplier = j.at("threshold_gap_multiplier").get<double>();
  p.preset = parse_preset(j.at("preset").get<std::string>());
  return p;
}

void save_dictionary(const fs::path& path, const Dictionary& dict) {
  Writer w(path);
  w.magic("LGDICT01");
  w.i64(dict.d());
  w.i64(dict.k());
  w.i64(static_cast<std::int64_t>(dict.indices_sub_minus.size()));
  w.i64(static_cast<std::int64_t>(dict.mode));
  w.i64(static_cast<std::int64_t>(dict.seed));
  w.f64s(dict.words.data(), static_cast<std::size_t>(dict.words.size()));
  w.finish(path);
}

Dictionary load_dictionary(const fs::path& path) {
  Reader r(path);
  r.magic("LGDICT01");
  Dictionary dict;
  const auto d = r.count(1 << 20);
  const auto kp = r.count(d);
  const auto km = r.count(d);
  if (2 + kp + km > d) throw ConfigError(path.string() + ": inconsistent dictionary header");
  dict.mode = static_cast<DictionaryMode>(r.i64());
  dict.seed = static_cast<std::uint64_t>(r.i64());
  for (int c = 0; c < kp; ++c) dict.indices_sub_plus.push_back(2 + c);
  for (int c = 0; c < km; ++c) dict.indices_sub_minus.push_back(2 + static_cast<int>(kp) + c);
  dict.words.resize(d, d);
  r.f64s(dict.words.data(), static_cast<std::size_t>(d * d));
  return dict;
}

json to_json(const Dictionary& dict) {
  return json{{"d", dict.d()},
              {"mode", std::string(to_string(dict.mode))},
              {"seed", dict.seed},
              {"index_common_plus", dict.index_common_plus},
              {"index_common_minus", dict.index_common_minus},
              {"indices_sub_plus", dict.indices_sub_plus},
              {"indices_sub_minus", dict.indices_sub_minus},
              {"words", matrix_json(dict.words)}};
}

Dictionary dictionary_from_json(const json& j) {
  Dictionary dict;
  dict.mode = parse_dictionary_mode(j.at("mode").get<std::string>());
  dict.seed = j.at("seed").get<std::uint64_t>();
  dict.index_common_plus = j.at("index_common_plus").get<int>();
  dict.index_common_minus = j.at("index_common_minus").get<int>();
  dict.indices_sub_plus = j.at("indices_sub_plus").get<std::vector<int>>();
  dict.indices_sub_minus = j.at("indices_sub_minus").get<std::vector<int>>();
  dict.words = matrix_from_json(j.at("words"));
  return dict;
}

void save_batch(const fs::path& path, const Batch& batch) {
  Writer w(path);
  w.magic("LGBATCH1");
  const int P = batch.samples.empty() ? 0 : batch.samples[0].num_patches();
  const int d = batch.samples.empty() ? 0 : static_cast<int>(batch.samples[0].patches.cols());
  w.i64(static_cast<std::int64_t>(batch.samples.size()));
  w.i64(P);
  w.i64(d);
  w.i64(batch.step_index);
  for (const Sample& s : batch.samples) write_sample(w, s);
  w.finish(path);
}

Batch load_batch(const fs::path& path) {
  Reader r(path);
  r.magic("LGBATCH1");
  const auto n = r.count(1 << 24);
  const auto P = r.count(1 << 24);
  const auto d = r.count(1 << 20);
  Batch b;
  b.step_index = r.i64();
  b.samples.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) b.samples.push_back(read_sample(r, static_cast<int>(P), static_cast<int>(d)));
  return b;
}

json to_json(const Sample& s) {
  json tags = json::array();
  for (PatchTag t : s.tags) tags.push_back(tag_name(t));
  json comps = json::array();
  for (int p = 0; p < s.num_patches(); ++p) {
    json pc = json::array();
    for (int i = s.component_offsets[p]; i < s.component_offsets[p + 1]; ++i)
      pc.push_back({s.components[i].feature, s.components[i].alpha});
    comps.push_back(pc);
  }
  return json{{"coarse_label", s.label.sign},
              {"fine_label", {s.label.sign, s.label.sub}},
              {"kind", s.kind == SampleKind::Normal ? "normal" : "hard"},
              {"patch_tags", tags},
              {"alphas", s.alphas},
              {"components", comps},
              {"patches", matrix_json(s.patches)}};
}

Sample sample_from_json(const json& j) {
  Sample s;
  s.label.sign = j.at("fine_label").at(0).get<int>();
  s.label.sub = j.at("fine_label").at(1).get<int>();
  s.kind = j.at("kind").get<std::string>() == "hard" ? SampleKind::Hard : SampleKind::Normal;
  for (const auto& t : j.at("patch_tags")) s.tags.push_back(parse_tag(t.get<std::string>()));
  s.alphas = j.at("alphas").get<std::vector<double>>();
  s.component_offsets.push_back(0);
  for (const auto& pc : j.at("components")) {
    for (const auto& c : pc) s.components.push_back({c.at(0).get<int>(), c.at(1).get<double>()});
    s.component_offsets.push_back(static_cast<int>(s.components.size()));
  }
  s.patches = matrix_from_json(j.at("patches"));
  if (static_cast<int>(s.tags.size()) != s.num_patches() || static_cast<int>(s.alphas.size()) != s.num_patches() ||
      static_cast<int>(s.component_offsets.size()) != s.num_patches() + 1)
    throw ConfigError("sample JSON has inconsistent patch counts");
  return s;
}

json to_json(const Batch& b) {
  json samples = json::array();
  for (const Sample& s : b.samples) samples.push_back(to_json(s));
  return json{{"step_index", b.step_index}, {"samples", samples}};
}

Batch batch_from_json(const json& j) {
  Batch b;
  b.step_index = j.at("step_index").get<std::int64_t>();
  for (const auto& s : j.at("samples")) b.samples.push_back(sample_from_json(s));
  return b;
}

void save_network(const fs::path& path, const Network& net) {
  Writer w(path);
  w.magic("LGNET001");
  w.i64(static_cast<std::int64_t>(net.variant));
  w.i64(net.num_heads());
  w.i64(net.heads.empty() ? 0 : net.heads[0].size());
  w.i64(net.d());
  for (const auto& g : net.heads) {
    w.f64s(g.weights.data(), static_cast<std::size_t>(g.weights.size()));
    w.f64s(g.biases.data(), static_cast<std::size_t>(g.biases.size()));
  }
  w.finish(path);
  json heads = json::array();
  for (int h = 0; h < net.num_heads(); ++h) heads.push_back(net.head_name(h));
  json side{{"variant", std::string(to_string(net.variant))},
            {"seed", net.seed},
            {"head_labels", heads},
            {"hyperparams", to_json(net.params)}};
  write_text(path.string() + ".json", side.dump(2) + "\n");
}

Network load_network(const fs::path& path) {
  Reader r(path);
  r.magic("LGNET001");
  Network net;
  net.variant = static_cast<Variant>(r.i64());
  const auto H = r.count(1 << 16);
  const auto m = r.count(std::int64_t{1} << 32);
  const auto d = r.count(1 << 20);
  const json side = json::parse(read_text(path.string() + ".json"));
  net.params = hyperparams_from_json(side.at("hyperparams"));
  net.seed = side.at("seed").get<std::uint64_t>();
  if (net.variant == Variant::Coarse) {
    net.head_labels = {{1, -1}, {-1, -1}};
  } else {
    for (int c = 0; c < net.params.k_plus; ++c) net.head_labels.push_back({1, c});
    for (int c = 0; c < net.params.k_minus; ++c) net.head_labels.push_back({-1, c});
  }
  if (static_cast<std::int64_t>(net.head_labels.size()) != H)
    throw ConfigError(path.string() + ": head count disagrees with the sidecar hyperparameters");
  for (std::int64_t h = 0; h < H; ++h) {
    NeuronGroup g;
    g.weights.resize(m, d);
    g.biases.resize(m);
    r.f64s(g.weights.data(), static_cast<std::size_t>(m * d));
    r.f64s(g.biases.data(), static_cast<std::size_t>(m));
    net.heads.push_back(std::move(g));
  }
  return net;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace lgsim
