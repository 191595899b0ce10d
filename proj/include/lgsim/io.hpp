#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "lgsim/dictionary.hpp"
#include "lgsim/network.hpp"
#include "lgsim/sample.hpp"

namespace lgsim {

namespace fs = std::filesystem;
using nlohmann::json;

json to_json(const HyperParams& p);
HyperParams hyperparams_from_json(const json& j);

// Flat binary formats: 8-byte magic, int64 header fields, little-endian f64 payload.
void save_dictionary(const fs::path& path, const Dictionary& dict);
Dictionary load_dictionary(const fs::path& path);
json to_json(const Dictionary& dict);
Dictionary dictionary_from_json(const json& j);

void save_batch(const fs::path& path, const Batch& batch);
Batch load_batch(const fs::path& path);
json to_json(const Sample& s);
Sample sample_from_json(const json& j);
json to_json(const Batch& b);
Batch batch_from_json(const json& j);

/// Writes `path` plus a JSON sidecar `path.json` holding hyperparameters and seed.
void save_network(const fs::path& path, const Network& net);
Network load_network(const fs::path& path);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace lgsim
