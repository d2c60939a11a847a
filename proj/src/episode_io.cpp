#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "deta/episodes.hpp"
#include "deta/error.hpp"

namespace deta {

namespace {

using nlohmann::json;

constexpr int kEpisodeFormatVersion = 1;

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.contains(key)) throw SchemaError(where + ": unknown key '" + key + "'");
}

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(where + ": missing key '" + key + "'");
  return *it;
}

int read_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw SchemaError(where + ": expected an integer");
  return v.get<int>();
}

Vec read_vec(const json& v, std::size_t dim, const std::string& where) {
  if (!v.is_array()) throw SchemaError(where + ": expected an array of reals");
  if (v.size() != dim)
    throw SchemaError(where + ": dimension " + std::to_string(v.size()) + ", expected " + std::to_string(dim));
  Vec out;
  out.reserve(dim);
  for (const auto& x : v) {
    if (!x.is_number()) throw SchemaError(where + ": non-numeric entry");
    out.push_back(x.get<double>());
  }
  return out;
}

int read_label(const json& v, int way, const std::string& where) {
  const int c = read_int(v, where);
  if (c < 0 || c >= way) throw SchemaError(where + ": unknown class index " + std::to_string(c));
  return c;
}

}  // namespace

TaskEpisode parse_episode_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("episode file: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("episode file: top level must be an object");
  reject_unknown_keys(doc, {"version", "feature_dim", "way", "support", "queries"}, "episode file");

  if (read_int(require(doc, "version", "episode file"), "version") != kEpisodeFormatVersion)
    throw SchemaError("episode file: unsupported version");
  TaskEpisode ep;
  ep.feature_dim = read_int(require(doc, "feature_dim", "episode file"), "feature_dim");
  ep.way = read_int(require(doc, "way", "episode file"), "way");
  if (ep.feature_dim < 1) throw SchemaError("episode file: feature_dim must be >= 1");
  if (ep.way < 1) throw SchemaError("episode file: way must be >= 1");
  const auto dim = static_cast<std::size_t>(ep.feature_dim);

  const json& support = require(doc, "support", "episode file");
  if (!support.is_array()) throw SchemaError("episode file: 'support' must be an array");
  for (const auto& item : support) {
    if (!item.is_object()) throw SchemaError("support entry must be an object");
    SupportSample s;
    s.sample_id = read_int(require(item, "id", "support entry"), "support id");
    const std::string who = "support sample " + std::to_string(s.sample_id);
    reject_unknown_keys(item, {"id", "label", "image_feature", "regions", "ground_truth_label", "noise_tag"}, who);
    s.label = read_label(require(item, "label", who), ep.way, who);
    s.ground_truth_label = s.label;
    if (item.contains("ground_truth_label")) s.ground_truth_label = read_label(item["ground_truth_label"], ep.way, who);
    if (item.contains("noise_tag")) {
      if (!item["noise_tag"].is_string()) throw SchemaError(who + ": noise_tag must be a string");
      try {
        s.noise_tag = noise_tag_from_string(item["noise_tag"].get<std::string>());
      } catch (const InvalidParameter& e) {
        throw SchemaError(who + ": " + e.what());
      }
    }
    s.image_feature = read_vec(require(item, "image_feature", who), dim, who + " image_feature");
    const json& regions = require(item, "regions", who);
    if (!regions.is_array() || regions.empty()) throw SchemaError(who + ": 'regions' must be a non-empty array");
    for (std::size_t j = 0; j < regions.size(); ++j)
      s.region_features.push_back(read_vec(regions[j], dim, who + " region " + std::to_string(j)));
    ep.support.push_back(std::move(s));
  }

  const json& queries = require(doc, "queries", "episode file");
  if (!queries.is_array()) throw SchemaError("episode file: 'queries' must be an array");
  for (const auto& item : queries) {
    if (!item.is_object()) throw SchemaError("query entry must be an object");
    QuerySample q;
    q.sample_id = read_int(require(item, "id", "query entry"), "query id");
    const std::string who = "query " + std::to_string(q.sample_id);
    reject_unknown_keys(item, {"id", "label", "image_feature"}, who);
    q.ground_truth_label = read_label(require(item, "label", who), ep.way, who);
    q.image_feature = read_vec(require(item, "image_feature", who), dim, who + " image_feature");
    ep.queries.push_back(std::move(q));
  }

  std::set<int> ids;
  for (const auto& s : ep.support)
    if (!ids.insert(s.sample_id).second) throw SchemaError("duplicate support id " + std::to_string(s.sample_id));
  try {
    validate_episode(ep);
  } catch (const InvalidParameter& e) {
    throw SchemaError(e.what());
  }
  return ep;
}

TaskEpisode load_episode_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open episode file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_episode_json(buf.str());
}

std::string episode_to_json(const TaskEpisode& ep) {
  json doc;
  doc["version"] = kEpisodeFormatVersion;
  doc["feature_dim"] = ep.feature_dim;
  doc["way"] = ep.way;
  doc["support"] = json::array();
  for (const auto& s : ep.support) {
    json item;
    item["id"] = s.sample_id;
    item["label"] = s.label;
    item["image_feature"] = s.image_feature;
    item["regions"] = s.region_features;
    if (s.ground_truth_label != s.label) item["ground_truth_label"] = s.ground_truth_label;
    if (s.noise_tag != NoiseTag::clean) item["noise_tag"] = to_string(s.noise_tag);
    doc["support"].push_back(std::move(item));
  }
  doc["queries"] = json::array();
  for (const auto& q : ep.queries) {
    json item;
    item["id"] = q.sample_id;
    item["label"] = q.ground_truth_label;
    item["image_feature"] = q.image_feature;
    doc["queries"].push_back(std::move(item));
  }
  return doc.dump();
}

void save_episode_file(const TaskEpisode& ep, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write episode file " + path.string());
  out << episode_to_json(ep) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace deta
