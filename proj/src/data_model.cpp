#include "ota/data_model.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>

#include "ota/text.hpp"

namespace ota {

using nlohmann::json;

namespace {

std::string kind_name(QueryKind kind) { return kind == QueryKind::category ? "category" : "expression"; }

QueryKind kind_from_name(const std::string& name) {
  if (name == "category") return QueryKind::category;
  if (name == "expression") return QueryKind::expression;
  throw InputError("unknown query kind '" + name + "'");
}

ImageSize size_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw InputError("image_size must be [w,h]");
  return {j.at(0).get<int>(), j.at(1).get<int>()};
}

}  // namespace

void validate_triplet(const GroundingTriplet& t) {
  if (t.image_size.width <= 0 || t.image_size.height <= 0)
    throw InputError("image '" + t.image_id + "': image_size must be positive");
  if (trim(t.expression).empty()) throw InputError("image '" + t.image_id + "': empty expression");
  if (t.box.frame != Frame::pixel || !inside_image(t.box, t.image_size))
    throw InputError("image '" + t.image_id + "': box outside image bounds");
}

void validate_sample(const AggregatedSample& s) {
  const std::string where = "sample '" + s.image_id + "': ";
  if (s.image_size.width <= 0 || s.image_size.height <= 0) throw InputError(where + "image_size must be positive");
  std::set<std::string> seen;
  for (const auto& q : s.queries) {
    const std::string norm = normalize_text(q.text);
    if (norm.empty()) throw InputError(where + "empty query text");
    if (!seen.insert(norm).second) throw InputError(where + "duplicate query '" + norm + "'");
    if (q.kind == QueryKind::category &&
        (q.attributes.size() != 1 || q.attributes.front().description != q.text))
      throw InputError(where + "category query '" + q.text + "' must carry exactly its self-attribute");
  }
  std::vector<bool> referenced(s.queries.size(), false);
  for (const auto& gt : s.ground_truth) {
    if (gt.query_index >= s.queries.size()) throw InputError(where + "query_index out of range");
    if (!inside_image(gt.box, s.image_size)) throw InputError(where + "box outside image bounds");
    referenced[gt.query_index] = true;
  }
  for (std::size_t k = 0; k < referenced.size(); ++k)
    if (!referenced[k]) throw InputError(where + "query " + std::to_string(k) + " has no ground truth");
}

void validate_manifest(const DatasetManifest& m) {
  if (m.task_kind == TaskKind::ovad && !m.category_vocabulary)
    throw InputError("manifest '" + m.name + "': ovad datasets need a category vocabulary");
  if (m.task_kind == TaskKind::rsvg && m.category_vocabulary)
    throw InputError("manifest '" + m.name + "': rsvg datasets carry no category vocabulary");
  if (m.category_vocabulary) {
    std::set<std::string> seen;
    for (const auto& c : *m.category_vocabulary)
      if (!seen.insert(normalize_text(c)).second)
        throw InputError("manifest '" + m.name + "': duplicate category '" + c + "'");
  }
}

Attribute self_attribute(const std::string& text) { return {"category", text, {text}, 1.0}; }

std::vector<AggregatedSample> aggregate_image_level(std::span<const GroundingTriplet> triplets) {
  std::vector<AggregatedSample> samples;
  std::unordered_map<std::string, std::size_t> sample_of;
  std::vector<std::unordered_map<std::string, std::size_t>> query_of;

  for (const auto& t : triplets) {
    validate_triplet(t);
    auto [it, inserted] = sample_of.try_emplace(t.image_id, samples.size());
    if (inserted) {
      samples.push_back({t.image_id, t.image_size, {}, {}});
      query_of.emplace_back();
    }
    AggregatedSample& sample = samples[it->second];
    if (sample.image_size != t.image_size)
      throw InputError("inconsistent image_size for image_id '" + t.image_id + "'");

    const std::string text = normalize_text(t.expression);
    auto& queries = query_of[it->second];
    auto [qit, new_query] = queries.try_emplace(text, sample.queries.size());
    if (new_query) sample.queries.push_back({text, QueryKind::expression, {}});
    sample.ground_truth.push_back({t.box, qit->second});
  }
  return samples;
}

AggregatedSample naive_reformulate(const GroundingTriplet& t) {
  validate_triplet(t);
  AggregatedSample sample{t.image_id, t.image_size, {}, {}};
  sample.queries.push_back({normalize_text(t.expression), QueryKind::expression, {}});
  sample.ground_truth.push_back({t.box, 0});
  return sample;
}

AggregatedSample from_detection_annotations(const std::string& image_id, ImageSize image_size,
                                            std::span<const CategorizedBox> boxes) {
  AggregatedSample sample{image_id, image_size, {}, {}};
  std::unordered_map<std::string, std::size_t> query_of;
  for (const auto& b : boxes) {
    const std::string text = normalize_text(b.category);
    if (text.empty()) throw InputError("image '" + image_id + "': empty category");
    auto [it, inserted] = query_of.try_emplace(text, sample.queries.size());
    if (inserted) sample.queries.push_back({text, QueryKind::category, {self_attribute(text)}});
    sample.ground_truth.push_back({b.box, it->second});
  }
  return sample;
}

std::vector<Attribute> limit_attributes(const std::vector<Attribute>& attributes, std::size_t a_max) {
  if (attributes.size() <= a_max) return attributes;
  std::vector<Attribute> kept;
  kept.reserve(a_max);
  const auto category = std::find_if(attributes.begin(), attributes.end(),
                                     [](const Attribute& a) { return a.aspect == "category"; });
  if (category != attributes.end() && a_max > 0) kept.push_back(*category);
  for (auto it = attributes.begin(); it != attributes.end() && kept.size() < a_max; ++it)
    if (it != category) kept.push_back(*it);
  return kept;
}

std::vector<GroundingTriplet> flatten(const AggregatedSample& sample) {
  std::vector<GroundingTriplet> out;
  out.reserve(sample.ground_truth.size());
  for (const auto& gt : sample.ground_truth)
    out.push_back({sample.image_id, sample.image_size, sample.queries.at(gt.query_index).text, gt.box});
  return out;
}

std::vector<AggregatedSample> usable_samples(std::span<const AggregatedSample> samples, std::size_t* skipped) {
  std::vector<AggregatedSample> out;
  std::size_t dropped = 0;
  for (const auto& s : samples) {
    if (s.usable())
      out.push_back(s);
    else
      ++dropped;
  }
  if (skipped) *skipped = dropped;
  return out;
}

json box_to_json(const Box& box) { return json::array({box.x1, box.y1, box.x2, box.y2}); }

Box box_from_json(const json& j, Frame frame) {
  if (!j.is_array() || j.size() != 4) throw InputError("box must be [x1,y1,x2,y2]");
  Box box{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>(), frame};
  if (!box.valid()) throw InputError("box has x2 < x1 or y2 < y1");
  return box;
}

json to_json(const Attribute& a) {
  json j = {{"aspect", a.aspect}, {"description", a.description}, {"confidence", a.confidence}};
  if (!a.evidence.empty()) j["evidence"] = a.evidence;
  return j;
}

Attribute attribute_from_json(const json& j) {
  Attribute a;
  a.aspect = j.at("aspect").get<std::string>();
  a.description = j.at("description").get<std::string>();
  a.confidence = j.value("confidence", 1.0);
  if (j.contains("evidence")) a.evidence = j.at("evidence").get<std::vector<std::string>>();
  return a;
}

json to_json(const AggregatedSample& s) {
  json queries = json::array();
  for (const auto& q : s.queries) {
    json attrs = json::array();
    for (const auto& a : q.attributes) attrs.push_back(to_json(a));
    queries.push_back({{"text", q.text}, {"kind", kind_name(q.kind)}, {"attributes", attrs}});
  }
  json gt = json::array();
  for (const auto& g : s.ground_truth) gt.push_back({{"box", box_to_json(g.box)}, {"query_index", g.query_index}});
  return {{"image_id", s.image_id},
          {"image_size", {s.image_size.width, s.image_size.height}},
          {"queries", queries},
          {"gt", gt}};
}

AggregatedSample sample_from_json(const json& j) {
  AggregatedSample s;
  s.image_id = j.at("image_id").get<std::string>();
  s.image_size = size_from_json(j.at("image_size"));
  for (const auto& q : j.at("queries")) {
    QueryEntry entry{q.at("text").get<std::string>(), kind_from_name(q.at("kind").get<std::string>()), {}};
    if (q.contains("attributes"))
      for (const auto& a : q.at("attributes")) entry.attributes.push_back(attribute_from_json(a));
    s.queries.push_back(std::move(entry));
  }
  for (const auto& g : j.at("gt")) s.ground_truth.push_back({box_from_json(g.at("box")), g.at("query_index").get<std::size_t>()});
  if (s.usable()) validate_sample(s);
  return s;
}

json to_json(const GroundingTriplet& t) {
  return {{"image_id", t.image_id},
          {"image_size", {t.image_size.width, t.image_size.height}},
          {"expression", t.expression},
          {"box", box_to_json(t.box)}};
}

GroundingTriplet triplet_from_json(const json& j) {
  GroundingTriplet t{j.at("image_id").get<std::string>(), size_from_json(j.at("image_size")),
                     j.at("expression").get<std::string>(), box_from_json(j.at("box"))};
  validate_triplet(t);
  return t;
}

namespace {
template <typename T>
void save_lines(const std::filesystem::path& path, std::span<const T> items) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& item : items) out << to_json(item).dump() << '\n';
}
}  // namespace

std::vector<AggregatedSample> load_samples_jsonl(const std::filesystem::path& path, LoadOptions options,
                                                 LoadReport* report) {
  return load_jsonl<AggregatedSample>(path, options, report, sample_from_json);
}

void save_samples_jsonl(const std::filesystem::path& path, std::span<const AggregatedSample> samples) {
  save_lines(path, samples);
}

std::vector<GroundingTriplet> load_triplets_jsonl(const std::filesystem::path& path, LoadOptions options,
                                                  LoadReport* report) {
  return load_jsonl<GroundingTriplet>(path, options, report, triplet_from_json);
}

void save_triplets_jsonl(const std::filesystem::path& path, std::span<const GroundingTriplet> triplets) {
  save_lines(path, triplets);
}

}  // namespace ota
