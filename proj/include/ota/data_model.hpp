#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ota/errors.hpp"
#include "ota/geometry.hpp"

namespace ota {

/// One verbatim attribute of a query text.
struct Attribute {
  std::string aspect;
  std::string description;
  std::vector<std::string> evidence;
  double confidence = 1.0;

  friend bool operator==(const Attribute&, const Attribute&) = default;
};

enum class QueryKind { category, expression };

struct QueryEntry {
  std::string text;
  QueryKind kind = QueryKind::expression;
  std::vector<Attribute> attributes;

  friend bool operator==(const QueryEntry&, const QueryEntry&) = default;
};

struct GroundTruth {
  Box box;  // pixel frame
  std::size_t query_index = 0;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct GroundingTriplet {
  std::string image_id;
  ImageSize image_size;
  std::string expression;
  Box box;
};

/// One image with its query set and query-labeled boxes.
struct AggregatedSample {
  std::string image_id;
  ImageSize image_size;
  std::vector<QueryEntry> queries;
  std::vector<GroundTruth> ground_truth;

  /// K=0 samples are representable but carry no supervision.
  bool usable() const { return !queries.empty(); }

  friend bool operator==(const AggregatedSample&, const AggregatedSample&) = default;
};

enum class TaskKind { ovad, rsvg };

struct DatasetManifest {
  std::string name;
  TaskKind task_kind = TaskKind::rsvg;
  std::size_t sample_count = 0;
  std::optional<std::vector<std::string>> category_vocabulary;
};

struct CategorizedBox {
  Box box;
  std::string category;
};

/// Throws InputError when the triplet breaks its invariants.
void validate_triplet(const GroundingTriplet& triplet);

/// Throws InputError naming the first broken invariant.
void validate_sample(const AggregatedSample& sample);

void validate_manifest(const DatasetManifest& manifest);

/// The category itself as its only attribute.
Attribute self_attribute(const std::string& text);

/// Groups triplets per image. Identical normalized expressions within an
/// image share one query; queries keep first-appearance order.
std::vector<AggregatedSample> aggregate_image_level(std::span<const GroundingTriplet> triplets);

/// The single-expression reformulation: one query, one box.
AggregatedSample naive_reformulate(const GroundingTriplet& triplet);

AggregatedSample from_detection_annotations(const std::string& image_id, ImageSize image_size,
                                            std::span<const CategorizedBox> boxes);

/// At most a_max attributes: the first category attribute first, the rest in
/// their original order.
std::vector<Attribute> limit_attributes(const std::vector<Attribute>& attributes, std::size_t a_max);

/// Inverse of aggregation: one triplet per ground-truth entry, in GT order.
std::vector<GroundingTriplet> flatten(const AggregatedSample& sample);

std::vector<AggregatedSample> usable_samples(std::span<const AggregatedSample> samples,
                                             std::size_t* skipped = nullptr);

// JSONL persistence.

struct LoadOptions {
  bool strict = true;
};

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t skipped = 0;
  std::vector<std::string> errors;
};

nlohmann::json to_json(const Attribute& attribute);
nlohmann::json to_json(const AggregatedSample& sample);
nlohmann::json to_json(const GroundingTriplet& triplet);
Attribute attribute_from_json(const nlohmann::json& j);
AggregatedSample sample_from_json(const nlohmann::json& j);
GroundingTriplet triplet_from_json(const nlohmann::json& j);

nlohmann::json box_to_json(const Box& box);
Box box_from_json(const nlohmann::json& j, Frame frame = Frame::pixel);

std::vector<AggregatedSample> load_samples_jsonl(const std::filesystem::path& path, LoadOptions options = {},
                                                 LoadReport* report = nullptr);
void save_samples_jsonl(const std::filesystem::path& path, std::span<const AggregatedSample> samples);

std::vector<GroundingTriplet> load_triplets_jsonl(const std::filesystem::path& path, LoadOptions options = {},
                                                  LoadReport* report = nullptr);
void save_triplets_jsonl(const std::filesystem::path& path, std::span<const GroundingTriplet> triplets);

/// Reads every non-blank line of a JSONL file; parse failures go through
/// the strict/lenient policy. Shared by the other loaders.
template <typename T, typename Decode>
std::vector<T> load_jsonl(const std::filesystem::path& path, LoadOptions options, LoadReport* report,
                          Decode&& decode);

}  // namespace ota

#include "ota/detail/jsonl_impl.hpp"
