#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "ota/data_model.hpp"
#include "ota/rng.hpp"

namespace ota {

using BinaryMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// Per-iteration text layout. Query slot i owns attribute slots
/// [i*a_max, (i+1)*a_max); valid attributes form a prefix of each block.
struct TextBatch {
  std::size_t q_max = 0;
  std::size_t a_max = 0;
  std::vector<std::string> query_texts;  // q_max, "" when padded
  std::vector<std::string> attr_texts;   // q_max * a_max, "" when padded
  Mask query_valid;
  Mask attr_valid;
  /// Original query index per slot; -1 for sampled negatives and padding.
  std::vector<int> query_origin;

  std::size_t attr_slot(std::size_t query_slot, std::size_t k) const { return query_slot * a_max + k; }
  std::size_t valid_query_count() const { return static_cast<std::size_t>(query_valid.count()); }
  /// Number of valid attribute slots in query slot's block.
  std::size_t block_size(std::size_t query_slot) const;
};

/// Binary supervision for one batch item. Rows are distinct ground-truth
/// boxes; a box listed under several queries is one object with several
/// ones in its m_q row.
struct CorrespondenceSet {
  BinaryMatrix m_q;    // n_obj x q_max
  BinaryMatrix m_a;    // n_obj x (q_max * a_max)
  BinaryMatrix m_map;  // q_max x (q_max * a_max)
  std::vector<Box> gt_boxes;  // normalized frame
  ImageSize image_size;

  std::size_t object_count() const { return gt_boxes.size(); }
};

struct SupervisionBatch {
  TextBatch text;
  CorrespondenceSet correspondence;
};

struct SamplerConfig {
  std::size_t q_max = 60;
  std::size_t a_max = 10;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

void validate_sampler_config(const SamplerConfig& cfg);

/// One query slot before layout.
struct SlotSpec {
  std::string text;
  std::vector<std::string> attributes;
  int origin = -1;
};

/// Lays slots out in order, truncating attributes to a_max and padding.
TextBatch layout_batch(std::span<const SlotSpec> slots, std::size_t q_max, std::size_t a_max);

/// m_q from the sample's ground truth routed through query_origin; ground
/// truth whose query has no slot is dropped. m_map marks each valid block
/// prefix and m_a = step(m_q * m_map).
CorrespondenceSet build_correspondence(const AggregatedSample& sample, const TextBatch& batch);

/// Every positive category, plus Uniform{1..|negatives|} negatives clipped so
/// the total fits q_max. Throws InputError when positives exceed q_max or
/// a positive is missing from the vocabulary.
SupervisionBatch sample_ovad(const AggregatedSample& sample, std::span<const std::string> vocabulary,
                             const SamplerConfig& cfg, Rng& rng);

/// Uniform{1..min(K, q_max)} expressions without replacement. Ground truth of
/// unsampled expressions is dropped for this draw.
SupervisionBatch sample_rsvg(const AggregatedSample& sample, const SamplerConfig& cfg, Rng& rng);

/// All queries in original order, no negatives, no shuffling. Used for
/// evaluation and decoding.
SupervisionBatch full_batch(const AggregatedSample& sample, std::size_t q_max, std::size_t a_max);

/// Checks the layout and matrix invariants; one message per violation.
std::vector<std::string> verify_consistency(const CorrespondenceSet& cs, const TextBatch& batch);

/// step(m_q * m_map), computed with integer arithmetic.
BinaryMatrix attribute_targets(const BinaryMatrix& m_q, const BinaryMatrix& m_map);

nlohmann::json to_json(const TextBatch& batch);
nlohmann::json to_json(const CorrespondenceSet& cs);

/// Row-major 8-bit dump behind a 16-byte header: 8-byte magic "OTABMAT1",
/// rows and cols as little-endian uint32.
void write_binary_matrix(const std::filesystem::path& path, const BinaryMatrix& m);
BinaryMatrix read_binary_matrix(const std::filesystem::path& path);

}  // namespace ota
