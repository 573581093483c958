#include "ota/supervision.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <map>

#include "ota/text.hpp"

namespace ota {

using nlohmann::json;

std::size_t TextBatch::block_size(std::size_t query_slot) const {
  return static_cast<std::size_t>(attr_valid.segment(query_slot * a_max, a_max).count());
}

void validate_sampler_config(const SamplerConfig& cfg) {
  if (cfg.q_max < 1 || cfg.a_max < 1) throw InputError("sampler q_max and a_max must be >= 1");
}

TextBatch layout_batch(std::span<const SlotSpec> slots, std::size_t q_max, std::size_t a_max) {
  if (slots.size() > q_max) throw InputError("more query slots than q_max");
  TextBatch tb;
  tb.q_max = q_max;
  tb.a_max = a_max;
  tb.query_texts.assign(q_max, "");
  tb.attr_texts.assign(q_max * a_max, "");
  tb.query_valid = Mask::Constant(static_cast<Eigen::Index>(q_max), false);
  tb.attr_valid = Mask::Constant(static_cast<Eigen::Index>(q_max * a_max), false);
  tb.query_origin.assign(q_max, -1);
  for (std::size_t j = 0; j < slots.size(); ++j) {
    tb.query_texts[j] = slots[j].text;
    tb.query_valid[static_cast<Eigen::Index>(j)] = true;
    tb.query_origin[j] = slots[j].origin;
    const std::size_t n = std::min(a_max, slots[j].attributes.size());
    for (std::size_t k = 0; k < n; ++k) {
      tb.attr_texts[tb.attr_slot(j, k)] = slots[j].attributes[k];
      tb.attr_valid[static_cast<Eigen::Index>(tb.attr_slot(j, k))] = true;
    }
  }
  return tb;
}

BinaryMatrix attribute_targets(const BinaryMatrix& m_q, const BinaryMatrix& m_map) {
  const Eigen::MatrixXi product = m_q.cast<int>() * m_map.cast<int>();
  return (product.array() > 0).cast<std::uint8_t>();
}

CorrespondenceSet build_correspondence(const AggregatedSample& sample, const TextBatch& tb) {
  const auto q_max = static_cast<Eigen::Index>(tb.q_max);
  const auto n_attr = static_cast<Eigen::Index>(tb.q_max * tb.a_max);

  std::map<int, std::size_t> slot_of_origin;
  for (std::size_t j = 0; j < tb.q_max; ++j)
    if (tb.query_valid[static_cast<Eigen::Index>(j)] && tb.query_origin[j] >= 0) slot_of_origin[tb.query_origin[j]] = j;

  // Distinct boxes in first-appearance order, with the slots they answer.
  std::vector<Box> objects;
  std::vector<std::vector<std::size_t>> object_slots;
  for (const auto& gt : sample.ground_truth) {
    const auto it = slot_of_origin.find(static_cast<int>(gt.query_index));
    if (it == slot_of_origin.end()) continue;
    const auto found = std::find(objects.begin(), objects.end(), gt.box);
    std::size_t row = static_cast<std::size_t>(found - objects.begin());
    if (found == objects.end()) {
      objects.push_back(gt.box);
      object_slots.emplace_back();
    }
    object_slots[row].push_back(it->second);
  }

  CorrespondenceSet cs;
  cs.image_size = sample.image_size;
  cs.m_q = BinaryMatrix::Zero(static_cast<Eigen::Index>(objects.size()), q_max);
  for (std::size_t i = 0; i < objects.size(); ++i) {
    cs.gt_boxes.push_back(to_normalized(objects[i], sample.image_size));
    for (std::size_t j : object_slots[i]) cs.m_q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1;
  }
  cs.m_map = BinaryMatrix::Zero(q_max, n_attr);
  for (Eigen::Index j = 0; j < q_max; ++j) {
    if (!tb.query_valid[j]) continue;
    for (std::size_t k = 0; k < tb.a_max; ++k) {
      const auto slot = static_cast<Eigen::Index>(tb.attr_slot(static_cast<std::size_t>(j), k));
      if (tb.attr_valid[slot]) cs.m_map(j, slot) = 1;
    }
  }
  cs.m_a = attribute_targets(cs.m_q, cs.m_map);
  return cs;
}

namespace {

std::vector<std::string> attribute_texts(const QueryEntry& q, std::size_t a_max) {
  std::vector<std::string> out;
  for (const auto& a : limit_attributes(q.attributes, a_max)) out.push_back(a.description);
  return out;
}

}  // namespace

SupervisionBatch sample_ovad(const AggregatedSample& sample, std::span<const std::string> vocabulary,
                             const SamplerConfig& cfg, Rng& rng) {
  validate_sampler_config(cfg);
  for (const auto& q : sample.queries)
    if (q.kind != QueryKind::category)
      throw InputError("sample '" + sample.image_id + "': ovad sampling needs category queries");
  if (sample.queries.size() > cfg.q_max)
    throw InputError("sample '" + sample.image_id + "': " + std::to_string(sample.queries.size()) +
                     " positive categories exceed q_max " + std::to_string(cfg.q_max));

  std::vector<std::string> vocab_norm;
  vocab_norm.reserve(vocabulary.size());
  for (const auto& v : vocabulary) vocab_norm.push_back(normalize_text(v));

  std::vector<bool> is_positive(vocab_norm.size(), false);
  std::vector<SlotSpec> slots;
  for (std::size_t k = 0; k < sample.queries.size(); ++k) {
    const std::string text = normalize_text(sample.queries[k].text);
    const auto it = std::find(vocab_norm.begin(), vocab_norm.end(), text);
    if (it == vocab_norm.end())
      throw InputError("sample '" + sample.image_id + "': category '" + text + "' missing from vocabulary");
    is_positive[static_cast<std::size_t>(it - vocab_norm.begin())] = true;
    slots.push_back({sample.queries[k].text, attribute_texts(sample.queries[k], cfg.a_max), static_cast<int>(k)});
  }

  std::vector<std::size_t> negatives;
  for (std::size_t v = 0; v < vocab_norm.size(); ++v)
    if (!is_positive[v]) negatives.push_back(v);
  if (!negatives.empty()) {
    const auto drawn = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(negatives.size())));
    const std::size_t room = cfg.q_max - slots.size();
    for (std::size_t pick : rng.choose(negatives.size(), std::min(drawn, room))) {
      const std::string& text = vocabulary[negatives[pick]];
      slots.push_back({text, {text}, -1});
    }
  }
  if (cfg.shuffle) rng.shuffle(slots);

  SupervisionBatch batch;
  batch.text = layout_batch(slots, cfg.q_max, cfg.a_max);
  batch.correspondence = build_correspondence(sample, batch.text);
  return batch;
}

SupervisionBatch sample_rsvg(const AggregatedSample& sample, const SamplerConfig& cfg, Rng& rng) {
  validate_sampler_config(cfg);
  const std::size_t k = sample.queries.size();
  if (k == 0) throw InputError("sample '" + sample.image_id + "': rsvg sampling needs at least one expression");
  const auto n = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(std::min(k, cfg.q_max))));
  std::vector<std::size_t> picked = rng.choose(k, n);
  if (!cfg.shuffle) std::sort(picked.begin(), picked.end());

  std::vector<SlotSpec> slots;
  for (std::size_t q : picked)
    slots.push_back({sample.queries[q].text, attribute_texts(sample.queries[q], cfg.a_max), static_cast<int>(q)});

  SupervisionBatch batch;
  batch.text = layout_batch(slots, cfg.q_max, cfg.a_max);
  batch.correspondence = build_correspondence(sample, batch.text);
  return batch;
}

SupervisionBatch full_batch(const AggregatedSample& sample, std::size_t q_max, std::size_t a_max) {
  std::vector<SlotSpec> slots;
  for (std::size_t q = 0; q < sample.queries.size(); ++q)
    slots.push_back({sample.queries[q].text, attribute_texts(sample.queries[q], a_max), static_cast<int>(q)});
  SupervisionBatch batch;
  batch.text = layout_batch(slots, q_max, a_max);
  batch.correspondence = build_correspondence(sample, batch.text);
  return batch;
}

std::vector<std::string> verify_consistency(const CorrespondenceSet& cs, const TextBatch& tb) {
  std::vector<std::string> out;
  const auto q_max = static_cast<Eigen::Index>(tb.q_max);
  const auto n_attr = static_cast<Eigen::Index>(tb.q_max * tb.a_max);
  const auto n_obj = static_cast<Eigen::Index>(cs.gt_boxes.size());
  auto at = [](Eigen::Index i, Eigen::Index j) { return "(" + std::to_string(i) + "," + std::to_string(j) + ")"; };

  if (tb.query_texts.size() != tb.q_max || tb.attr_texts.size() != tb.q_max * tb.a_max ||
      tb.query_valid.size() != q_max || tb.attr_valid.size() != n_attr || tb.query_origin.size() != tb.q_max) {
    out.push_back("text batch: layout sizes disagree with q_max/a_max");
    return out;
  }
  if (cs.m_q.rows() != n_obj || cs.m_q.cols() != q_max || cs.m_a.rows() != n_obj || cs.m_a.cols() != n_attr ||
      cs.m_map.rows() != q_max || cs.m_map.cols() != n_attr) {
    out.push_back("correspondence: matrix shapes disagree with the batch layout");
    return out;
  }

  for (Eigen::Index j = 0; j < q_max; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    if (!tb.query_valid[j] && !tb.query_texts[ju].empty()) out.push_back("text batch: padded query slot " + std::to_string(j) + " holds text");
    bool seen_invalid = false;
    for (std::size_t k = 0; k < tb.a_max; ++k) {
      const auto slot = static_cast<Eigen::Index>(tb.attr_slot(ju, k));
      const bool valid = tb.attr_valid[slot];
      if (valid && !tb.query_valid[j]) out.push_back("text batch: attribute slot " + std::to_string(slot) + " valid under padded query " + std::to_string(j));
      if (valid && seen_invalid) out.push_back("text batch: valid attribute slots of query " + std::to_string(j) + " are not a prefix");
      if (!valid && !tb.attr_texts[static_cast<std::size_t>(slot)].empty()) out.push_back("text batch: padded attribute slot " + std::to_string(slot) + " holds text");
      seen_invalid = seen_invalid || !valid;
    }
  }

  for (Eigen::Index i = 0; i < n_obj; ++i)
    for (Eigen::Index j = 0; j < q_max; ++j)
      if (cs.m_q(i, j) > 1 || (cs.m_q(i, j) == 1 && !tb.query_valid[j])) out.push_back("m_q: one in padded column at " + at(i, j));

  for (Eigen::Index j = 0; j < q_max; ++j)
    for (Eigen::Index k = 0; k < n_attr; ++k) {
      const bool in_block = k / static_cast<Eigen::Index>(tb.a_max) == j;
      const bool expected = in_block && tb.attr_valid[k] && tb.query_valid[j];
      if ((cs.m_map(j, k) == 1) != expected) out.push_back("m_map: wrong entry at " + at(j, k));
    }

  const BinaryMatrix expected_a = attribute_targets(cs.m_q, cs.m_map);
  for (Eigen::Index i = 0; i < n_obj; ++i)
    for (Eigen::Index k = 0; k < n_attr; ++k)
      if (cs.m_a(i, k) != expected_a(i, k)) out.push_back("m_a: differs from step(m_q*m_map) at " + at(i, k));
  return out;
}

namespace {
json matrix_to_json(const BinaryMatrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(static_cast<int>(m(i, j)));
    rows.push_back(row);
  }
  return rows;
}

json mask_to_json(const Mask& mask) {
  json out = json::array();
  for (Eigen::Index i = 0; i < mask.size(); ++i) out.push_back(static_cast<bool>(mask[i]));
  return out;
}
}  // namespace

json to_json(const TextBatch& tb) {
  return {{"q_max", tb.q_max},
          {"a_max", tb.a_max},
          {"query_texts", tb.query_texts},
          {"attr_texts", tb.attr_texts},
          {"query_valid", mask_to_json(tb.query_valid)},
          {"attr_valid", mask_to_json(tb.attr_valid)},
          {"query_origin", tb.query_origin}};
}

json to_json(const CorrespondenceSet& cs) {
  json boxes = json::array();
  for (const auto& b : cs.gt_boxes) boxes.push_back(box_to_json(b));
  return {{"m_q", matrix_to_json(cs.m_q)},
          {"m_a", matrix_to_json(cs.m_a)},
          {"m_map", matrix_to_json(cs.m_map)},
          {"gt_boxes", boxes}};
}

namespace {
constexpr std::array<char, 8> kMatrixMagic = {'O', 'T', 'A', 'B', 'M', 'A', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in.get())) << (8 * b);
  return v;
}
}  // namespace

void write_binary_matrix(const std::filesystem::path& path, const BinaryMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(kMatrixMagic.data(), kMatrixMagic.size());
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size()));
}

BinaryMatrix read_binary_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFound(path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMatrixMagic) throw ParseError(0, path.string() + ": bad matrix magic");
  const std::uint32_t rows = get_u32(in);
  const std::uint32_t cols = get_u32(in);
  BinaryMatrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size()));
  if (!in) throw ParseError(0, path.string() + ": truncated matrix data");
  return m;
}

}  // namespace ota
