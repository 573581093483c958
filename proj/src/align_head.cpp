#include "ota/align_head.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "ota/errors.hpp"

namespace ota {

namespace {

constexpr std::array<char, 8> kHeadMagic = {'O', 'T', 'A', 'H', 'E', 'A', 'D', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xff));
}

void put_f64(std::ostream& out, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  for (int b = 0; b < 8; ++b) out.put(static_cast<char>((bits >> (8 * b)) & 0xff));
}

std::uint64_t get_le(std::istream& in, int bytes) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw ParseError(0, "checkpoint truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_le(in, 8)); }

}  // namespace

void save_head(const std::filesystem::path& path, const HeadParams<double>& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(kHeadMagic.data(), kHeadMagic.size());
  put_u32(out, static_cast<std::uint32_t>(p.d_vis()));
  put_u32(out, static_cast<std::uint32_t>(p.d_txt()));
  for (Eigen::Index r = 0; r < p.w.rows(); ++r)
    for (Eigen::Index c = 0; c < p.w.cols(); ++c) put_f64(out, p.w(r, c));
  put_f64(out, p.query.alpha_raw);
  put_f64(out, p.query.beta);
  put_f64(out, p.attr.alpha_raw);
  put_f64(out, p.attr.beta);
  put_f64(out, p.shared_affine ? 1.0 : 0.0);
}

HeadParams<double> load_head(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFound(path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kHeadMagic) throw ParseError(0, path.string() + ": not a head checkpoint");
  const auto d_vis = static_cast<Eigen::Index>(get_le(in, 4));
  const auto d_txt = static_cast<Eigen::Index>(get_le(in, 4));
  HeadParams<double> p;
  p.w.resize(d_txt, d_vis);
  for (Eigen::Index r = 0; r < d_txt; ++r)
    for (Eigen::Index c = 0; c < d_vis; ++c) p.w(r, c) = get_f64(in);
  p.query.alpha_raw = get_f64(in);
  p.query.beta = get_f64(in);
  p.attr.alpha_raw = get_f64(in);
  p.attr.beta = get_f64(in);
  p.shared_affine = get_f64(in) != 0.0;
  return p;
}

nlohmann::json to_json(const HeadParams<double>& p) {
  nlohmann::json w = nlohmann::json::array();
  for (Eigen::Index r = 0; r < p.w.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < p.w.cols(); ++c) row.push_back(p.w(r, c));
    w.push_back(row);
  }
  return {{"d_vis", p.d_vis()},
          {"d_txt", p.d_txt()},
          {"w", w},
          {"query", {{"alpha", p.query.alpha()}, {"beta", p.query.beta}}},
          {"attr", {{"alpha", p.attr.alpha()}, {"beta", p.attr.beta}}},
          {"shared_affine", p.shared_affine}};
}

}  // namespace ota
