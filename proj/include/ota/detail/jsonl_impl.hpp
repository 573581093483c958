#pragma once

#include <fstream>
#include <string>

namespace ota {

template <typename T, typename Decode>
std::vector<T> load_jsonl(const std::filesystem::path& path, LoadOptions options, LoadReport* report,
                          Decode&& decode) {
  if (!std::filesystem::exists(path)) throw FileNotFound(path.string());
  std::ifstream in(path);
  if (!in) throw FileNotFound(path.string());

  LoadReport local;
  LoadReport& rep = report ? *report : local;
  std::vector<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    try {
      out.push_back(decode(nlohmann::json::parse(line)));
      ++rep.loaded;
    } catch (const std::exception& e) {
      ParseError error(line_no, e.what());
      if (options.strict) throw error;
      ++rep.skipped;
      rep.errors.emplace_back(error.what());
    }
  }
  return out;
}

}  // namespace ota
