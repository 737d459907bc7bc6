#pragma once

// Column corpus format: one "char<TAB>label" line per character, blank line
// terminates a sentence. Prediction inputs may omit the label column.

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "turner/errors.hpp"
#include "turner/tagspace.hpp"
#include "turner/utf8.hpp"

namespace turner {

struct Sentence {
  std::u32string chars;

  int length() const { return static_cast<int>(chars.size()); }
  std::u32string substr(int start, int end) const {  // inclusive span
    return chars.substr(static_cast<std::size_t>(start), static_cast<std::size_t>(end - start + 1));
  }
};

struct Example {
  Sentence x;
  LabelSequence gold;
};

inline std::vector<Example> read_corpus(const std::string& path, const LabelScheme& scheme,
                                        int max_seq_len = 0, bool labels_required = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file: " + path);

  std::vector<Example> corpus;
  Example cur;
  int line_no = 0;
  std::string line;

  const auto flush = [&] {
    if (cur.x.length() == 0) return;
    if (max_seq_len > 0 && cur.x.length() > max_seq_len)
      throw DataError(path + ": sentence ending at line " + std::to_string(line_no) +
                      " exceeds max length " + std::to_string(max_seq_len));
    corpus.push_back(std::move(cur));
    cur = Example{};
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    const auto tab = line.find('\t');
    const std::string chunk = tab == std::string::npos ? line : line.substr(0, tab);
    const std::u32string cps = decode_utf8(chunk);
    if (cps.size() != 1)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected a single character, got \"" +
                      chunk + "\"");
    cur.x.chars.push_back(cps[0]);
    if (tab == std::string::npos) {
      if (labels_required)
        throw DataError(path + ":" + std::to_string(line_no) + ": missing label column");
      cur.gold.push_back(LabelScheme::kOutsideId);
    } else {
      const std::string name = line.substr(tab + 1);
      const int id = scheme.find_label(name);
      if (id < 0)
        throw MismatchError(path + ":" + std::to_string(line_no) + ": label \"" + name +
                            "\" not in scheme");
      cur.gold.push_back(id);
    }
  }
  flush();
  return corpus;
}

inline void write_corpus(const std::string& path, const std::vector<Sentence>& sentences,
                         const std::vector<LabelSequence>& labels, const LabelScheme& scheme) {
  if (sentences.size() != labels.size()) throw MismatchError("write_corpus: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file: " + path);
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto& x = sentences[i];
    const auto& seq = labels[i];
    if (static_cast<std::size_t>(x.length()) != seq.size())
      throw MismatchError("write_corpus: sentence/label length mismatch at sentence " +
                          std::to_string(i));
    for (int j = 0; j < x.length(); ++j)
      out << encode_utf8(x.chars[static_cast<std::size_t>(j)]) << '\t'
          << scheme.label_name(seq[static_cast<std::size_t>(j)]) << '\n';
    out << '\n';
  }
}

}  // namespace turner
