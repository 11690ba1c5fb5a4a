#include "rwkvas/data.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "rwkvas/random.hpp"
#include "rwkvas/tensor.hpp"

namespace rwkvas {

Vocabulary::Vocabulary() { to_id_.fill(-1); }

Vocabulary Vocabulary::from_bytes(std::vector<unsigned char> bytes) {
  std::sort(bytes.begin(), bytes.end());
  bytes.erase(std::unique(bytes.begin(), bytes.end()), bytes.end());
  Vocabulary v;
  v.bytes_ = std::move(bytes);
  for (std::size_t i = 0; i < v.bytes_.size(); ++i) v.to_id_[v.bytes_[i]] = static_cast<int>(i) + kReservedTokens;
  return v;
}

Vocabulary Vocabulary::from_corpus(std::span<const std::string> texts) {
  std::array<bool, 256> seen{};
  for (const auto& t : texts)
    for (unsigned char c : t) seen[c] = true;
  std::vector<unsigned char> bytes;
  for (int b = 0; b < 256; ++b)
    if (seen[static_cast<std::size_t>(b)]) bytes.push_back(static_cast<unsigned char>(b));
  return from_bytes(std::move(bytes));
}

Vocabulary Vocabulary::full_bytes() {
  std::vector<unsigned char> bytes(256);
  for (int b = 0; b < 256; ++b) bytes[static_cast<std::size_t>(b)] = static_cast<unsigned char>(b);
  return from_bytes(std::move(bytes));
}

int Vocabulary::id(unsigned char b) const {
  const int id = to_id_[b];
  if (id < 0) throw IndexError("byte " + std::to_string(static_cast<int>(b)) + " is not in the vocabulary");
  return id;
}

unsigned char Vocabulary::byte(int id) const {
  if (id < kReservedTokens || id >= size()) {
    throw IndexError("token id " + std::to_string(id) + " does not map to a byte");
  }
  return bytes_[static_cast<std::size_t>(id - kReservedTokens)];
}

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(vocab.id(c));
  return ids;
}

std::string detokenize(std::span<const int> tokens, const Vocabulary& vocab) {
  std::string out;
  out.reserve(tokens.size());
  for (int id : tokens) {
    if (id < kReservedTokens) continue;
    out.push_back(static_cast<char>(vocab.byte(id)));
  }
  return out;
}

std::vector<int> encode_sample(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(text.size() + 2);
  ids.push_back(kBosToken);
  for (unsigned char c : text) ids.push_back(vocab.id(c));
  ids.push_back(kEosToken);
  return ids;
}

std::vector<std::string> parse_corpus(std::string_view text) {
  std::vector<std::string> samples;
  std::string current;
  std::istringstream in{std::string(text)};
  std::string line;
  auto flush = [&] {
    if (!current.empty()) samples.push_back(std::move(current));
    current.clear();
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) {
      flush();
      continue;
    }
    const auto last = line.find_last_not_of(" \t");
    if (!current.empty()) current.push_back(' ');
    current.append(line, first, last - first + 1);
  }
  flush();
  return samples;
}

std::vector<std::string> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_corpus(ss.str());
}

DatasetSplit split_dataset(std::vector<TokenSequence> sequences, std::uint64_t seed) {
  const std::size_t n = sequences.size();
  if (n < 3) {
    throw std::invalid_argument("split_dataset: need at least 3 sequences, got " + std::to_string(n));
  }
  Rng rng(seed);
  // Fisher-Yates with an explicit draw so the permutation only depends on the engine.
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(sequences[i], sequences[j]);
  }
  const std::size_t held_out = std::max<std::size_t>(1, n / 10);
  DatasetSplit split;
  split.split_seed = seed;
  const auto begin = std::make_move_iterator(sequences.begin());
  const auto train_end = begin + static_cast<std::ptrdiff_t>(n - 2 * held_out);
  const auto val_end = train_end + static_cast<std::ptrdiff_t>(held_out);
  split.train.assign(begin, train_end);
  split.validation.assign(train_end, val_end);
  split.test.assign(val_end, std::make_move_iterator(sequences.end()));
  return split;
}

}  // namespace rwkvas
