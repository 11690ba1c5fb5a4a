#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rwkvas {

inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kEosToken = 2;
inline constexpr int kReservedTokens = 3;

/// Byte-level vocabulary: reserved ids {PAD, BOS, EOS}, then the known bytes in ascending order.
class Vocabulary {
 public:
  Vocabulary();

  static Vocabulary from_corpus(std::span<const std::string> texts);
  /// Every byte value; no input can contain an unknown byte.
  static Vocabulary full_bytes();
  static Vocabulary from_bytes(std::vector<unsigned char> bytes);

  int size() const { return static_cast<int>(bytes_.size()) + kReservedTokens; }
  bool contains(unsigned char b) const { return to_id_[b] >= 0; }
  /// Throws IndexError for a byte outside the vocabulary.
  int id(unsigned char b) const;
  /// Throws IndexError for reserved or out-of-range ids.
  unsigned char byte(int id) const;
  const std::vector<unsigned char>& bytes() const { return bytes_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.bytes_ == b.bytes_; }

 private:
  std::vector<unsigned char> bytes_;
  std::array<int, 256> to_id_;
};

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab);
/// Reserved ids are dropped.
std::string detokenize(std::span<const int> tokens, const Vocabulary& vocab);
/// BOS + tokenize(text) + EOS.
std::vector<int> encode_sample(std::string_view text, const Vocabulary& vocab);

/// Samples are blank-line-separated blocks; lines inside a block are joined with one space.
std::vector<std::string> parse_corpus(std::string_view text);
/// Throws std::runtime_error when the file cannot be read.
std::vector<std::string> load_corpus(const std::filesystem::path& path);

using TokenSequence = std::vector<int>;

struct DatasetSplit {
  std::vector<TokenSequence> train;
  std::vector<TokenSequence> validation;
  std::vector<TokenSequence> test;
  std::uint64_t split_seed = 0;
};

/// Shuffles with `seed`, then gives validation and test floor(n/10) sequences each (at least one)
/// and the remainder to train. Throws std::invalid_argument for fewer than 3 sequences.
DatasetSplit split_dataset(std::vector<TokenSequence> sequences, std::uint64_t seed);

}  // namespace rwkvas
