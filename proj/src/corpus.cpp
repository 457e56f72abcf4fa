#include "misent/corpus.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "misent/error.hpp"
#include "misent/rng.hpp"

namespace misent {

namespace {

// Strict UTF-8 decode: rejects overlong forms, surrogates and values past
// U+10FFFF so bad bytes surface as EncodingError instead of U+FFFD.
std::vector<char32_t> decode_utf8(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    char32_t cp = 0;
    std::size_t len = 0;
    if (b0 < 0x80) {
      cp = b0;
      len = 1;
    } else if ((b0 & 0xE0) == 0xC0) {
      cp = b0 & 0x1F;
      len = 2;
    } else if ((b0 & 0xF0) == 0xE0) {
      cp = b0 & 0x0F;
      len = 3;
    } else if ((b0 & 0xF8) == 0xF0) {
      cp = b0 & 0x07;
      len = 4;
    } else {
      throw EncodingError("invalid UTF-8 lead byte at offset " +
                          std::to_string(i));
    }
    if (i + len > text.size())
      throw EncodingError("truncated UTF-8 sequence at offset " +
                          std::to_string(i));
    for (std::size_t k = 1; k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80)
        throw EncodingError("invalid UTF-8 continuation byte at offset " +
                            std::to_string(i + k));
      cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr char32_t kMinByLen[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (len > 1 && cp < kMinByLen[len])
      throw EncodingError("overlong UTF-8 sequence at offset " +
                          std::to_string(i));
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
      throw EncodingError("invalid code point at offset " + std::to_string(i));
    out.push_back(cp);
    i += len;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string nfc_normalize(std::string_view text) {
  UErrorCode ec = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(ec);
  if (U_FAILURE(ec) || nfc == nullptr)
    throw EncodingError("ICU NFC normalizer unavailable");
  const icu::UnicodeString in =
      icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), text.size()));
  const icu::UnicodeString normalized = nfc->normalize(in, ec);
  if (U_FAILURE(ec)) throw EncodingError("NFC normalization failed");
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

bool is_ascii_punct(char32_t cp) {
  return cp < 0x80 && std::ispunct(static_cast<int>(cp)) != 0;
}

void emit_token(std::vector<std::string>& tokens,
                const std::vector<char32_t>& cps) {
  // Peel leading/trailing ASCII punctuation into their own single-char
  // tokens; the core keeps interior punctuation (e.g. "don't", "o'clock").
  std::size_t lo = 0, hi = cps.size();
  std::vector<char32_t> tail;
  while (lo < hi && is_ascii_punct(cps[lo])) {
    std::string t;
    append_utf8(t, cps[lo]);
    tokens.push_back(std::move(t));
    ++lo;
  }
  while (hi > lo && is_ascii_punct(cps[hi - 1])) {
    tail.push_back(cps[hi - 1]);
    --hi;
  }
  if (hi > lo) {
    std::string core;
    for (std::size_t i = lo; i < hi; ++i) append_utf8(core, cps[i]);
    tokens.push_back(std::move(core));
  }
  for (auto it = tail.rbegin(); it != tail.rend(); ++it) {
    std::string t;
    append_utf8(t, *it);
    tokens.push_back(std::move(t));
  }
}

bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) {
    return std::isspace(c) != 0;
  });
}

// Reads a whole file, validates UTF-8, splits into lines (LF or CRLF).
std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failure on " + path.string());
  std::string content = std::move(buf).str();
  decode_utf8(content);  // validation only
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= content.size()) {
    if (start == content.size()) {
      break;
    }
    std::size_t nl = content.find('\n', start);
    std::string line;
    if (nl == std::string::npos) {
      line = content.substr(start);
      start = content.size();
    } else {
      line = content.substr(start, nl - start);
      start = nl + 1;
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

TokenizedSentence tokenize_truncated(std::string_view text,
                                     std::size_t max_tokens,
                                     const char* what, std::size_t line_no) {
  TokenizedSentence s = tokenize(text);
  if (max_tokens > 0 && s.tokens.size() > max_tokens) {
    std::cerr << "warning: " << what << " line " << line_no << " truncated to "
              << max_tokens << " tokens (was " << s.tokens.size() << ")\n";
    s.tokens.resize(max_tokens);
  }
  return s;
}

double parse_score(std::string_view field, std::size_t line_no) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    throw ParseError("line " + std::to_string(line_no) +
                     ": malformed score field");
  if (!(value >= 0.0 && value <= 5.0))
    throw ParseError("line " + std::to_string(line_no) + ": score " +
                     std::string(field) + " outside [0, 5]");
  return value;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

}  // namespace

TokenizedSentence tokenize(std::string_view text) {
  decode_utf8(text);  // reject broken input before it reaches ICU
  const std::string normalized = nfc_normalize(text);
  const std::vector<char32_t> cps = decode_utf8(normalized);

  TokenizedSentence sentence;
  std::vector<char32_t> current;
  for (char32_t cp : cps) {
    const char32_t lower =
        cp < 0x110000 ? static_cast<char32_t>(u_tolower(static_cast<UChar32>(cp)))
                      : cp;
    if (u_isUWhiteSpace(static_cast<UChar32>(cp)) ||
        (cp < 0x80 && std::isspace(static_cast<int>(cp)))) {
      if (!current.empty()) {
        emit_token(sentence.tokens, current);
        current.clear();
      }
    } else {
      current.push_back(lower);
    }
  }
  if (!current.empty()) emit_token(sentence.tokens, current);

  if (sentence.tokens.empty())
    throw EmptySentence("no tokens after tokenization");
  return sentence;
}

std::string join_tokens(const TokenizedSentence& sentence) {
  std::string out;
  for (std::size_t i = 0; i < sentence.tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += sentence.tokens[i];
  }
  return out;
}

std::vector<TokenizedSentence> load_corpus(const std::filesystem::path& path,
                                           std::size_t max_tokens) {
  std::vector<TokenizedSentence> sentences;
  const std::vector<std::string> lines = read_lines(path);
  std::size_t line_no = 0;
  for (const std::string& line : lines) {
    ++line_no;
    if (is_blank(line)) continue;
    sentences.push_back(tokenize_truncated(line, max_tokens, "corpus", line_no));
  }
  if (sentences.empty())
    std::cerr << "warning: corpus " << path.string() << " has no sentences\n";
  return sentences;
}

std::vector<ScoredSentencePair> load_scored_pairs(
    const std::filesystem::path& path, std::size_t max_tokens) {
  std::vector<ScoredSentencePair> pairs;
  const std::vector<std::string> lines = read_lines(path);
  std::size_t line_no = 0;
  for (const std::string& line : lines) {
    ++line_no;
    if (is_blank(line)) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 3)
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       "`score<TAB>sentence_a<TAB>sentence_b`, got " +
                       std::to_string(fields.size()) + " fields");
    ScoredSentencePair pair;
    pair.score = parse_score(fields[0], line_no);
    try {
      pair.sentence_a =
          tokenize_truncated(fields[1], max_tokens, "pairs", line_no);
      pair.sentence_b =
          tokenize_truncated(fields[2], max_tokens, "pairs", line_no);
    } catch (const EmptySentence&) {
      throw ParseError("line " + std::to_string(line_no) + ": empty sentence");
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<LabeledSentence> load_labeled(const std::filesystem::path& path,
                                          std::size_t max_tokens) {
  std::vector<LabeledSentence> out;
  const std::vector<std::string> lines = read_lines(path);
  std::size_t line_no = 0;
  for (const std::string& line : lines) {
    ++line_no;
    if (is_blank(line)) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 2)
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected `label<TAB>sentence`");
    int label = 0;
    const char* first = fields[0].data();
    const char* last = fields[0].data() + fields[0].size();
    auto [ptr, ec] = std::from_chars(first, last, label);
    if (ec != std::errc() || ptr != last || label < 0)
      throw ParseError("line " + std::to_string(line_no) +
                       ": malformed label field");
    LabeledSentence item;
    item.label = label;
    try {
      item.sentence =
          tokenize_truncated(fields[1], max_tokens, "labeled", line_no);
    } catch (const EmptySentence&) {
      throw ParseError("line " + std::to_string(line_no) + ": empty sentence");
    }
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<std::string> build_vocab(
    const std::vector<TokenizedSentence>& sentences) {
  std::set<std::string> unique;
  for (const auto& s : sentences)
    for (const auto& t : s.tokens) unique.insert(t);
  return {unique.begin(), unique.end()};
}

Batch make_single_batch(std::vector<TokenizedSentence> sentences,
                        std::vector<std::size_t> ids) {
  Batch batch;
  batch.sentences = std::move(sentences);
  batch.ids = std::move(ids);
  batch.l_max = 0;
  for (const auto& s : batch.sentences)
    batch.l_max = std::max(batch.l_max, s.length());
  batch.mask = Matrix<std::uint8_t>(batch.sentences.size(), batch.l_max, 0);
  for (std::size_t s = 0; s < batch.sentences.size(); ++s)
    for (std::size_t i = 0; i < batch.sentences[s].length(); ++i)
      batch.mask(s, i) = 1;
  return batch;
}

std::vector<Batch> make_batches(const std::vector<TokenizedSentence>& sentences,
                                std::size_t batch_size, std::uint64_t seed,
                                bool shuffle) {
  if (batch_size == 0) throw InvalidConfig("batch_size must be positive");
  if (sentences.size() < 2)
    throw BatchTooSmall("need at least 2 sentences, got " +
                        std::to_string(sentences.size()));

  std::vector<std::size_t> order(sentences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order);
  }

  std::vector<std::vector<std::size_t>> chunks;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, order.size());
    chunks.emplace_back(order.begin() + start, order.begin() + end);
  }
  // Keep every sentence but never emit a trailing 1-sentence batch.
  if (chunks.size() > 1 && chunks.back().size() < 2) {
    auto tail = std::move(chunks.back());
    chunks.pop_back();
    for (std::size_t id : tail) chunks.back().push_back(id);
  }

  std::vector<Batch> batches;
  batches.reserve(chunks.size());
  for (auto& chunk : chunks) {
    std::vector<TokenizedSentence> batch_sentences;
    batch_sentences.reserve(chunk.size());
    for (std::size_t id : chunk) batch_sentences.push_back(sentences[id]);
    batches.push_back(
        make_single_batch(std::move(batch_sentences), std::move(chunk)));
  }
  return batches;
}

}  // namespace misent
