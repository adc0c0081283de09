#include "moma/text_encoder.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace moma {

std::vector<int> hash_caption_tokens(const std::string& caption, int n_buckets) {
  std::vector<int> out;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : word) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    out.push_back(static_cast<int>(h % static_cast<uint64_t>(n_buckets)));
    word.clear();
  };
  for (char ch : caption) {
    if (std::isalnum(static_cast<unsigned char>(ch)))
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    else
      flush();
  }
  flush();
  return out;
}

ToyTextEncoder::ToyTextEncoder(int embed_dim, std::vector<std::string> templates,
                               uint64_t seed, int n_buckets)
    : embed_dim_(embed_dim), n_buckets_(n_buckets), templates_(std::move(templates)) {
  MOMA_CHECK(embed_dim_ >= 1, "text encoder: embed_dim must be >= 1");
  MOMA_CHECK(n_buckets_ >= 1, "text encoder: n_buckets must be >= 1");
  RngStream rng = derive_stream(seed, "text-init");
  auto init = [&] { return 0.02 * rng.normal(); };
  const long n_templates = std::max<long>(1, static_cast<long>(templates_.size()));
  template_table_ = params_.create("text.templates", n_templates, embed_dim_, init);
  bucket_table_ = params_.create("text.buckets", n_buckets_, embed_dim_, init);
  null_row_ = params_.create("text.null", 1, embed_dim_, init);
}

TextEncoding ToyTextEncoder::encode(const std::string& caption) const {
  for (size_t i = 0; i < templates_.size(); ++i) {
    if (templates_[i] == caption) {
      return TextEncoding{
          gather_rows(template_table_, {static_cast<int>(i)}), false};
    }
  }
  std::vector<int> buckets = hash_caption_tokens(caption, n_buckets_);
  if (buckets.empty()) buckets.push_back(0);
  return TextEncoding{mean_rows(gather_rows(bucket_table_, buckets)), false};
}

TextEncoding ToyTextEncoder::null_embedding() const {
  return TextEncoding{slice_rows(null_row_, 0, 1), true};
}

VectorFileTextEncoder::VectorFileTextEncoder(const std::string& path) {
  std::ifstream is(path);
  MOMA_CHECK(is.good(), "text vectors: cannot open " + path);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    MOMA_CHECK(tab != std::string::npos,
               "text vectors: missing tab in line: " + line);
    std::string caption = line.substr(0, tab);
    std::istringstream vals(line.substr(tab + 1));
    std::vector<double> v;
    double x;
    while (vals >> x) v.push_back(x);
    MOMA_CHECK(!v.empty(), "text vectors: empty vector for: " + caption);
    if (embed_dim_ == 0) embed_dim_ = static_cast<int>(v.size());
    MOMA_CHECK(static_cast<int>(v.size()) == embed_dim_,
               "text vectors: inconsistent dimension for: " + caption);
    Mat m(1, embed_dim_);
    for (int i = 0; i < embed_dim_; ++i) m(0, i) = v[i];
    if (caption == "<null>")
      null_vec_ = m;
    else
      entries_.emplace_back(std::move(caption), std::move(m));
  }
  MOMA_CHECK(embed_dim_ > 0, "text vectors: no entries in " + path);
  if (null_vec_.size() == 0) null_vec_ = Mat::Zero(1, embed_dim_);
}

TextEncoding VectorFileTextEncoder::encode(const std::string& caption) const {
  for (const auto& [k, v] : entries_)
    if (k == caption) return TextEncoding{Tensor::constant(v), false};
  throw Error("text vectors: caption not found: " + caption);
}

TextEncoding VectorFileTextEncoder::null_embedding() const {
  return TextEncoding{Tensor::constant(null_vec_), true};
}

}  // namespace moma
