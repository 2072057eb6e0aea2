#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "lgpt/common.hpp"
#include "lgpt/tokenizer.hpp"

namespace lgpt {

// Reads a corpus from a UTF-8 text file, or from every *.txt file in a
// directory (sorted by name, joined with blank lines).
inline std::string load_corpus_text(const std::string& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw DataError("corpus: path does not exist: " + path);
  auto read_file = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("corpus: cannot read " + p.string());
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  if (fs::is_regular_file(path)) return read_file(path);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_regular_file() && entry.path().extension() == ".txt")
      files.push_back(entry.path());
  if (files.empty())
    throw DataError("corpus: no .txt files under directory " + path);
  std::sort(files.begin(), files.end());
  std::string joined;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (i) joined += "\n\n";
    joined += read_file(files[i]);
  }
  return joined;
}

// ---------------------------------------------------------------------------
// Deterministic batch sampler over one tokenized id stream. The tail
// val_fraction of the stream is held out for validation; training batches
// draw sequential non-overlapping (context+1)-token windows whose order is
// reshuffled every epoch. Batches are a pure function of (seed, step).
// ---------------------------------------------------------------------------

class CorpusBatcher {
 public:
  struct Batch {
    std::size_t batch = 0, seq_len = 0;
    std::vector<int> inputs;   // batch * seq_len, row-major
    std::vector<int> targets;  // inputs shifted by one
  };

  CorpusBatcher(std::vector<int> ids, std::size_t context, std::size_t batch,
                double val_fraction, std::uint64_t seed)
      : ids_(std::move(ids)),
        context_(context),
        batch_(batch),
        seed_(seed) {
    if (context_ == 0 || batch_ == 0)
      throw ConfigError("batcher: context and batch must be positive");
    if (val_fraction < 0.0 || val_fraction >= 1.0)
      throw ConfigError("batcher: val fraction must be in [0,1)");
    if (ids_.size() <= context_ + 1)
      throw DataError("batcher: corpus of " + std::to_string(ids_.size()) +
                      " tokens is too small for context " +
                      std::to_string(context_));
    val_tokens_ = std::size_t(double(ids_.size()) * val_fraction);
    train_tokens_ = ids_.size() - val_tokens_;
    const std::size_t window = context_ + 1;
    train_windows_ = train_tokens_ / window;
    val_windows_ = val_tokens_ >= window ? val_tokens_ / window : 0;
    if (train_windows_ < batch_)
      throw DataError("batcher: " + std::to_string(train_windows_) +
                      " training windows cannot fill a batch of " +
                      std::to_string(batch_));
  }

  std::size_t train_tokens() const { return train_tokens_; }
  std::size_t val_tokens() const { return val_tokens_; }
  std::size_t train_windows() const { return train_windows_; }
  std::size_t val_windows() const { return val_windows_; }
  std::size_t steps_per_epoch() const { return train_windows_ / batch_; }
  std::size_t context() const { return context_; }
  std::size_t batch_size() const { return batch_; }

  // Window order for one epoch; exposed so coverage is testable.
  std::vector<std::size_t> epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order(train_windows_);
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::mt19937_64 rng(seed_ ^ (0x9e3779b97f4a7c15ull * (epoch + 1)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  Batch make_batches(std::size_t step) const {
    const std::size_t spe = steps_per_epoch();
    const std::size_t epoch = step / spe;
    const std::size_t index = step % spe;
    auto order = epoch_order(epoch);
    Batch out;
    out.batch = batch_;
    out.seq_len = context_;
    out.inputs.reserve(batch_ * context_);
    out.targets.reserve(batch_ * context_);
    const std::size_t window = context_ + 1;
    for (std::size_t b = 0; b < batch_; ++b) {
      const std::size_t w = order[index * batch_ + b];
      const int* base = ids_.data() + w * window;
      out.inputs.insert(out.inputs.end(), base, base + context_);
      out.targets.insert(out.targets.end(), base + 1, base + window);
    }
    return out;
  }

  // i-th held-out validation window (sequential, never shuffled).
  Batch validation_batch(std::size_t i) const {
    if (i >= val_windows_)
      throw IndexError("batcher: validation window " + std::to_string(i) +
                       " out of range [0," + std::to_string(val_windows_) +
                       ")");
    const std::size_t window = context_ + 1;
    const int* base = ids_.data() + train_tokens_ + i * window;
    Batch out;
    out.batch = 1;
    out.seq_len = context_;
    out.inputs.assign(base, base + context_);
    out.targets.assign(base + 1, base + window);
    return out;
  }

 private:
  std::vector<int> ids_;
  std::size_t context_, batch_;
  std::uint64_t seed_;
  std::size_t train_tokens_ = 0, val_tokens_ = 0;
  std::size_t train_windows_ = 0, val_windows_ = 0;
};

}  // namespace lgpt
