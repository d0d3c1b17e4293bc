#pragma once

// Dataset abstraction and the per-iteration source-mixing sampler. Each draw
// first picks a source by its configured rate (sampling with replacement),
// then a sample uniformly within that source, so a batch mixes sources at
// the per-sample level. Mix manifests are plain text:
//
//   name<TAB>rate<TAB>kind<TAB>directory
//
// where each directory holds DPR1 samples plus the dataset manifest written
// by generate_dataset ("file<TAB>kind" header + one line per sample).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "denseprior/errors.hpp"
#include "denseprior/rng.hpp"
#include "denseprior/scenegen.hpp"
#include "denseprior/tensor.hpp"

namespace dp {

enum class SourceKind { synthetic, pseudo };

struct SourceSpec {
  std::string name;
  double rate = 1.0;  // in (0, 1]; rates across a mix sum to 1
  SourceKind kind = SourceKind::synthetic;
  std::string directory;
  std::vector<std::string> files;  // sample filenames relative to directory
};

// Reads the first manifest column of a dataset directory into `files`.
inline std::vector<std::string> read_dataset_manifest(const std::string& dir) {
  const std::string path = dir + "/manifest.tsv";
  std::ifstream f(path);
  if (!f) throw io_error("cannot open dataset manifest: " + path);
  std::vector<std::string> files;
  std::string line;
  size_t offset = 0;
  bool header = true;
  while (std::getline(f, line)) {
    const size_t line_at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw format_error("manifest line is not file<TAB>kind: " + path, line_at);
    if (header) {
      header = false;
      if (line.substr(0, tab) != "file")
        throw format_error("manifest missing file<TAB>kind header: " + path,
                           line_at);
      continue;
    }
    files.push_back(line.substr(0, tab));
  }
  return files;
}

inline SourceSpec load_source(const std::string& name, double rate,
                              SourceKind kind, const std::string& directory) {
  SourceSpec s;
  s.name = name;
  s.rate = rate;
  s.kind = kind;
  s.directory = directory;
  s.files = read_dataset_manifest(directory);
  return s;
}

// Parses a mix manifest (name<TAB>rate<TAB>kind<TAB>directory per line) and
// loads each source's sample list from its dataset manifest.
inline std::vector<SourceSpec> parse_mix_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open mix manifest: " + path);
  std::vector<SourceSpec> out;
  std::string line;
  size_t offset = 0;
  while (std::getline(f, line)) {
    const size_t line_at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    size_t start = 0;
    for (;;) {
      const size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 4)
      throw format_error(
          "mix manifest line is not name<TAB>rate<TAB>kind<TAB>directory: " +
              path,
          line_at);
    double rate = 0.0;
    try {
      size_t used = 0;
      rate = std::stod(cols[1], &used);
      if (used != cols[1].size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw format_error("mix manifest rate is not a number: " + cols[1],
                         line_at);
    }
    SourceKind kind;
    if (cols[2] == "synthetic")
      kind = SourceKind::synthetic;
    else if (cols[2] == "pseudo")
      kind = SourceKind::pseudo;
    else
      throw format_error("mix manifest kind must be synthetic or pseudo, got: " +
                             cols[2],
                         line_at);
    out.push_back(load_source(cols[0], rate, kind, cols[3]));
  }
  return out;
}

namespace detail {

inline void validate_sources(const std::vector<SourceSpec>& sources) {
  if (sources.empty()) throw config_error("mix needs at least one source");
  double sum = 0.0;
  for (const SourceSpec& s : sources) {
    if (!(s.rate > 0.0 && s.rate <= 1.0))
      throw config_error("source rate must be in (0, 1]: " + s.name);
    if (s.files.empty())
      throw config_error("source has no samples: " + s.name);
    sum += s.rate;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw config_error("source rates must sum to 1, got " + std::to_string(sum));
}

}  // namespace detail

struct MixDraw {
  int source = 0;  // index into the source list
  int index = 0;   // sample index within the source
};

// The seeded, infinite (source, sample) stream.
class MixSampler {
 public:
  MixSampler(std::vector<SourceSpec> sources, Rng rng)
      : sources_(std::move(sources)), rng_(rng) {
    detail::validate_sources(sources_);
    double acc = 0.0;
    for (const SourceSpec& s : sources_) {
      acc += s.rate;
      cumulative_.push_back(acc);
    }
    cumulative_.back() = 1.0;  // guard the float tail of the partition
  }

  MixDraw next() {
    const double u = rng_.uniform();
    int src = 0;
    while (src + 1 < int(sources_.size()) && u >= cumulative_[size_t(src)])
      ++src;
    MixDraw d;
    d.source = src;
    d.index = int(rng_.below(sources_[size_t(src)].files.size()));
    return d;
  }

  const std::vector<SourceSpec>& sources() const { return sources_; }
  const SourceSpec& source(int i) const { return sources_[size_t(i)]; }

 private:
  std::vector<SourceSpec> sources_;
  std::vector<double> cumulative_;
  Rng rng_;
};

// Per-item provenance carried through a batch.
struct Provenance {
  std::string source;
  SourceKind kind = SourceKind::synthetic;
  int index = 0;
};

// A fixed-size batch with channel-plane tensors stacked across items.
struct Batch {
  TensorF rgb;            // (B, 3, H, W)
  TensorF depth;          // (B, H, W)
  TensorF normal;         // (B, 3, H, W)
  TensorF matte;          // (B, H, W)
  Tensor<uint8_t> mask;   // (B, H, W)
  std::vector<Provenance> provenance;  // length B

  int size() const { return int(provenance.size()); }
};

using SampleLoader = std::function<DenseSample(const SourceSpec&, int)>;

// Reads the drawn sample from its source directory.
inline DenseSample load_sample_from_disk(const SourceSpec& src, int index) {
  return read_sample(src.directory + "/" + src.files[size_t(index)]);
}

// Training revisits each sample many times; this loader keeps decoded samples
// in memory instead of re-reading rasters from disk on every draw. The cap
// bounds the cache to a few hundred MB of desk-scale samples; past it, extra
// samples fall back to plain disk reads.
inline SampleLoader make_caching_loader(size_t max_entries = 8192) {
  auto cache = std::make_shared<
      std::map<std::pair<std::string, int>, DenseSample>>();
  return [cache, max_entries](const SourceSpec& src, int index) {
    const auto key = std::make_pair(src.directory + "\x1f" + src.name, index);
    const auto it = cache->find(key);
    if (it != cache->end()) return it->second;
    DenseSample s = load_sample_from_disk(src, index);
    if (cache->size() < max_entries) cache->emplace(key, s);
    return s;
  };
}

// Assembles fixed-size batches from the mix stream. All samples in a batch
// must share one resolution.
class Batcher {
 public:
  Batcher(MixSampler sampler, int batch_size,
          SampleLoader loader = load_sample_from_disk)
      : sampler_(std::move(sampler)),
        batch_size_(batch_size),
        loader_(std::move(loader)) {
    if (batch_size < 1) throw usage_error("batch size must be at least 1");
  }

  Batch next() {
    Batch b;
    b.provenance.reserve(size_t(batch_size_));
    int h = 0, w = 0;
    for (int i = 0; i < batch_size_; ++i) {
      const MixDraw d = sampler_.next();
      const SourceSpec& src = sampler_.source(d.source);
      DenseSample s = loader_(src, d.index);
      if (i == 0) {
        h = s.height();
        w = s.width();
        b.rgb = TensorF({batch_size_, 3, h, w});
        b.depth = TensorF({batch_size_, h, w});
        b.normal = TensorF({batch_size_, 3, h, w});
        b.matte = TensorF({batch_size_, h, w});
        b.mask = Tensor<uint8_t>({batch_size_, h, w});
      } else if (s.height() != h || s.width() != w) {
        throw shape_error("batch mixes sample resolutions: " +
                          std::to_string(s.width()) + "x" +
                          std::to_string(s.height()) + " vs " +
                          std::to_string(w) + "x" + std::to_string(h));
      }
      const size_t plane = size_t(h) * size_t(w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const size_t px = size_t(y) * size_t(w) + size_t(x);
          for (int c = 0; c < 3; ++c) {
            b.rgb.v[(size_t(i) * 3 + size_t(c)) * plane + px] = s.rgb.at(y, x, c);
            b.normal.v[(size_t(i) * 3 + size_t(c)) * plane + px] =
                s.normal.at(y, x, c);
          }
          b.depth.v[size_t(i) * plane + px] = s.depth.at(y, x);
          b.matte.v[size_t(i) * plane + px] = s.matte.at(y, x);
          b.mask.v[size_t(i) * plane + px] = s.mask.at(y, x);
        }
      b.provenance.push_back(Provenance{src.name, src.kind, d.index});
    }
    return b;
  }

  const MixSampler& sampler() const { return sampler_; }

 private:
  MixSampler sampler_;
  int batch_size_;
  SampleLoader loader_;
};

}  // namespace dp
