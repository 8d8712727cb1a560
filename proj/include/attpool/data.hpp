#ifndef ATTPOOL_DATA_HPP
#define ATTPOOL_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "attpool/ops.hpp"
#include "attpool/tensor.hpp"

namespace attpool {

// Binary feature-map format: magic "AFM1", u32 W, u32 H, u32 D
// (little-endian), then W*H*D f32 little-endian, row-major with channel
// fastest. Tiny images use the same container with D=3, signal masks D=1.
Tensor<float> read_feature_map(const std::string& path);
void write_feature_map(const std::string& path, const Tensor<float>& map);

// Synthetic dataset layout: class-specific signal descriptors on a few grid
// cells, class-agnostic distractors (drawn from a pool shared verbatim by
// all classes) on distractor_fraction of cells, near-zero noise elsewhere.
struct SyntheticSpec {
  std::string variant = "featuremap";  // featuremap | image
  std::size_t classes = 8;
  std::size_t train_per_class = 20;
  std::size_t test_per_class = 10;
  std::size_t grid_w = 4;
  std::size_t grid_h = 4;
  std::size_t dim = 8;   // descriptor dim; image variant uses 3
  std::size_t cell = 2;  // pixels per grid cell (image variant)
  double signal_strength = 1.0;
  double signal_fraction = 0.125;  // fraction of cells carrying class signal
  std::size_t distractor_pool = 32;
  double distractor_fraction = 0.5;
  double noise_sigma = 0.1;
  std::uint64_t seed = 1;

  void validate() const;  // throws ValueError
};

// Separation diagnostics computed from the generated training set: mean
// pairwise cosine between class-mean GAP descriptors (all cells) and between
// class-mean signal-only descriptors. Shared distractors drag the former up.
struct SynthStats {
  double mean_gap_cosine = 0;
  double mean_signal_cosine = 0;
};

SynthStats synth_generate(const SyntheticSpec& spec, const std::string& out_dir);

struct SampleRef {
  std::string path;  // relative to dataset root
  std::size_t label = 0;
  std::string split;  // train | test
};

struct Dataset {
  std::string root;
  std::string variant;
  std::size_t classes = 0;
  std::size_t grid_w = 0, grid_h = 0, dim = 0;
  std::vector<SampleRef> samples;

  std::vector<std::size_t> split_indices(const std::string& split) const;
};

// Reads manifest.tsv (lines `path<TAB>label<TAB>split`) and dataset.meta.
// Rejects out-of-range labels and missing files.
Dataset load_dataset(const std::string& dir);

std::string mask_path_for(const std::string& sample_path);

// Attention mass on ground-truth signal cells. The mask is an AFM1 map with
// D=1 and {0,1} values at the feature-grid resolution.
template <class T>
double attention_quality(const Tensor<T>& weights, const Tensor<float>& mask) {
  if (mask.numel() != weights.numel())
    throw ShapeError("attention_quality: mask size " +
                     std::to_string(mask.numel()) + " != weight count " +
                     std::to_string(weights.numel()));
  bool any = false;
  double mass = 0;
  for (std::size_t i = 0; i < weights.numel(); ++i)
    if (mask[i] > 0.5f) {
      any = true;
      mass += static_cast<double>(weights[i]);
    }
  if (!any) throw ValueError("attention_quality: mask has no signal cell");
  return mass;
}

}  // namespace attpool

#endif
