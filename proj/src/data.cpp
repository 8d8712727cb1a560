#include "attpool/data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "attpool/rng.hpp"

namespace fs = std::filesystem;

namespace attpool {

namespace {

std::vector<double> unit_vector(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double norm2 = 0;
  for (std::size_t j = 0; j < d; ++j) {
    v[j] = rng.normal();
    norm2 += v[j] * v[j];
  }
  const double norm = std::sqrt(norm2);
  if (norm > 0)
    for (auto& x : v) x /= norm;
  else
    v[0] = 1.0;
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  if (na <= 0 || nb <= 0) return 0;
  return dot / std::sqrt(na * nb);
}

double mean_pairwise_cosine(const std::vector<std::vector<double>>& means) {
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < means.size(); ++a)
    for (std::size_t b = a + 1; b < means.size(); ++b) {
      sum += cosine(means[a], means[b]);
      ++count;
    }
  return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace

std::string mask_path_for(const std::string& sample_path) {
  const auto dot = sample_path.rfind('.');
  const std::string stem =
      dot == std::string::npos ? sample_path : sample_path.substr(0, dot);
  return stem + ".mask.afm";
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw ValueError("synth spec: need >= 2 classes");
  if (variant != "featuremap" && variant != "image")
    throw ValueError("synth spec: unknown variant '" + variant + "'");
  if (distractor_fraction < 0 || distractor_fraction >= 1)
    throw ValueError("synth spec: distractor_fraction must be in [0,1)");
  if (signal_fraction <= 0 || signal_fraction > 1)
    throw ValueError("synth spec: signal_fraction must be in (0,1]");
  if (grid_w < 1 || grid_h < 1 || dim < 1 || train_per_class < 1 ||
      test_per_class < 1 || distractor_pool < 1 || cell < 1)
    throw ValueError("synth spec: all counts must be >= 1");
}

SynthStats synth_generate(const SyntheticSpec& spec, const std::string& out_dir) {
  spec.validate();
  const bool image = spec.variant == "image";
  const std::size_t dd = image ? 3 : spec.dim;
  const std::size_t n_cells = spec.grid_w * spec.grid_h;
  const std::size_t k_sig = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(spec.signal_fraction *
                                              static_cast<double>(n_cells))));
  std::size_t k_dis = static_cast<std::size_t>(std::lround(
      spec.distractor_fraction * static_cast<double>(n_cells)));
  if (k_sig >= n_cells)
    throw ValueError("synth_generate: signal_fraction leaves no free cell");
  k_dis = std::min(k_dis, n_cells - k_sig);

  Rng rng = Rng::substream(spec.seed, "synth");

  // Class prototypes lean toward a hidden direction g and distractors lean
  // away from it, so "signal vs clutter" is a learnable distinction (the
  // class-agnostic half of the attention head) while class identity still
  // requires the class-specific half. Without the lean, whether a single
  // linear filter can split prototypes from the pool is a coin flip of the
  // draw, which makes attention quality swing wildly across seeds.
  const std::vector<double> lean = unit_vector(rng, dd);
  auto leaned = [&](double toward) {
    std::vector<double> v = unit_vector(rng, dd);
    double norm2 = 0;
    for (std::size_t j = 0; j < dd; ++j) {
      v[j] += toward * lean[j];
      norm2 += v[j] * v[j];
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    return v;
  };
  std::vector<std::vector<double>> protos(spec.classes);
  for (auto& p : protos) p = leaned(0.6);
  std::vector<std::vector<double>> pool(spec.distractor_pool);
  for (auto& p : pool) p = leaned(-0.6);

  fs::create_directories(out_dir);
  std::ofstream manifest(fs::path(out_dir) / "manifest.tsv");
  if (!manifest) throw DataError("synth_generate: cannot write manifest in " + out_dir);

  std::vector<std::vector<double>> gap_means(spec.classes,
                                             std::vector<double>(dd, 0.0));
  std::vector<std::vector<double>> sig_means(spec.classes,
                                             std::vector<double>(dd, 0.0));

  std::size_t counter = 0;
  for (const char* split : {"train", "test"}) {
    const std::size_t per_class =
        std::string(split) == "train" ? spec.train_per_class : spec.test_per_class;
    for (std::size_t c = 0; c < spec.classes; ++c)
      for (std::size_t s = 0; s < per_class; ++s) {
        // Cell descriptors: background noise, then signal and distractors on
        // disjoint random cells.
        Tensor<double> cells({spec.grid_w, spec.grid_h, dd});
        for (std::size_t t = 0; t < cells.numel(); ++t)
          cells[t] = 0.1 * spec.noise_sigma * rng.normal();
        const auto where = rng.sample_without_replacement(n_cells, k_sig + k_dis);
        Tensor<float> mask({spec.grid_w, spec.grid_h, 1});
        for (std::size_t t = 0; t < where.size(); ++t) {
          const std::size_t gx = where[t] / spec.grid_h;
          const std::size_t gy = where[t] % spec.grid_h;
          // Distractor picks are skewed toward the front of the pool so a
          // handful of shared patterns recur across every class; uniform
          // picks would average the shared component away in the GAP mean.
          const double u = rng.uniform();
          const std::size_t pick = std::min(
              spec.distractor_pool - 1,
              static_cast<std::size_t>(u * u * static_cast<double>(
                                                   spec.distractor_pool)));
          const std::vector<double>& base = t < k_sig ? protos[c] : pool[pick];
          for (std::size_t j = 0; j < dd; ++j)
            cells(gx, gy, j) = spec.signal_strength * base[j] +
                               spec.noise_sigma * rng.normal();
          if (t < k_sig) mask(gx, gy, 0) = 1.0f;
        }

        if (std::string(split) == "train") {
          const double inv_n = 1.0 / static_cast<double>(n_cells * per_class);
          const double inv_s = 1.0 / static_cast<double>(k_sig * per_class);
          for (std::size_t gx = 0; gx < spec.grid_w; ++gx)
            for (std::size_t gy = 0; gy < spec.grid_h; ++gy)
              for (std::size_t j = 0; j < dd; ++j)
                gap_means[c][j] += cells(gx, gy, j) * inv_n;
          for (std::size_t t = 0; t < k_sig; ++t) {
            const std::size_t gx = where[t] / spec.grid_h;
            const std::size_t gy = where[t] % spec.grid_h;
            for (std::size_t j = 0; j < dd; ++j)
              sig_means[c][j] += cells(gx, gy, j) * inv_s;
          }
        }

        char name[32];
        std::snprintf(name, sizeof(name), "s%05zu.afm", counter++);
        const std::string sample_rel = name;
        const std::string sample_abs = (fs::path(out_dir) / sample_rel).string();

        if (!image) {
          write_feature_map(sample_abs, tensor_cast<float>(cells));
          write_feature_map(mask_path_for(sample_abs), mask);
        } else {
          // Render each grid cell as a constant pixel block plus light
          // per-pixel noise; the mask is stored at the backbone's output
          // resolution (2x2-max over the pixel-level signal map).
          const std::size_t pw = spec.grid_w * spec.cell;
          const std::size_t ph = spec.grid_h * spec.cell;
          Tensor<float> img({pw, ph, 3});
          Tensor<float> pix_mask({pw, ph, 1});
          for (std::size_t x = 0; x < pw; ++x)
            for (std::size_t y = 0; y < ph; ++y) {
              const std::size_t gx = x / spec.cell, gy = y / spec.cell;
              for (std::size_t j = 0; j < 3; ++j)
                img(x, y, j) = static_cast<float>(
                    cells(gx, gy, j) + 0.05 * spec.noise_sigma * rng.normal());
              pix_mask(x, y, 0) = mask(gx, gy, 0);
            }
          const std::size_t fw = (pw + 1) / 2, fh = (ph + 1) / 2;
          Tensor<float> feat_mask({fw, fh, 1});
          for (std::size_t x = 0; x < pw; ++x)
            for (std::size_t y = 0; y < ph; ++y)
              if (pix_mask(x, y, 0) > 0.5f) feat_mask(x / 2, y / 2, 0) = 1.0f;
          write_feature_map(sample_abs, img);
          write_feature_map(mask_path_for(sample_abs), feat_mask);
        }
        manifest << sample_rel << "\t" << c << "\t" << split << "\n";
      }
  }
  manifest.close();

  std::ofstream meta(fs::path(out_dir) / "dataset.meta");
  if (!meta) throw DataError("synth_generate: cannot write dataset.meta");
  meta << "variant = " << spec.variant << "\n"
       << "classes = " << spec.classes << "\n"
       << "grid_w = " << spec.grid_w << "\n"
       << "grid_h = " << spec.grid_h << "\n"
       << "dim = " << dd << "\n"
       << "cell = " << spec.cell << "\n"
       << "train_per_class = " << spec.train_per_class << "\n"
       << "test_per_class = " << spec.test_per_class << "\n"
       << "signal_strength = " << spec.signal_strength << "\n"
       << "signal_fraction = " << spec.signal_fraction << "\n"
       << "distractor_pool = " << spec.distractor_pool << "\n"
       << "distractor_fraction = " << spec.distractor_fraction << "\n"
       << "noise_sigma = " << spec.noise_sigma << "\n"
       << "seed = " << spec.seed << "\n";
  meta.close();

  SynthStats stats;
  stats.mean_gap_cosine = mean_pairwise_cosine(gap_means);
  stats.mean_signal_cosine = mean_pairwise_cosine(sig_means);
  return stats;
}

std::vector<std::size_t> Dataset::split_indices(const std::string& split) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) idx.push_back(i);
  return idx;
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.root = dir;

  const fs::path meta_path = fs::path(dir) / "dataset.meta";
  std::ifstream meta(meta_path);
  if (!meta) throw DataError("load_dataset: missing " + meta_path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end())
      throw DataError("load_dataset: dataset.meta missing key '" + key + "'");
    return it->second;
  };
  ds.variant = need("variant");
  ds.classes = std::stoul(need("classes"));
  ds.grid_w = std::stoul(need("grid_w"));
  ds.grid_h = std::stoul(need("grid_h"));
  ds.dim = std::stoul(need("dim"));

  const fs::path man_path = fs::path(dir) / "manifest.tsv";
  std::ifstream man(man_path);
  if (!man) throw DataError("load_dataset: missing " + man_path.string());
  std::size_t lineno = 0;
  while (std::getline(man, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    SampleRef ref;
    std::string label_str;
    if (!std::getline(ss, ref.path, '\t') || !std::getline(ss, label_str, '\t') ||
        !std::getline(ss, ref.split))
      throw DataError("load_dataset: malformed manifest line " +
                      std::to_string(lineno));
    try {
      ref.label = std::stoul(label_str);
    } catch (const std::exception&) {
      throw DataError("load_dataset: bad label '" + label_str + "' at line " +
                      std::to_string(lineno));
    }
    if (ref.label >= ds.classes)
      throw DataError("load_dataset: label " + std::to_string(ref.label) +
                      " out of range [0," + std::to_string(ds.classes) +
                      ") at line " + std::to_string(lineno));
    if (ref.split != "train" && ref.split != "test")
      throw DataError("load_dataset: unknown split '" + ref.split +
                      "' at line " + std::to_string(lineno));
    if (!fs::exists(fs::path(dir) / ref.path))
      throw DataError("load_dataset: missing sample file " + ref.path);
    ds.samples.push_back(std::move(ref));
  }
  if (ds.samples.empty())
    throw DataError("load_dataset: manifest " + man_path.string() + " is empty");
  return ds;
}

}  // namespace attpool
