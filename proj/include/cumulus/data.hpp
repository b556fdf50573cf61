#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cumulus/tensor.hpp"

namespace cumulus {

/// Scene-classification class codes, public Sentinel-2 convention.
enum class SclClass : uint8_t {
  NoData = 0,
  Saturated = 1,
  DarkArea = 2,
  CloudShadow = 3,
  Vegetation = 4,
  BareSoil = 5,
  Water = 6,
  Unclassified = 7,
  CloudMediumProb = 8,
  CloudHighProb = 9,
  ThinCirrus = 10,
  SnowIce = 11,
};
constexpr int kSclClassCount = 12;

/// Synthetic multispectral acquisition: 12-band reflectance in [0,1] plus a
/// per-pixel class raster consistent with the generated cloud field.
struct Scene {
  int64_t height = 0;
  int64_t width = 0;
  Tensor reflectance;         // [1, H, W, 12] f32
  std::vector<uint8_t> scl;   // H*W class codes
  uint64_t seed = 0;
};

/// Procedural terrain + smooth cloud fields; cloud classes cover roughly
/// `cloud_density` of the raster (quantile thresholding of low-frequency
/// noise). Deterministic per seed, pixels independent of thread count.
Scene generate_scene(uint64_t seed, int64_t height, int64_t width, double cloud_density);

/// Binary cloud mask: 1 for medium/high-probability cloud, 0 for every other
/// class. DataError on codes outside the 12-class set.
std::vector<uint8_t> remap_scl(const std::vector<uint8_t>& scl);

/// One labeled example: a tile with its ground-truth mask, a 5x5 patch, or a
/// single spectrum (mask empty for the latter two).
struct TileRecord {
  Tensor pixels;  // [1, S, S, 12] tiles/patches, [1, 12, 1, 1] spectra
  Tensor mask;    // [1, S, S, 1] f32 binary; default-constructed when absent
  int label = 0;  // 1 = cloudy
  double cloud_fraction = 0.0;

  bool has_mask() const { return !mask.shape().empty(); }
};

/// Non-overlapping tiles (remainder cropped). Tiles containing any no-data
/// pixel are excluded; label is cloudy iff cloud fraction >= threshold.
std::vector<TileRecord> tile_and_label(const Scene& scene, int64_t tile = 256,
                                       double threshold = 0.70);

struct Dataset {
  std::vector<TileRecord> records;
  std::string split;

  std::array<int64_t, 2> class_counts() const;
};

/// Core of balance_and_split, reusable on bare label sequences: downsample
/// the majority class to equality, then a stratified train/val split.
/// Deterministic per rng seed. DataError when a class is empty.
std::pair<std::vector<size_t>, std::vector<size_t>> balance_split_indices(
    const std::vector<int>& labels, double train_frac, Rng rng);

std::pair<Dataset, Dataset> balance_and_split(const std::vector<TileRecord>& tiles,
                                              double train_frac, uint64_t seed);

enum class SampleMode { Spectra, Patches5x5 };

/// Random per-class pixel sampling across scenes; patches are labeled by
/// their center pixel. DataError (with the shortfall) when a class has too
/// few pixels. No-data pixels are never sampled.
Dataset sample_pixels(const std::vector<Scene>& scenes, int64_t n_per_class,
                      SampleMode mode, uint64_t seed);

/// One of the 8 dihedral transforms (optional horizontal flip, then k
/// quarter-turn rotations), applied to pixels and mask alike. Label and
/// cloud fraction are untouched. transform in [0, 8).
TileRecord apply_dihedral(const TileRecord& rec, int transform);

/// Uniformly random dihedral transform.
TileRecord augment(const TileRecord& rec, Rng& rng);

/// Dataset directory: index.json plus a single records.cfw with consecutive
/// pixel (and mask) entries.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

/// Pre-gridded raster import for real data: H*W*13 little-endian float32,
/// 12 reflectance bands then the class plane (codes as floats).
Scene import_raster(const std::string& path, int64_t height, int64_t width);

}  // namespace cumulus
