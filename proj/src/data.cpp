#include "cumulus/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "cumulus/blob.hpp"
#include "cumulus/errors.hpp"

#include <json.hpp>

namespace cumulus {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Smooth value noise: per-octave lattice values hashed from (seed, tag,
// octave, gx, gy), blended with smoothstep weights. Pure per pixel.
struct NoiseField {
  Rng stream;
  int octaves;
  double cell;

  NoiseField(uint64_t seed, uint64_t tag, double cell_px, int octaves_)
      : stream(Rng(seed).fork(tag)), octaves(octaves_), cell(cell_px) {}

  double lattice(int oct, int64_t gx, int64_t gy) const {
    uint64_t idx = (static_cast<uint64_t>(oct) << 58) ^
                   (static_cast<uint64_t>(gx) << 29) ^ static_cast<uint64_t>(gy);
    return stream.unit_at(idx);
  }

  static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

  double at(int64_t x, int64_t y) const {
    double value = 0.0, norm = 0.0, amp = 1.0;
    double c = cell;
    for (int o = 0; o < octaves; ++o) {
      double fx = static_cast<double>(x) / c;
      double fy = static_cast<double>(y) / c;
      int64_t gx = static_cast<int64_t>(std::floor(fx));
      int64_t gy = static_cast<int64_t>(std::floor(fy));
      double tx = smooth(fx - static_cast<double>(gx));
      double ty = smooth(fy - static_cast<double>(gy));
      double v00 = lattice(o, gx, gy), v10 = lattice(o, gx + 1, gy);
      double v01 = lattice(o, gx, gy + 1), v11 = lattice(o, gx + 1, gy + 1);
      double v = (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
      value += amp * v;
      norm += amp;
      amp *= 0.5;
      c = std::max(2.0, c * 0.5);
    }
    return value / norm;
  }
};

double quantile_of(std::vector<float> v, double q) {
  if (v.empty()) return 0.0;
  q = std::clamp(q, 0.0, 1.0);
  size_t k = static_cast<size_t>(q * static_cast<double>(v.size() - 1) + 0.5);
  k = std::min(k, v.size() - 1);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

// 12-band base spectra per class, loosely shaped after typical surface
// signatures (visible .. SWIR): water dark with falling NIR, vegetation with
// a red-edge step, soil rising, snow bright in visible, clouds bright and
// flat.
const std::array<std::array<float, 12>, 12> kClassSpectra = {{
    /* NoData        */ {{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}},
    /* Saturated     */ {{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1}},
    /* DarkArea      */ {{.05f, .05f, .06f, .06f, .06f, .07f, .07f, .07f, .06f, .05f, .05f, .04f}},
    /* CloudShadow   */ {{.08f, .09f, .10f, .10f, .11f, .12f, .12f, .12f, .10f, .09f, .08f, .07f}},
    /* Vegetation    */ {{.04f, .06f, .09f, .07f, .12f, .28f, .36f, .40f, .42f, .43f, .22f, .12f}},
    /* BareSoil      */ {{.12f, .16f, .20f, .24f, .28f, .30f, .32f, .34f, .36f, .37f, .42f, .38f}},
    /* Water         */ {{.10f, .09f, .07f, .05f, .04f, .03f, .03f, .02f, .02f, .02f, .01f, .01f}},
    /* Unclassified  */ {{.15f, .15f, .15f, .15f, .15f, .15f, .15f, .15f, .15f, .15f, .15f, .15f}},
    /* CloudMedium   */ {{.55f, .56f, .57f, .57f, .58f, .58f, .58f, .58f, .57f, .56f, .50f, .45f}},
    /* CloudHigh     */ {{.82f, .83f, .84f, .84f, .85f, .85f, .85f, .85f, .84f, .83f, .75f, .68f}},
    /* ThinCirrus    */ {{.30f, .31f, .32f, .32f, .33f, .33f, .33f, .33f, .32f, .31f, .30f, .28f}},
    /* SnowIce       */ {{.85f, .86f, .86f, .85f, .84f, .80f, .70f, .60f, .40f, .30f, .15f, .10f}},
}};

}  // namespace

Scene generate_scene(uint64_t seed, int64_t height, int64_t width, double cloud_density) {
  if (height < 1 || width < 1) throw ArgumentError("scene extents must be positive");
  cloud_density = std::clamp(cloud_density, 0.0, 1.0);
  NoiseField terrain(seed, 1, 64.0, 2);
  NoiseField moisture(seed, 2, 96.0, 2);
  NoiseField clouds(seed, 3, 48.0, 3);
  NoiseField cirrus(seed, 4, 80.0, 2);
  Rng jitter = Rng(seed).fork(5);

  int64_t n = height * width;
  std::vector<float> cloud_field(static_cast<size_t>(n));
  for (int64_t y = 0; y < height; ++y) {
    for (int64_t x = 0; x < width; ++x) {
      cloud_field[static_cast<size_t>(y * width + x)] =
          static_cast<float>(clouds.at(x, y));
    }
  }
  // Quantile thresholds pin the cloud-class fraction to the requested
  // density; strict comparison keeps density 0 cloud-free.
  float t_cloud = static_cast<float>(quantile_of(cloud_field, 1.0 - cloud_density));
  float t_high =
      static_cast<float>(quantile_of(cloud_field, 1.0 - 0.7 * cloud_density));

  std::vector<uint8_t> scl(static_cast<size_t>(n));
  std::vector<float> refl(static_cast<size_t>(n) * 12);

#ifdef _OPENMP
#pragma omp parallel for
#endif
  for (int64_t y = 0; y < height; ++y) {
    for (int64_t x = 0; x < width; ++x) {
      int64_t i = y * width + x;
      float c = cloud_field[static_cast<size_t>(i)];
      SclClass cls;
      if (c > t_high) {
        cls = SclClass::CloudHighProb;
      } else if (c > t_cloud) {
        cls = SclClass::CloudMediumProb;
      } else {
        double t = terrain.at(x, y);
        double m = moisture.at(x, y);
        if (t < 0.28) {
          cls = SclClass::Water;
        } else if (t < 0.33) {
          cls = SclClass::DarkArea;
        } else if (t > 0.86) {
          cls = SclClass::SnowIce;
        } else if (m > 0.58) {
          cls = SclClass::Vegetation;
        } else {
          cls = SclClass::BareSoil;
        }
        if (cirrus.at(x, y) > 0.93) cls = SclClass::ThinCirrus;
        // Shadows fall where a displaced copy of the cloud field is cloudy.
        else if (cloud_density > 0.0 &&
                 static_cast<float>(clouds.at(x + 24, y + 24)) > t_high &&
                 cls != SclClass::Water) {
          cls = SclClass::CloudShadow;
        }
      }
      scl[static_cast<size_t>(i)] = static_cast<uint8_t>(cls);

      const auto& base = kClassSpectra[static_cast<size_t>(cls)];
      bool cloudy = cls == SclClass::CloudMediumProb || cls == SclClass::CloudHighProb;
      double blend = 0.0;
      if (cloudy && t_high > t_cloud) {
        blend = std::clamp(static_cast<double>(c - t_cloud) /
                               static_cast<double>(t_high - t_cloud),
                           0.0, 1.0);
      }
      for (int b = 0; b < 12; ++b) {
        double v = base[static_cast<size_t>(b)];
        if (cloudy) {
          // Medium clouds thin toward the threshold; blend over bare soil.
          const auto& under = kClassSpectra[static_cast<size_t>(SclClass::BareSoil)];
          v = under[static_cast<size_t>(b)] * (1.0 - 0.55 - 0.45 * blend) +
              v * (0.55 + 0.45 * blend);
        }
        double noise =
            jitter.unit_at(static_cast<uint64_t>(i) * 12 + static_cast<uint64_t>(b));
        v += (noise - 0.5) * 0.06;
        refl[static_cast<size_t>(i * 12 + b)] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  Scene s;
  s.height = height;
  s.width = width;
  s.reflectance = Tensor::from_f32({1, height, width, 12}, std::move(refl));
  s.scl = std::move(scl);
  s.seed = seed;
  return s;
}

std::vector<uint8_t> remap_scl(const std::vector<uint8_t>& scl) {
  std::vector<uint8_t> mask(scl.size());
  for (size_t i = 0; i < scl.size(); ++i) {
    if (scl[i] >= kSclClassCount) {
      throw DataError("unknown SCL class code " + std::to_string(int(scl[i])));
    }
    mask[i] = (scl[i] == static_cast<uint8_t>(SclClass::CloudMediumProb) ||
               scl[i] == static_cast<uint8_t>(SclClass::CloudHighProb))
                  ? 1
                  : 0;
  }
  return mask;
}

std::vector<TileRecord> tile_and_label(const Scene& scene, int64_t tile,
                                       double threshold) {
  if (tile < 1) throw ArgumentError("tile size must be positive");
  std::vector<uint8_t> cloud = remap_scl(scene.scl);
  auto refl = scene.reflectance.f();
  std::vector<TileRecord> out;
  for (int64_t ty = 0; ty + tile <= scene.height; ty += tile) {
    for (int64_t tx = 0; tx + tile <= scene.width; tx += tile) {
      bool has_nodata = false;
      int64_t cloudy_px = 0;
      for (int64_t y = 0; y < tile && !has_nodata; ++y) {
        for (int64_t x = 0; x < tile; ++x) {
          int64_t i = (ty + y) * scene.width + (tx + x);
          if (scene.scl[static_cast<size_t>(i)] ==
              static_cast<uint8_t>(SclClass::NoData)) {
            has_nodata = true;
            break;
          }
          cloudy_px += cloud[static_cast<size_t>(i)];
        }
      }
      if (has_nodata) continue;
      std::vector<float> px(static_cast<size_t>(tile * tile * 12));
      std::vector<float> mk(static_cast<size_t>(tile * tile));
      for (int64_t y = 0; y < tile; ++y) {
        for (int64_t x = 0; x < tile; ++x) {
          int64_t src = (ty + y) * scene.width + (tx + x);
          int64_t dst = y * tile + x;
          for (int b = 0; b < 12; ++b) {
            px[static_cast<size_t>(dst * 12 + b)] =
                refl[static_cast<size_t>(src * 12 + b)];
          }
          mk[static_cast<size_t>(dst)] = cloud[static_cast<size_t>(src)];
        }
      }
      TileRecord r;
      r.pixels = Tensor::from_f32({1, tile, tile, 12}, std::move(px));
      r.mask = Tensor::from_f32({1, tile, tile, 1}, std::move(mk));
      r.cloud_fraction =
          static_cast<double>(cloudy_px) / static_cast<double>(tile * tile);
      r.label = r.cloud_fraction >= threshold ? 1 : 0;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::array<int64_t, 2> Dataset::class_counts() const {
  std::array<int64_t, 2> c{0, 0};
  for (const auto& r : records) c[r.label ? 1 : 0]++;
  return c;
}

std::pair<std::vector<size_t>, std::vector<size_t>> balance_split_indices(
    const std::vector<int>& labels, double train_frac, Rng rng) {
  if (train_frac <= 0.0 || train_frac >= 1.0) {
    throw ArgumentError("train_frac must be in (0,1)");
  }
  std::vector<size_t> by_class[2];
  for (size_t i = 0; i < labels.size(); ++i) {
    by_class[labels[i] ? 1 : 0].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty()) {
    throw DataError("balance_and_split needs both classes present");
  }
  size_t n = std::min(by_class[0].size(), by_class[1].size());
  size_t train_n = static_cast<size_t>(std::llround(train_frac * static_cast<double>(n)));
  std::vector<size_t> train, val;
  for (auto& cls : by_class) {
    // Fisher-Yates with the shared stream: downsample to n, then split.
    for (size_t i = cls.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(rng.next_below(i + 1));
      std::swap(cls[i], cls[j]);
    }
    for (size_t i = 0; i < n; ++i) {
      (i < train_n ? train : val).push_back(cls[i]);
    }
  }
  return {std::move(train), std::move(val)};
}

std::pair<Dataset, Dataset> balance_and_split(const std::vector<TileRecord>& tiles,
                                              double train_frac, uint64_t seed) {
  std::vector<int> labels(tiles.size());
  for (size_t i = 0; i < tiles.size(); ++i) labels[i] = tiles[i].label;
  auto [train_idx, val_idx] = balance_split_indices(labels, train_frac, Rng(seed));
  Dataset train, val;
  train.split = "train";
  val.split = "val";
  for (size_t i : train_idx) train.records.push_back(tiles[i]);
  for (size_t i : val_idx) val.records.push_back(tiles[i]);
  return {std::move(train), std::move(val)};
}

Dataset sample_pixels(const std::vector<Scene>& scenes, int64_t n_per_class,
                      SampleMode mode, uint64_t seed) {
  if (n_per_class < 1) throw ArgumentError("n_per_class must be positive");
  const int64_t margin = mode == SampleMode::Patches5x5 ? 2 : 0;
  struct Coord {
    size_t scene;
    int64_t y, x;
  };
  std::vector<Coord> pool[2];
  for (size_t si = 0; si < scenes.size(); ++si) {
    const Scene& s = scenes[si];
    for (int64_t y = margin; y < s.height - margin; ++y) {
      for (int64_t x = margin; x < s.width - margin; ++x) {
        uint8_t cls = s.scl[static_cast<size_t>(y * s.width + x)];
        if (cls == static_cast<uint8_t>(SclClass::NoData)) continue;
        bool cloudy = cls == static_cast<uint8_t>(SclClass::CloudMediumProb) ||
                      cls == static_cast<uint8_t>(SclClass::CloudHighProb);
        pool[cloudy ? 1 : 0].push_back({si, y, x});
      }
    }
  }
  Rng rng(seed);
  Dataset ds;
  ds.split = "sampled";
  for (int cls = 0; cls < 2; ++cls) {
    auto& cand = pool[cls];
    if (static_cast<int64_t>(cand.size()) < n_per_class) {
      throw DataError("class " + std::to_string(cls) + " has " +
                      std::to_string(cand.size()) + " pixels, need " +
                      std::to_string(n_per_class) + " (shortfall " +
                      std::to_string(n_per_class - static_cast<int64_t>(cand.size())) +
                      ")");
    }
    // Partial Fisher-Yates: the first n_per_class entries become the sample.
    for (int64_t i = 0; i < n_per_class; ++i) {
      size_t j = static_cast<size_t>(i) +
                 static_cast<size_t>(rng.next_below(cand.size() - static_cast<size_t>(i)));
      std::swap(cand[static_cast<size_t>(i)], cand[j]);
    }
    for (int64_t i = 0; i < n_per_class; ++i) {
      const Coord& c = cand[static_cast<size_t>(i)];
      const Scene& s = scenes[c.scene];
      auto refl = s.reflectance.f();
      TileRecord r;
      r.label = cls;
      r.cloud_fraction = cls ? 1.0 : 0.0;
      if (mode == SampleMode::Spectra) {
        std::vector<float> px(12);
        for (int b = 0; b < 12; ++b) {
          px[static_cast<size_t>(b)] =
              refl[static_cast<size_t>((c.y * s.width + c.x) * 12 + b)];
        }
        r.pixels = Tensor::from_f32({1, 12, 1, 1}, std::move(px));
      } else {
        std::vector<float> px(5 * 5 * 12);
        for (int64_t dy = -2; dy <= 2; ++dy) {
          for (int64_t dx = -2; dx <= 2; ++dx) {
            int64_t src = ((c.y + dy) * s.width + (c.x + dx)) * 12;
            int64_t dst = ((dy + 2) * 5 + (dx + 2)) * 12;
            for (int b = 0; b < 12; ++b) {
              px[static_cast<size_t>(dst + b)] = refl[static_cast<size_t>(src + b)];
            }
          }
        }
        r.pixels = Tensor::from_f32({1, 5, 5, 12}, std::move(px));
      }
      ds.records.push_back(std::move(r));
    }
  }
  return ds;
}

namespace {

// transform: bit 2 = horizontal flip first, bits 0-1 = quarter turns after.
void dihedral_map(int transform, int64_t s, int64_t r, int64_t c, int64_t& out_r,
                  int64_t& out_c) {
  if (transform & 4) c = s - 1 - c;
  int rot = transform & 3;
  for (int k = 0; k < rot; ++k) {
    int64_t nr = c;
    int64_t nc = s - 1 - r;
    r = nr;
    c = nc;
  }
  out_r = r;
  out_c = c;
}

Tensor transform_tensor(const Tensor& t, int transform) {
  const Shape& sh = t.shape();
  int64_t s = sh[1];
  int64_t ch = sh[3];
  auto src = t.f();
  std::vector<float> out(src.size());
  for (int64_t r = 0; r < s; ++r) {
    for (int64_t c = 0; c < s; ++c) {
      int64_t tr, tc;
      dihedral_map(transform, s, r, c, tr, tc);
      for (int64_t k = 0; k < ch; ++k) {
        out[static_cast<size_t>((tr * s + tc) * ch + k)] =
            src[static_cast<size_t>((r * s + c) * ch + k)];
      }
    }
  }
  return Tensor::from_f32(sh, std::move(out));
}

}  // namespace

TileRecord apply_dihedral(const TileRecord& rec, int transform) {
  if (transform < 0 || transform > 7) throw ArgumentError("dihedral transform in [0,8)");
  const Shape& sh = rec.pixels.shape();
  if (sh.size() != 4 || sh[1] != sh[2]) {
    throw ArgumentError("dihedral transforms need square spatial extents");
  }
  TileRecord out;
  out.label = rec.label;
  out.cloud_fraction = rec.cloud_fraction;
  out.pixels = transform_tensor(rec.pixels, transform);
  if (rec.has_mask()) out.mask = transform_tensor(rec.mask, transform);
  return out;
}

TileRecord augment(const TileRecord& rec, Rng& rng) {
  return apply_dihedral(rec, static_cast<int>(rng.next_below(8)));
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(dir);
  ordered_json idx;
  idx["schema_version"] = 1;
  idx["split"] = ds.split;
  ordered_json records = ordered_json::array();
  std::ofstream blob(fs::path(dir) / "records.cfw", std::ios::binary | std::ios::trunc);
  if (!blob) throw ModelIOError("cannot write records.cfw under " + dir);
  for (const auto& r : ds.records) {
    ordered_json rj;
    rj["label"] = r.label;
    rj["cloud_fraction"] = r.cloud_fraction;
    rj["has_mask"] = r.has_mask();
    records.push_back(std::move(rj));
    write_tensor(blob, r.pixels);
    if (r.has_mask()) write_tensor(blob, r.mask);
  }
  idx["records"] = std::move(records);
  std::ofstream jf(fs::path(dir) / "index.json", std::ios::trunc);
  if (!jf) throw ModelIOError("cannot write index.json under " + dir);
  jf << idx.dump(2) << "\n";
}

Scene import_raster(const std::string& path, int64_t height, int64_t width) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open raster " + path);
  int64_t n = height * width;
  std::vector<float> plane(static_cast<size_t>(n) * 13);
  is.read(reinterpret_cast<char*>(plane.data()),
          static_cast<std::streamsize>(plane.size() * sizeof(float)));
  if (!is.good()) throw DataError("raster " + path + " is shorter than H*W*13 floats");
  Scene s;
  s.height = height;
  s.width = width;
  std::vector<float> refl(static_cast<size_t>(n) * 12);
  s.scl.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    for (int b = 0; b < 12; ++b) {
      refl[static_cast<size_t>(i * 12 + b)] = plane[static_cast<size_t>(i * 13 + b)];
    }
    float cls = plane[static_cast<size_t>(i * 13 + 12)];
    if (cls < 0.0f || cls >= static_cast<float>(kSclClassCount) ||
        cls != std::floor(cls)) {
      throw DataError("raster class plane holds non-class value " + std::to_string(cls));
    }
    s.scl[static_cast<size_t>(i)] = static_cast<uint8_t>(cls);
  }
  s.reflectance = Tensor::from_f32({1, height, width, 12}, std::move(refl));
  return s;
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream jf(fs::path(dir) / "index.json");
  if (!jf) throw DataError("cannot open index.json under " + dir);
  ordered_json idx;
  try {
    idx = ordered_json::parse(jf);
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("index.json parse error: ") + e.what());
  }
  Dataset ds;
  std::ifstream blob(fs::path(dir) / "records.cfw", std::ios::binary);
  if (!blob) throw DataError("cannot open records.cfw under " + dir);
  try {
    ds.split = idx.at("split").get<std::string>();
    for (const auto& rj : idx.at("records")) {
      TileRecord r;
      r.label = rj.at("label").get<int>();
      r.cloud_fraction = rj.at("cloud_fraction").get<double>();
      r.pixels = read_tensor(blob);
      if (rj.at("has_mask").get<bool>()) r.mask = read_tensor(blob);
      ds.records.push_back(std::move(r));
    }
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("bad index.json: ") + e.what());
  }
  return ds;
}

}  // namespace cumulus
