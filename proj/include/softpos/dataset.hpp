#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "softpos/error.hpp"
#include "softpos/io.hpp"
#include "softpos/rng.hpp"

namespace softpos {

using Label = std::uint32_t;

enum class LabelSource { GroundTruth, Pseudo };

struct Sample {
  std::size_t id = 0;
  Label label = 0;
  std::optional<Label> pseudo_label;
  std::vector<float> feat_a;  // modality A (audio)
  std::vector<float> feat_b;  // modality B (video)

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Immutable collection of paired two-modality samples with class labels.
///
/// Ids are dense in [0, N) and equal to the sample's position. The class index
/// is the exact inverse of the label assignment; a second index over pseudo
/// labels is kept for samples that carry one.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<Sample> samples, std::size_t num_classes, std::size_t dim_a,
          std::size_t dim_b)
      : samples_(std::move(samples)), num_classes_(num_classes), dim_a_(dim_a), dim_b_(dim_b) {
    if (num_classes_ == 0) throw InvalidArgument("dataset needs at least one class");
    class_index_.assign(num_classes_, {});
    pseudo_index_.assign(num_classes_, {});
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const Sample& s = samples_[i];
      if (s.id != i) throw InvalidArgument("sample ids must be dense and ordered");
      if (s.label >= num_classes_) throw InvalidArgument("label out of range at id " + std::to_string(i));
      if (s.pseudo_label && *s.pseudo_label >= num_classes_)
        throw InvalidArgument("pseudo label out of range at id " + std::to_string(i));
      if (s.feat_a.size() != dim_a_ || s.feat_b.size() != dim_b_)
        throw DimensionMismatch("sample " + std::to_string(i) + " has inconsistent feature dims");
      for (float v : s.feat_a)
        if (!std::isfinite(v)) throw InvalidArgument("non-finite feature at id " + std::to_string(i));
      for (float v : s.feat_b)
        if (!std::isfinite(v)) throw InvalidArgument("non-finite feature at id " + std::to_string(i));
      class_index_[s.label].push_back(i);
      if (s.pseudo_label) {
        pseudo_index_[*s.pseudo_label].push_back(i);
        ++num_pseudo_;
      }
    }
  }

  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t dim_a() const noexcept { return dim_a_; }
  std::size_t dim_b() const noexcept { return dim_b_; }
  const std::vector<Sample>& samples() const noexcept { return samples_; }
  const Sample& operator[](std::size_t id) const { return samples_.at(id); }

  const std::vector<std::vector<std::size_t>>& class_index() const noexcept { return class_index_; }

  bool has_pseudo_labels() const noexcept { return !samples_.empty() && num_pseudo_ == samples_.size(); }

  std::span<const std::size_t> members(Label c, LabelSource source) const {
    const auto& index = source == LabelSource::GroundTruth ? class_index_ : pseudo_index_;
    return index.at(c);
  }

  Label label_of(std::size_t id, LabelSource source) const {
    const Sample& s = samples_.at(id);
    if (source == LabelSource::GroundTruth) return s.label;
    if (!s.pseudo_label) throw MissingPseudoLabel("sample " + std::to_string(id) + " has no pseudo label");
    return *s.pseudo_label;
  }

  // Throws MissingPseudoLabel unless every sample carries a label for `source`.
  void require_labels(LabelSource source) const {
    if (source == LabelSource::Pseudo && !has_pseudo_labels())
      throw MissingPseudoLabel("pseudo-label sampling requested but " +
                               std::to_string(samples_.size() - num_pseudo_) +
                               " samples have no pseudo label");
  }

  Dataset with_pseudo_labels(std::span<const Label> pseudo) const {
    if (pseudo.size() != samples_.size()) throw InvalidArgument("pseudo label count mismatch");
    std::vector<Sample> copy = samples_;
    for (std::size_t i = 0; i < copy.size(); ++i) copy[i].pseudo_label = pseudo[i];
    return {std::move(copy), num_classes_, dim_a_, dim_b_};
  }

  // Builds a dataset from a subset of ids, re-densifying ids in ascending order.
  Dataset select(std::vector<std::size_t> ids) const {
    std::sort(ids.begin(), ids.end());
    std::vector<Sample> picked;
    picked.reserve(ids.size());
    for (std::size_t id : ids) {
      picked.push_back(samples_.at(id));
      picked.back().id = picked.size() - 1;
    }
    return {std::move(picked), num_classes_, dim_a_, dim_b_};
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.num_classes_ == b.num_classes_ && a.dim_a_ == b.dim_a_ && a.dim_b_ == b.dim_b_ &&
           a.samples_ == b.samples_;
  }

 private:
  std::vector<Sample> samples_;
  std::size_t num_classes_ = 0;
  std::size_t dim_a_ = 0;
  std::size_t dim_b_ = 0;
  std::size_t num_pseudo_ = 0;
  std::vector<std::vector<std::size_t>> class_index_;
  std::vector<std::vector<std::size_t>> pseudo_index_;
};

/// Parameters of the two-modality latent-factor generator.
///
/// Each class owns a latent prototype; a sample's latent is the prototype plus
/// within-class noise plus an instance vector scaled by `instance_coupling`.
/// Both modalities see the same latent through fixed random linear maps, so
/// the instance vector is signal that only the exact pair shares. `domain`
/// selects a different prototype set under the same modality maps and `draw`
/// selects a fresh batch of samples from the same world.
struct SynthSpec {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 20;
  std::size_t latent_dim = 24;
  std::size_t dim_a = 32;
  std::size_t dim_b = 32;
  double within_class_noise = 0.5;
  double instance_coupling = 1.0;
  double modality_noise = 0.1;
  std::uint64_t seed = 0;
  std::uint64_t domain = 0;
  std::uint64_t draw = 0;

  void validate() const {
    if (num_classes < 2) throw InvalidArgument("num_classes must be >= 2");
    if (samples_per_class < 1) throw InvalidArgument("samples_per_class must be >= 1");
    if (latent_dim < 1 || dim_a < 1 || dim_b < 1) throw InvalidArgument("dimensions must be >= 1");
    if (!(within_class_noise >= 0) || !(modality_noise >= 0))
      throw InvalidArgument("noise scales must be >= 0");
    if (!(instance_coupling >= 0 && instance_coupling <= 1))
      throw InvalidArgument("instance_coupling must lie in [0, 1]");
  }
};

// Stream tags of the generator; exposed so tests can rebuild the world.
namespace synth_stream {
inline constexpr std::uint64_t kTransform = 0x7472616e73ULL;
inline constexpr std::uint64_t kPrototype = 0x70726f746fULL;
inline constexpr std::uint64_t kSample = 0x73616d706cULL;
}  // namespace synth_stream

namespace detail {

inline std::vector<double> normal_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  std::vector<double> m(rows * cols);
  for (double& v : m) v = rng.normal() * scale;
  return m;
}

inline std::vector<float> apply_map(const std::vector<double>& map, std::size_t rows,
                                    std::span<const double> x) {
  std::vector<float> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) acc += map[r * x.size() + c] * x[c];
    out[r] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace detail

inline Dataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  const std::size_t dz = spec.latent_dim;
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(dz));

  Rng transform_rng(spec.seed, {synth_stream::kTransform});
  const auto map_a = detail::normal_matrix(transform_rng, spec.dim_a, dz, map_scale);
  const auto map_b = detail::normal_matrix(transform_rng, spec.dim_b, dz, map_scale);

  Rng proto_rng(spec.seed, {synth_stream::kPrototype, spec.domain});
  const auto prototypes = detail::normal_matrix(proto_rng, spec.num_classes, dz, 1.0);

  Rng sample_rng(spec.seed, {synth_stream::kSample, spec.domain, spec.draw});
  std::vector<Sample> samples;
  samples.reserve(spec.num_classes * spec.samples_per_class);
  std::vector<double> latent(dz);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t m = 0; m < spec.samples_per_class; ++m) {
      for (std::size_t k = 0; k < dz; ++k) {
        const double eps = sample_rng.normal();
        const double inst = sample_rng.normal();
        latent[k] = prototypes[c * dz + k] + spec.within_class_noise * eps +
                    spec.instance_coupling * inst;
      }
      Sample s;
      s.id = samples.size();
      s.label = static_cast<Label>(c);
      s.feat_a = detail::apply_map(map_a, spec.dim_a, latent);
      s.feat_b = detail::apply_map(map_b, spec.dim_b, latent);
      for (float& v : s.feat_a) v += static_cast<float>(spec.modality_noise * sample_rng.normal());
      for (float& v : s.feat_b) v += static_cast<float>(spec.modality_noise * sample_rng.normal());
      samples.push_back(std::move(s));
    }
  }
  return {std::move(samples), spec.num_classes, spec.dim_a, spec.dim_b};
}

inline Dataset balanced_subset(const Dataset& ds, std::size_t per_class, std::uint64_t seed) {
  if (per_class == 0) throw InvalidArgument("per_class must be >= 1");
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < ds.num_classes(); ++c) {
    std::vector<std::size_t> members = ds.class_index()[c];
    if (members.size() < per_class)
      throw ClassTooSmall("label=" + std::to_string(c) + " available=" +
                          std::to_string(members.size()) + " requested=" + std::to_string(per_class));
    Rng rng(seed, {c});
    rng.shuffle(std::span(members));
    keep.insert(keep.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(per_class));
  }
  return ds.select(std::move(keep));
}

namespace detail {

// Per-class train count: floor(frac * size); the 1e-9 slack absorbs products
// such as 0.29 * 100 landing just below an integer.
inline std::size_t train_count(double frac, std::size_t size) {
  return static_cast<std::size_t>(std::floor(frac * static_cast<double>(size) + 1e-9));
}

inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_ids(
    const Dataset& ds, double frac, std::uint64_t seed, std::size_t min_train) {
  std::vector<std::size_t> train, rest;
  for (std::size_t c = 0; c < ds.num_classes(); ++c) {
    std::vector<std::size_t> members = ds.class_index()[c];
    Rng rng(seed, {c});
    rng.shuffle(std::span(members));
    std::size_t n = std::min(members.size(), std::max(min_train, train_count(frac, members.size())));
    train.insert(train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n));
    rest.insert(rest.end(), members.begin() + static_cast<std::ptrdiff_t>(n), members.end());
  }
  return {std::move(train), std::move(rest)};
}

}  // namespace detail

/// Stratified split: every class puts floor(train_frac * size) samples into
/// the first part and the remainder into the second.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw InvalidArgument("train_frac must lie in (0, 1)");
  auto [train, val] = detail::stratified_ids(ds, train_frac, seed, 0);
  return {ds.select(std::move(train)), ds.select(std::move(val))};
}

// Stratified fraction keeping at least one sample of every non-empty class.
inline Dataset stratified_subsample(const Dataset& ds, double frac, std::uint64_t seed) {
  if (!(frac > 0.0 && frac <= 1.0)) throw InvalidArgument("fraction must lie in (0, 1]");
  if (frac == 1.0) return ds;
  auto [keep, unused] = detail::stratified_ids(ds, frac, seed, 1);
  return ds.select(std::move(keep));
}

// ---------------------------------------------------------------------------
// On-disk format: manifest.json plus one row-major little-endian f32 blob per
// modality, each guarded by a 64-bit FNV-1a checksum.

inline constexpr const char* kManifestFormat = "softpos-dataset";
inline constexpr int kManifestVersion = 1;

namespace detail {

inline std::vector<std::uint8_t> pack_features(const Dataset& ds, bool modality_a) {
  std::vector<std::uint8_t> out;
  out.reserve(ds.size() * (modality_a ? ds.dim_a() : ds.dim_b()) * sizeof(float));
  for (const Sample& s : ds.samples())
    for (float v : modality_a ? s.feat_a : s.feat_b) io::append_pod(out, v);
  return out;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto blob_a = detail::pack_features(ds, true);
  const auto blob_b = detail::pack_features(ds, false);
  io::write_bytes(dir / "feat_a.bin", blob_a);
  io::write_bytes(dir / "feat_b.bin", blob_b);

  nlohmann::ordered_json manifest;
  manifest["format"] = kManifestFormat;
  manifest["version"] = kManifestVersion;
  manifest["num_samples"] = ds.size();
  manifest["num_classes"] = ds.num_classes();
  manifest["dim_a"] = ds.dim_a();
  manifest["dim_b"] = ds.dim_b();
  auto labels = nlohmann::json::array();
  auto pseudo = nlohmann::json::array();
  bool any_pseudo = false;
  for (const Sample& s : ds.samples()) {
    labels.push_back(s.label);
    if (s.pseudo_label) {
      pseudo.push_back(*s.pseudo_label);
      any_pseudo = true;
    } else {
      pseudo.push_back(nullptr);
    }
  }
  manifest["labels"] = std::move(labels);
  if (any_pseudo) manifest["pseudo_labels"] = std::move(pseudo);
  manifest["feat_a"] = {{"file", "feat_a.bin"}, {"fnv1a64", io::hex64(io::fnv1a64(blob_a))}};
  manifest["feat_b"] = {{"file", "feat_b.bin"}, {"fnv1a64", io::hex64(io::fnv1a64(blob_b))}};
  io::write_text(dir / "manifest.json", manifest.dump(1) + "\n");
}

namespace detail {

template <typename T>
T manifest_field(const nlohmann::json& m, const char* key) {
  if (!m.contains(key)) throw ManifestMalformed(std::string("missing key '") + key + "'");
  try {
    return m.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ManifestMalformed(std::string("bad value for '") + key + "'");
  }
}

inline std::vector<float> load_blob(const std::filesystem::path& base, const nlohmann::json& entry,
                                    std::size_t rows, std::size_t dim, const char* name) {
  if (!entry.is_object()) throw ManifestMalformed(std::string(name) + " must be an object");
  const auto file = manifest_field<std::string>(entry, "file");
  const auto path = base / file;
  if (!std::filesystem::exists(path)) throw MissingFeatureFile(path.string());
  const auto bytes = io::read_bytes(path);
  const std::size_t expected = rows * dim * sizeof(float);
  if (bytes.size() != expected)
    throw DimensionMismatch(path.string() + ": expected " + std::to_string(expected) +
                            " bytes, found " + std::to_string(bytes.size()));
  if (entry.contains("fnv1a64") &&
      manifest_field<std::string>(entry, "fnv1a64") != io::hex64(io::fnv1a64(bytes)))
    throw ChecksumMismatch(path.string());
  std::vector<float> values(rows * dim);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = io::read_pod<float>(bytes, i * sizeof(float));
  return values;
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_text(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestMalformed(manifest_path.string() + ": " + e.what());
  } catch (const IoError&) {
    throw MissingFeatureFile(manifest_path.string());
  }
  if (!m.is_object()) throw ManifestMalformed("manifest must be a JSON object");
  if (m.value("format", "") != kManifestFormat) throw ManifestMalformed("unexpected format tag");
  const auto n = detail::manifest_field<std::size_t>(m, "num_samples");
  const auto c = detail::manifest_field<std::size_t>(m, "num_classes");
  const auto da = detail::manifest_field<std::size_t>(m, "dim_a");
  const auto db = detail::manifest_field<std::size_t>(m, "dim_b");
  if (c == 0) throw ManifestMalformed("num_classes must be positive");
  const auto labels = detail::manifest_field<std::vector<std::int64_t>>(m, "labels");
  if (labels.size() != n) throw ManifestMalformed("labels length does not match num_samples");
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      throw ManifestMalformed("label " + std::to_string(labels[i]) + " out of range at index " +
                              std::to_string(i));
  std::vector<std::optional<Label>> pseudo(n);
  if (m.contains("pseudo_labels")) {
    const auto& arr = m["pseudo_labels"];
    if (!arr.is_array() || arr.size() != n) throw ManifestMalformed("pseudo_labels length mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      if (arr[i].is_null()) continue;
      if (!arr[i].is_number_integer()) throw ManifestMalformed("pseudo label must be an integer");
      const auto v = arr[i].get<std::int64_t>();
      if (v < 0 || static_cast<std::size_t>(v) >= c) throw ManifestMalformed("pseudo label out of range");
      pseudo[i] = static_cast<Label>(v);
    }
  }
  const auto base = manifest_path.parent_path();
  const auto fa = detail::load_blob(base, m.value("feat_a", nlohmann::json()), n, da, "feat_a");
  const auto fb = detail::load_blob(base, m.value("feat_b", nlohmann::json()), n, db, "feat_b");

  std::vector<Sample> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample& s = samples[i];
    s.id = i;
    s.label = static_cast<Label>(labels[i]);
    s.pseudo_label = pseudo[i];
    s.feat_a.assign(fa.begin() + static_cast<std::ptrdiff_t>(i * da), fa.begin() + static_cast<std::ptrdiff_t>((i + 1) * da));
    s.feat_b.assign(fb.begin() + static_cast<std::ptrdiff_t>(i * db), fb.begin() + static_cast<std::ptrdiff_t>((i + 1) * db));
  }
  try {
    return {std::move(samples), c, da, db};
  } catch (const InvalidArgument& e) {
    throw ManifestMalformed(e.what());
  }
}

}  // namespace softpos
