#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cmil/tensor.hpp"

namespace cmil {

enum class Attribute { gender = 0, race = 1, age = 2 };
inline constexpr std::array<Attribute, 3> kAttributes = {Attribute::gender, Attribute::race,
                                                         Attribute::age};
inline constexpr std::size_t kDemographicDim = 8;
inline constexpr std::size_t kGenderGroups = 2;
inline constexpr std::size_t kRaceGroups = 5;
inline constexpr std::size_t kAgeBins = 5;

struct SlotRange {
  std::size_t begin;
  std::size_t count;
};
SlotRange attribute_slots(Attribute a);
std::size_t attribute_group_count(Attribute a);
const char* attribute_name(Attribute a);
Attribute parse_attribute(const std::string& name);

// (years - 20) / 70 clamped to [0,1].
double normalize_age(double years);
double denormalize_age(double normalized);
// Bins: <40, 40-50, 50-60, 60-70, >=70.
std::size_t age_bin_of_normalized(double normalized);

/// Eight-slot demographic encoding: gender one-hot (0-1), race one-hot (2-6), normalized age (7).
/// Bit i of `mask` is set when slot i is observed. Unobserved slots hold 0.
struct DemographicVector {
  std::array<double, kDemographicDim> values{};
  std::uint8_t mask = 0;

  static DemographicVector observed(std::size_t gender, std::size_t race, double age_years);
  static DemographicVector missing() { return {}; }

  bool slot_observed(std::size_t i) const { return (mask >> i) & 1u; }
  bool attribute_observed(Attribute a) const;
  bool fully_observed() const { return mask == 0xFF; }
  bool fully_missing() const { return mask == 0; }
  // Group index for an observed attribute (one-hot argmax, or age bin).
  std::optional<std::size_t> group(Attribute a) const;
  void drop(Attribute a);

  // Throws DomainError when an observed block is not a valid one-hot or age lies outside [0,1].
  void validate() const;

  friend bool operator==(const DemographicVector&, const DemographicVector&) = default;
};

struct SurvivalRecord {
  double time = 1.0;
  bool event = false;
  friend bool operator==(const SurvivalRecord&, const SurvivalRecord&) = default;
};

struct FeatureBag {
  std::string bag_id;
  std::uint32_t instances = 0;  // K
  std::uint32_t dim = 0;        // d
  std::vector<float> features;  // K*d row-major
  std::uint16_t class_count = 2;
  std::uint16_t label = 0;
  std::optional<SurvivalRecord> survival;
  DemographicVector demographics;

  Tensor2 feature_matrix() const;
  void validate() const;

  friend bool operator==(const FeatureBag&, const FeatureBag&) = default;
};

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct Cohort {
  std::vector<FeatureBag> bags;
  std::vector<Split> splits;
  std::size_t class_count = 2;
  std::vector<std::string> class_names;

  std::vector<std::size_t> indices(Split s) const;
  std::size_t feature_dim() const { return bags.empty() ? 0 : bags.front().dim; }
  bool has_survival() const;
  void validate() const;
};

// Shuffled 60/15/25 train/val/test assignment of n items.
std::vector<Split> auto_split(std::size_t n, std::uint64_t seed);

// Binary bag file, little-endian:
//   "MCML" | u32 version=1 | u32 K | u32 d | u16 C | u16 label | u8 survival_present
//   [f64 time | u8 event] | 8 x f64 demographics | u8 mask | K*d x f32 features | u32 CRC32
inline constexpr std::uint32_t kBagFormatVersion = 1;
std::vector<std::uint8_t> encode_bag(const FeatureBag& bag);
// bag_id is not stored in the file; the caller supplies it.
FeatureBag decode_bag(const std::vector<std::uint8_t>& bytes, std::string bag_id = {});
void write_bag(const FeatureBag& bag, const std::filesystem::path& path);
// bag_id is the file stem.
FeatureBag read_bag(const std::filesystem::path& path);
std::size_t encoded_bag_size(std::size_t instances, std::size_t dim, bool survival);

// Manifest JSON plus one bag file per bag under <dir>/bags/.
void write_cohort(const Cohort& cohort, const std::filesystem::path& dir,
                  const std::string& extra_json = "{}");
Cohort read_cohort(const std::filesystem::path& manifest_or_dir);

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace cmil
