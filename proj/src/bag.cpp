#include "cmil/bag.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "cmil/errors.hpp"

static_assert(std::endian::native == std::endian::little, "bag format assumes a little-endian host");

namespace cmil {

SlotRange attribute_slots(Attribute a) {
  switch (a) {
    case Attribute::gender: return {0, kGenderGroups};
    case Attribute::race: return {2, kRaceGroups};
    case Attribute::age: return {7, 1};
  }
  throw DomainError("unknown attribute");
}

std::size_t attribute_group_count(Attribute a) {
  switch (a) {
    case Attribute::gender: return kGenderGroups;
    case Attribute::race: return kRaceGroups;
    case Attribute::age: return kAgeBins;
  }
  throw DomainError("unknown attribute");
}

const char* attribute_name(Attribute a) {
  switch (a) {
    case Attribute::gender: return "gender";
    case Attribute::race: return "race";
    case Attribute::age: return "age";
  }
  return "?";
}

Attribute parse_attribute(const std::string& name) {
  for (Attribute a : kAttributes)
    if (name == attribute_name(a)) return a;
  throw DomainError("unknown demographic attribute '" + name + "' (expected gender, race or age)");
}

double normalize_age(double years) { return std::clamp((years - 20.0) / 70.0, 0.0, 1.0); }
double denormalize_age(double normalized) { return 20.0 + 70.0 * normalized; }

std::size_t age_bin_of_normalized(double normalized) {
  // Compare in normalized space so a value produced by normalize_age(boundary) lands in the upper bin.
  static const std::array<double, 4> edges = {normalize_age(40), normalize_age(50), normalize_age(60),
                                              normalize_age(70)};
  std::size_t bin = 0;
  while (bin < edges.size() && normalized >= edges[bin]) ++bin;
  return bin;
}

DemographicVector DemographicVector::observed(std::size_t gender, std::size_t race, double age_years) {
  if (gender >= kGenderGroups || race >= kRaceGroups) throw DomainError("demographic group out of range");
  DemographicVector v;
  v.values[gender] = 1.0;
  v.values[2 + race] = 1.0;
  v.values[7] = normalize_age(age_years);
  v.mask = 0xFF;
  return v;
}

bool DemographicVector::attribute_observed(Attribute a) const {
  const SlotRange r = attribute_slots(a);
  for (std::size_t i = r.begin; i < r.begin + r.count; ++i)
    if (!slot_observed(i)) return false;
  return true;
}

std::optional<std::size_t> DemographicVector::group(Attribute a) const {
  if (!attribute_observed(a)) return std::nullopt;
  if (a == Attribute::age) return age_bin_of_normalized(values[7]);
  const SlotRange r = attribute_slots(a);
  const auto first = values.begin() + static_cast<std::ptrdiff_t>(r.begin);
  return static_cast<std::size_t>(std::max_element(first, first + static_cast<std::ptrdiff_t>(r.count)) - first);
}

void DemographicVector::drop(Attribute a) {
  const SlotRange r = attribute_slots(a);
  for (std::size_t i = r.begin; i < r.begin + r.count; ++i) {
    mask = static_cast<std::uint8_t>(mask & ~(1u << i));
    values[i] = 0.0;
  }
}

void DemographicVector::validate() const {
  for (Attribute a : {Attribute::gender, Attribute::race}) {
    const SlotRange r = attribute_slots(a);
    std::size_t observed_slots = 0;
    for (std::size_t i = r.begin; i < r.begin + r.count; ++i) observed_slots += slot_observed(i);
    if (observed_slots == 0) continue;
    if (observed_slots != r.count) {
      throw DomainError(std::string(attribute_name(a)) + " block is partially observed");
    }
    std::size_t ones = 0;
    for (std::size_t i = r.begin; i < r.begin + r.count; ++i) {
      if (values[i] == 1.0) ++ones;
      else if (values[i] != 0.0) throw DomainError(std::string(attribute_name(a)) + " block is not one-hot");
    }
    if (ones != 1) throw DomainError(std::string(attribute_name(a)) + " block must contain exactly one 1");
  }
  if (slot_observed(7) && !(values[7] >= 0.0 && values[7] <= 1.0)) {
    throw DomainError("normalized age outside [0,1]");
  }
}

Tensor2 FeatureBag::feature_matrix() const {
  std::vector<double> data(features.begin(), features.end());
  return Tensor2(instances, dim, std::move(data));
}

void FeatureBag::validate() const {
  if (instances == 0) throw DomainError("bag " + bag_id + " has no instances");
  if (dim == 0) throw DomainError("bag " + bag_id + " has zero feature dimension");
  if (features.size() != static_cast<std::size_t>(instances) * dim) {
    throw DimensionError("bag " + bag_id + " feature buffer does not match K x d");
  }
  for (float f : features)
    if (!std::isfinite(f)) throw DomainError("bag " + bag_id + " has a non-finite feature");
  if (class_count == 0 || label >= class_count) throw DomainError("bag " + bag_id + " label out of range");
  if (survival && !(survival->time > 0.0)) throw DomainError("bag " + bag_id + " survival time must be positive");
  demographics.validate();
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

std::vector<std::size_t> Cohort::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

bool Cohort::has_survival() const {
  return !bags.empty() &&
         std::all_of(bags.begin(), bags.end(), [](const FeatureBag& b) { return b.survival.has_value(); });
}

void Cohort::validate() const {
  if (splits.size() != bags.size()) throw ContractError("cohort: one split tag per bag required");
  for (const FeatureBag& b : bags) {
    b.validate();
    if (b.dim != feature_dim()) throw DimensionError("cohort: bags disagree on feature dimension");
    if (b.class_count != class_count) throw DomainError("cohort: bag class count disagrees with cohort");
  }
}

std::vector<Split> auto_split(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.60 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n)));
  std::vector<Split> out(n, Split::test);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) out[order[i]] = Split::train;
    else if (i < n_train + n_val) out[order[i]] = Split::val;
  }
  return out;
}

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, data, static_cast<uInt>(size));
  return static_cast<std::uint32_t>(crc);
}

namespace {

constexpr char kMagic[4] = {'M', 'C', 'M', 'L'};

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}
  template <class T>
  void put(T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.insert(out_.end(), buf, buf + sizeof(T));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  template <class T>
  T get(const char* field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n, const char* field) const {
    if (in_.size() - pos_ < n) throw FormatError(std::string("truncated bag file reading ") + field, pos_);
  }
  std::size_t pos() const { return pos_; }
  const std::uint8_t* here() const { return in_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t encoded_bag_size(std::size_t instances, std::size_t dim, bool survival) {
  return 16 + 2 + 2 + 1 + (survival ? 9 : 0) + 8 * kDemographicDim + 1 + 4 * instances * dim + 4;
}

std::vector<std::uint8_t> encode_bag(const FeatureBag& bag) {
  if (bag.features.size() != static_cast<std::size_t>(bag.instances) * bag.dim) {
    throw DimensionError("encode_bag: feature buffer does not match K x d");
  }
  std::vector<std::uint8_t> out;
  out.reserve(encoded_bag_size(bag.instances, bag.dim, bag.survival.has_value()));
  Writer w(out);
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kBagFormatVersion);
  w.put<std::uint32_t>(bag.instances);
  w.put<std::uint32_t>(bag.dim);
  w.put<std::uint16_t>(bag.class_count);
  w.put<std::uint16_t>(bag.label);
  w.put<std::uint8_t>(bag.survival ? 1 : 0);
  if (bag.survival) {
    w.put<double>(bag.survival->time);
    w.put<std::uint8_t>(bag.survival->event ? 1 : 0);
  }
  for (double v : bag.demographics.values) w.put<double>(v);
  w.put<std::uint8_t>(bag.demographics.mask);
  w.bytes(bag.features.data(), bag.features.size() * sizeof(float));
  w.put<std::uint32_t>(crc32_of(out.data(), out.size()));
  return out;
}

FeatureBag decode_bag(const std::vector<std::uint8_t>& bytes, std::string bag_id) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(r.here(), kMagic, 4) != 0) throw FormatError("bad magic, not a bag file", 0);
  r.skip(4);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kBagFormatVersion) {
    throw FormatError("unsupported bag format version " + std::to_string(version), 4);
  }
  FeatureBag bag;
  bag.bag_id = std::move(bag_id);
  bag.instances = r.get<std::uint32_t>("K");
  bag.dim = r.get<std::uint32_t>("d");
  if (bag.instances == 0 || bag.dim == 0) throw FormatError("bag with K=0 or d=0", 8);
  bag.class_count = r.get<std::uint16_t>("C");
  bag.label = r.get<std::uint16_t>("label");
  const std::size_t flag_pos = r.pos();
  const auto survival_present = r.get<std::uint8_t>("survival flag");
  if (survival_present > 1) throw FormatError("invalid survival flag", flag_pos);
  if (survival_present == 1) {
    SurvivalRecord s;
    s.time = r.get<double>("survival time");
    const std::size_t event_pos = r.pos();
    const auto event = r.get<std::uint8_t>("event");
    if (event > 1) throw FormatError("invalid event flag", event_pos);
    s.event = event == 1;
    bag.survival = s;
  }
  for (double& v : bag.demographics.values) v = r.get<double>("demographics");
  bag.demographics.mask = r.get<std::uint8_t>("mask");
  const std::size_t n = static_cast<std::size_t>(bag.instances) * bag.dim;
  r.need(n * sizeof(float), "features");
  bag.features.resize(n);
  std::memcpy(bag.features.data(), r.here(), n * sizeof(float));
  r.skip(n * sizeof(float));
  const std::size_t crc_pos = r.pos();
  const auto stored = r.get<std::uint32_t>("CRC32");
  if (stored != crc32_of(bytes.data(), crc_pos)) throw FormatError("CRC32 mismatch", crc_pos);
  if (r.pos() != bytes.size()) throw FormatError("trailing bytes after CRC32", r.pos());
  return bag;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_bag(const FeatureBag& bag, const std::filesystem::path& path) {
  write_file_bytes(path, encode_bag(bag));
}

FeatureBag read_bag(const std::filesystem::path& path) {
  return decode_bag(read_file_bytes(path), path.stem().string());
}

void write_cohort(const Cohort& cohort, const std::filesystem::path& dir, const std::string& extra_json) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "bags");
  nlohmann::ordered_json m;
  m["format"] = "cmil-cohort";
  m["version"] = 1;
  m["class_count"] = cohort.class_count;
  m["class_names"] = cohort.class_names;
  m["feature_dim"] = cohort.feature_dim();
  m["survival"] = cohort.has_survival();
  m["generator"] = nlohmann::ordered_json::parse(extra_json);
  auto& bags = m["bags"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < cohort.bags.size(); ++i) {
    const FeatureBag& b = cohort.bags[i];
    const std::string rel = "bags/" + b.bag_id + ".bag";
    write_bag(b, dir / rel);
    bags.push_back({{"id", b.bag_id}, {"path", rel}, {"split", split_name(cohort.splits.at(i))}});
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << m.dump(2) << "\n";
}

Cohort read_cohort(const std::filesystem::path& manifest_or_dir) {
  namespace fs = std::filesystem;
  const fs::path manifest =
      fs::is_directory(manifest_or_dir) ? manifest_or_dir / "manifest.json" : manifest_or_dir;
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open cohort manifest " + manifest.string());
  const auto m = nlohmann::json::parse(in);
  Cohort c;
  c.class_count = m.at("class_count").get<std::size_t>();
  c.class_names = m.at("class_names").get<std::vector<std::string>>();
  const fs::path base = manifest.parent_path();
  for (const auto& entry : m.at("bags")) {
    FeatureBag b = read_bag(base / entry.at("path").get<std::string>());
    b.bag_id = entry.at("id").get<std::string>();
    c.bags.push_back(std::move(b));
    c.splits.push_back(parse_split(entry.at("split").get<std::string>()));
  }
  c.validate();
  return c;
}

}  // namespace cmil
