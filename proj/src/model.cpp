#include "cmil/model.hpp"

#include <cstring>

#include "cmil/errors.hpp"

namespace cmil {

SemConfig ModelConfig::sem_config() const {
  SemConfig s;
  s.feature_dim = feature_dim;
  s.hidden = hidden;
  s.heads = heads;
  s.layers = layers;
  s.outputs = head_outputs();
  s.dropout = dropout;
  s.sigma_unc = sigma_unc;
  return s;
}

void ModelConfig::validate() const {
  if (classes < 2) throw ConfigError("model needs at least two bag classes");
  if (query_dim == 0) throw ConfigError("query dimension must be positive");
  if (!(k_frac > 0.0 && k_frac <= 1.0)) throw ConfigError("k_frac must lie in (0,1]");
  sem_config().validate();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"feature_dim", c.feature_dim}, {"classes", c.classes},     {"survival", c.survival},
                     {"hidden", c.hidden},           {"query_dim", c.query_dim}, {"heads", c.heads},
                     {"layers", c.layers},           {"dropout", c.dropout},     {"k_frac", c.k_frac},
                     {"sigma_unc", c.sigma_unc},     {"variant", variant_name(c.variant)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("feature_dim").get_to(c.feature_dim);
  j.at("classes").get_to(c.classes);
  j.at("survival").get_to(c.survival);
  j.at("hidden").get_to(c.hidden);
  j.at("query_dim").get_to(c.query_dim);
  j.at("heads").get_to(c.heads);
  j.at("layers").get_to(c.layers);
  j.at("dropout").get_to(c.dropout);
  j.at("k_frac").get_to(c.k_frac);
  j.at("sigma_unc").get_to(c.sigma_unc);
  c.variant = parse_variant(j.at("variant").get<std::string>());
}

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Model m;
  m.config = config;
  m.graph = build_adjacency(config.variant);
  m.instance = InstanceBranchParams(config.feature_dim, config.classes, rng);
  m.pooling = PoolingParams(config.feature_dim, config.query_dim, rng);
  m.sem = SemParams(config.sem_config(), config.variant, rng);
  return m;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  instance.collect(out);
  out.push_back(&pooling.w_q);
  sem.collect(config.variant, out);
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

BagForward forward_bag(Binder& bind, Model& model, const FeatureBag& bag, Mode mode, Rng& rng, GraphTrace* trace) {
  if (bag.dim != model.config.feature_dim) {
    throw DimensionError("bag " + bag.bag_id + " has feature dim " + std::to_string(bag.dim) +
                         ", model expects " + std::to_string(model.config.feature_dim));
  }
  BagForward f;
  f.features = bind.constant(bag.feature_matrix());
  f.inst_logits = instance_logits(bind, model.instance, f.features);
  f.critical = argmax_lowest(critical_scores(f.inst_logits.value()));
  PooledBag pooled = attention_pool(bind, model.pooling, f.features, f.critical);
  f.alpha = std::move(pooled.alpha);
  f.bag_repr = pooled.bag;
  f.u_final = impute_demographics(bind, model.sem, f.bag_repr, bag.demographics);
  f.sem = disease_representation(bind, model.sem, model.graph, f.bag_repr, f.u_final, mode, rng, trace);
  f.logits = bag_logits(bind, model.sem, f.sem);
  return f;
}

BagPrediction predict_bag(Model& model, const FeatureBag& bag) {
  Tape tape;
  Binder bind(tape, false);
  Rng unused(0);
  BagForward f = forward_bag(bind, model, bag, Mode::eval, unused);
  BagPrediction p;
  const auto logits = f.logits.value().data();
  if (model.config.survival) {
    p.risk = logits[0];
  } else {
    p.probs = softmax_row(logits);
    p.label = argmax_lowest(p.probs);
    p.risk = logits.size() == 2 ? logits[1] - logits[0] : logits[p.label];
  }
  p.alpha = std::move(f.alpha);
  p.bag_repr = f.bag_repr.value();
  const auto u = f.u_final.value().data();
  std::copy(u.begin(), u.end(), p.u_final.begin());
  p.z = f.sem.z.value();
  return p;
}

std::array<double, kDemographicDim> neutral_demographics_of(const std::vector<const FeatureBag*>& bags) {
  std::array<double, kDemographicDim> out{};
  for (Attribute a : kAttributes) {
    const SlotRange r = attribute_slots(a);
    std::size_t n = 0;
    for (const FeatureBag* b : bags) {
      if (!b->demographics.attribute_observed(a)) continue;
      ++n;
      for (std::size_t i = r.begin; i < r.begin + r.count; ++i) out[i] += b->demographics.values[i];
    }
    if (n > 0)
      for (std::size_t i = r.begin; i < r.begin + r.count; ++i) out[i] /= static_cast<double>(n);
  }
  return out;
}

namespace {

constexpr char kCkptMagic[4] = {'M', 'C', 'K', 'P'};
constexpr const char* kNeutralBlock = "meta.neutral_demographics";

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

void put_block(std::vector<std::uint8_t>& out, const std::string& name, const Tensor2& t) {
  const std::size_t start = out.size();
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
  for (double v : t.data()) put<double>(out, v);
  put<std::uint32_t>(out, crc32_of(out.data() + start, out.size() - start));
}

class Cursor {
 public:
  explicit Cursor(const std::vector<std::uint8_t>& b) : b_(b) {}
  template <class T>
  T get(const char* what) {
    if (b_.size() - pos_ < sizeof(T)) throw FormatError(std::string("truncated checkpoint reading ") + what, pos_);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) throw FormatError(std::string("truncated checkpoint reading ") + what, pos_);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  const std::uint8_t* data() const { return b_.data(); }
  std::size_t size() const { return b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

struct RawCheckpoint {
  GraphVariant variant;
  nlohmann::json hyper;
  std::vector<std::pair<std::string, Tensor2>> blocks;
};

RawCheckpoint parse(const std::vector<std::uint8_t>& bytes) {
  Cursor c(bytes);
  if (c.str(4, "magic") != std::string(kCkptMagic, 4)) throw FormatError("bad magic, not a checkpoint", 0);
  const auto version = c.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  RawCheckpoint raw;
  const auto tag = c.get<std::uint8_t>("variant");
  if (tag > static_cast<std::uint8_t>(GraphVariant::concat)) throw FormatError("unknown variant tag", 8);
  raw.variant = static_cast<GraphVariant>(tag);
  const auto json_len = c.get<std::uint32_t>("hyperparameter length");
  const std::string text = c.str(json_len, "hyperparameters");
  const std::size_t header_end = c.pos();
  if (c.get<std::uint32_t>("header CRC32") != crc32_of(bytes.data(), header_end)) {
    throw FormatError("checkpoint header CRC32 mismatch", header_end);
  }
  try {
    raw.hyper = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad hyperparameter JSON: ") + e.what(), 13);
  }
  const auto count = c.get<std::uint32_t>("block count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t start = c.pos();
    const auto name_len = c.get<std::uint16_t>("block name length");
    std::string name = c.str(name_len, "block name");
    const auto rows = c.get<std::uint32_t>("rows");
    const auto cols = c.get<std::uint32_t>("cols");
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    if ((c.size() - c.pos()) / sizeof(double) < n) throw FormatError("truncated block " + name, c.pos());
    Tensor2 t(rows, cols);
    for (double& v : t.data()) v = c.get<double>("block data");
    const std::size_t end = c.pos();
    if (c.get<std::uint32_t>("block CRC32") != crc32_of(bytes.data() + start, end - start)) {
      throw FormatError("CRC32 mismatch in block " + name, end);
    }
    raw.blocks.emplace_back(std::move(name), std::move(t));
  }
  if (c.pos() != bytes.size()) throw FormatError("trailing bytes after last block", c.pos());
  return raw;
}

void assign_blocks(Model& model, const RawCheckpoint& raw) {
  if (raw.variant != model.config.variant) {
    throw ConfigError(std::string("checkpoint variant ") + variant_name(raw.variant) + " does not match model variant " +
                      variant_name(model.config.variant));
  }
  auto params = model.parameters();
  std::size_t matched = 0;
  bool neutral = false;
  for (const auto& [name, t] : raw.blocks) {
    if (name == kNeutralBlock) {
      if (t.size() != kDemographicDim) throw ConfigError("neutral demographic block must hold 8 values");
      std::copy(t.data().begin(), t.data().end(), model.neutral_demographics.begin());
      neutral = true;
      continue;
    }
    Parameter* target = nullptr;
    for (Parameter* p : params)
      if (p->name == name) target = p;
    if (target == nullptr) throw ConfigError("checkpoint block " + name + " has no matching parameter");
    if (!target->value.same_shape(t)) {
      throw ConfigError("shape mismatch for " + name + ": checkpoint " + std::to_string(t.rows()) + "x" +
                        std::to_string(t.cols()) + ", model " + std::to_string(target->value.rows()) + "x" +
                        std::to_string(target->value.cols()));
    }
    target->value = t;
    target->grad = Tensor2(t.rows(), t.cols());
    ++matched;
  }
  if (matched != params.size() || !neutral) throw ConfigError("checkpoint is missing parameter blocks");
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(Model& model, const nlohmann::json& extra) {
  nlohmann::json hyper = extra;
  hyper["model"] = model.config;
  const std::string text = hyper.dump();
  std::vector<std::uint8_t> out(kCkptMagic, kCkptMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(model.config.variant));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  put<std::uint32_t>(out, crc32_of(out.data(), out.size()));
  auto params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size() + 1));
  for (const Parameter* p : params) put_block(out, p->name, p->value);
  put_block(out, kNeutralBlock, Tensor2::row(model.neutral_demographics));
  return out;
}

LoadedCheckpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  RawCheckpoint raw = parse(bytes);
  ModelConfig config = raw.hyper.at("model").get<ModelConfig>();
  if (config.variant != raw.variant) throw FormatError("variant tag disagrees with hyperparameters", 8);
  LoadedCheckpoint out{Model::init(config, 0), raw.hyper};
  assign_blocks(out.model, raw);
  return out;
}

void save_checkpoint(Model& model, const std::filesystem::path& path, const nlohmann::json& extra) {
  write_file_bytes(path, encode_checkpoint(model, extra));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

void load_checkpoint_into(Model& model, const std::filesystem::path& path) {
  RawCheckpoint raw = parse(read_file_bytes(path));
  assign_blocks(model, raw);
}

}  // namespace cmil
