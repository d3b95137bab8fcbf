#include "dcr/datagen.hpp"

#include "dcr/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace dcr {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::Text: return "T";
    case Modality::Audio: return "A";
    case Modality::Visual: return "V";
  }
  return "?";
}

const char* conflict_name(ConflictClass c) {
  switch (c) {
    case ConflictClass::None: return "none";
    case ConflictClass::Benign: return "benign";
    case ConflictClass::Severe: return "severe";
  }
  return "?";
}

void DatasetManifest::validate() const {
  if (num_classes < 2) throw ArgumentError("manifest: num_classes must be >= 2");
  if (static_cast<int>(class_polarity.size()) != num_classes)
    throw ArgumentError("manifest: polarity table size must equal num_classes");
  for (int i = 0; i < kNumModalities; ++i) {
    if (seq_len[static_cast<size_t>(i)] < 1 || raw_dim[static_cast<size_t>(i)] < 1)
      throw ArgumentError("manifest: sequence lengths and dims must be positive");
  }
  const double mix_sum = mix_clean + mix_benign + mix_severe;
  if (std::fabs(mix_sum - 1.0) > 1e-9)
    throw ArgumentError("manifest: conflict mix proportions must sum to 1");
  if (mix_clean < 0 || mix_benign < 0 || mix_severe < 0)
    throw ArgumentError("manifest: negative mix proportion");
  if (snr <= 0) throw ArgumentError("manifest: snr must be positive");
  bool has_nonneutral = false;
  for (auto p : class_polarity)
    if (p != Polarity::Neutral) has_nonneutral = true;
  if (!has_nonneutral && mix_clean < 1.0)
    throw ArgumentError("manifest: conflicts need a non-neutral class");
}

Polarity DatasetManifest::polarity_of(int class_index) const {
  if (class_index < 0 || class_index >= num_classes)
    throw ArgumentError("polarity_of: class index out of range");
  return class_polarity[static_cast<size_t>(class_index)];
}

int DatasetManifest::neutral_class() const {
  for (int c = 0; c < num_classes; ++c)
    if (class_polarity[static_cast<size_t>(c)] == Polarity::Neutral) return c;
  return -1;
}

std::string DatasetManifest::canonical_text() const {
  std::map<std::string, std::string> kv;
  auto fmt = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  kv["num_classes"] = std::to_string(num_classes);
  std::string pol;
  for (auto p : class_polarity)
    pol += (p == Polarity::Negative ? 'n' : p == Polarity::Neutral ? 'u' : 'p');
  kv["class_polarity"] = pol;
  const char* mod[3] = {"t", "a", "v"};
  for (int i = 0; i < 3; ++i) {
    kv[std::string("seq_len_") + mod[i]] = std::to_string(seq_len[static_cast<size_t>(i)]);
    kv[std::string("raw_dim_") + mod[i]] = std::to_string(raw_dim[static_cast<size_t>(i)]);
  }
  kv["mix_clean"] = fmt(mix_clean);
  kv["mix_benign"] = fmt(mix_benign);
  kv["mix_severe"] = fmt(mix_severe);
  kv["snr"] = fmt(snr);
  kv["seed"] = std::to_string(seed);
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

DatasetManifest DatasetManifest::from_text(const std::string& text) {
  DatasetManifest m;
  std::istringstream in(text);
  std::string line;
  std::map<std::string, std::string> kv;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("manifest: missing '=' in line: " + line);
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto get = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ParseError(std::string("manifest: missing field ") + k);
    return it->second;
  };
  m.num_classes = std::stoi(get("num_classes"));
  m.class_polarity.clear();
  for (char c : get("class_polarity")) {
    if (c == 'n') m.class_polarity.push_back(Polarity::Negative);
    else if (c == 'u') m.class_polarity.push_back(Polarity::Neutral);
    else if (c == 'p') m.class_polarity.push_back(Polarity::Positive);
    else throw ParseError("manifest: bad polarity char");
  }
  const char* mod[3] = {"t", "a", "v"};
  for (int i = 0; i < 3; ++i) {
    m.seq_len[static_cast<size_t>(i)] = std::stoi(get((std::string("seq_len_") + mod[i]).c_str()));
    m.raw_dim[static_cast<size_t>(i)] = std::stoi(get((std::string("raw_dim_") + mod[i]).c_str()));
  }
  m.mix_clean = std::stod(get("mix_clean"));
  m.mix_benign = std::stod(get("mix_benign"));
  m.mix_severe = std::stod(get("mix_severe"));
  m.snr = std::stod(get("snr"));
  m.seed = std::stoull(get("seed"));
  m.validate();
  return m;
}

std::vector<double> DatasetManifest::prototype_trajectory(int class_index,
                                                          Modality m) const {
  const int mi = static_cast<int>(m);
  const int l = seq_len[static_cast<size_t>(mi)], d = raw_dim[static_cast<size_t>(mi)];
  Rng rng = Rng(seed).child(0x70726f746fULL + static_cast<uint64_t>(class_index) * 8 + static_cast<uint64_t>(mi));
  std::vector<double> base(static_cast<size_t>(d));
  double norm = 0.0;
  for (auto& v : base) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : base) v /= norm;
  // Class-specific temporal envelope: a bump whose centre localizes the
  // emotionally salient span, so temporal confidence weighting has signal.
  const double center = rng.uniform(0.2, 0.8) * (l - 1);
  const double width = std::max(1.0, l / 4.0);
  std::vector<double> traj(static_cast<size_t>(l) * d);
  for (int t = 0; t < l; ++t) {
    const double e = 0.4 + 0.6 * std::exp(-0.5 * (t - center) * (t - center) / (width * width));
    for (int j = 0; j < d; ++j) traj[static_cast<size_t>(t) * d + j] = base[static_cast<size_t>(j)] * e;
  }
  return traj;
}

Sample generate_clean_sample(const DatasetManifest& manifest, int class_index,
                             const std::string& id, Rng& rng) {
  if (class_index < 0 || class_index >= manifest.num_classes)
    throw ArgumentError("generate_clean_sample: class out of range");
  Sample s;
  s.id = id;
  s.multimodal_label = {class_index};
  s.conflict_class = ConflictClass::None;
  const double noise_sd = 1.0 / manifest.snr;
  for (int mi = 0; mi < kNumModalities; ++mi) {
    const Modality m = static_cast<Modality>(mi);
    const int l = manifest.seq_len[static_cast<size_t>(mi)], d = manifest.raw_dim[static_cast<size_t>(mi)];
    std::vector<double> vals = manifest.prototype_trajectory(class_index, m);
    for (auto& v : vals) v += rng.normal(0.0, noise_sd);
    s.signals[static_cast<size_t>(mi)] = {m, Tensor({l, d}, std::move(vals)), manifest.snr};
    s.unimodal_labels[static_cast<size_t>(mi)] = {class_index};
  }
  return s;
}

ConflictClass classify_conflict(
    const std::array<EmotionLabel, kNumModalities>& unimodal_labels,
    const EmotionLabel& multimodal_label, const DatasetManifest& manifest) {
  const Polarity pm = manifest.polarity_of(multimodal_label.class_index);
  bool severe = false, differs = false;
  for (const auto& lab : unimodal_labels) {
    const Polarity pu = manifest.polarity_of(lab.class_index);
    if (pu != pm) differs = true;
    if (pu != Polarity::Neutral && pm != Polarity::Neutral && pu != pm)
      severe = true;
  }
  if (severe) return ConflictClass::Severe;
  if (differs) return ConflictClass::Benign;
  return ConflictClass::None;
}

Sample inject_conflict(const Sample& sample, const DatasetManifest& manifest,
                       ConflictClass kind, Modality target, Rng& rng) {
  if (sample.conflict_class != ConflictClass::None)
    throw ArgumentError("inject_conflict: sample already conflicted");
  if (kind == ConflictClass::None)
    throw ArgumentError("inject_conflict: kind must be benign or severe");
  const Polarity pm = manifest.polarity_of(sample.multimodal_label.class_index);
  if (pm == Polarity::Neutral)
    throw ArgumentError("inject_conflict: neutral multimodal label has no "
                        "conflicting polarity");
  const int mi = static_cast<int>(target);
  const int l = manifest.seq_len[static_cast<size_t>(mi)], d = manifest.raw_dim[static_cast<size_t>(mi)];
  Sample out = sample;
  out.conflict_class = kind;
  out.conflict_modality = target;
  if (kind == ConflictClass::Benign) {
    const int neutral = manifest.neutral_class();
    if (neutral < 0)
      throw ArgumentError("inject_conflict: benign needs a neutral class");
    const std::vector<double> neu = manifest.prototype_trajectory(neutral, target);
    const double blend = rng.uniform(0.5, 0.9);
    std::vector<double> vals = sample.signals[static_cast<size_t>(mi)].sequence.values();
    for (size_t i = 0; i < vals.size(); ++i)
      vals[i] = (1.0 - blend) * vals[i] + blend * neu[i];
    out.signals[static_cast<size_t>(mi)].sequence = Tensor({l, d}, std::move(vals));
    out.unimodal_labels[static_cast<size_t>(mi)] = {neutral};
  } else {
    const Polarity opposite =
        pm == Polarity::Positive ? Polarity::Negative : Polarity::Positive;
    std::vector<int> candidates;
    for (int c = 0; c < manifest.num_classes; ++c)
      if (manifest.polarity_of(c) == opposite) candidates.push_back(c);
    if (candidates.empty())
      throw ArgumentError("inject_conflict: no opposite-polarity class");
    const int cls = candidates[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(candidates.size()) - 1))];
    std::vector<double> vals = manifest.prototype_trajectory(cls, target);
    const double noise_sd = 1.0 / manifest.snr;
    for (auto& v : vals) v += rng.normal(0.0, noise_sd);
    out.signals[static_cast<size_t>(mi)].sequence = Tensor({l, d}, std::move(vals));
    out.unimodal_labels[static_cast<size_t>(mi)] = {cls};
  }
  return out;
}

namespace {

// Largest-remainder rounding of n * proportions into integer counts.
std::vector<int> apportion(int n, const std::vector<double>& props) {
  std::vector<int> counts(props.size());
  std::vector<std::pair<double, size_t>> rem;
  int total = 0;
  for (size_t i = 0; i < props.size(); ++i) {
    const double exact = n * props[i];
    counts[i] = static_cast<int>(std::floor(exact));
    total += counts[i];
    rem.push_back({exact - counts[i], i});
  }
  std::sort(rem.begin(), rem.end(), [](auto& a, auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; i < n - total; ++i) counts[rem[static_cast<size_t>(i)].second]++;
  return counts;
}

}  // namespace

Dataset generate_dataset(const DatasetManifest& manifest, int n, uint64_t seed) {
  manifest.validate();
  if (n < 10) throw ArgumentError("generate_dataset: n must be >= 10");
  const int c_count = manifest.num_classes;
  std::vector<int> nonneutral;
  for (int c = 0; c < c_count; ++c)
    if (manifest.polarity_of(c) != Polarity::Neutral) nonneutral.push_back(c);

  const auto kind_counts =
      apportion(n, {manifest.mix_clean, manifest.mix_benign, manifest.mix_severe});
  const int n_conflict = kind_counts[1] + kind_counts[2];
  if (n_conflict > 0 && nonneutral.empty())
    throw ArgumentError("generate_dataset: conflicts require non-neutral classes");

  // Hold overall class balance uniform: conflicts are spread evenly over the
  // non-neutral classes, clean samples absorb the remainder per class.
  std::vector<int> class_total = apportion(n, std::vector<double>(static_cast<size_t>(c_count), 1.0 / c_count));
  std::vector<int> conflict_per_class(static_cast<size_t>(c_count), 0);
  for (int i = 0; i < n_conflict; ++i)
    conflict_per_class[static_cast<size_t>(nonneutral[static_cast<size_t>(i) % nonneutral.size()])]++;
  std::vector<int> clean_per_class(static_cast<size_t>(c_count));
  for (int c = 0; c < c_count; ++c) {
    clean_per_class[static_cast<size_t>(c)] = class_total[static_cast<size_t>(c)] - conflict_per_class[static_cast<size_t>(c)];
    if (clean_per_class[static_cast<size_t>(c)] < 0)
      throw ArgumentError("generate_dataset: conflict mix incompatible with "
                          "uniform class balance (too few clean samples)");
  }

  // One (kind, class) assignment per sample, shuffled deterministically.
  struct Plan { ConflictClass kind; int cls; };
  std::vector<Plan> plan;
  plan.reserve(static_cast<size_t>(n));
  for (int c = 0; c < c_count; ++c)
    for (int i = 0; i < clean_per_class[static_cast<size_t>(c)]; ++i)
      plan.push_back({ConflictClass::None, c});
  {
    int ci = 0;
    for (int i = 0; i < kind_counts[1]; ++i, ++ci)
      plan.push_back({ConflictClass::Benign, nonneutral[static_cast<size_t>(ci) % nonneutral.size()]});
    for (int i = 0; i < kind_counts[2]; ++i, ++ci)
      plan.push_back({ConflictClass::Severe, nonneutral[static_cast<size_t>(ci) % nonneutral.size()]});
  }
  Rng shuffle_rng = Rng(seed).child(0xA11);
  std::shuffle(plan.begin(), plan.end(), shuffle_rng.engine());

  Dataset ds;
  ds.manifest = manifest;
  ds.samples.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng(seed).child(static_cast<uint64_t>(i) + 1);
    char id[16];
    std::snprintf(id, sizeof(id), "s%06d", i);
    Sample s = generate_clean_sample(manifest, plan[static_cast<size_t>(i)].cls, id, rng);
    if (plan[static_cast<size_t>(i)].kind != ConflictClass::None) {
      const Modality target = static_cast<Modality>(rng.uniform_int(0, kNumModalities - 1));
      s = inject_conflict(s, manifest, plan[static_cast<size_t>(i)].kind, target, rng);
    }
    ds.samples.push_back(std::move(s));
  }

  // 60/20/20 split, stratified by class so each split keeps the balance.
  Rng split_rng = Rng(seed).child(0x5B117);
  std::vector<std::vector<int>> by_class(static_cast<size_t>(c_count));
  for (int i = 0; i < n; ++i)
    by_class[static_cast<size_t>(ds.samples[static_cast<size_t>(i)].multimodal_label.class_index)].push_back(i);
  for (auto& grp : by_class) {
    std::shuffle(grp.begin(), grp.end(), split_rng.engine());
    const int g = static_cast<int>(grp.size());
    const auto parts = apportion(g, {0.6, 0.2, 0.2});
    const int g_train = parts[0];
    const int g_valid = parts[1];
    ds.train_idx.insert(ds.train_idx.end(), grp.begin(), grp.begin() + g_train);
    ds.valid_idx.insert(ds.valid_idx.end(), grp.begin() + g_train,
                        grp.begin() + g_train + g_valid);
    ds.test_idx.insert(ds.test_idx.end(), grp.begin() + g_train + g_valid, grp.end());
  }
  std::shuffle(ds.train_idx.begin(), ds.train_idx.end(), split_rng.engine());
  std::shuffle(ds.valid_idx.begin(), ds.valid_idx.end(), split_rng.engine());
  std::shuffle(ds.test_idx.begin(), ds.test_idx.end(), split_rng.engine());
  return ds;
}

// --- serialization ----------------------------------------------------------

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr char kMagic[8] = {'D', 'C', 'R', 'D', 'A', 'T', 'A', '1'};

using Writer = detail::ByteWriter;
using Reader = detail::ByteReader;

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  Writer w;
  w.raw(kMagic, 8);
  const std::string manifest_text = ds.manifest.canonical_text();
  w.str(manifest_text);
  w.u64(fnv1a64(manifest_text.data(), manifest_text.size()));
  w.u32(static_cast<uint32_t>(ds.samples.size()));
  for (const auto& s : ds.samples) {
    w.str(s.id);
    w.u8(static_cast<uint8_t>(s.conflict_class));
    w.u8(s.conflict_modality ? static_cast<uint8_t>(*s.conflict_modality) : 255);
    w.i32(s.multimodal_label.class_index);
    for (const auto& lab : s.unimodal_labels) w.i32(lab.class_index);
    for (const auto& sig : s.signals) {
      w.u8(static_cast<uint8_t>(sig.modality));
      w.f64(sig.snr);
      w.u32(static_cast<uint32_t>(sig.sequence.dim(0)));
      w.u32(static_cast<uint32_t>(sig.sequence.dim(1)));
      w.raw(sig.sequence.values().data(), sig.sequence.size() * sizeof(double));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArgumentError("save_dataset: cannot open " + path);
  out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw std::runtime_error("save_dataset: write failed for " + path);

  std::ofstream idx(path + ".index", std::ios::trunc);
  if (!idx) throw ArgumentError("save_dataset: cannot open index file");
  auto emit = [&](const char* name, const std::vector<int>& v) {
    idx << "[" << name << "]\n";
    for (int i : v) idx << ds.samples[static_cast<size_t>(i)].id << "\n";
  };
  emit("train", ds.train_idx);
  emit("valid", ds.valid_idx);
  emit("test", ds.test_idx);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("load_dataset: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  Reader r{buf};
  char magic[8];
  r.raw(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw ParseError("dataset: bad magic at byte offset 0");
  const std::string manifest_text = r.str("manifest");
  const uint64_t stored_hash = r.u64("manifest_hash");
  const uint64_t computed = fnv1a64(manifest_text.data(), manifest_text.size());
  if (stored_hash != computed)
    throw IntegrityError("dataset: manifest hash mismatch (stored " +
                         std::to_string(stored_hash) + ", computed " +
                         std::to_string(computed) + ")");
  Dataset ds;
  ds.manifest = DatasetManifest::from_text(manifest_text);
  const uint32_t n = r.u32("num_samples");
  ds.samples.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    Sample s;
    s.id = r.str("sample_id");
    s.conflict_class = static_cast<ConflictClass>(r.u8("conflict_class"));
    const uint8_t cm = r.u8("conflict_modality");
    if (cm != 255) s.conflict_modality = static_cast<Modality>(cm);
    s.multimodal_label.class_index = r.i32("multimodal_label");
    for (auto& lab : s.unimodal_labels) lab.class_index = r.i32("unimodal_label");
    for (auto& sig : s.signals) {
      sig.modality = static_cast<Modality>(r.u8("modality"));
      sig.snr = r.f64("snr");
      const uint32_t l = r.u32("seq_len");
      const uint32_t d = r.u32("raw_dim");
      if (l == 0 || d == 0 || static_cast<uint64_t>(l) * d > (1u << 28))
        throw ParseError("dataset: implausible signal shape at byte offset " +
                         std::to_string(r.pos));
      std::vector<double> vals(static_cast<size_t>(l) * d);
      r.raw(vals.data(), vals.size() * sizeof(double), "signal_payload");
      sig.sequence = Tensor({static_cast<int>(l), static_cast<int>(d)}, std::move(vals));
    }
    ds.samples.push_back(std::move(s));
  }

  std::ifstream idx(path + ".index");
  if (!idx) throw std::runtime_error("load_dataset: missing index file for " + path);
  std::map<std::string, size_t> by_id;
  for (size_t i = 0; i < ds.samples.size(); ++i) by_id[ds.samples[i].id] = i;
  std::vector<int>* current = nullptr;
  std::string line;
  while (std::getline(idx, line)) {
    if (line.empty()) continue;
    if (line == "[train]") current = &ds.train_idx;
    else if (line == "[valid]") current = &ds.valid_idx;
    else if (line == "[test]") current = &ds.test_idx;
    else {
      if (!current) throw ParseError("dataset index: id before split header");
      auto it = by_id.find(line);
      if (it == by_id.end())
        throw ParseError("dataset index: unknown sample id " + line);
      current->push_back(static_cast<int>(it->second));
    }
  }
  return ds;
}

}  // namespace dcr
