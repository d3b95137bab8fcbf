#include "dcr/encoders.hpp"

#include <algorithm>
#include <cmath>

namespace dcr {

namespace {

Tensor init_tensor(std::vector<int> shape, double sd, Rng& rng, bool trainable) {
  size_t n = 1;
  for (int e : shape) n *= static_cast<size_t>(e);
  std::vector<double> vals(n);
  for (auto& v : vals) v = rng.normal(0.0, sd);
  return Tensor(std::move(shape), std::move(vals), trainable);
}

Tensor conv_layer(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  return add_rowvec(temporal_conv1d(x, kernel, 1, 1), bias);
}

}  // namespace

ModalityEncoder ModalityEncoder::init(int raw_dim, int feat_dim,
                                      int num_classes, Rng& rng,
                                      bool trainable) {
  ModalityEncoder e;
  const double sd1 = 1.0 / std::sqrt(3.0 * raw_dim);
  const double sd2 = 1.0 / std::sqrt(3.0 * feat_dim);
  const double sdd = 1.0 / std::sqrt(static_cast<double>(feat_dim));
  e.conv1_k = init_tensor({3, raw_dim, feat_dim}, sd1, rng, trainable);
  e.conv1_b = Tensor::full({feat_dim}, 0.01, trainable);
  e.conv2_k = init_tensor({3, feat_dim, feat_dim}, sd2, rng, trainable);
  e.conv2_b = Tensor::full({feat_dim}, 0.01, trainable);
  e.wq = init_tensor({feat_dim, feat_dim}, sdd, rng, trainable);
  e.bq = Tensor::zeros({feat_dim}, trainable);
  e.wk = init_tensor({feat_dim, feat_dim}, sdd, rng, trainable);
  e.bk = Tensor::zeros({feat_dim}, trainable);
  e.wv = init_tensor({feat_dim, feat_dim}, sdd, rng, trainable);
  e.bv = Tensor::zeros({feat_dim}, trainable);
  e.wo = init_tensor({feat_dim, feat_dim}, sdd, rng, trainable);
  e.bo = Tensor::zeros({feat_dim}, trainable);
  e.ln_gain = Tensor::full({feat_dim}, 1.0, trainable);
  e.ln_bias = Tensor::zeros({feat_dim}, trainable);
  e.head_w = init_tensor({feat_dim, num_classes}, sdd, rng, trainable);
  e.head_b = Tensor::zeros({num_classes}, trainable);
  return e;
}

NamedParams ModalityEncoder::named_params(const std::string& prefix) const {
  return {
      {prefix + ".conv1_k", conv1_k}, {prefix + ".conv1_b", conv1_b},
      {prefix + ".conv2_k", conv2_k}, {prefix + ".conv2_b", conv2_b},
      {prefix + ".wq", wq}, {prefix + ".bq", bq},
      {prefix + ".wk", wk}, {prefix + ".bk", bk},
      {prefix + ".wv", wv}, {prefix + ".bv", bv},
      {prefix + ".wo", wo}, {prefix + ".bo", bo},
      {prefix + ".ln_gain", ln_gain}, {prefix + ".ln_bias", ln_bias},
      {prefix + ".head_w", head_w}, {prefix + ".head_b", head_b},
  };
}

std::vector<Tensor> ModalityEncoder::trainable_params() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_params(""))
    if (t.requires_grad()) out.push_back(t);
  return out;
}

EncoderParams EncoderParams::init(const DatasetManifest& manifest, int feat_dim,
                                  Rng& rng, bool trainable) {
  EncoderParams p;
  p.feat_dim = feat_dim;
  p.num_classes = manifest.num_classes;
  for (int mi = 0; mi < kNumModalities; ++mi)
    p.mods[static_cast<size_t>(mi)] = ModalityEncoder::init(
        manifest.raw_dim[static_cast<size_t>(mi)], feat_dim, manifest.num_classes, rng, trainable);
  return p;
}

NamedParams EncoderParams::named_params() const {
  NamedParams out;
  const char* names[3] = {"enc_t", "enc_a", "enc_v"};
  for (int mi = 0; mi < kNumModalities; ++mi)
    for (auto& kv : mods[static_cast<size_t>(mi)].named_params(names[mi]))
      out.push_back(kv);
  return out;
}

std::vector<Tensor> EncoderParams::trainable_params() const {
  std::vector<Tensor> out;
  for (const auto& m : mods)
    for (auto& t : m.trainable_params()) out.push_back(t);
  return out;
}

GeneralEncoderParams GeneralEncoderParams::init_random(
    const DatasetManifest& manifest, int feat_dim, uint64_t seed) {
  GeneralEncoderParams p;
  p.feat_dim = feat_dim;
  p.provenance = GeneralProvenance::SeededRandom;
  Rng rng(Rng::mix(seed, 0x6765ULL));
  for (int mi = 0; mi < kNumModalities; ++mi) {
    const int rd = manifest.raw_dim[static_cast<size_t>(mi)];
    auto& s = p.mods[static_cast<size_t>(mi)];
    s.conv1_k = init_tensor({3, rd, feat_dim}, 1.0 / std::sqrt(3.0 * rd), rng, false);
    s.conv1_b = Tensor::full({feat_dim}, 0.01, false);
    s.conv2_k = init_tensor({3, feat_dim, feat_dim},
                            1.0 / std::sqrt(3.0 * feat_dim), rng, false);
    s.conv2_b = Tensor::full({feat_dim}, 0.01, false);
  }
  return p;
}

NamedParams GeneralEncoderParams::named_params() const {
  NamedParams out;
  const char* names[3] = {"gen_t", "gen_a", "gen_v"};
  for (int mi = 0; mi < kNumModalities; ++mi) {
    const auto& s = mods[static_cast<size_t>(mi)];
    out.push_back({std::string(names[mi]) + ".conv1_k", s.conv1_k});
    out.push_back({std::string(names[mi]) + ".conv1_b", s.conv1_b});
    out.push_back({std::string(names[mi]) + ".conv2_k", s.conv2_k});
    out.push_back({std::string(names[mi]) + ".conv2_b", s.conv2_b});
  }
  return out;
}

Tensor encode_affective(const ModalitySignal& signal, const ModalityEncoder& enc) {
  if (signal.sequence.dim(1) != enc.conv1_k.dim(1))
    throw ArgumentError("encode_affective: raw dim mismatch");
  Tensor h = relu(conv_layer(signal.sequence, enc.conv1_k, enc.conv1_b));
  h = relu(conv_layer(h, enc.conv2_k, enc.conv2_b));
  Tensor q = affine(h, enc.wq, enc.bq);
  Tensor k = affine(h, enc.wk, enc.bk);
  Tensor v = affine(h, enc.wv, enc.bv);
  Tensor attended = affine(scaled_dot_attention(q, k, v), enc.wo, enc.bo);
  return layer_norm(add(h, attended), enc.ln_gain, enc.ln_bias);
}

Tensor encode_general(const ModalitySignal& signal,
                      const GeneralEncoderParams& params) {
  const auto& s = params.mods[static_cast<size_t>(static_cast<int>(signal.modality))];
  if (signal.sequence.dim(1) != s.conv1_k.dim(1))
    throw ArgumentError("encode_general: raw dim mismatch");
  Tensor h = relu(conv_layer(signal.sequence.detach(), s.conv1_k, s.conv1_b));
  return relu(conv_layer(h, s.conv2_k, s.conv2_b));
}

Tensor temporal_logits(const Tensor& features, const ModalityEncoder& enc) {
  return affine(features, enc.head_w, enc.head_b);
}

Tensor pooled_logits(const Tensor& features, const ModalityEncoder& enc) {
  return mean_rows(temporal_logits(features, enc));
}

std::array<Tensor, kNumModalities> encode_all(const Sample& sample,
                                              const EncoderParams& params) {
  std::array<Tensor, kNumModalities> out;
  for (int mi = 0; mi < kNumModalities; ++mi)
    out[static_cast<size_t>(mi)] = encode_affective(sample.signals[static_cast<size_t>(mi)],
                                                    params.mods[static_cast<size_t>(mi)]);
  const int l = out[0].dim(0);
  if (out[1].dim(0) != l || out[2].dim(0) != l)
    throw ArgumentError("encode_all: modality alignment violated");
  return out;
}

GeneralAutoencoder pretrain_general(const Dataset& ds, int feat_dim,
                                    int epochs, double lr, uint64_t seed,
                                    bool train_encoder) {
  GeneralAutoencoder ae;
  Rng rng(Rng::mix(seed, 0xAE0ULL));
  const auto& manifest = ds.manifest;

  // Encoder params start from the seeded-random stack; trainable copies are
  // made only when the encoder itself is being fitted.
  GeneralEncoderParams random_enc =
      GeneralEncoderParams::init_random(manifest, feat_dim, seed);
  struct TrainStack {
    Tensor e1k, e1b, e2k, e2b, d1k, d1b, d2k, d2b;
  };
  std::array<TrainStack, kNumModalities> stacks;
  std::vector<Tensor> params;
  for (int mi = 0; mi < kNumModalities; ++mi) {
    const int rd = manifest.raw_dim[static_cast<size_t>(mi)];
    auto& st = stacks[static_cast<size_t>(mi)];
    const auto& re = random_enc.mods[static_cast<size_t>(mi)];
    st.e1k = Tensor(re.conv1_k.shape(), re.conv1_k.values(), train_encoder);
    st.e1b = Tensor(re.conv1_b.shape(), re.conv1_b.values(), train_encoder);
    st.e2k = Tensor(re.conv2_k.shape(), re.conv2_k.values(), train_encoder);
    st.e2b = Tensor(re.conv2_b.shape(), re.conv2_b.values(), train_encoder);
    st.d1k = init_tensor({3, feat_dim, feat_dim}, 1.0 / std::sqrt(3.0 * feat_dim), rng, true);
    st.d1b = Tensor::full({feat_dim}, 0.01, true);
    st.d2k = init_tensor({3, feat_dim, rd}, 1.0 / std::sqrt(3.0 * feat_dim), rng, true);
    st.d2b = Tensor::zeros({rd}, true);
    if (train_encoder) {
      params.push_back(st.e1k); params.push_back(st.e1b);
      params.push_back(st.e2k); params.push_back(st.e2b);
    }
    params.push_back(st.d1k); params.push_back(st.d1b);
    params.push_back(st.d2k); params.push_back(st.d2b);
  }

  std::vector<int> clean;
  for (int i : ds.train_idx)
    if (ds.samples[static_cast<size_t>(i)].conflict_class == ConflictClass::None)
      clean.push_back(i);
  if (clean.empty()) throw ArgumentError("pretrain_general: no clean samples");

  AdamOptimizer opt(params, lr);
  const int batch = 16;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng order_rng(Rng::mix(seed, 0xE90C + static_cast<uint64_t>(epoch)));
    std::vector<int> order = clean;
    std::shuffle(order.begin(), order.end(), order_rng.engine());
    for (size_t b = 0; b < order.size(); b += batch) {
      opt.zero_grad();
      Tensor loss = Tensor::scalar(0.0);
      const size_t end = std::min(order.size(), b + batch);
      for (size_t i = b; i < end; ++i) {
        const auto& sample = ds.samples[static_cast<size_t>(order[i])];
        for (int mi = 0; mi < kNumModalities; ++mi) {
          auto& st = stacks[static_cast<size_t>(mi)];
          const Tensor x = sample.signals[static_cast<size_t>(mi)].sequence.detach();
          Tensor h = relu(conv_layer(x, st.e1k, st.e1b));
          h = relu(conv_layer(h, st.e2k, st.e2b));
          Tensor r = relu(conv_layer(h, st.d1k, st.d1b));
          r = conv_layer(r, st.d2k, st.d2b);
          loss = add(loss, mean(square(sub(r, x))));
        }
      }
      loss = scale(loss, 1.0 / (3.0 * static_cast<double>(end - b)));
      loss.backward();
      opt.step();
    }
  }

  ae.encoder.feat_dim = feat_dim;
  ae.encoder.provenance = train_encoder ? GeneralProvenance::Reconstruction
                                        : GeneralProvenance::SeededRandom;
  for (int mi = 0; mi < kNumModalities; ++mi) {
    auto& st = stacks[static_cast<size_t>(mi)];
    auto& dst = ae.encoder.mods[static_cast<size_t>(mi)];
    dst.conv1_k = st.e1k.detach();
    dst.conv1_b = st.e1b.detach();
    dst.conv2_k = st.e2k.detach();
    dst.conv2_b = st.e2b.detach();
    auto& dd = ae.decoders[static_cast<size_t>(mi)];
    dd.conv1_k = st.d1k.detach();
    dd.conv1_b = st.d1b.detach();
    dd.conv2_k = st.d2k.detach();
    dd.conv2_b = st.d2b.detach();
  }
  return ae;
}

double reconstruction_error(const Dataset& ds, const GeneralAutoencoder& ae,
                            const std::vector<int>& sample_indices) {
  if (sample_indices.empty())
    throw ArgumentError("reconstruction_error: empty index set");
  double total = 0.0;
  for (int i : sample_indices) {
    const auto& sample = ds.samples[static_cast<size_t>(i)];
    for (int mi = 0; mi < kNumModalities; ++mi) {
      const Tensor x = sample.signals[static_cast<size_t>(mi)].sequence.detach();
      Tensor h = encode_general(sample.signals[static_cast<size_t>(mi)], ae.encoder);
      const auto& dd = ae.decoders[static_cast<size_t>(mi)];
      Tensor r = relu(conv_layer(h, dd.conv1_k, dd.conv1_b));
      r = conv_layer(r, dd.conv2_k, dd.conv2_b);
      total += mean(square(sub(r, x))).item();
    }
  }
  return total / (3.0 * static_cast<double>(sample_indices.size()));
}

}  // namespace dcr
