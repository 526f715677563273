#include "usbrain/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "usbrain/error.hpp"
#include "usbrain/random.hpp"

namespace usbrain {

namespace {

constexpr char kMagic[6] = {'N', 'N', 'C', 'K', '1', '\n'};

std::uint32_t filters_of_conv(std::uint32_t index, std::uint32_t f) {
  return index == 0 ? f : index == 1 ? 2 * f : 4 * f;
}

std::uint64_t conv_params(std::uint64_t cin, std::uint64_t cout, std::uint64_t k) {
  return k * k * k * cin * cout + cout + 2 * cout;
}

ConvBlock make_block(std::string name, std::uint32_t cin, std::uint32_t cout, std::uint32_t k,
                     Rng& rng) {
  ConvBlock b;
  b.name = std::move(name);
  b.weight = Tensor<float>(Shape{cout, cin, k, k, k});
  const double bound = std::sqrt(6.0 / double(cin * k * k * k));
  for (auto& w : b.weight.values) w = float(rng.uniform(-bound, bound));
  b.bias = Tensor<float>(Shape{1, cout, 1, 1, 1});
  b.gamma = Tensor<float>(Shape{1, cout, 1, 1, 1}, 1.f);
  b.beta = Tensor<float>(Shape{1, cout, 1, 1, 1});
  b.stats = RunningStats<float>(cout);
  return b;
}

template <typename T>
void put(std::vector<char>& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void get_floats(float* dst, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(Errc::TruncatedPayload, path_ + ": checkpoint truncated");
  }
  const std::vector<char>& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::vector<std::uint32_t> dims_of(const Shape& s, bool vector_like) {
  if (vector_like) return {std::uint32_t(s.numel())};
  return {std::uint32_t(s.n), std::uint32_t(s.c), std::uint32_t(s.d), std::uint32_t(s.h),
          std::uint32_t(s.w)};
}

}  // namespace

void NetworkSpec::validate() const {
  if (l < 1) throw Error(Errc::InvalidSpec, "need at least one pooling level");
  if (f < 1) throw Error(Errc::InvalidSpec, "need at least one filter");
  if (k % 2 == 0) throw Error(Errc::InvalidSpec, "kernel size must be odd");
  if (l >= 31 || n == 0 || n % (1u << l) != 0)
    throw Error(Errc::InvalidSpec, "input size " + std::to_string(n) + " not divisible by 2^" +
                                       std::to_string(l));
}

std::string NetworkSpec::str() const {
  std::ostringstream os;
  os << "n=" << n << " l=" << l << " k=" << k << " f=" << f;
  return os.str();
}

const std::array<NamedSpec, 8>& table1_specs() {
  static const std::array<NamedSpec, 8> specs{{
      {'A', {80, 4, 3, 16}, 1.6e6},
      {'B', {80, 4, 5, 16}, 7.4e6},
      {'C', {80, 4, 7, 16}, 20.3e6},
      {'D', {80, 4, 3, 8}, 0.4e6},
      {'E', {80, 4, 3, 4}, 0.1e6},
      {'F', {160, 4, 3, 4}, 0.1e6},
      {'G', {160, 3, 3, 4}, 0.07e6},
      {'H', {160, 2, 3, 4}, 0.03e6},
  }};
  return specs;
}

std::uint64_t param_count(const NetworkSpec& spec) {
  spec.validate();
  std::uint64_t total = 0;
  std::uint64_t cin = 1;
  std::vector<std::uint64_t> skips;
  std::uint32_t conv_index = 0;
  for (std::uint32_t level = 0; level < spec.l; ++level) {
    for (int j = 0; j < 2; ++j) {
      const std::uint64_t cout = filters_of_conv(conv_index++, spec.f);
      total += conv_params(cin, cout, spec.k);
      cin = cout;
    }
    skips.push_back(cin);
  }
  for (std::uint32_t level = spec.l; level-- > 0;) {
    const std::uint64_t cout = 4ull * spec.f;
    total += conv_params(cin + skips[level], cout, spec.k);
    cin = cout;
  }
  total += cin + 1;  // head
  return total;
}

Network Network::build(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network net;
  net.spec_ = spec;
  net.seed_ = seed;
  Rng rng(seed);
  std::uint32_t cin = 1, conv_index = 0;
  std::vector<std::uint32_t> skips;
  for (std::uint32_t level = 0; level < spec.l; ++level) {
    for (int j = 0; j < 2; ++j) {
      const std::uint32_t cout = filters_of_conv(conv_index++, spec.f);
      net.encoder_.push_back(make_block(
          "enc" + std::to_string(level) + ".conv" + std::to_string(j), cin, cout, spec.k, rng));
      cin = cout;
    }
    skips.push_back(cin);
  }
  net.decoder_.resize(spec.l);
  for (std::uint32_t level = spec.l; level-- > 0;) {
    const std::uint32_t cout = 4 * spec.f;
    net.decoder_[level] =
        make_block("dec" + std::to_string(level) + ".conv", cin + skips[level], cout, spec.k, rng);
    cin = cout;
  }
  net.head_weight_ = Tensor<float>(Shape{1, cin, 1, 1, 1});
  const double bound = std::sqrt(6.0 / double(cin));
  for (auto& w : net.head_weight_.values) w = float(rng.uniform(-bound, bound));
  net.head_bias_ = Tensor<float>(Shape{1, 1, 1, 1, 1});
  return net;
}

std::vector<BlobRef> Network::blobs() {
  std::vector<BlobRef> out;
  auto add_block = [&out](ConvBlock& b) {
    out.push_back({b.name + ".weight", dims_of(b.weight.shape, false), &b.weight.values, true});
    out.push_back({b.name + ".bias", dims_of(b.bias.shape, true), &b.bias.values, true});
    out.push_back({b.name + ".bn.gamma", dims_of(b.gamma.shape, true), &b.gamma.values, true});
    out.push_back({b.name + ".bn.beta", dims_of(b.beta.shape, true), &b.beta.values, true});
    const auto c = std::uint32_t(b.stats.mean.size());
    out.push_back({b.name + ".bn.running_mean", {c}, &b.stats.mean, false});
    out.push_back({b.name + ".bn.running_var", {c}, &b.stats.var, false});
  };
  for (auto& b : encoder_) add_block(b);
  for (std::size_t level = decoder_.size(); level-- > 0;) add_block(decoder_[level]);
  out.push_back({"head.weight", dims_of(head_weight_.shape, false), &head_weight_.values, true});
  out.push_back({"head.bias", {1}, &head_bias_.values, true});
  return out;
}

std::vector<std::vector<float>*> Network::trainable() {
  std::vector<std::vector<float>*> out;
  for (auto& b : blobs())
    if (b.trainable) out.push_back(b.values);
  return out;
}

std::vector<const std::vector<float>*> Network::trainable() const {
  auto& self = const_cast<Network&>(*this);
  std::vector<const std::vector<float>*> out;
  for (auto* p : self.trainable()) out.push_back(p);
  return out;
}

std::size_t Network::trainable_count() const {
  std::size_t total = 0;
  for (const auto* p : trainable()) total += p->size();
  return total;
}

Var Network::forward(Tape<float>& tape, Var input, BnMode mode, std::vector<Var>* params) {
  const Shape s = tape[input].shape;
  if (s.c != 1 || s.d != spec_.n || s.h != spec_.n || s.w != spec_.n)
    throw Error(Errc::ShapeMismatch,
                "network " + spec_.str() + " expects (b,1,n,n,n), got " + s.str());
  const bool grads = params != nullptr;
  auto param = [&](Tensor<float>& t) {
    Var v = tape.leaf(t, grads);
    if (params) params->push_back(v);
    return v;
  };
  auto block = [&](ConvBlock& b, Var x) {
    const Var w = param(b.weight);
    const Var bias = param(b.bias);
    const Var gamma = param(b.gamma);
    const Var beta = param(b.beta);
    x = conv3d(tape, x, w, bias);
    x = batchnorm3d(tape, x, gamma, beta, mode, &b.stats);
    return relu(tape, x);
  };

  // Leaves must be created in trainable() order: encoder blocks, decoder
  // blocks from the deepest level up, head.
  Var x = input;
  std::vector<Var> skips;
  for (std::uint32_t level = 0; level < spec_.l; ++level) {
    x = block(encoder_[2 * level], x);
    x = block(encoder_[2 * level + 1], x);
    skips.push_back(x);
    x = maxpool3d(tape, x);
  }
  for (std::uint32_t level = spec_.l; level-- > 0;) {
    x = upsample_nearest(tape, x);
    x = concat_channels(tape, x, skips[level]);
    x = block(decoder_[level], x);
  }
  const Var hw = param(head_weight_);
  const Var hb = param(head_bias_);
  x = conv3d(tape, x, hw, hb);
  return sigmoid(tape, x);
}

Tensor<float> Network::predict(const Tensor<float>& input) const {
  // Eval mode reads the running statistics without modifying them.
  auto& self = const_cast<Network&>(*this);
  Tape<float> tape(false);
  const Var x = tape.leaf(input, false);
  const Var y = self.forward(tape, x, BnMode::Eval, nullptr);
  return std::move(tape[y]);
}

void save_checkpoint(Network& net, const std::filesystem::path& path) {
  std::vector<char> out(kMagic, kMagic + sizeof(kMagic));
  const auto& s = net.spec();
  put(out, s.n);
  put(out, s.l);
  put(out, s.k);
  put(out, s.f);
  put(out, std::uint64_t(net.step()));
  put(out, std::uint64_t(net.seed()));
  const auto blobs = net.blobs();
  put(out, std::uint32_t(blobs.size()));
  for (const auto& b : blobs) {
    put(out, std::uint16_t(b.name.size()));
    out.insert(out.end(), b.name.begin(), b.name.end());
    put(out, std::uint32_t(b.dims.size()));
    for (auto d : b.dims) put(out, d);
    const auto* p = reinterpret_cast<const char*>(b.values->data());
    out.insert(out.end(), p, p + b.values->size() * sizeof(float));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::IoFailure, "cannot write " + path.string());
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw Error(Errc::IoFailure, "short write to " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw Error(Errc::BadMagic, path.string() + " is not an NNCK1 checkpoint");
  Reader r(bytes, path.string());
  r.get_string(sizeof(kMagic));
  NetworkSpec spec;
  spec.n = r.get<std::uint32_t>();
  spec.l = r.get<std::uint32_t>();
  spec.k = r.get<std::uint32_t>();
  spec.f = r.get<std::uint32_t>();
  const auto step = r.get<std::uint64_t>();
  const auto seed = r.get<std::uint64_t>();
  try {
    spec.validate();
  } catch (const Error& e) {
    throw Error(Errc::SpecMismatch, path.string() + ": " + e.what());
  }
  Network net = Network::build(spec, seed);
  net.set_step(step);
  auto blobs = net.blobs();
  const auto count = r.get<std::uint32_t>();
  if (count != blobs.size())
    throw Error(Errc::SpecMismatch, path.string() + ": blob count " + std::to_string(count) +
                                        " does not match spec (" + std::to_string(blobs.size()) + ")");
  for (auto& b : blobs) {
    const auto name_len = r.get<std::uint16_t>();
    const std::string name = r.get_string(name_len);
    if (name != b.name)
      throw Error(Errc::SpecMismatch, path.string() + ": expected blob " + b.name + ", found " + name);
    const auto rank = r.get<std::uint32_t>();
    std::vector<std::uint32_t> dims(rank);
    for (auto& d : dims) d = r.get<std::uint32_t>();
    if (dims != b.dims) throw Error(Errc::SpecMismatch, path.string() + ": shape mismatch for " + name);
    r.get_floats(b.values->data(), b.values->size());
  }
  return net;
}

}  // namespace usbrain
