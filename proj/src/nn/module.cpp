#include "jekyll/nn/module.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace jekyll::nn {

namespace {

constexpr char kMagic[4] = {'J', 'K', 'W', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated weight file");
  return v;
}

}  // namespace

void ParameterStore::begin_layer(const std::string& name) {
  layers_.push_back(name);
  prefix_ = name;
}

Var ParameterStore::add(const std::string& name, Tensor init) {
  if (layers_.empty()) throw std::logic_error("parameter registered outside a layer");
  Var v(std::move(init), true);
  entries_.push_back({prefix_ + "." + name, v, false, layer_count() - 1});
  return v;
}

Var ParameterStore::add_buffer(const std::string& name, Tensor init) {
  if (layers_.empty()) throw std::logic_error("buffer registered outside a layer");
  Var v(std::move(init), false);
  entries_.push_back({prefix_ + "." + name, v, true, layer_count() - 1});
  return v;
}

bool ParameterStore::has_layer(const std::string& name) const {
  for (const auto& l : layers_)
    if (l == name) return true;
  return false;
}

const NamedParameter* ParameterStore::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

std::vector<Var> ParameterStore::trainable() const {
  std::vector<Var> out;
  for (const auto& e : entries_)
    if (!e.buffer && e.var.requires_grad()) out.push_back(e.var);
  return out;
}

std::vector<Var> ParameterStore::all_parameters() const {
  std::vector<Var> out;
  for (const auto& e : entries_)
    if (!e.buffer) out.push_back(e.var);
  return out;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (!e.buffer) n += e.var.value().size();
  return n;
}

void ParameterStore::set_trainable(bool on) {
  for (auto& e : entries_)
    if (!e.buffer) e.var.set_requires_grad(on);
}

void ParameterStore::freeze_all_but_last(int k) {
  const int first_trainable = layer_count() - k;
  for (auto& e : entries_)
    if (!e.buffer) e.var.set_requires_grad(e.layer >= first_trainable);
}

void ParameterStore::zero_grad() const {
  for (const auto& e : entries_) e.var.zero_grad();
}

std::string ParameterStore::digest() const {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  for (const auto& e : entries_) {
    EVP_DigestUpdate(ctx.get(), e.name.data(), e.name.size());
    const auto& shape = e.var.shape();
    EVP_DigestUpdate(ctx.get(), shape.data(), shape.size() * sizeof(int));
    EVP_DigestUpdate(ctx.get(), e.var.value().data(), e.var.value().size() * sizeof(Real));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

void ParameterStore::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write weights to " + path.string());
  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const auto& shape = e.var.shape();
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) write_pod<std::int32_t>(os, d);
    for (Real v : e.var.value().values()) write_pod<float>(os, static_cast<float>(v));
  }
  if (!os) throw std::runtime_error("failed writing weights to " + path.string());
}

void ParameterStore::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read weights from " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4))
    throw std::runtime_error("not a weight file: " + path.string());
  const auto count = read_pod<std::uint32_t>(is);
  if (count != entries_.size())
    throw std::runtime_error("weight file " + path.string() + " has " + std::to_string(count) +
                             " tensors, network expects " + std::to_string(entries_.size()));
  for (auto& e : entries_) {
    const auto len = read_pod<std::uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (name != e.name) throw std::runtime_error("weight file tensor " + name + " != " + e.name);
    const auto rank = read_pod<std::uint32_t>(is);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = read_pod<std::int32_t>(is);
    if (shape != e.var.shape()) throw std::runtime_error("shape mismatch for " + e.name);
    for (auto& v : e.var.mutable_value().storage()) v = static_cast<Real>(read_pod<float>(is));
  }
}

std::size_t ParameterStore::load_matching(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read weights from " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4))
    throw std::runtime_error("not a weight file: " + path.string());
  const auto count = read_pod<std::uint32_t>(is);
  std::size_t loaded = 0;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = read_pod<std::uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rank = read_pod<std::uint32_t>(is);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = read_pod<std::int32_t>(is);
    std::vector<float> values(element_count(shape));
    for (auto& v : values) v = read_pod<float>(is);
    for (auto& e : entries_) {
      if (e.name == name && e.var.shape() == shape) {
        auto& dst = e.var.mutable_value().storage();
        for (std::size_t i = 0; i < values.size(); ++i) dst[i] = static_cast<Real>(values[i]);
        ++loaded;
        break;
      }
    }
  }
  return loaded;
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  if (other.entries_.size() != entries_.size())
    throw std::invalid_argument("copy_values_from: parameter layout differs");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name ||
        entries_[i].var.shape() != other.entries_[i].var.shape())
      throw std::invalid_argument("copy_values_from: mismatch at " + entries_[i].name);
    entries_[i].var.mutable_value() = other.entries_[i].var.value();
  }
}

Var BatchNorm2d::operator()(const Var& x, bool training) const {
  Var rm = running_mean;
  Var rv = running_var;
  return batch_norm(x, gamma, beta, rm.mutable_value(), rv.mutable_value(), training);
}

Tensor LayerFactory::init_weight(std::vector<int> shape, int fan_in) {
  Tensor t(std::move(shape));
  switch (scheme_) {
    case InitScheme::normal_002: {
      std::normal_distribution<double> d(0.0, 0.02);
      for (auto& v : t.storage()) v = static_cast<Real>(d(rng_));
      break;
    }
    case InitScheme::kaiming_uniform: {
      const double bound = std::sqrt(6.0 / std::max(1, fan_in));
      std::uniform_real_distribution<double> d(-bound, bound);
      for (auto& v : t.storage()) v = static_cast<Real>(d(rng_));
      break;
    }
    case InitScheme::zeros:
      break;
  }
  return t;
}

Conv2d LayerFactory::conv(const std::string& name, int in, int out, int kernel,
                          Conv2dGeometry geom, bool bias) {
  store_.begin_layer(name);
  Conv2d c;
  c.weight = store_.add("weight", init_weight({out, in, kernel, kernel}, in * kernel * kernel));
  if (bias) c.bias = store_.add("bias", Tensor({out}));
  c.geometry = geom;
  return c;
}

ConvTranspose2d LayerFactory::deconv(const std::string& name, int in, int out, int kernel,
                                     int stride, int padding, int output_padding, bool bias) {
  store_.begin_layer(name);
  ConvTranspose2d c;
  c.weight = store_.add("weight", init_weight({in, out, kernel, kernel}, in * kernel * kernel));
  if (bias) c.bias = store_.add("bias", Tensor({out}));
  c.stride = stride;
  c.padding = padding;
  c.output_padding = output_padding;
  return c;
}

InstanceNorm2d LayerFactory::instance_norm(const std::string& name, int channels) {
  store_.begin_layer(name);
  InstanceNorm2d n;
  n.gamma = store_.add("gamma", Tensor({channels}, Real(1)));
  n.beta = store_.add("beta", Tensor({channels}));
  return n;
}

BatchNorm2d LayerFactory::batch_norm(const std::string& name, int channels) {
  store_.begin_layer(name);
  BatchNorm2d n;
  n.gamma = store_.add("gamma", Tensor({channels}, Real(1)));
  n.beta = store_.add("beta", Tensor({channels}));
  n.running_mean = store_.add_buffer("running_mean", Tensor({channels}));
  n.running_var = store_.add_buffer("running_var", Tensor({channels}, Real(1)));
  return n;
}

Dense LayerFactory::dense(const std::string& name, int in, int out) {
  store_.begin_layer(name);
  Dense d;
  d.weight = store_.add("weight", init_weight({out, in}, in));
  d.bias = store_.add("bias", Tensor({out}));
  return d;
}

}  // namespace jekyll::nn
