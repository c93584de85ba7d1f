#include <array>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "tse/nn/model.hpp"

namespace tse::nn {

void validate_arch(const ModelArch& arch) {
  if (arch.encoder.empty() || arch.encoder.size() != arch.decoder.size())
    throw std::invalid_argument("arch: encoder and decoder must have equal, nonzero depth");
  auto check = [](const LayerSpec& s) {
    if (s.k < 1 || s.k % 2 == 0 || s.c_out < 1)
      throw std::invalid_argument("arch: kernels must be odd and channels positive");
  };
  for (const auto& s : arch.encoder) check(s);
  for (const auto& s : arch.decoder) check(s);
  check(arch.head);
  if (arch.head.c_out != 1) throw std::invalid_argument("arch: head must produce one channel");
}

namespace {

const char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const unsigned char* data, std::size_t n) {
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t k = 0; k < n; k += 3) {
    unsigned v = data[k] << 16;
    if (k + 1 < n) v |= data[k + 1] << 8;
    if (k + 2 < n) v |= data[k + 2];
    out += kB64Alphabet[(v >> 18) & 63];
    out += kB64Alphabet[(v >> 12) & 63];
    out += k + 1 < n ? kB64Alphabet[(v >> 6) & 63] : '=';
    out += k + 2 < n ? kB64Alphabet[v & 63] : '=';
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (int k = 0; k < 64; ++k) lut[static_cast<unsigned char>(kB64Alphabet[k])] = k;
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  int buffer = 0, bits = 0;
  for (char ch : text) {
    if (ch == '=') break;
    int v = lut[static_cast<unsigned char>(ch)];
    if (v < 0) throw std::runtime_error("model file: invalid base64 payload");
    buffer = (buffer << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((buffer >> bits) & 0xff));
    }
  }
  return out;
}

template <typename T>
std::string encode_values(const std::vector<T>& values) {
  return base64_encode(reinterpret_cast<const unsigned char*>(values.data()),
                       values.size() * sizeof(T));
}

template <typename T>
std::vector<T> decode_values(const std::string& text, std::size_t expected) {
  std::vector<unsigned char> bytes = base64_decode(text);
  if (bytes.size() != expected * sizeof(T))
    throw std::runtime_error("model file: payload size does not match layer shape");
  std::vector<T> values(expected);
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return values;
}

template <typename T>
const char* dtype_name();
template <>
const char* dtype_name<float>() { return "f32"; }
template <>
const char* dtype_name<double>() { return "f64"; }

std::string mask_string(const KernelMask& mask) {
  std::string s(mask.cells.size(), '0');
  for (std::size_t k = 0; k < mask.cells.size(); ++k)
    if (mask.cells[k]) s[k] = '1';
  return s;
}

template <typename T>
void save_model_impl(const ConvModel<T>& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "tse-model";
  j["version"] = 1;
  j["dtype"] = dtype_name<T>();
  j["kernel"] = model.kind == KernelKind::anisotropic ? "anisotropic" : "isotropic";
  j["waves"] = {{"c_v_max_kmph", model.waves.c_v_max_kmph},
                {"c_v_min_kmph", model.waves.c_v_min_kmph},
                {"c_w_kmph", model.waves.c_w_kmph}};
  j["grid"] = {{"dx_m", model.grid_dx_m}, {"dt_s", model.grid_dt_s}};
  j["v_scale_kmph"] = model.v_scale_kmph;

  auto spec_list = [](const std::vector<LayerSpec>& specs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : specs) arr.push_back({s.k, s.c_out});
    return arr;
  };
  j["arch"] = {{"encoder", spec_list(model.arch.encoder)},
               {"decoder", spec_list(model.arch.decoder)},
               {"head", {model.arch.head.k, model.arch.head.c_out}}};

  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : model.layers) {
    layers.push_back({{"c_in", layer.c_in},
                      {"c_out", layer.c_out},
                      {"kh", layer.kh},
                      {"kw", layer.kw},
                      {"mask", mask_string(layer.mask)},
                      {"weights_b64", encode_values(layer.weights)},
                      {"bias_b64", encode_values(layer.bias)}});
  }
  j["layers"] = std::move(layers);

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file: " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<LayerSpec> parse_specs(const nlohmann::json& arr) {
  std::vector<LayerSpec> specs;
  for (const auto& e : arr) specs.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
  return specs;
}

template <typename T>
ConvModel<T> load_model_impl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("model file " + path.string() + ": " + e.what());
  }

  try {
    if (j.at("format").get<std::string>() != "tse-model")
      throw std::runtime_error("not a model file");
    if (j.at("version").get<int>() != 1) throw std::runtime_error("unsupported model version");
    if (j.at("dtype").get<std::string>() != dtype_name<T>())
      throw std::runtime_error("model dtype does not match the requested precision");

    ConvModel<T> model;
    std::string kernel = j.at("kernel").get<std::string>();
    if (kernel == "anisotropic")
      model.kind = KernelKind::anisotropic;
    else if (kernel == "isotropic")
      model.kind = KernelKind::isotropic;
    else
      throw std::runtime_error("unknown kernel kind '" + kernel + "'");

    const auto& waves = j.at("waves");
    model.waves.c_v_max_kmph = waves.at("c_v_max_kmph").get<double>();
    model.waves.c_v_min_kmph = waves.at("c_v_min_kmph").get<double>();
    model.waves.c_w_kmph = waves.at("c_w_kmph").get<double>();
    model.grid_dx_m = j.at("grid").at("dx_m").get<double>();
    model.grid_dt_s = j.at("grid").at("dt_s").get<double>();
    model.v_scale_kmph = j.at("v_scale_kmph").get<double>();
    if (!(model.v_scale_kmph > 0.0)) throw std::runtime_error("v_scale must be positive");

    model.arch.encoder = parse_specs(j.at("arch").at("encoder"));
    model.arch.decoder = parse_specs(j.at("arch").at("decoder"));
    model.arch.head = {j.at("arch").at("head").at(0).get<int>(),
                       j.at("arch").at("head").at(1).get<int>()};
    validate_arch(model.arch);

    std::vector<LayerSpec> chain = model.arch.encoder;
    chain.insert(chain.end(), model.arch.decoder.begin(), model.arch.decoder.end());
    chain.push_back(model.arch.head);

    int c_in = 3;
    for (std::size_t l = 0; l < chain.size(); ++l) {
      const auto& e = j.at("layers").at(l);
      ConvLayer<T> layer;
      layer.c_in = e.at("c_in").get<int>();
      layer.c_out = e.at("c_out").get<int>();
      layer.kh = e.at("kh").get<int>();
      layer.kw = e.at("kw").get<int>();
      if (layer.c_in != c_in || layer.c_out != chain[l].c_out || layer.kh != chain[l].k ||
          layer.kw != chain[l].k)
        throw std::runtime_error("layer " + std::to_string(l) + " does not match architecture");

      std::string mask_text = e.at("mask").get<std::string>();
      if (mask_text.size() != static_cast<std::size_t>(layer.kh) * layer.kw)
        throw std::runtime_error("layer " + std::to_string(l) + ": mask length mismatch");
      layer.mask.kh = layer.kh;
      layer.mask.kw = layer.kw;
      layer.mask.cells.assign(mask_text.size(), 0);
      for (std::size_t k = 0; k < mask_text.size(); ++k) {
        if (mask_text[k] != '0' && mask_text[k] != '1')
          throw std::runtime_error("layer " + std::to_string(l) + ": mask must be 0/1");
        layer.mask.cells[k] = mask_text[k] == '1';
      }
      KernelMask expected =
          model.kind == KernelKind::anisotropic
              ? build_anisotropic_mask(layer.kh, layer.kw, model.waves, model.grid_dx_m,
                                       model.grid_dt_s)
              : build_isotropic_mask(layer.kh, layer.kw);
      if (layer.mask != expected)
        throw std::runtime_error("layer " + std::to_string(l) +
                                 ": stored mask does not match the declared wave geometry");

      layer.weights = decode_values<T>(e.at("weights_b64").get<std::string>(),
                                       layer.weight_count());
      layer.bias = decode_values<T>(e.at("bias_b64").get<std::string>(),
                                    static_cast<std::size_t>(layer.c_out));
      layer.rebuild_support();
      for (int o = 0; o < layer.c_out; ++o)
        for (int ci = 0; ci < layer.c_in; ++ci)
          for (int u = 0; u < layer.kh; ++u)
            for (int v = 0; v < layer.kw; ++v)
              if (!layer.mask.at(u - layer.kh / 2, v - layer.kw / 2) &&
                  layer.weight(o, ci, u, v) != T(0))
                throw std::runtime_error("layer " + std::to_string(l) +
                                         ": nonzero weight on a masked kernel cell");
      model.layers.push_back(std::move(layer));
      c_in = chain[l].c_out;
    }
    if (j.at("layers").size() != chain.size())
      throw std::runtime_error("unexpected number of layers");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("model file " + path.string() + ": " + e.what());
  }
}

} // namespace

void save_model(const ConvModel<float>& model, const std::filesystem::path& path) {
  save_model_impl(model, path);
}
void save_model(const ConvModel<double>& model, const std::filesystem::path& path) {
  save_model_impl(model, path);
}

template <typename T>
ConvModel<T> load_model(const std::filesystem::path& path) {
  return load_model_impl<T>(path);
}

template ConvModel<float> load_model<float>(const std::filesystem::path&);
template ConvModel<double> load_model<double>(const std::filesystem::path&);

} // namespace tse::nn
