#include "mpq/model_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mpq/error.hpp"

namespace mpq {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = bytes[i] << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ParseError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::array<int, 4> v{};
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + static_cast<std::size_t>(j)];
      if (c == '=' && i + 4 == text.size() && j >= 2) {
        v[static_cast<std::size_t>(j)] = 0;
        ++pad;
        continue;
      }
      if (pad) throw ParseError("base64 padding in the middle of a quantum");
      v[static_cast<std::size_t>(j)] = decode_char(c);
      if (v[static_cast<std::size_t>(j)] < 0) throw ParseError("invalid base64 character");
    }
    const std::uint32_t q = (static_cast<std::uint32_t>(v[0]) << 18) |
                            (static_cast<std::uint32_t>(v[1]) << 12) |
                            (static_cast<std::uint32_t>(v[2]) << 6) |
                            static_cast<std::uint32_t>(v[3]);
    out.push_back(static_cast<std::uint8_t>(q >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((q >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(q & 0xff));
  }
  return out;
}

std::string encode_f32(const Tensor& t) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(t.numel() * 4);
  for (double v : t.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return base64_encode(bytes);
}

std::vector<double> decode_f32(const std::string& text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % 4 != 0) throw ParseError("weight blob is not a whole number of float32s");
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    const float f = std::bit_cast<float>(bits);
    if (!std::isfinite(f)) throw ParseError("weight blob contains a non-finite value");
    out[i] = f;
  }
  return out;
}

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

ordered_json layers_to_json(const std::vector<Layer>& layers) {
  ordered_json arr = ordered_json::array();
  for (const Layer& l : layers) {
    arr.push_back(std::visit(
        overloaded{
            [](const Dense& d) {
              return ordered_json{{"kind", "dense"},
                                  {"in", d.in},
                                  {"out", d.out},
                                  {"weights", encode_f32(d.weights)},
                                  {"bias", encode_f32(d.bias)}};
            },
            [](const Conv2d& c) {
              return ordered_json{{"kind", "conv2d"},     {"in_ch", c.in_ch},
                                  {"out_ch", c.out_ch},   {"kh", c.kh},
                                  {"kw", c.kw},           {"stride", c.stride},
                                  {"zero_pad", c.zero_pad}, {"kernels", encode_f32(c.kernels)},
                                  {"bias", encode_f32(c.bias)}};
            },
            [](const Relu&) { return ordered_json{{"kind", "relu"}}; },
            [](const Flatten&) { return ordered_json{{"kind", "flatten"}}; },
            [](const Residual& r) {
              return ordered_json{{"kind", "residual"}, {"body", layers_to_json(r.body)}};
            },
        },
        l.op));
  }
  return arr;
}

std::size_t get_size(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<std::int64_t>() < 0) {
    throw SchemaError(std::string("layer field '") + key + "' must be a nonnegative integer");
  }
  return j[key].get<std::size_t>();
}

Tensor get_tensor(const json& j, const char* key, Shape shape) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw SchemaError(std::string("layer field '") + key + "' must be a base64 string");
  }
  auto values = decode_f32(j[key].get<std::string>());
  if (values.size() != shape_numel(shape)) {
    throw ShapeError(std::string("layer field '") + key + "' holds " +
                     std::to_string(values.size()) + " values, shape " + shape_str(shape) +
                     " needs " + std::to_string(shape_numel(shape)));
  }
  return Tensor(std::move(shape), std::move(values));
}

std::vector<Layer> layers_from_json(const json& arr) {
  if (!arr.is_array()) throw SchemaError("'layers' must be an array");
  std::vector<Layer> layers;
  for (const json& j : arr) {
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
      throw SchemaError("each layer needs a string 'kind'");
    }
    const std::string kind = j["kind"];
    if (kind == "dense") {
      const std::size_t in = get_size(j, "in"), out = get_size(j, "out");
      layers.push_back(Layer{Dense{in, out, get_tensor(j, "weights", {out, in}),
                                   get_tensor(j, "bias", {out})}});
    } else if (kind == "conv2d") {
      Conv2d c;
      c.in_ch = get_size(j, "in_ch");
      c.out_ch = get_size(j, "out_ch");
      c.kh = get_size(j, "kh");
      c.kw = get_size(j, "kw");
      c.stride = get_size(j, "stride");
      c.zero_pad = get_size(j, "zero_pad");
      c.kernels = get_tensor(j, "kernels", {c.out_ch, c.in_ch, c.kh, c.kw});
      c.bias = get_tensor(j, "bias", {c.out_ch});
      layers.push_back(Layer{std::move(c)});
    } else if (kind == "relu") {
      layers.push_back(relu());
    } else if (kind == "flatten") {
      layers.push_back(flatten());
    } else if (kind == "residual") {
      if (!j.contains("body")) throw SchemaError("residual layer needs 'body'");
      layers.push_back(residual(layers_from_json(j["body"])));
    } else {
      throw SchemaError("unknown layer kind '" + kind + "'");
    }
  }
  return layers;
}

}  // namespace

ordered_json save_model(const Network& model) {
  ordered_json doc;
  doc["version"] = 1;
  doc["input_shape"] = model.input_shape();
  doc["loss"] = to_string(model.loss());
  doc["layers"] = layers_to_json(model.layers());
  return doc;
}

Network load_model(const json& doc) {
  if (!doc.is_object()) throw SchemaError("model document must be a JSON object");
  if (!doc.contains("version") || doc["version"] != 1) {
    throw SchemaError("model document version must be 1");
  }
  if (!doc.contains("input_shape") || !doc["input_shape"].is_array()) {
    throw SchemaError("'input_shape' must be an array");
  }
  Shape input;
  for (const json& d : doc["input_shape"]) {
    if (!d.is_number_integer() || d.get<std::int64_t>() <= 0) {
      throw SchemaError("'input_shape' entries must be positive integers");
    }
    input.push_back(d.get<std::size_t>());
  }
  if (!doc.contains("loss") || !doc["loss"].is_string()) {
    throw SchemaError("'loss' must be a string");
  }
  if (!doc.contains("layers")) throw SchemaError("missing 'layers'");
  return Network(std::move(input), layers_from_json(doc["layers"]),
                 loss_kind_from_string(doc["loss"].get<std::string>()));
}

void save_model_file(const Network& model, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot write " + path.string());
  f << save_model(model).dump(2) << '\n';
}

Network load_model_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open model file " + path.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ParseError("model file " + path.string() + " is not valid JSON: " + e.what());
  }
  return load_model(doc);
}

std::uint64_t model_hash(const Network& model) {
  const std::string text = save_model(model).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mpq
