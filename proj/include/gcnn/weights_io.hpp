#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gcnn/binary_io.hpp"
#include "gcnn/detector.hpp"
#include "gcnn/guidance_net.hpp"

namespace gcnn {

// .gcw layout: "GCW1", u16 layer count, then per layer u32 out, in, kh, kw,
// the weights and the biases as little-endian f32, in declaration order.
// Stride and padding are fixed by the architecture and not stored.
inline void write_layers(std::ostream& os, const std::vector<const ConvLayer<float>*>& layers) {
  os.write("GCW1", 4);
  binio::put_le(os, static_cast<std::uint16_t>(layers.size()));
  for (const auto* l : layers) {
    for (std::size_t d : {l->out_channels, l->in_channels, l->kernel_h, l->kernel_w})
      binio::put_le(os, static_cast<std::uint32_t>(d));
    for (float v : l->weights.values()) binio::put_f32(os, v);
    for (float v : l->bias) binio::put_f32(os, v);
  }
}

/// Reads weights into `layers`, whose shapes must match the file exactly.
inline void read_layers(std::istream& is, const std::vector<ConvLayer<float>*>& layers) {
  binio::expect_magic(is, "GCW1");
  const auto count = binio::get_le<std::uint16_t>(is, "weights header");
  if (count != layers.size())
    throw FormatError("weight file has " + std::to_string(count) + " layers, expected " + std::to_string(layers.size()));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = *layers[i];
    std::uint32_t d[4];
    for (auto& v : d) v = binio::get_le<std::uint32_t>(is, "layer header");
    if (d[0] != l.out_channels || d[1] != l.in_channels || d[2] != l.kernel_h || d[3] != l.kernel_w)
      throw FormatError("layer " + std::to_string(i) + " has shape " + std::to_string(d[0]) + "x" + std::to_string(d[1]) +
                        "x" + std::to_string(d[2]) + "x" + std::to_string(d[3]) + ", expected " +
                        l.weights.shape().str());
    for (std::size_t k = 0; k < l.weights.size(); ++k) l.weights[k] = binio::get_f32(is, "weights");
    for (auto& b : l.bias) b = binio::get_f32(is, "biases");
  }
}

template <typename Net>
void save_weights(const std::string& path, const Net& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_layers(os, net.layers());
}

/// Loads a guidance net or detector; the architecture comes from Net::init.
template <typename Net>
Net load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path);
  Net net = Net::init(0);
  read_layers(is, net.layers());
  return net;
}

}  // namespace gcnn
