#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace eegrecon {

// 8-bit RGB image, row-major HxWx3.
struct StimulusImage {
  std::string image_id;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * 3 + c;
  }
  bool empty() const { return pixels.empty(); }
};

StimulusImage make_image(std::string id, int height, int width);

std::vector<std::uint8_t> encode_png(const StimulusImage& image);
StimulusImage decode_png(const std::vector<std::uint8_t>& bytes, std::string id = {});

void write_png(const std::filesystem::path& path, const StimulusImage& image);
StimulusImage read_png(const std::filesystem::path& path, std::string id = {});

// Pixel values mapped to [-1,1], planar [3,H,W].
std::vector<double> to_unit_planar(const StimulusImage& image);
StimulusImage from_unit_planar(const std::vector<double>& planar, int height, int width, std::string id = {});

}  // namespace eegrecon
