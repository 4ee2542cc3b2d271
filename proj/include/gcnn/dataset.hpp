#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "gcnn/boxes.hpp"
#include "gcnn/image_io.hpp"

namespace gcnn {

struct Sample {
  std::string name;
  Image8 image;
  std::vector<BBox> boxes;
};

using Dataset = std::vector<Sample>;

/// Writes NAME.pgm and NAME.txt (x,y,w,h lines) for every sample.
inline void save_dataset(const std::string& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  for (const auto& s : data) {
    write_pgm((std::filesystem::path(dir) / (s.name + ".pgm")).string(), s.image);
    write_boxes_file((std::filesystem::path(dir) / (s.name + ".txt")).string(), s.boxes);
  }
}

/// Loads every image (.pgm/.png) in `dir` with its same-basename .txt
/// annotation, sorted by name. A missing annotation file means no boxes.
inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError(dir);
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".png") images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  Dataset out;
  for (const auto& p : images) {
    Sample s;
    s.name = p.stem().string();
    s.image = read_image(p.string());
    const auto ann = fs::path(p).replace_extension(".txt");
    if (fs::exists(ann)) s.boxes = read_boxes_file(ann.string());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace gcnn
