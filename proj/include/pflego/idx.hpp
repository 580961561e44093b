#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "pflego/errors.hpp"
#include "pflego/matrix.hpp"

namespace pflego {

// IDX ingestion (the MNIST container format). Big-endian throughout:
//   images: magic 0x00000803, then count, rows, cols, then count*rows*cols
//           unsigned bytes
//   labels: magic 0x00000801, then count, then count unsigned bytes
// Pixels are scaled to [0, 1]; each image is flattened row-major.

namespace detail {

inline std::uint32_t read_be32(std::ifstream& in, const std::string& path,
                               std::size_t offset) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) {
    throw FormatError(path + ": truncated at byte offset " + std::to_string(offset));
  }
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

}  // namespace detail

// Parses an image/label file pair and groups the flattened images by label.
// Result is indexed by class id 0..max_label.
inline std::vector<Matrix> load_idx(const std::string& images_path,
                                    const std::string& labels_path) {
  std::ifstream images(images_path, std::ios::binary);
  if (!images) throw FormatError(images_path + ": cannot open");
  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw FormatError(labels_path + ": cannot open");

  const std::uint32_t image_magic = detail::read_be32(images, images_path, 0);
  if (image_magic != 0x00000803) {
    throw FormatError(images_path + ": bad magic at byte offset 0 (expected 0x00000803)");
  }
  const std::uint32_t n_images = detail::read_be32(images, images_path, 4);
  const std::uint32_t rows = detail::read_be32(images, images_path, 8);
  const std::uint32_t cols = detail::read_be32(images, images_path, 12);

  const std::uint32_t label_magic = detail::read_be32(labels, labels_path, 0);
  if (label_magic != 0x00000801) {
    throw FormatError(labels_path + ": bad magic at byte offset 0 (expected 0x00000801)");
  }
  const std::uint32_t n_labels = detail::read_be32(labels, labels_path, 4);
  if (n_labels != n_images) {
    throw FormatError(labels_path + ": count at byte offset 4 (" +
                      std::to_string(n_labels) + ") does not match image count (" +
                      std::to_string(n_images) + ")");
  }

  const std::size_t dim = std::size_t(rows) * cols;
  std::vector<unsigned char> pixels(dim);
  std::vector<unsigned char> raw_labels(n_labels);
  labels.read(reinterpret_cast<char*>(raw_labels.data()), n_labels);
  if (!labels) {
    throw FormatError(labels_path + ": truncated at byte offset 8");
  }

  int max_label = 0;
  for (unsigned char l : raw_labels) max_label = std::max(max_label, int(l));

  std::vector<std::vector<double>> grouped(std::size_t(max_label) + 1);
  for (std::uint32_t i = 0; i < n_images; ++i) {
    images.read(reinterpret_cast<char*>(pixels.data()), std::streamsize(dim));
    if (!images) {
      throw FormatError(images_path + ": truncated at byte offset " +
                        std::to_string(16 + std::size_t(i) * dim));
    }
    auto& bucket = grouped[raw_labels[i]];
    for (std::size_t j = 0; j < dim; ++j) {
      bucket.push_back(double(pixels[j]) / 255.0);
    }
  }

  std::vector<Matrix> classes;
  classes.reserve(grouped.size());
  for (auto& bucket : grouped) {
    const std::size_t n = bucket.size() / (dim == 0 ? 1 : dim);
    classes.emplace_back(n, dim, std::move(bucket));
  }
  return classes;
}

}  // namespace pflego
