#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vitc/rng.hpp"
#include "vitc/vit.hpp"

// Desk-scale data provisioning: a procedurally generated separable image
// classification task and a directory-per-class loader for simple raster
// formats (PPM/PGM and uncompressed BMP).

namespace vitc {

struct Dataset {
  int64_t image_size = 0;
  int64_t channels = 0;
  int64_t num_classes = 0;
  std::vector<float> images;  // size x channels x H x W, values in [0,1]
  std::vector<int64_t> labels;
  std::vector<int64_t> train_idx, val_idx;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  int64_t pixels_per_image() const { return channels * image_size * image_size; }

  const float* image(int64_t i) const { return images.data() + i * pixels_per_image(); }

  void validate() const {
    for (int64_t l : labels)
      if (l < 0 || l >= num_classes) throw std::runtime_error("Dataset: label out of range");
  }
};

namespace detail {

// per-class 80/20 split, deterministic in index order
inline void split_80_20(Dataset& d) {
  std::map<int64_t, std::vector<int64_t>> by_class;
  for (int64_t i = 0; i < d.size(); ++i) by_class[d.labels[static_cast<size_t>(i)]].push_back(i);
  for (auto& [cls, idx] : by_class) {
    size_t cut = (idx.size() * 8 + 9) / 10;  // ceil(0.8 n)
    for (size_t i = 0; i < idx.size(); ++i)
      (i < cut ? d.train_idx : d.val_idx).push_back(idx[i]);
  }
}

}  // namespace detail

// Class-conditional colored geometric patterns plus noise. Each class has a
// distinct base color and stripe orientation/period, with random phase,
// brightness and pixel noise per image, so the task is separable but not
// trivial for a linear probe on raw pixels.
inline Dataset synth_dataset(int64_t num_classes, int64_t per_class, int64_t image_size, uint64_t seed,
                             int64_t channels = 3) {
  if (num_classes <= 0 || per_class <= 0 || image_size <= 0 || channels <= 0)
    throw std::invalid_argument("synth_dataset: parameters must be positive");
  Dataset d;
  d.image_size = image_size;
  d.channels = channels;
  d.num_classes = num_classes;
  d.images.resize(static_cast<size_t>(num_classes * per_class * channels * image_size * image_size));
  d.labels.resize(static_cast<size_t>(num_classes * per_class));

  static const double palette[10][3] = {
      {0.9, 0.2, 0.2}, {0.2, 0.9, 0.2}, {0.2, 0.3, 0.9}, {0.9, 0.9, 0.2}, {0.9, 0.2, 0.9},
      {0.2, 0.9, 0.9}, {0.9, 0.6, 0.2}, {0.5, 0.2, 0.9}, {0.4, 0.9, 0.5}, {0.9, 0.5, 0.6}};

  Rng rng(seed);
  int64_t img_id = 0;
  for (int64_t c = 0; c < num_classes; ++c) {
    double angle = 3.14159265358979323846 * static_cast<double>(c) / static_cast<double>(num_classes);
    double ca = std::cos(angle), sa = std::sin(angle);
    double period = 4.0 + 2.0 * static_cast<double>(c % 3);
    const double* col = palette[c % 10];
    for (int64_t k = 0; k < per_class; ++k, ++img_id) {
      double phase = rng.uniform_range(0, 6.283185307179586);
      double brightness = rng.uniform_range(0.8, 1.2);
      float* img = d.images.data() + img_id * d.pixels_per_image();
      for (int64_t y = 0; y < image_size; ++y)
        for (int64_t x = 0; x < image_size; ++x) {
          double wave =
              0.5 + 0.5 * std::sin(6.283185307179586 * (ca * x + sa * y) / period + phase);
          for (int64_t ch = 0; ch < channels; ++ch) {
            double base = 0.15 + 0.55 * wave * col[ch % 3] * brightness;
            double noisy = base + 0.08 * (rng.uniform() - 0.5);
            img[(ch * image_size + y) * image_size + x] =
                static_cast<float>(std::clamp(noisy, 0.0, 1.0));
          }
        }
      d.labels[static_cast<size_t>(img_id)] = c;
    }
  }
  detail::split_80_20(d);
  d.validate();
  return d;
}

namespace detail {

struct RawImage {
  int64_t w = 0, h = 0, channels = 0;
  std::vector<float> pixels;  // channels x h x w, [0,1]
  bool ok() const { return w > 0 && h > 0; }
};

inline void skip_ppm_space(std::istream& is) {
  while (true) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
}

inline RawImage decode_ppm(std::istream& is) {
  RawImage img;
  std::string magic;
  is >> magic;
  if (magic != "P6" && magic != "P5" && magic != "P3" && magic != "P2") return img;
  skip_ppm_space(is);
  int64_t w, h, maxv;
  is >> w;
  skip_ppm_space(is);
  is >> h;
  skip_ppm_space(is);
  is >> maxv;
  if (!is || w <= 0 || h <= 0 || maxv <= 0 || maxv > 65535) return img;
  int64_t ch = (magic == "P6" || magic == "P3") ? 3 : 1;
  std::vector<double> interleaved(static_cast<size_t>(w * h * ch));
  if (magic == "P6" || magic == "P5") {
    is.get();  // single whitespace after header
    int64_t bytes_per = maxv > 255 ? 2 : 1;
    std::vector<unsigned char> buf(static_cast<size_t>(w * h * ch * bytes_per));
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() != static_cast<std::streamsize>(buf.size())) return img;
    for (size_t i = 0; i < interleaved.size(); ++i) {
      int64_t v = bytes_per == 1 ? buf[i] : (buf[2 * i] << 8 | buf[2 * i + 1]);
      interleaved[i] = static_cast<double>(v) / static_cast<double>(maxv);
    }
  } else {
    for (auto& v : interleaved) {
      int64_t x;
      is >> x;
      if (!is) return img;
      v = static_cast<double>(x) / static_cast<double>(maxv);
    }
  }
  img.w = w;
  img.h = h;
  img.channels = ch;
  img.pixels.resize(static_cast<size_t>(ch * h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < ch; ++c)
        img.pixels[static_cast<size_t>((c * h + y) * w + x)] =
            static_cast<float>(interleaved[static_cast<size_t>((y * w + x) * ch + c)]);
  return img;
}

inline uint32_t le32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

// uncompressed 24/32-bit BMP, bottom-up or top-down
inline RawImage decode_bmp(std::istream& is) {
  RawImage img;
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (data.size() < 54 || data[0] != 'B' || data[1] != 'M') return img;
  uint32_t offset = le32(&data[10]);
  int32_t w = static_cast<int32_t>(le32(&data[18]));
  int32_t h = static_cast<int32_t>(le32(&data[22]));
  uint16_t bpp = static_cast<uint16_t>(data[28] | (data[29] << 8));
  uint32_t compression = le32(&data[30]);
  if (w <= 0 || h == 0 || compression != 0 || (bpp != 24 && bpp != 32)) return img;
  bool top_down = h < 0;
  int64_t ah = std::abs(h);
  int64_t bytes_pp = bpp / 8;
  int64_t stride = ((w * bytes_pp + 3) / 4) * 4;
  if (data.size() < offset + static_cast<size_t>(stride * ah)) return img;
  img.w = w;
  img.h = ah;
  img.channels = 3;
  img.pixels.resize(static_cast<size_t>(3 * ah * w));
  for (int64_t y = 0; y < ah; ++y) {
    int64_t src_row = top_down ? y : ah - 1 - y;
    const unsigned char* row = data.data() + offset + src_row * stride;
    for (int64_t x = 0; x < w; ++x) {
      // BMP stores BGR
      img.pixels[static_cast<size_t>((0 * ah + y) * w + x)] = row[x * bytes_pp + 2] / 255.0f;
      img.pixels[static_cast<size_t>((1 * ah + y) * w + x)] = row[x * bytes_pp + 1] / 255.0f;
      img.pixels[static_cast<size_t>((2 * ah + y) * w + x)] = row[x * bytes_pp + 0] / 255.0f;
    }
  }
  return img;
}

inline RawImage decode_image_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return {};
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") return decode_ppm(f);
  if (ext == ".bmp") return decode_bmp(f);
  return {};
}

// bilinear resize per channel
inline std::vector<float> resize_bilinear(const RawImage& img, int64_t out_size, int64_t out_channels) {
  std::vector<float> out(static_cast<size_t>(out_channels * out_size * out_size));
  for (int64_t c = 0; c < out_channels; ++c) {
    int64_t sc = std::min<int64_t>(c, img.channels - 1);  // replicate gray into RGB
    for (int64_t y = 0; y < out_size; ++y)
      for (int64_t x = 0; x < out_size; ++x) {
        double fy = (static_cast<double>(y) + 0.5) * static_cast<double>(img.h) / out_size - 0.5;
        double fx = (static_cast<double>(x) + 0.5) * static_cast<double>(img.w) / out_size - 0.5;
        int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(fy)), 0, img.h - 1);
        int64_t x0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(fx)), 0, img.w - 1);
        int64_t y1 = std::min<int64_t>(y0 + 1, img.h - 1);
        int64_t x1 = std::min<int64_t>(x0 + 1, img.w - 1);
        double wy = std::clamp(fy - static_cast<double>(y0), 0.0, 1.0);
        double wx = std::clamp(fx - static_cast<double>(x0), 0.0, 1.0);
        auto px = [&](int64_t yy, int64_t xx) {
          return static_cast<double>(img.pixels[static_cast<size_t>((sc * img.h + yy) * img.w + xx)]);
        };
        double v = (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) +
                   wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1));
        out[static_cast<size_t>((c * out_size + y) * out_size + x)] = static_cast<float>(v);
      }
  }
  return out;
}

}  // namespace detail

// Directory-per-class layout: every subdirectory of `path` is one class
// (sorted by name), holding PPM/PGM/BMP files. Unreadable or unsupported
// files are skipped with a warning; an empty class is an error.
inline Dataset load_image_folder(const std::string& path, int64_t image_size, int64_t channels = 3) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) throw std::runtime_error("load_image_folder: not a directory: " + path);
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw std::runtime_error("load_image_folder: no class subdirectories in " + path);

  Dataset d;
  d.image_size = image_size;
  d.channels = channels;
  d.num_classes = static_cast<int64_t>(class_dirs.size());
  for (size_t c = 0; c < class_dirs.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[c]))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    int64_t loaded = 0;
    for (const auto& f : files) {
      detail::RawImage raw = detail::decode_image_file(f);
      if (!raw.ok()) {
        std::cerr << "load_image_folder: skipping unreadable file " << f << "\n";
        continue;
      }
      auto px = detail::resize_bilinear(raw, image_size, channels);
      d.images.insert(d.images.end(), px.begin(), px.end());
      d.labels.push_back(static_cast<int64_t>(c));
      ++loaded;
    }
    if (loaded == 0)
      throw std::runtime_error("load_image_folder: class directory " + class_dirs[c].string() +
                               " contains no readable images");
  }
  detail::split_80_20(d);
  d.validate();
  return d;
}

template <typename Real>
struct Batch {
  DiffTensor<Real> patches;
  std::vector<int64_t> labels;
  int64_t size = 0;
};

template <typename Real>
Batch<Real> make_batch(const ViTConfig& cfg, const Dataset& data, const std::vector<int64_t>& indices) {
  if (data.image_size != cfg.image_size || data.channels != cfg.channels)
    throw std::invalid_argument("make_batch: dataset geometry does not match model configuration");
  Batch<Real> b;
  b.size = static_cast<int64_t>(indices.size());
  std::vector<float> buf(static_cast<size_t>(b.size * data.pixels_per_image()));
  for (size_t i = 0; i < indices.size(); ++i) {
    const float* src = data.image(indices[i]);
    std::copy(src, src + data.pixels_per_image(),
              buf.begin() + static_cast<int64_t>(i) * data.pixels_per_image());
    b.labels.push_back(data.labels[static_cast<size_t>(indices[i])]);
  }
  b.patches = patchify<Real>(cfg, buf, b.size);
  return b;
}

}  // namespace vitc
