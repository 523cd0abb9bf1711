#include "gaze/data.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "gaze/binary_io.hpp"
#include "gaze/errors.hpp"
#include "gaze/parallel.hpp"
#include "gaze/rng.hpp"

namespace gaze {
namespace {

using Rgb = std::array<double, 3>;

// Soft edge coverage for a signed distance (negative inside), one pixel wide.
double coverage(double signed_distance) { return std::clamp(0.5 - signed_distance, 0.0, 1.0); }

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3) throw ValidationError("export_previews: expected RGB images");
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(img.width * 3);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        row[x * 3 + c] = static_cast<png_byte>(std::lround(std::clamp(img.at(c, y, x), 0.0f, 1.0f) * 255.0f));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace

GazeSample generate_sample(std::mt19937_64& rng, const GeneratorOptions& options) {
  GazeSample sample;
  // Labels are kept at f32 precision so they survive the dataset file exactly.
  sample.label.pitch = static_cast<float>(uniform(rng, -kLabelBound, kLabelBound));
  sample.label.yaw = static_cast<float>(uniform(rng, -kLabelBound, kLabelBound));
  if (options.label) sample.label = *options.label;

  const double H = static_cast<double>(options.height);
  const double W = static_cast<double>(options.width);
  const double unit = std::min(H, W) / 64.0;  // geometry is authored for 64 x 64

  double tx = 0, ty = 0, angle = 0, scale = 1;
  if (options.jitter) {
    tx = uniform(rng, -3.0, 3.0) * unit;
    ty = uniform(rng, -3.0, 3.0) * unit;
    angle = uniform(rng, -0.1, 0.1);
    scale = uniform(rng, 0.92, 1.08);
  }
  const double illumination = uniform(rng, 0.7, 1.3);
  const double grad_x = uniform(rng, -0.1, 0.1);
  const double grad_y = uniform(rng, -0.1, 0.1);
  const double skin_tone = uniform(rng, 0.85, 1.1);
  const Rgb skin{0.80 * skin_tone, 0.62 * skin_tone, 0.52 * skin_tone};
  static constexpr std::array<Rgb, 3> kIrisPalette{{{0.35, 0.20, 0.10}, {0.20, 0.30, 0.45}, {0.25, 0.35, 0.20}}};
  const Rgb iris_base = kIrisPalette[std::uniform_int_distribution<int>(0, 2)(rng)];
  const double iris_shade = uniform(rng, 0.4, 0.7);
  const Rgb sclera{0.93, 0.90, 0.87};
  const Rgb pupil{0.03, 0.03, 0.03};

  const double cx = W / 2 + tx, cy = H / 2 + ty;
  const double cos_a = std::cos(angle), sin_a = std::sin(angle);
  const double semi_a = 24.0 * unit * scale, semi_b = 16.0 * unit * scale;
  const double iris_r = 7.0 * unit * scale, pupil_r = 3.0 * unit * scale;
  const double off_x = kIrisGain * unit * std::sin(sample.label.yaw);
  const double off_y = kIrisGain * unit * std::sin(sample.label.pitch);
  const double ix = cx + scale * (cos_a * off_x - sin_a * off_y);
  const double iy = cy + scale * (sin_a * off_x + cos_a * off_y);

  std::normal_distribution<double> noise(0.0, 0.03);
  sample.image = Image::zeros(3, options.height, options.width);
  for (std::size_t y = 0; y < options.height; ++y) {
    for (std::size_t x = 0; x < options.width; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      // Eye-local coordinates for the sclera ellipse.
      const double lx = (cos_a * (px - cx) + sin_a * (py - cy));
      const double ly = (-sin_a * (px - cx) + cos_a * (py - cy));
      const double rho = std::sqrt((lx / semi_a) * (lx / semi_a) + (ly / semi_b) * (ly / semi_b));
      const double sclera_cov = coverage((rho - 1.0) * semi_b);
      const double di = std::hypot(px - ix, py - iy);
      const double iris_cov = coverage(di - iris_r);
      const double pupil_cov = coverage(di - pupil_r);
      const double shade = illumination * (1.0 + grad_x * (px - W / 2) / (W / 2) +
                                           grad_y * (py - H / 2) / (H / 2));
      for (std::size_t c = 0; c < 3; ++c) {
        double v = skin[c] + noise(rng);
        v += (sclera[c] - v) * sclera_cov;
        v += (iris_base[c] * iris_shade - v) * iris_cov;
        v += (pupil[c] - v) * pupil_cov;
        sample.image.at(c, y, x) = static_cast<float>(std::clamp(v * shade, 0.0, 1.0));
      }
    }
  }
  return sample;
}

std::vector<GazeSample> generate_dataset(std::size_t count, std::uint64_t seed,
                                         const GeneratorOptions& options) {
  std::vector<GazeSample> samples(count);
  parallel_for(count, [&](std::size_t i) {
    auto rng = make_stream(seed, {i});
    samples[i] = generate_sample(rng, options);
  });
  return samples;
}

DatasetSplit split_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 5) throw ValidationError("split_dataset needs at least 5 samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream(seed, {0x5b117});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_pretrain = n * 4 / 5;
  DatasetSplit split;
  split.pretrain_unlabeled.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_pretrain));
  split.finetune_labeled.assign(order.begin() + static_cast<std::ptrdiff_t>(n_pretrain), order.end());
  return split;
}

std::vector<std::vector<std::size_t>> batches(std::span<const std::size_t> indices,
                                              std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch, BatchMode mode) {
  if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
  std::vector<std::size_t> order(indices.begin(), indices.end());
  auto rng = make_stream(seed, {0xba7c4, epoch});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    if (end - start < batch_size && mode == BatchMode::contrastive) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const GazeSample> samples) {
  std::size_t h = 0, w = 0, c = 0;
  if (!samples.empty()) {
    h = samples[0].image.height;
    w = samples[0].image.width;
    c = samples[0].image.channels;
  }
  if (h > 0xffff || w > 0xffff || c > 0xffff) throw ValidationError("image extents exceed u16");
  if (samples.size() > 0xffffffffu) throw ValidationError("too many samples for the dataset format");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  io::BinaryWriter wr(out);
  wr.magic("CGZD");
  wr.u32(kDatasetVersion);
  wr.u32(static_cast<std::uint32_t>(samples.size()));
  wr.u16(static_cast<std::uint16_t>(h));
  wr.u16(static_cast<std::uint16_t>(w));
  wr.u16(static_cast<std::uint16_t>(c));
  for (const auto& s : samples) {
    if (s.image.height != h || s.image.width != w || s.image.channels != c)
      throw ValidationError("write_dataset: samples differ in image shape");
    for (float v : s.image.pixels) wr.f32(v);
    wr.f32(static_cast<float>(s.label.pitch));
    wr.f32(static_cast<float>(s.label.yaw));
  }
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<GazeSample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  io::BinaryReader rd(in, path.string());
  rd.expect_magic("CGZD");
  const std::uint32_t version = rd.u32();
  if (version != kDatasetVersion)
    throw IoError(path.string() + ": unsupported dataset version " + std::to_string(version));
  const std::uint32_t count = rd.u32();
  const std::size_t h = rd.u16(), w = rd.u16(), c = rd.u16();
  if (count > 0 && (h == 0 || w == 0 || c == 0)) throw IoError(path.string() + ": zero image extent");
  std::vector<GazeSample> samples(count);
  for (auto& s : samples) {
    s.image = Image::zeros(c, h, w);
    for (float& v : s.image.pixels) v = rd.f32();
    s.label.pitch = rd.f32();
    s.label.yaw = rd.f32();
  }
  if (!rd.at_end()) throw IoError(path.string() + ": trailing bytes after the last sample");
  return samples;
}

void export_previews(std::span<const GazeSample> samples, const std::filesystem::path& dir,
                     std::size_t limit) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream csv(dir / "labels.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (dir / "labels.csv").string());
  csv << "filename,pitch,yaw\n";
  csv.precision(9);
  const std::size_t n = std::min(limit, samples.size());
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05zu.png", i);
    write_png(dir / name, samples[i].image);
    csv << name << ',' << samples[i].label.pitch << ',' << samples[i].label.yaw << '\n';
  }
  if (!csv) throw IoError("failed writing labels.csv");
}

}  // namespace gaze
