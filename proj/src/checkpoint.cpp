#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gaze/binary_io.hpp"
#include "gaze/errors.hpp"
#include "gaze/train.hpp"

namespace gaze {
namespace {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1, u64 = 2 };

// Stage, epoch and loss history ride along in the config snapshot as
// "#@ key = value" lines, which the config parser treats as comments.
constexpr std::string_view kMetaPrefix = "#@ ";

void write_header(io::BinaryWriter& w, std::string_view name, Dtype dtype, const std::vector<std::size_t>& dims) {
  if (name.size() > 0xffff) throw ValidationError("checkpoint: tensor name too long");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u8(static_cast<std::uint8_t>(dtype));
  w.u8(static_cast<std::uint8_t>(dims.size()));
  for (std::size_t d : dims) w.u32(static_cast<std::uint32_t>(d));
}

void write_f32(io::BinaryWriter& w, std::string_view name, const std::vector<std::size_t>& dims,
               std::span<const float> values) {
  write_header(w, name, Dtype::f32, dims);
  for (float v : values) w.f32(v);
}

void write_f64(io::BinaryWriter& w, std::string_view name, std::span<const double> values) {
  write_header(w, name, Dtype::f64, {values.size()});
  for (double v : values) w.f64(v);
}

void write_u64(io::BinaryWriter& w, std::string_view name, std::span<const std::uint64_t> values) {
  write_header(w, name, Dtype::u64, {values.size()});
  for (auto v : values) w.u64(v);
}

struct RawTensor {
  std::string name;
  Dtype dtype = Dtype::f32;
  std::vector<std::size_t> dims;
  std::vector<float> f32;
  std::vector<double> f64;
  std::vector<std::uint64_t> u64;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

// Guards allocation against corrupt counts: no block may claim more values
// than this.
constexpr std::size_t kMaxElements = std::size_t{1} << 31;

RawTensor read_tensor(io::BinaryReader& r, const std::string& ctx) {
  RawTensor t;
  t.name = r.string(r.u16());
  const auto dtype = r.u8();
  if (dtype > 2) throw IoError(ctx + ": unknown dtype " + std::to_string(dtype) + " for " + t.name);
  t.dtype = static_cast<Dtype>(dtype);
  const std::size_t rank = r.u8();
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    t.dims.push_back(r.u32());
    n *= t.dims.back();
    if (n > kMaxElements) throw IoError(ctx + ": implausible tensor size for " + t.name);
  }
  switch (t.dtype) {
    case Dtype::f32:
      t.f32.resize(n);
      for (auto& v : t.f32) v = r.f32();
      break;
    case Dtype::f64:
      t.f64.resize(n);
      for (auto& v : t.f64) v = r.f64();
      break;
    case Dtype::u64:
      t.u64.resize(n);
      for (auto& v : t.u64) v = r.u64();
      break;
  }
  return t;
}

std::vector<RawTensor> read_block(io::BinaryReader& r, const std::string& ctx) {
  const std::uint32_t count = r.u32();
  std::vector<RawTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(read_tensor(r, ctx));
  return out;
}

const RawTensor& find(const std::vector<RawTensor>& block, std::string_view name, Dtype dtype,
                      const std::string& ctx) {
  for (const auto& t : block)
    if (t.name == name) {
      if (t.dtype != dtype) throw IoError(ctx + ": wrong dtype for " + t.name);
      return t;
    }
  throw IoError(ctx + ": missing entry " + std::string(name));
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string meta_text(const Checkpoint& ckpt) {
  std::string out;
  out += std::string(kMetaPrefix) + "stage = " + std::string(to_string(ckpt.stage)) + "\n";
  out += std::string(kMetaPrefix) + "epoch = " + std::to_string(ckpt.epoch) + "\n";
  out += std::string(kMetaPrefix) + "loss_history = ";
  for (std::size_t i = 0; i < ckpt.loss_history.size(); ++i)
    out += (i ? "," : "") + format_double(ckpt.loss_history[i]);
  out += "\n";
  return out;
}

std::uint64_t parse_u64(std::string_view s, const std::string& ctx) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw IoError(ctx + ": bad integer '" + std::string(s) + "'");
  return v;
}

double parse_double(std::string_view s, const std::string& ctx) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw IoError(ctx + ": bad number '" + std::string(s) + "'");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  // Write to a sibling temp file and rename so a crash never leaves a
  // half-written checkpoint under the final name.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    io::BinaryWriter w(out);
    w.magic("CGZK");
    w.u32(kCheckpointVersion);
    const std::string text = ckpt.config.to_text() + meta_text(ckpt);
    w.u64(text.size());
    w.bytes(text.data(), text.size());

    const auto& entries = ckpt.params.entries();
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) write_f32(w, name, t.shape().dims(), t.data());

    const auto& opt = ckpt.optimizer;
    w.u32(static_cast<std::uint32_t>(2 + 2 * opt.names.size()));
    const double hyper[] = {opt.lr, opt.beta1, opt.beta2, opt.eps};
    write_f64(w, "adam.hyper", hyper);
    const std::uint64_t step[] = {opt.step};
    write_u64(w, "adam.step", step);
    for (std::size_t i = 0; i < opt.names.size(); ++i) {
      write_f32(w, "m." + opt.names[i], {opt.m[i].size()}, opt.m[i]);
      write_f32(w, "v." + opt.names[i], {opt.v[i].size()}, opt.v[i]);
    }

    w.u32(1);
    const std::uint64_t rng[] = {ckpt.rng_seed, ckpt.rng_epoch};
    write_u64(w, "rng", rng);
    out.flush();
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string ctx = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + ctx);
  io::BinaryReader r(in, ctx);
  r.expect_magic("CGZK");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw IoError(ctx + ": checkpoint version " + std::to_string(version) + ", expected " +
                  std::to_string(kCheckpointVersion));
  const std::uint64_t text_size = r.u64();
  if (text_size > (std::uint64_t{1} << 24)) throw IoError(ctx + ": implausible config size");
  const std::string text = r.string(text_size);

  RunConfig cfg;
  try {
    cfg = RunConfig::from_text(text);
  } catch (const ValidationError& e) {
    throw IoError(ctx + ": bad config snapshot: " + e.what());
  }

  auto params_raw = read_block(r, ctx);
  auto opt_raw = read_block(r, ctx);
  auto rng_raw = read_block(r, ctx);
  if (!r.at_end()) throw IoError(ctx + ": trailing bytes");

  // Names and shapes must match what this config builds.
  const auto reference = build_model<float>(cfg.model, 0);
  if (params_raw.size() != reference.entries().size())
    throw IoError(ctx + ": parameter count does not match the model config");
  ModelParams<float> params(cfg.model);
  for (const auto& [name, ref] : reference.entries()) {
    const auto& raw = find(params_raw, name, Dtype::f32, ctx);
    if (Shape(raw.dims) != ref.shape())
      throw IoError(ctx + ": shape mismatch for " + name + ": " + Shape(raw.dims).str() + " vs " +
                    ref.shape().str());
    params.add(name, Tensor::from_data(ref.shape(), raw.f32));
  }

  Checkpoint ckpt(std::move(params));
  ckpt.config = cfg;

  const auto& hyper = find(opt_raw, "adam.hyper", Dtype::f64, ctx);
  const auto& step = find(opt_raw, "adam.step", Dtype::u64, ctx);
  if (hyper.f64.size() != 4 || step.u64.size() != 1) throw IoError(ctx + ": malformed optimizer header");
  ckpt.optimizer.lr = hyper.f64[0];
  ckpt.optimizer.beta1 = hyper.f64[1];
  ckpt.optimizer.beta2 = hyper.f64[2];
  ckpt.optimizer.eps = hyper.f64[3];
  ckpt.optimizer.step = step.u64[0];
  for (const auto& t : opt_raw) {
    if (!t.name.starts_with("m.")) continue;
    const std::string name = t.name.substr(2);
    const auto& param = ckpt.params.at(name);
    const auto& v = find(opt_raw, "v." + name, Dtype::f32, ctx);
    if (t.f32.size() != param.numel() || v.f32.size() != param.numel())
      throw IoError(ctx + ": optimizer moment size mismatch for " + name);
    ckpt.optimizer.names.push_back(name);
    ckpt.optimizer.m.push_back(t.f32);
    ckpt.optimizer.v.push_back(v.f32);
  }
  if (opt_raw.size() != 2 + 2 * ckpt.optimizer.names.size()) throw IoError(ctx + ": stray optimizer entries");

  const auto& rng = find(rng_raw, "rng", Dtype::u64, ctx);
  if (rng.u64.size() != 2) throw IoError(ctx + ": malformed rng block");
  ckpt.rng_seed = rng.u64[0];
  ckpt.rng_epoch = rng.u64[1];

  bool have_stage = false;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    if (!line.starts_with(kMetaPrefix)) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw IoError(ctx + ": malformed meta line");
    const std::string key = line.substr(kMetaPrefix.size(), eq - kMetaPrefix.size());
    const std::string value = line.substr(eq + 3);
    if (key == "stage") {
      ckpt.stage = parse_checkpoint_stage(value);
      have_stage = true;
    } else if (key == "epoch") {
      ckpt.epoch = parse_u64(value, ctx);
    } else if (key == "loss_history") {
      for (const auto& item : split_list(value)) ckpt.loss_history.push_back(parse_double(item, ctx));
    } else {
      throw IoError(ctx + ": unknown meta key " + key);
    }
  }
  if (!have_stage) throw IoError(ctx + ": missing stage");
  return ckpt;
}

}  // namespace gaze
