#include "otml/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace otml::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

void AugmentationSpec::validate() const {
  if (!(crop_lo > 0.0) || crop_lo > crop_hi || crop_hi > 1.0) {
    throw ConfigError("augment: crop scale range must satisfy 0 < lo <= hi <= 1");
  }
  if (flip_prob < 0.0 || flip_prob > 1.0) {
    throw ConfigError("augment: flip probability must lie in [0,1]");
  }
  if (jitter_add < 0.0 || jitter_mul < 0.0 || jitter_mul > 1.0) {
    throw ConfigError("augment: jitter ranges must be nonnegative (mul <= 1)");
  }
  if (!(blur_lo > 0.0) || blur_lo > blur_hi) {
    throw ConfigError("augment: blur sigma range must satisfy 0 < lo <= hi");
  }
}

namespace {

void require_image(const Tensor& image) {
  if (image.rank() != 3 || image.shape()[0] != 1) {
    throw ShapeError("expected a [1,h,w] grayscale image, got " +
                     shape_str(image.shape()));
  }
}

std::vector<double> bilinear_resize(const std::vector<double>& src,
                                    std::size_t sh, std::size_t sw,
                                    std::size_t dh, std::size_t dw) {
  std::vector<double> dst(dh * dw);
  const double sy = static_cast<double>(sh) / static_cast<double>(dh);
  const double sx = static_cast<double>(sw) / static_cast<double>(dw);
  for (std::size_t y = 0; y < dh; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    const double cy = std::clamp(fy, 0.0, static_cast<double>(sh - 1));
    const std::size_t y0 = static_cast<std::size_t>(cy);
    const std::size_t y1 = std::min(y0 + 1, sh - 1);
    const double wy = cy - static_cast<double>(y0);
    for (std::size_t x = 0; x < dw; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      const double cx = std::clamp(fx, 0.0, static_cast<double>(sw - 1));
      const std::size_t x0 = static_cast<std::size_t>(cx);
      const std::size_t x1 = std::min(x0 + 1, sw - 1);
      const double wx = cx - static_cast<double>(x0);
      const double top = src[y0 * sw + x0] * (1 - wx) + src[y0 * sw + x1] * wx;
      const double bot = src[y1 * sw + x0] * (1 - wx) + src[y1 * sw + x1] * wx;
      dst[y * dw + x] = top * (1 - wy) + bot * wy;
    }
  }
  return dst;
}

std::vector<double> gaussian_blur(const std::vector<double>& src,
                                  std::size_t h, std::size_t w, double sigma) {
  const long radius = std::max(1L, std::lround(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (long k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * (k / sigma) * (k / sigma));
    norm += kernel[k + radius];
  }
  for (double& v : kernel) v /= norm;

  // Separable pass with clamp-to-edge borders.
  std::vector<double> tmp(h * w), out(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        const long xx = std::clamp<long>(static_cast<long>(x) + k, 0,
                                         static_cast<long>(w) - 1);
        acc += src[y * w + xx] * kernel[k + radius];
      }
      tmp[y * w + x] = acc;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        const long yy = std::clamp<long>(static_cast<long>(y) + k, 0,
                                         static_cast<long>(h) - 1);
        acc += tmp[yy * w + x] * kernel[k + radius];
      }
      out[y * w + x] = acc;
    }
  }
  return out;
}

}  // namespace

Tensor augment(const Tensor& image, const AugmentationSpec& spec, Rng& rng) {
  require_image(image);
  spec.validate();
  const std::size_t h = image.shape()[1], w = image.shape()[2];
  std::vector<double> px(image.data().begin(), image.data().end());

  if (!spec.enabled) {
    return Tensor::from_data(image.shape(), std::move(px));
  }

  bool touched = false;
  if (spec.crop) {
    const double scale = rng.uniform(spec.crop_lo, spec.crop_hi);
    const std::size_t ch =
        std::max<std::size_t>(1, std::lround(scale * static_cast<double>(h)));
    const std::size_t cw =
        std::max<std::size_t>(1, std::lround(scale * static_cast<double>(w)));
    const std::size_t y0 = rng.uniform_int(h - ch + 1);
    const std::size_t x0 = rng.uniform_int(w - cw + 1);
    if (ch != h || cw != w) {
      std::vector<double> crop(ch * cw);
      for (std::size_t y = 0; y < ch; ++y) {
        std::copy(px.begin() + (y0 + y) * w + x0,
                  px.begin() + (y0 + y) * w + x0 + cw, crop.begin() + y * cw);
      }
      px = bilinear_resize(crop, ch, cw, h, w);
      touched = true;
    }
  }

  if (spec.flip && rng.bernoulli(spec.flip_prob)) {
    for (std::size_t y = 0; y < h; ++y) {
      std::reverse(px.begin() + y * w, px.begin() + (y + 1) * w);
    }
    touched = true;
  }

  if (spec.jitter) {
    const double gain = rng.uniform(1.0 - spec.jitter_mul, 1.0 + spec.jitter_mul);
    const double offset = rng.uniform(-spec.jitter_add, spec.jitter_add);
    for (double& v : px) v = v * gain + offset;
    touched = true;
  }

  if (spec.blur) {
    const double sigma = rng.uniform(spec.blur_lo, spec.blur_hi);
    px = gaussian_blur(px, h, w, sigma);
    touched = true;
  }

  if (touched) {
    for (double& v : px) v = std::clamp(v, 0.0, 1.0);
  }
  return Tensor::from_data(image.shape(), std::move(px));
}

// ---------------------------------------------------------------------------
// Phantom dataset
// ---------------------------------------------------------------------------

namespace {

// Lesion painters take an integrated-intensity budget rather than a raw
// amplitude: classes then differ by geometry, not by how much total mass
// they add, so the label is not recoverable from crude intensity sums.

void paint_blob(std::vector<double>& px, std::size_t h, std::size_t w,
                double cy, double cx, double ry, double rx, double mass) {
  // Gaussian-profile ellipse: integral of exp(-1.5 r^2) over the plane is
  // (pi/1.5) * ry * rx.
  const double amp = mass / (2.0943951023931953 * ry * rx);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = (static_cast<double>(y) - cy) / ry;
      const double dx = (static_cast<double>(x) - cx) / rx;
      const double r2 = dy * dy + dx * dx;
      if (r2 < 4.0) px[y * w + x] += amp * std::exp(-1.5 * r2);
    }
  }
}

void paint_streak(std::vector<double>& px, std::size_t h, std::size_t w,
                  double cy, double cx, double angle, double len,
                  double thickness, double mass) {
  // Profile integral: len * thickness * sqrt(pi/1.5).
  const double amp = mass / (len * thickness * 1.4472025091165353);
  const double uy = std::sin(angle), ux = std::cos(angle);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double along = dy * uy + dx * ux;
      const double across = -dy * ux + dx * uy;
      if (std::abs(along) > len / 2) continue;
      const double t = across / thickness;
      px[y * w + x] += amp * std::exp(-1.5 * t * t);
    }
  }
}

struct Lesions {
  std::size_t blobs = 0;
  std::size_t streaks = 0;
  double contrast = 1.0;
  const char* kind = "background";
};

Lesions lesions_for_class(std::size_t label) {
  switch (label) {
    case 0: return {0, 0, 1.0, "background"};
    case 1: return {1, 0, 1.0, "nodule"};
    case 2: return {0, 1, 1.0, "streak"};
    case 3: return {1, 1, 1.0, "nodule+streak"};
    case 4: return {2, 0, 1.0, "two nodules"};
    case 5: return {0, 2, 1.0, "two streaks"};
    case 6: return {1, 2, 1.0, "nodule+two streaks"};
    default: return {1, 0, -0.8, "dark nodule"};
  }
}

}  // namespace

std::vector<PhantomSample> gen_phantom_dataset(std::size_t n,
                                               std::size_t num_classes,
                                               std::size_t h, std::size_t w,
                                               std::uint64_t seed) {
  if (num_classes < 2 || num_classes > 8) {
    throw ConfigError("phantom dataset supports 2..8 classes");
  }
  if (h < 8 || w < 8) throw ConfigError("phantom images must be >= 8x8");

  std::vector<PhantomSample> out;
  out.reserve(n);
  const double mindim = static_cast<double>(std::min(h, w));
  for (std::size_t idx = 0; idx < n; ++idx) {
    Rng rng = Rng::stream(seed, idx);
    const std::size_t label = idx % num_classes;

    std::vector<double> px(h * w, 0.0);
    const double base = 0.30 + 0.08 * rng.uniform();
    for (double& v : px) v = base;
    const int waves = 2 + static_cast<int>(rng.uniform_int(2));
    for (int k = 0; k < waves; ++k) {
      const double amp = 0.02 + 0.04 * rng.uniform();
      const double fy = rng.uniform(-2.0, 2.0) / static_cast<double>(h);
      const double fx = rng.uniform(-2.0, 2.0) / static_cast<double>(w);
      const double phase = rng.uniform(0.0, 6.28318530717958647692);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          px[y * w + x] += amp * std::cos(6.28318530717958647692 *
                                              (fy * y + fx * x) +
                                          phase);
        }
      }
    }
    for (double& v : px) v += 0.01 * (rng.uniform() - 0.5);

    // Every lesioned class adds the same total intensity mass (random within
    // a narrow band), split evenly across its lesions: the class signal is
    // the geometry, not the brightness budget.
    const Lesions spec = lesions_for_class(label);
    const std::size_t lesion_count = spec.blobs + spec.streaks;
    const double budget =
        rng.uniform(0.85, 1.15) * 0.02 * mindim * mindim * spec.contrast;
    const double per_lesion =
        lesion_count == 0 ? 0.0 : budget / static_cast<double>(lesion_count);
    for (std::size_t b = 0; b < spec.blobs; ++b) {
      const double cy = rng.uniform(0.25, 0.75) * static_cast<double>(h);
      const double cx = rng.uniform(0.25, 0.75) * static_cast<double>(w);
      const double ry = rng.uniform(0.12, 0.18) * mindim;
      const double rx = rng.uniform(0.12, 0.18) * mindim;
      paint_blob(px, h, w, cy, cx, ry, rx, per_lesion);
    }
    for (std::size_t s = 0; s < spec.streaks; ++s) {
      const double cy = rng.uniform(0.25, 0.75) * static_cast<double>(h);
      const double cx = rng.uniform(0.25, 0.75) * static_cast<double>(w);
      const double angle = rng.uniform(0.0, 3.14159265358979323846);
      const double len = rng.uniform(0.55, 0.85) * mindim;
      const double thickness = rng.uniform(0.035, 0.07) * mindim + 0.8;
      paint_streak(px, h, w, cy, cx, angle, len, thickness, per_lesion);
    }

    for (double& v : px) v = std::clamp(v, 0.0, 1.0);

    PhantomSample sample;
    sample.image = Tensor::from_data({1, h, w}, std::move(px));
    sample.label = label;
    sample.kind = spec.kind;
    sample.seed = idx;
    out.push_back(std::move(sample));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

namespace {

int next_header_token(std::istream& in, std::string& tok) {
  tok.clear();
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {  // comment to end of line
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return 1;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok.empty() ? 0 : 1;
}

}  // namespace

Tensor load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);

  std::string tok;
  if (!next_header_token(in, tok) || tok != "P5") {
    throw FormatError(path + ": not a binary P5 graymap");
  }
  auto parse_num = [&](const char* what) -> std::size_t {
    if (!next_header_token(in, tok)) {
      throw FormatError(path + ": truncated header (" + std::string(what) + ")");
    }
    std::size_t value = 0;
    for (char ch : tok) {
      if (ch < '0' || ch > '9') {
        throw FormatError(path + ": bad " + std::string(what) + " '" + tok + "'");
      }
      value = value * 10 + static_cast<std::size_t>(ch - '0');
      if (value > 1 << 30) throw FormatError(path + ": absurd " + what);
    }
    return value;
  };
  const std::size_t w = parse_num("width");
  const std::size_t h = parse_num("height");
  const std::size_t maxval = parse_num("maxval");
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw FormatError(path + ": invalid dimensions or maxval");
  }
  // The single whitespace byte after maxval was already consumed by the
  // tokenizer; payload starts here.
  const bool wide = maxval > 255;
  const std::size_t bytes = h * w * (wide ? 2 : 1);
  std::vector<unsigned char> payload(bytes);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) {
    throw FormatError(path + ": truncated pixel payload");
  }

  std::vector<double> px(h * w);
  const double inv = 1.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < h * w; ++i) {
    std::size_t v;
    if (wide) {
      v = (static_cast<std::size_t>(payload[2 * i]) << 8) | payload[2 * i + 1];
    } else {
      v = payload[i];
    }
    if (v > maxval) throw FormatError(path + ": sample exceeds maxval");
    px[i] = static_cast<double>(v) * inv;
  }
  return Tensor::from_data({1, h, w}, std::move(px));
}

void save_pgm(const std::string& path, const Tensor& image,
              std::size_t maxval) {
  require_image(image);
  if (maxval == 0 || maxval > 65535) {
    throw ConfigError("pgm maxval must lie in [1, 65535]");
  }
  const std::size_t h = image.shape()[1], w = image.shape()[2];
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << w << " " << h << "\n" << maxval << "\n";
  const bool wide = maxval > 255;
  for (double v : image.data()) {
    const double c = std::clamp(v, 0.0, 1.0);
    const std::size_t q =
        static_cast<std::size_t>(std::lround(c * static_cast<double>(maxval)));
    if (wide) {
      out.put(static_cast<char>((q >> 8) & 0xFF));
      out.put(static_cast<char>(q & 0xFF));
    } else {
      out.put(static_cast<char>(q & 0xFF));
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'O', 'T', 'M', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kStepKey = "meta.step";
constexpr const char* kDigestKey = "meta.config_digest";

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& buf, double v) {
  put_u64(buf, std::bit_cast<std::uint64_t>(v));
}

struct Reader {
  const unsigned char* p;
  std::size_t remaining;
  std::string origin;

  void need(std::size_t n) const {
    if (n > remaining) {
      throw FormatError(origin + ": truncated checkpoint payload");
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    remaining -= 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += 8;
    remaining -= 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    remaining -= n;
    return s;
  }
};

void write_entry(std::string& buf, const std::string& name, const Tensor& t) {
  put_u32(buf, static_cast<std::uint32_t>(name.size()));
  buf.append(name);
  put_u32(buf, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u64(buf, d);
  for (double v : t.data()) put_f64(buf, v);
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [key, tensor] : tensors) {
    if (key == name) return &tensor;
  }
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put_u32(buf, kVersion);
  put_u64(buf, static_cast<std::uint64_t>(ckpt.tensors.size()) + 2);
  write_entry(buf, kStepKey,
              Tensor::from_data({1}, {static_cast<double>(ckpt.step)}));
  write_entry(buf, kDigestKey,
              Tensor::from_data({1}, {static_cast<double>(ckpt.config_digest)}));
  for (const auto& [name, tensor] : ckpt.tensors) {
    write_entry(buf, name, tensor);
  }

  // Atomic write: temp file in the same directory, then rename.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + path + " (" + ec.message() + ")");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());

  Reader r{reinterpret_cast<const unsigned char*>(blob.data()), blob.size(),
           path};
  const std::string magic = r.bytes(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path + ": bad checkpoint magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError(path + ": unsupported checkpoint version " +
                      std::to_string(version));
  }
  const std::uint64_t count = r.u64();
  if (count > (1ULL << 32)) throw FormatError(path + ": absurd tensor count");

  Checkpoint ckpt;
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::uint32_t name_len = r.u32();
    if (name_len > (1u << 20)) throw FormatError(path + ": absurd name length");
    const std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError(path + ": absurd tensor rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = r.u64();
      if (dim == 0 || dim > (1ULL << 32)) {
        throw FormatError(path + ": absurd tensor dimension");
      }
      shape[d] = static_cast<std::size_t>(dim);
      numel *= shape[d];
    }
    r.need(numel * 8);
    std::vector<double> values(numel);
    for (std::size_t i = 0; i < numel; ++i) values[i] = r.f64();
    if (name == kStepKey && numel == 1) {
      ckpt.step = static_cast<std::uint64_t>(values[0]);
    } else if (name == kDigestKey && numel == 1) {
      ckpt.config_digest = static_cast<std::uint32_t>(values[0]);
    } else {
      ckpt.tensors.emplace_back(
          name, Tensor::from_data(std::move(shape), std::move(values)));
    }
  }
  if (r.remaining != 0) {
    throw FormatError(path + ": trailing bytes after checkpoint payload");
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Datasets on disk
// ---------------------------------------------------------------------------

void save_dataset(const std::vector<PhantomSample>& samples,
                  const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir);

  std::ofstream labels(fs::path(dir) / "labels.csv",
                       std::ios::binary | std::ios::trunc);
  if (!labels) throw IoError("cannot write labels.csv in " + dir);
  char name[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof(name), "img_%06zu.pgm", i);
    save_pgm((fs::path(dir) / name).string(), samples[i].image);
    labels << name << "," << samples[i].label << "\n";
  }
  if (!labels) throw IoError("write failed: labels.csv in " + dir);
}

LabeledDataset load_dataset(const std::string& dir) {
  std::ifstream labels(fs::path(dir) / "labels.csv");
  if (!labels) throw IoError("cannot open labels.csv in " + dir);

  LabeledDataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(labels, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw FormatError(dir + "/labels.csv:" + std::to_string(line_no) +
                        ": expected 'filename,label'");
    }
    const std::string file = line.substr(0, comma);
    std::size_t label = 0;
    try {
      label = std::stoul(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw FormatError(dir + "/labels.csv:" + std::to_string(line_no) +
                        ": bad label");
    }
    ds.images.push_back(load_pgm((fs::path(dir) / file).string()));
    ds.labels.push_back(label);
    ds.num_classes = std::max(ds.num_classes, label + 1);
  }
  if (ds.images.empty()) throw FormatError(dir + ": empty dataset");
  return ds;
}

SplitIndices stratified_split(const std::vector<std::size_t>& labels,
                              double holdout_fraction) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError("holdout fraction must lie in [0, 1)");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class[labels[i]].push_back(i);
  }
  SplitIndices split;
  for (const auto& [label, members] : by_class) {
    const std::size_t held = static_cast<std::size_t>(
        std::floor(holdout_fraction * static_cast<double>(members.size())));
    const std::size_t cut = members.size() - held;
    for (std::size_t k = 0; k < members.size(); ++k) {
      (k < cut ? split.train : split.eval).push_back(members[k]);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.eval.begin(), split.eval.end());
  return split;
}

}  // namespace otml::data
