#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "otml/rng.hpp"
#include "otml/tensor.hpp"

namespace otml::data {

// Grayscale view augmentation. Output is a pure function of
// (image, spec, rng state); with everything disabled the input is returned
// bit-exactly.
struct AugmentationSpec {
  bool enabled = true;
  bool crop = true;
  double crop_lo = 0.6, crop_hi = 1.0;  // linear side-scale range
  bool flip = true;
  double flip_prob = 0.5;
  bool jitter = true;
  double jitter_add = 0.1, jitter_mul = 0.2;
  bool blur = true;
  double blur_lo = 0.1, blur_hi = 1.0;  // Gaussian sigma range
  std::uint64_t seed = 0;               // stream base used by the trainer

  void validate() const;
};

// Random resized crop (bilinear), horizontal flip, multiplicative + additive
// intensity jitter, Gaussian blur; clamped to [0,1].
Tensor augment(const Tensor& image, const AugmentationSpec& spec, Rng& rng);

struct PhantomSample {
  Tensor image;  // [1,h,w] in [0,1]
  std::size_t label = 0;
  std::string kind;        // generated geometry description
  std::uint64_t seed = 0;  // per-sample stream seed
};

// Procedural grayscale corpus: smooth low-frequency background plus
// class-determining geometry (0 none, 1 bright blob, 2 streak, 3 blob+streak,
// higher classes vary count and contrast). Classes are balanced by
// construction (label = index mod num_classes) and fully seed-deterministic.
std::vector<PhantomSample> gen_phantom_dataset(std::size_t n,
                                               std::size_t num_classes,
                                               std::size_t h, std::size_t w,
                                               std::uint64_t seed);

// Binary P5 portable graymap, 8- or 16-bit, values scaled to [0,1].
Tensor load_pgm(const std::string& path);
void save_pgm(const std::string& path, const Tensor& image,
              std::size_t maxval = 65535);

// Named-tensor checkpoint. Byte layout: 8-byte magic "OTMLCKPT", u32 version,
// u64 tensor count, then per tensor: u32 name length, name bytes, u32 rank,
// u64 dims, little-endian f64 payload. Step and config digest ride along as
// reserved entries "meta.step" / "meta.config_digest".
struct Checkpoint {
  std::uint64_t step = 0;
  std::uint32_t config_digest = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// On-disk dataset: PGM files plus labels.csv rows of "filename,label".
struct LabeledDataset {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return images.size(); }
};

void save_dataset(const std::vector<PhantomSample>& samples,
                  const std::string& dir);
LabeledDataset load_dataset(const std::string& dir);

// Canonical stratified train/eval split: per class, the last
// floor(holdout_fraction * count) samples in file order are held out.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};
SplitIndices stratified_split(const std::vector<std::size_t>& labels,
                              double holdout_fraction);

}  // namespace otml::data
