#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace dagnet {

// Images plus labels plus disjoint train/val/test index lists. Pixel values
// live in [0, 1] as loaded; preprocessing may shift them.
struct Dataset {
    std::vector<Tensor> images;  // all share one H x W x C shape
    std::vector<int> labels;     // < num_classes
    int num_classes = 0;
    std::vector<int> train_idx, val_idx, test_idx;

    // preprocessing record
    int target_h = 0, target_w = 0;            // 0 = not resized
    std::vector<double> channel_mean;          // empty = no mean subtracted

    void validate() const;
    const std::vector<int>& split(const std::string& name) const;  // train|val|test
};

// ---- IDX binary format (big-endian) ----
// magic = 0x00 0x00, dtype byte (0x08 unsigned byte), ndim byte, then ndim
// u32 extents, then raw row-major bytes. Images use 3 dims (count, rows,
// cols) and load as rows x cols x 1 tensors scaled to [0,1]; labels use 1 dim.

Dataset load_idx(const std::string& images_path, const std::string& labels_path);
// writes round(v * 255) of values clipped to [0,1]; channel count must be 1
void write_idx_images(const std::string& path, const std::vector<Tensor>& images);
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

// Six-file convention: <prefix>-{train,val,test}-{images,labels}.idx
void save_dataset(const Dataset& ds, const std::string& prefix);
Dataset load_dataset(const std::string& prefix);

// ---- preprocessing ----

// Bilinear resampling with half-pixel-centered sample points.
Tensor bilinear_resize(const Tensor& image, int out_h, int out_w);

// Scales so the short side matches the target (aspect preserved, both sides
// end >= target), center-crops to target, subtracts the per-channel mean.
Tensor preprocess(const Tensor& image, int target_h, int target_w,
                  const std::vector<double>& mean);

// ---- synthetic coarse x fine task ----
// Class factors: the coarse label sets the global layout (how many blobs and
// how large, placed uniformly at random), the fine label sets the texture
// tiling the blob interiors (stripes or checkers with random phase, all with
// one mean so blob-average probes cannot read it). label = coarse * k_fine +
// fine.
struct SynthTaskConfig {
    int size = 32;            // square, single channel
    int k_coarse = 4;         // <= 4 layouts
    int k_fine = 4;           // <= 4 textures
    int per_class = 24;       // images per class across all splits
    double noise = 0.05;      // Gaussian sigma added per pixel
    double train_frac = 0.5;  // remainder after train+val is the test split
    double val_frac = 0.25;
    std::uint64_t seed = 0;

    void validate() const;
};

Dataset synth_multiscale(const SynthTaskConfig& config);

}  // namespace dagnet
