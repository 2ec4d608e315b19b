#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "error.hpp"
#include "rng.hpp"

namespace dagnet {

void Dataset::validate() const {
    require(images.size() == labels.size(), ErrorCode::Argument,
            "image and label counts differ");
    require(num_classes >= 1, ErrorCode::Argument, "dataset needs at least one class");
    for (std::size_t i = 0; i < images.size(); ++i) {
        require(images[i].shape == images[0].shape, ErrorCode::Argument,
                "all images must share one shape");
        require(labels[i] >= 0 && labels[i] < num_classes, ErrorCode::Argument,
                "label out of range at index " + std::to_string(i));
    }
    std::vector<char> seen(images.size(), 0);
    for (const std::vector<int>* split : {&train_idx, &val_idx, &test_idx}) {
        for (int i : *split) {
            require(i >= 0 && i < static_cast<int>(images.size()), ErrorCode::Argument,
                    "split index out of range");
            require(!seen[static_cast<std::size_t>(i)], ErrorCode::Argument,
                    "splits must be disjoint");
            seen[static_cast<std::size_t>(i)] = 1;
        }
    }
}

const std::vector<int>& Dataset::split(const std::string& name) const {
    if (name == "train") return train_idx;
    if (name == "val") return val_idx;
    if (name == "test") return test_idx;
    fail(ErrorCode::Argument, "unknown split: " + name);
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t read_u32_be(std::istream& is, const std::string& what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    require(is.gcount() == 4, ErrorCode::Format, "truncated input reading " + what);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_u32_be(std::ostream& os, std::uint32_t v) {
    char b[4] = {static_cast<char>((v >> 24) & 0xff), static_cast<char>((v >> 16) & 0xff),
                 static_cast<char>((v >> 8) & 0xff), static_cast<char>(v & 0xff)};
    os.write(b, 4);
}

// validates the magic and returns the extents
std::vector<std::uint32_t> read_idx_header(std::istream& is, int want_ndim,
                                           const std::string& path) {
    std::uint32_t magic = read_u32_be(is, "IDX magic");
    require((magic >> 16) == 0, ErrorCode::Format, "bad IDX magic in " + path);
    std::uint32_t dtype = (magic >> 8) & 0xff;
    require(dtype == 0x08, ErrorCode::Format, "IDX dtype must be unsigned byte in " + path);
    int ndim = static_cast<int>(magic & 0xff);
    require(ndim == want_ndim, ErrorCode::Format,
            "unexpected IDX dimension count in " + path);
    std::vector<std::uint32_t> dims(static_cast<std::size_t>(ndim));
    for (auto& d : dims) d = read_u32_be(is, "IDX extent");
    return dims;
}

std::vector<unsigned char> read_idx_payload(std::istream& is, std::size_t count,
                                            const std::string& path) {
    std::vector<unsigned char> bytes(count);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
    require(static_cast<std::size_t>(is.gcount()) == count, ErrorCode::Format,
            "truncated IDX payload in " + path);
    is.peek();
    require(is.eof(), ErrorCode::Format, "trailing bytes after IDX payload in " + path);
    return bytes;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    require(imgs.is_open(), ErrorCode::Io, "cannot open image file: " + images_path);
    std::vector<std::uint32_t> idims = read_idx_header(imgs, 3, images_path);
    std::uint32_t count = idims[0], rows = idims[1], cols = idims[2];
    require(rows >= 1 && cols >= 1, ErrorCode::Format,
            "degenerate image extents in " + images_path);
    std::vector<unsigned char> pixels =
        read_idx_payload(imgs, static_cast<std::size_t>(count) * rows * cols, images_path);

    std::ifstream labs(labels_path, std::ios::binary);
    require(labs.is_open(), ErrorCode::Io, "cannot open label file: " + labels_path);
    std::vector<std::uint32_t> ldims = read_idx_header(labs, 1, labels_path);
    require(ldims[0] == count, ErrorCode::Format,
            "image count does not match label count: " + images_path);
    std::vector<unsigned char> raw_labels = read_idx_payload(labs, ldims[0], labels_path);

    Dataset ds;
    ds.images.reserve(count);
    Shape shape{{static_cast<int>(rows), static_cast<int>(cols), 1}};
    std::size_t offset = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor img = Tensor::zeros(shape);
        for (double& v : img.data) v = pixels[offset++] / 255.0;
        ds.images.push_back(std::move(img));
    }
    int max_label = 0;
    for (unsigned char l : raw_labels) {
        ds.labels.push_back(static_cast<int>(l));
        max_label = std::max(max_label, static_cast<int>(l));
    }
    ds.num_classes = count > 0 ? max_label + 1 : 0;
    return ds;
}

void write_idx_images(const std::string& path, const std::vector<Tensor>& images) {
    require(!images.empty(), ErrorCode::Argument, "no images to write");
    const Shape& shape = images[0].shape;
    require(shape.rank() == 3 && shape[2] == 1, ErrorCode::Argument,
            "IDX images must be H x W x 1");
    std::ofstream out(path, std::ios::binary);
    require(out.is_open(), ErrorCode::Io, "cannot open image file for writing: " + path);
    write_u32_be(out, 0x00000803);
    write_u32_be(out, static_cast<std::uint32_t>(images.size()));
    write_u32_be(out, static_cast<std::uint32_t>(shape[0]));
    write_u32_be(out, static_cast<std::uint32_t>(shape[1]));
    for (const Tensor& img : images) {
        require(img.shape == shape, ErrorCode::Argument, "all images must share one shape");
        for (double v : img.data) {
            double clipped = std::clamp(v, 0.0, 1.0);
            out.put(static_cast<char>(std::lround(clipped * 255.0)));
        }
    }
    require(out.good(), ErrorCode::Io, "failed writing image file: " + path);
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
    std::ofstream out(path, std::ios::binary);
    require(out.is_open(), ErrorCode::Io, "cannot open label file for writing: " + path);
    write_u32_be(out, 0x00000801);
    write_u32_be(out, static_cast<std::uint32_t>(labels.size()));
    for (int l : labels) {
        require(l >= 0 && l <= 255, ErrorCode::Argument, "label does not fit in a byte");
        out.put(static_cast<char>(l));
    }
    require(out.good(), ErrorCode::Io, "failed writing label file: " + path);
}

void save_dataset(const Dataset& ds, const std::string& prefix) {
    ds.validate();
    for (const char* split : {"train", "val", "test"}) {
        const std::vector<int>& idx = ds.split(split);
        require(!idx.empty(), ErrorCode::Argument,
                std::string("cannot save empty split: ") + split);
        std::vector<Tensor> images;
        std::vector<int> labels;
        images.reserve(idx.size());
        for (int i : idx) {
            images.push_back(ds.images[static_cast<std::size_t>(i)]);
            labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
        }
        write_idx_images(prefix + "-" + split + "-images.idx", images);
        write_idx_labels(prefix + "-" + split + "-labels.idx", labels);
    }
}

Dataset load_dataset(const std::string& prefix) {
    Dataset ds;
    int max_label = -1;
    for (const char* split : {"train", "val", "test"}) {
        Dataset part = load_idx(prefix + "-" + std::string(split) + "-images.idx",
                                prefix + "-" + std::string(split) + "-labels.idx");
        std::vector<int>& idx = split == std::string("train")
                                    ? ds.train_idx
                                    : (split == std::string("val") ? ds.val_idx : ds.test_idx);
        for (std::size_t i = 0; i < part.images.size(); ++i) {
            idx.push_back(static_cast<int>(ds.images.size()));
            ds.images.push_back(std::move(part.images[i]));
            ds.labels.push_back(part.labels[i]);
            max_label = std::max(max_label, part.labels[i]);
        }
    }
    ds.num_classes = max_label + 1;
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Preprocessing

Tensor bilinear_resize(const Tensor& image, int out_h, int out_w) {
    require(image.shape.rank() == 3, ErrorCode::Argument, "resize expects H x W x C");
    require(out_h >= 1 && out_w >= 1, ErrorCode::Argument, "degenerate resize target");
    int in_h = image.shape[0], in_w = image.shape[1], channels = image.shape[2];
    Tensor out = Tensor::zeros(Shape{{out_h, out_w, channels}});
    double sy = static_cast<double>(in_h) / out_h;
    double sx = static_cast<double>(in_w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
        int y0 = static_cast<int>(std::floor(fy));
        int y1 = std::min(y0 + 1, in_h - 1);
        double wy = fy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
            int x0 = static_cast<int>(std::floor(fx));
            int x1 = std::min(x0 + 1, in_w - 1);
            double wx = fx - x0;
            for (int c = 0; c < channels; ++c) {
                double top = (1.0 - wx) * image.at3(y0, x0, c) + wx * image.at3(y0, x1, c);
                double bot = (1.0 - wx) * image.at3(y1, x0, c) + wx * image.at3(y1, x1, c);
                out.at3(oy, ox, c) = (1.0 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

Tensor preprocess(const Tensor& image, int target_h, int target_w,
                  const std::vector<double>& mean) {
    require(image.shape.rank() == 3, ErrorCode::Argument, "preprocess expects H x W x C");
    require(target_h >= 1 && target_w >= 1, ErrorCode::Argument, "degenerate target size");
    int in_h = image.shape[0], in_w = image.shape[1], channels = image.shape[2];
    require(mean.empty() || static_cast<int>(mean.size()) == channels, ErrorCode::Argument,
            "per-channel mean length does not match channel count");

    // scale so both sides reach the target, i.e. the short side (relative to
    // the target aspect) lands exactly on it
    double scale = std::max(static_cast<double>(target_h) / in_h,
                            static_cast<double>(target_w) / in_w);
    int scaled_h = std::max(target_h, static_cast<int>(std::lround(in_h * scale)));
    int scaled_w = std::max(target_w, static_cast<int>(std::lround(in_w * scale)));
    Tensor scaled = (scaled_h == in_h && scaled_w == in_w)
                        ? image
                        : bilinear_resize(image, scaled_h, scaled_w);

    int off_h = (scaled_h - target_h) / 2;
    int off_w = (scaled_w - target_w) / 2;
    Tensor out = Tensor::zeros(Shape{{target_h, target_w, channels}});
    for (int y = 0; y < target_h; ++y) {
        for (int x = 0; x < target_w; ++x) {
            for (int c = 0; c < channels; ++c) {
                double m = mean.empty() ? 0.0 : mean[static_cast<std::size_t>(c)];
                out.at3(y, x, c) = scaled.at3(y + off_h, x + off_w, c) - m;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic task

void SynthTaskConfig::validate() const {
    require(size >= 8, ErrorCode::Argument,
            "image size too small to render the finest texture period (need >= 8)");
    require(k_coarse >= 1 && k_coarse <= 4, ErrorCode::Argument,
            "k_coarse must be in [1, 4]");
    require(k_fine >= 1 && k_fine <= 4, ErrorCode::Argument, "k_fine must be in [1, 4]");
    require(k_coarse * k_fine >= 2, ErrorCode::Argument, "need at least two classes");
    require(per_class >= 4, ErrorCode::Argument, "need at least four images per class");
    require(noise >= 0.0, ErrorCode::Argument, "noise level must be >= 0");
    require(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0,
            ErrorCode::Argument, "split fractions must be positive and leave room for test");
}

namespace {

// coarse layouts: (blob count, blob side), scaled to the image size
struct LayoutSpec {
    int count;
    int side;
};

LayoutSpec layout_for(int coarse, int size) {
    // areas spread apart so blob-coverage statistics separate the layouts
    static const int counts[4] = {2, 3, 2, 3};
    static const int sides32[4] = {8, 8, 12, 12};
    int side = std::max(3, sides32[coarse] * size / 32);
    return {counts[coarse], side};
}

double texture_value(int fine, int r, int c, int phase_r, int phase_c) {
    const double hi = 0.85, lo = 0.25;  // equal hi/lo coverage => one mean for all
    int rr = r + phase_r, cc = c + phase_c;
    bool on = false;
    switch (fine) {
        case 0: on = rr % 4 < 2; break;             // horizontal stripes, period 4
        case 1: on = cc % 4 < 2; break;             // vertical stripes, period 4
        case 2: on = (rr + cc) % 2 == 0; break;     // 1-pixel checkerboard
        case 3: on = (rr / 2 + cc / 2) % 2 == 0; break;  // 2-pixel block checkerboard
        default: fail(ErrorCode::Internal, "bad fine class");
    }
    return on ? hi : lo;
}

struct BlobBox {
    int top, left, side;
};

bool overlaps(const BlobBox& a, const BlobBox& b) {
    return a.top < b.top + b.side && b.top < a.top + a.side && a.left < b.left + b.side &&
           b.left < a.left + a.side;
}

// uniform non-overlapping placement; positions carry no class information.
// early blobs can paint the rest into a corner, so failed configurations are
// discarded wholesale and redrawn
std::vector<BlobBox> place_blobs(Rng& rng, int size, const LayoutSpec& layout) {
    for (int restart = 0; restart < 200; ++restart) {
        std::vector<BlobBox> boxes;
        bool ok = true;
        for (int b = 0; b < layout.count && ok; ++b) {
            ok = false;
            for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
                BlobBox box{static_cast<int>(rng.uniform_int(0, size - layout.side)),
                            static_cast<int>(rng.uniform_int(0, size - layout.side)),
                            layout.side};
                ok = true;
                for (const BlobBox& other : boxes) {
                    if (overlaps(box, other)) {
                        ok = false;
                        break;
                    }
                }
                if (ok) boxes.push_back(box);
            }
        }
        if (ok) return boxes;
    }
    fail(ErrorCode::Argument, "could not place non-overlapping blobs; image size too small");
}

}  // namespace

Dataset synth_multiscale(const SynthTaskConfig& config) {
    config.validate();
    const double background = 0.1;
    Rng rng(mix_seed(config.seed, 0x53594e54));  // task stream

    Dataset ds;
    ds.num_classes = config.k_coarse * config.k_fine;
    Shape shape{{config.size, config.size, 1}};

    int n_train = static_cast<int>(config.per_class * config.train_frac);
    int n_val = static_cast<int>(config.per_class * config.val_frac);
    require(n_train >= 1 && n_val >= 1 && n_train + n_val < config.per_class,
            ErrorCode::Argument, "per-class count too small for the requested split");

    for (int coarse = 0; coarse < config.k_coarse; ++coarse) {
        LayoutSpec layout = layout_for(coarse, config.size);
        for (int fine = 0; fine < config.k_fine; ++fine) {
            for (int i = 0; i < config.per_class; ++i) {
                std::vector<BlobBox> boxes = place_blobs(rng, config.size, layout);
                int phase_r = static_cast<int>(rng.uniform_int(0, 3));
                int phase_c = static_cast<int>(rng.uniform_int(0, 3));
                Tensor img = Tensor::full(shape, background);
                for (const BlobBox& box : boxes) {
                    for (int r = box.top; r < box.top + box.side; ++r) {
                        for (int c = box.left; c < box.left + box.side; ++c) {
                            img.at3(r, c, 0) = texture_value(fine, r, c, phase_r, phase_c);
                        }
                    }
                }
                for (double& v : img.data) {
                    if (config.noise > 0.0) v += rng.normal(0.0, config.noise);
                    v = std::clamp(v, 0.0, 1.0);
                    v = std::lround(v * 255.0) / 255.0;  // byte grid, so IDX io is lossless
                }
                int index = static_cast<int>(ds.images.size());
                ds.images.push_back(std::move(img));
                ds.labels.push_back(coarse * config.k_fine + fine);
                if (i < n_train) {
                    ds.train_idx.push_back(index);
                } else if (i < n_train + n_val) {
                    ds.val_idx.push_back(index);
                } else {
                    ds.test_idx.push_back(index);
                }
            }
        }
    }
    ds.validate();
    return ds;
}

}  // namespace dagnet
